import json
import os
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

# Set style
sns.set_theme(style="whitegrid")
plt.rcParams.update({'font.size': 12})

result_dir = Path(sys.argv[1] if len(sys.argv) > 1 else 'output/experiments/strategy_comparison')
plot_dir = result_dir / 'plots'
os.makedirs(plot_dir, exist_ok=True)

# Gather every finished cell into one long frame
frames = []
for cell_dir in sorted(result_dir.iterdir()):
    if not (cell_dir / 'DONE').exists():
        continue
    with open(cell_dir / 'summary.json') as f:
        summary = json.load(f)
    metrics = pd.read_csv(cell_dir / 'metrics.csv')
    metrics['strategy'] = summary['strategy']
    metrics['alpha'] = summary['alpha']
    metrics['rm_size'] = summary['rm_size']
    metrics['seed'] = summary['seed']
    frames.append(metrics)

if not frames:
    print(f"No finished cells in {result_dir}")
    sys.exit(1)

df = pd.concat(frames, ignore_index=True)
df['label'] = df['strategy'] + ' a=' + df['alpha'].astype(str) + ' rm=' + df['rm_size'].astype(str)
continual = df[df['strategy'] != 'cumulative']

# --- Plot 1: Accuracy along the stream, fixed vs seen-classes test set ---
fig, axes = plt.subplots(1, 2, figsize=(16, 6), sharey=True)
for ax, metric, title in [
    (axes[0], 'accuracy_fixed', 'Fixed test set (all classes)'),
    (axes[1], 'accuracy_seen', 'Seen-classes test set'),
]:
    sns.lineplot(data=continual[continual['metric'] == metric], x='experience', y='value', hue='label', marker='o', ax=ax)
    ax.set_title(title)
    ax.set_xlabel('Experience')
    ax.set_ylabel('Accuracy')
plt.tight_layout()
plt.savefig(plot_dir / '1_accuracy_along_stream.png')
plt.close()

# --- Plot 2: Stream loss ---
plt.figure(figsize=(10, 6))
sns.lineplot(data=continual[continual['metric'] == 'stream_loss'], x='experience', y='value', hue='label', marker='o')
plt.title('Stream loss over the experiences seen so far')
plt.xlabel('Experience')
plt.ylabel('Mean cross-entropy')
plt.tight_layout()
plt.savefig(plot_dir / '2_stream_loss.png')
plt.close()

# --- Plot 3: Final accuracy per configuration (mean and std over seeds) ---
final = df[df['metric'] == 'accuracy_fixed'].sort_values('experience').groupby(['label', 'seed']).tail(1)
order = final.groupby('label')['value'].mean().sort_values(ascending=False).index
plt.figure(figsize=(12, 6))
sns.barplot(data=final, x='label', y='value', order=order, errorbar='sd')
plt.title('Final fixed-test accuracy')
plt.xlabel('Configuration')
plt.ylabel('Accuracy')
plt.xticks(rotation=30, ha='right')
plt.tight_layout()
plt.savefig(plot_dir / '3_final_accuracy.png')
plt.close()

# --- Plot 4: Wall time per experience ---
plt.figure(figsize=(10, 6))
sns.barplot(data=continual[continual['metric'] == 'wall_time'], x='label', y='value', errorbar='sd')
plt.title('Training time per experience')
plt.xlabel('Configuration')
plt.ylabel('Seconds')
plt.xticks(rotation=30, ha='right')
plt.tight_layout()
plt.savefig(plot_dir / '4_wall_time.png')
plt.close()

print(f"Plots generated successfully in {plot_dir}/")
