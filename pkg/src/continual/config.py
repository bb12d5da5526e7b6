from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    app_name: str = "ARR continual learning engine"

    output_dir: str = Field(default="output/experiments", alias="OUTPUT_DIR")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    workers: int = Field(default=1, ge=1, alias="CL_WORKERS")
    # Upper bound on samples used for each per-experience Fisher estimate
    fisher_max_samples: int = Field(default=512, ge=1, alias="FISHER_MAX_SAMPLES")

    class Config:
        env_file = ".env"
        extra = "ignore"


settings = Settings()
