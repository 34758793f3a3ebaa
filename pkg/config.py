"""Settings."""

from pathlib import Path

from pydantic import Field, PositiveInt
from pydantic_settings import BaseSettings, SettingsConfigDict


class PkdSettings(BaseSettings):
    """Environment settings.

    Only ``data_dir`` can influence results (it selects the dataset files);
    the rest changes logging and wall time.
    """

    model_config: SettingsConfigDict = SettingsConfigDict(
        env_prefix="FEDPKD_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        populate_by_name=True,
    )
    data_dir: Path | None = Field(
        default=None,
        description="Dataset root, overrides the IDX root of a run config.",
    )
    log_level: str = Field(
        default="INFO",
        description="Logging level name.",
    )
    workers: PositiveInt = Field(
        default=1,
        description="Threads for client training and processes for seed runs.",
        le=256,
    )


settings: PkdSettings = PkdSettings()

if __name__ == "__main__":
    ...
