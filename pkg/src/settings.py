"""
Process-level settings read from the environment and an optional .env file.
"""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class SadSettings(BaseSettings):
    """Environment settings (prefix SAD_)"""
    model_config = SettingsConfigDict(env_prefix="SAD_", env_file=".env", extra="ignore")

    runs_dir: str = Field("runs", description="Default root for run directories")
    data_dir: str = Field("data", description="Where downloaded datasets are stored")
    threads: int = Field(1, ge=1)
    log_level: str = "INFO"
    rich_console: bool = True
    download_base_url: str = "https://raw.githubusercontent.com/kuandeng/LightGCN/master/Data"
    http_timeout: float = 60.0
    gram_budget_mb: Optional[float] = Field(None, gt=0, description="Overrides slim.gram_budget_mb when set")


_settings: Optional[SadSettings] = None


def get_settings() -> SadSettings:
    """Get or create the settings singleton."""
    global _settings
    if _settings is None:
        _settings = SadSettings()
    return _settings
