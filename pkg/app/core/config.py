from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="LIPSIN_",
        case_sensitive=False,
    )

    # Bloom filter geometry (eFId scheme)
    m: int = 256
    k: int = 5
    n_lids: int = 23
    rho_max: float = 0.5

    # Plain LIPSIN baseline geometry
    lipsin_m: int = 320

    # Security check
    hash_bits: int = 64
    p_sc: float = 1e-6

    # Experiment defaults
    seed: int = 0
    trials: int = 10_000
    l_min: int = 1
    l_max: int = 8
    workers: int = 1
    max_fill_drop: bool = False
    empirical_min_expected: float = 1.0  # below this many expected hits a cell is analytic-only
    max_transmissions: int = 100_000

    # Service
    request_timeout_seconds: int = 60
    log_level: str = "INFO"


def default(name: str):
    """Field default, ignoring the environment (used by the CLI)."""
    return Settings.model_fields[name].default


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
