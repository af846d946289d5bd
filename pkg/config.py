import os
from dotenv import load_dotenv
from typing import List, Optional

# values already exported win over .env
load_dotenv()


def get_optional_env(key: str, default: str = "") -> str:
    """HICL_* setting, or ``default`` when unset"""
    return os.getenv(key, default)


def get_list_env(key: str, default: Optional[List[str]] = None) -> List[str]:
    """
    Comma-separated setting such as ``HICL_SWEEP_BUFFER_SIZES``

    Blank entries are dropped, so ``"20,,50 "`` reads as ``["20", "50"]``.

    Args:
        key: Variable name
        default: Returned when the variable is unset or empty
    """
    raw = os.getenv(key, "")
    items = [part.strip() for part in raw.split(",")]
    items = [part for part in items if part]
    return items if items else list(default or [])


def get_int_list_env(key: str, default: List[int]) -> List[int]:
    """
    Integer list setting (replay buffer sizes for ``sweep``)

    Raises:
        ValueError: If an entry is not an integer
    """
    items = get_list_env(key)
    if not items:
        return list(default)
    try:
        return [int(item) for item in items]
    except ValueError:
        raise ValueError(f"❌ {key} must be a comma-separated list of integers, got {items}") from None


# Where `train` writes when --output-dir is omitted, and the base for relative dataset paths
OUTPUT_DIR = get_optional_env("HICL_OUTPUT_DIR", "runs")
DATA_DIR = get_optional_env("HICL_DATA_DIR", ".")

LOG_LEVEL = get_optional_env("HICL_LOG_LEVEL", "INFO").upper()

# `sweep --buffer-sizes` default
SWEEP_BUFFER_SIZES = get_int_list_env("HICL_SWEEP_BUFFER_SIZES", [20, 50, 100])

ENVIRONMENT = get_optional_env("HICL_ENV", "development")


class Settings:
    """
    Run-time settings read from the environment

    Model, data and training choices live in the JSON run config; this
    only holds where files go, how loud logging is and sweep defaults.
    """
    OUTPUT_DIR = OUTPUT_DIR
    DATA_DIR = DATA_DIR
    LOG_LEVEL = LOG_LEVEL
    SWEEP_BUFFER_SIZES = SWEEP_BUFFER_SIZES

    ENVIRONMENT = ENVIRONMENT
    PROJECT_NAME = "HiCL continual learning"
    VERSION = "1.0.0"


settings = Settings()
