import logging
import os
from dotenv import load_dotenv

load_dotenv()


def _get_float_env(name, default=None):
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        return float(value)
    except ValueError:
        return default


def _get_int_env(name, default=None):
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        return int(value)
    except ValueError:
        return default


DATA_DIR = os.getenv("DATA_DIR", "./data")
SCENES_FILE = os.getenv("SCENES_FILE", os.path.join(DATA_DIR, "scenes.json"))

FOVS_THREADS = max(1, _get_int_env("FOVS_THREADS", os.cpu_count() or 1))
FRAME_QUANTUM_S = _get_float_env("FOVS_FRAME_QUANTUM", 0.1)

FOVS_CHECKPOINT = os.getenv("FOVS_CHECKPOINT")
API_KEY = os.getenv("API_KEY")

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
DEBUG = os.getenv("DEBUG", "").lower() in ("1", "true", "yes")


def configure_logging(level: str | None = None) -> None:
    """Root logging setup shared by the CLI and the HTTP app."""
    name = "DEBUG" if DEBUG else (level or LOG_LEVEL)
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="[%(name)s] %(levelname)s %(message)s",
    )
