import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from config import DEFAULT_ENV_FILE, LOADING_MODE_FOR_FUSEPATH_ENV_VARS

logger = logging.getLogger("fusepath")


def load_fusepath_env(env_file: Optional[Path] = None) -> bool:
    """Load settings from a .env file using python-dotenv. Returns False when there is no file to load."""
    env_file_path = Path(env_file) if env_file is not None else Path(DEFAULT_ENV_FILE)
    if not env_file_path.is_file():
        logger.debug("No env file found at %s", env_file_path)
        return False
    loading_mode = os.getenv(LOADING_MODE_FOR_FUSEPATH_ENV_VARS) or "override"
    if loading_mode == "no-override":
        logger.info("Loading env from %s, but not overriding existing environment variables", env_file_path)
        load_dotenv(env_file_path, override=False)
    else:
        logger.info("Loading env from %s, which may override existing environment variables", env_file_path)
        load_dotenv(env_file_path, override=True)
    return True
