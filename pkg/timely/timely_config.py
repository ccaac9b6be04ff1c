"""
Timely Configuration

JSON settings shared by the command-line tools: fuel, seeds, failure
schedule parameters and the optional log file. Values given on the
command line override what is stored here.

Functions:
    get_config_path: Per-platform location of config.json
    get_default_config: Defaults for every key
    load_config: Defaults merged with the stored file
    save_config: Write settings back to disk
"""

import json
import logging
import os
import platform
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

APP_DIR_NAME = 'Timely'


def get_config_path() -> str:
    """
    Get the configuration file path based on the operating system.

    Platform-specific paths:
    - Windows: %APPDATA%/Timely/config.json
    - macOS: ~/Library/Application Support/Timely/config.json
    - Linux: ~/.config/Timely/config.json

    Creates the directory if it doesn't exist.

    Returns:
        str: Full path to configuration file
    """
    system = platform.system()

    if system == "Windows":
        config_dir = os.path.join(os.environ.get('APPDATA', ''), APP_DIR_NAME)
    elif system == "Darwin":
        config_dir = os.path.expanduser(f'~/Library/Application Support/{APP_DIR_NAME}')
    else:
        config_dir = os.path.expanduser(f'~/.config/{APP_DIR_NAME}')

    os.makedirs(config_dir, exist_ok=True)

    return os.path.join(config_dir, 'config.json')


def get_default_config() -> Dict[str, Any]:
    """
    Get default configuration dictionary.

    Returns:
        Dict[str, Any]: Default value for every recognized key
    """
    return {
        "fuel": 10000,
        "seed": 0,
        "pick_min": 1,
        "pick_max": 1000,
        "exhaustive_n_values": [1, 10, 1000],
        "exhaustive_max_steps": 2000,
        "random_failure_probability": 0.05,
        "random_runs": 100,
        "max_failures_per_run": 16,
        "workers": 1,
        "log_file": None,
    }


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from a JSON file.

    Stored values are merged over the defaults so every key exists. A
    missing file yields the defaults; an unreadable one is logged and
    ignored.

    Args:
        path: Config file; the per-platform location when omitted

    Returns:
        Dict[str, Any]: Effective configuration
    """
    config = get_default_config()
    config_file = path or get_config_path()
    try:
        if os.path.exists(config_file):
            with open(config_file, 'r') as f:
                loaded = json.load(f)
            if isinstance(loaded, dict):
                config.update(loaded)
            else:
                logger.warning("Config %s is not a JSON object; using defaults", config_file)
    except json.JSONDecodeError as e:
        logger.error("Config load error: %s", e)
    except OSError as e:
        logger.error("Config load error: %s", e)
    return config


def save_config(config: Dict[str, Any], path: Optional[str] = None) -> bool:
    """
    Save configuration to a JSON file.

    Args:
        config: Settings to write
        path: Destination; the per-platform location when omitted

    Returns:
        bool: True if the file was written
    """
    config_file = path or get_config_path()
    try:
        with open(config_file, 'w') as f:
            json.dump(config, f, indent=4)
        logger.info("Configuration saved to %s", config_file)
        return True
    except OSError as e:
        logger.warning("Could not save configuration: %s", e)
        return False
