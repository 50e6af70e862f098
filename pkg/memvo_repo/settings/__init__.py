import importlib
import logging
import os

from utils.utilities import ConfigError


logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_MODULE = 'memvo_repo.settings.base'


def load_settings(module_name=None):
    """
    :param module_name: a dotted module path, or the short name of a module in this package ('kitti', 'tum', 'toy').
        defaults to the MEMVO_SETTINGS_MODULE environment variable, then DEFAULT_SETTINGS_MODULE
    :return: the settings module
    :raises ConfigError: if the module cannot be imported
    """
    module_name = module_name or os.environ.get('MEMVO_SETTINGS_MODULE') or DEFAULT_SETTINGS_MODULE
    if '.' not in module_name:
        module_name = f"{__name__}.{module_name}"
    try:
        settings = importlib.import_module(module_name)
    except ImportError as ie:
        raise ConfigError(f"could not import settings module {module_name!r}. ie={ie!r}")

    logger.debug(f"load_settings(): {module_name!r}")
    return settings
