"""Simulation defaults from ``conf.yml`` and the environment."""
import os
import logging
from pathlib import Path

import yaml

from .exceptions import InputError

logger = logging.getLogger(__name__)

CONFIG_ENV = 'ETSIM_CONFIG'
OUTPUT_DIR_ENV = 'ETSIM_OUTPUT_DIR'

DEFAULTS = {'eta': 0.5,
            'beta': 2.0,
            'window': None,
            'max_epochs': 100,
            'seed': 0,
            'format': 'csv',
            'output_dir': 'results'}

default_path = Path(__file__).parent.parent / 'conf.yml'


def load_config(path=None):
    """Defaults merged with a conf file and the environment.

    The file is ``path``, else ``$ETSIM_CONFIG``, else the ``conf.yml`` next
    to the package if it exists. ``$ETSIM_OUTPUT_DIR`` overrides
    ``output_dir``. Unknown keys are rejected.
    """
    path = path or os.environ.get(CONFIG_ENV)
    if path is None and default_path.exists():
        path = default_path
    config = dict(DEFAULTS)
    if path is not None:
        with open(str(path), 'r') as handle:
            loaded = yaml.safe_load(handle) or {}
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise InputError('Unknown settings {0} in "{1}"'.format(unknown,
                                                                    path))
        config.update(loaded)
        logger.debug('Loaded settings from "%s"', path)
    if os.environ.get(OUTPUT_DIR_ENV):
        config['output_dir'] = os.environ[OUTPUT_DIR_ENV]
    if config['format'] not in ('csv', 'json'):
        raise InputError('format must be csv or json, got {0!r}'.format(
            config['format']))
    return config
