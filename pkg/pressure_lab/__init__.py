"""
pressure-lab: thermodynamic formalism of transcendental maps at desk scale.

The package computes spherical-metric topological pressure through preimage
sums, locates the Bowen zero, builds discrete Patterson-Sullivan measures and
checks distortion and tail estimates empirically.
"""

import logging
import os

__version__ = "0.1.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level=None):
    """Configure application logging."""
    if level is None:
        level = os.environ.get('PRESSURE_LAB_LOG_LEVEL', 'INFO')
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
