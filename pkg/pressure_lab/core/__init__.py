"""
Core module for pressure-lab.

This module contains the numerical machinery of the package:
- Maps: the four families, spherical derivatives and inverse branches
- Tree: truncated preimage trees with log-space weights
- Pressure: partial sums, pressure curves and the Bowen zero
- Measure: discrete Patterson-Sullivan measures and their diagnostics
- Validators: empirical checks of the distortion and tail estimates
- Validation Engine: consistency checks of run configurations

Submodules are imported explicitly (``from pressure_lab.core.pressure import ...``)
because the configuration layer depends on the enums and errors defined here.
"""

__all__ = ['enums', 'errors', 'fitting', 'maps', 'tree', 'pressure', 'measure',
           'validators', 'validation_engine']
