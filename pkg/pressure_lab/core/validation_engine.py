import logging
import math
from typing import Any, Dict, List, Tuple

from pressure_lab.config.settings import RunConfig
from pressure_lab.core.enums import MapFamily

logger = logging.getLogger(__name__)


class ConfigValidator:
    """
    Checks the invariants of a RunConfig before any computation starts.
    Every check returns (passed, message) and records its outcome.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.validation_results = {
            'errors': [],
            'warnings': [],
            'passed': True
        }

    def _record(self, result: Tuple[bool, str]) -> Tuple[bool, str]:
        ok, message = result
        if not ok:
            self.validation_results['errors'].append(message)
            self.validation_results['passed'] = False
        return result

    def validate_map(self) -> Tuple[bool, str]:
        """
        Validate the map section.

        Returns:
            Tuple containing:
            - Boolean indicating if validation passed
            - Error message (if any)
        """
        m = self.config.map
        if m.family is not MapFamily.ZEXP and m.lam == 0:
            return False, "lambda must be non-zero"
        if not all(math.isfinite(v) for v in (m.lam.real, m.lam.imag)):
            return False, "lambda must be finite"
        if m.z0 is not None and not (math.isfinite(m.z0.real) and math.isfinite(m.z0.imag)):
            return False, "z0 must be finite"
        if not m.escape_radius > m.bound_radius > 0:
            return False, "need escape_radius > bound_radius > 0"
        return True, ""

    def validate_pressure(self) -> Tuple[bool, str]:
        p = self.config.pressure
        if not p.t_grid:
            return False, "t_grid must not be empty"
        if any(t <= 0 for t in p.t_grid):
            return False, "t_grid values must be positive"
        if any(b <= a for a, b in zip(p.t_grid, p.t_grid[1:])):
            return False, "t_grid must be strictly increasing"
        if p.n_max < 1:
            return False, "n_max must be >= 1"
        if p.cutoff < 1:
            return False, "cutoff must be >= 1"
        if not 0 < p.eps_trunc < 1:
            return False, "eps_trunc must lie in (0, 1)"
        if p.beam_width is not None and p.beam_width < 1:
            return False, "beam_width must be positive or none"
        if p.node_budget < 1:
            return False, "node_budget must be positive"
        return True, ""

    def validate_bowen(self) -> Tuple[bool, str]:
        lo, hi = self.config.bowen.bracket
        if not 0 < lo < hi:
            return False, f"Bowen bracket must satisfy 0 < lo < hi, got ({lo}, {hi})"
        if self.config.bowen.tol <= 0:
            return False, "Bowen tol must be positive"
        return True, ""

    def validate_measure(self) -> Tuple[bool, str]:
        m = self.config.measure
        if m.t is not None and m.t <= 0:
            return False, "measure t must be positive"
        if any(s <= 0 for s in m.s_grid):
            return False, "s_grid values must be positive"
        if any(b >= a for a, b in zip(m.s_grid, m.s_grid[1:])):
            return False, "s_grid must be strictly decreasing"
        if m.depth < 1:
            return False, "measure depth must be >= 1"
        if m.cutoff < 1:
            return False, "measure cutoff must be >= 1"
        if m.k_max < 2:
            return False, "k_max must be >= 2"
        if m.panel_size < 1:
            return False, "panel_size must be >= 1"
        if m.b_beta <= 0:
            return False, "b_beta must be positive"
        if m.dirac and self.config.map.family is not MapFamily.ZEXP:
            return False, "dirac measures are only conformal for the zexp family"
        return True, ""

    def validate_validators(self) -> Tuple[bool, str]:
        v = self.config.validators
        if v.samples < 2:
            return False, "validator samples must be >= 2"
        if v.tract_R <= 1 or v.tract_L <= 1:
            return False, "tract R and L must exceed 1"
        if v.tract_R * v.tract_L >= 1e6:
            return False, "tract L*R must stay below 1e6"
        if not 0 < v.koebe_radius < 1:
            return False, "koebe_radius must lie in (0, 1)"
        if v.koebe_depth < 1:
            return False, "koebe_depth must be >= 1"
        x0, x1, y0, y1 = v.boxcount_window
        if not (x1 > x0 and y1 > y0):
            return False, "window must be a non-empty rectangle"
        eps = v.eps_list
        if len(eps) < 2 or any(e <= 0 for e in eps):
            return False, "eps_list needs at least two positive scales"
        if any(abs(b / a - 0.5) > 1e-12 for a, b in zip(eps, eps[1:])):
            return False, "eps_list must halve from one scale to the next"
        if v.max_iter < 1:
            return False, "max_iter must be >= 1"
        if v.chained_depth < 2:
            return False, "chained_depth must be >= 2"
        return True, ""

    def validate_run(self) -> Tuple[bool, str]:
        if self.config.threads < 1:
            return False, "threads must be >= 1"
        if not self.config.output.directory:
            return False, "output directory must not be empty"
        return True, ""

    def validate(self) -> Tuple[bool, str]:
        """
        Run every section check.

        Returns:
            Tuple containing:
            - Boolean indicating if all checks passed
            - The first error message (if any)
        """
        checks = (self.validate_map, self.validate_pressure, self.validate_bowen,
                  self.validate_measure, self.validate_validators, self.validate_run)
        first = (True, "")
        for check in checks:
            ok, message = self._record(check())
            if not ok and first[0]:
                first = (False, message)
        if not first[0]:
            logger.debug(f"Config validation failed: {self.validation_results['errors']}")
        return first

    def validate_measure_run(self) -> Tuple[bool, str]:
        """The measure command needs at least three s values unless it uses delta_0."""
        m = self.config.measure
        if not m.dirac and len(m.s_grid) < 3:
            return self._record(
                (False, "s_grid needs at least three values for the measure command"))
        return True, ""

    def get_summary(self) -> Dict[str, Any]:
        errors: List[str] = self.validation_results['errors']
        return {'passed': self.validation_results['passed'], 'errors': list(errors),
                'warnings': list(self.validation_results['warnings'])}
