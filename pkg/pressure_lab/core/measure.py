"""
Discrete Patterson-Sullivan measures and their conformality, tail and
tightness diagnostics.

mu_s = (1/Sigma_s) sum_{n=1..N} b_n e^{-ns} sum_{w in f^{-n}(z0)} delta_w |(f^n)*(w)|^{-t}
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from pressure_lab.config.settings import Config, TreeSettings
from pressure_lab.core.enums import BRule, MapFamily, SupportVerdict
from pressure_lab.core.errors import (
    DegenerateNormalizer, InfiniteMass, NonInjectiveTestSet,
)
from pressure_lab.core.maps import (
    TranscendentalMap, derivative, f_values, log_abs_derivative, log_abs_f,
    log_spherical_derivative, nearest_preimages, repelling_fixed_points,
    second_derivative, spherical_distance_array,
)
from pressure_lab.core.tree import PreimageTree
from pressure_lab.utils.debug_utils import log_operation
from pressure_lab.utils.helpers import pairwise_logsumexp

logger = logging.getLogger(__name__)

BOUNDARY_SAMPLES = 64
INJECTIVITY_FACTOR = 0.5
CONCENTRATION_LEVEL = 1.0 - 1e-6
TIGHTNESS_LEVELS = (0.1, 0.01)


@dataclass(frozen=True)
class BSequence:
    """b_n = 1 or b_n = n^beta; both satisfy b_{n+1}/b_n -> 1."""
    rule: BRule = BRule.CONSTANT_ONE
    beta: float = 1.0

    @classmethod
    def poly(cls, beta: float = 1.0) -> 'BSequence':
        return cls(BRule.POLY, beta)

    def log_b(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.rule is BRule.CONSTANT_ONE:
            return np.zeros_like(n)
        return self.beta * np.log(n)

    def b(self, n) -> np.ndarray:
        return np.exp(self.log_b(n))

    @property
    def label(self) -> str:
        if self.rule is BRule.CONSTANT_ONE:
            return 'constant_one'
        return f"poly({self.beta:g})"


@dataclass(frozen=True)
class MeasureParams:
    t: float
    s: Optional[float] = None
    depth: int = 0
    b: BSequence = BSequence()
    z0: Optional[complex] = None
    K: Optional[int] = None
    metric: str = 'spherical'

    def to_dict(self) -> Dict:
        return {
            't': self.t, 's': self.s, 'depth': self.depth, 'b': self.b.label,
            'z0': None if self.z0 is None else [self.z0.real, self.z0.imag],
            'K': self.K, 'metric': self.metric,
        }


@dataclass
class AtomicMeasure:
    """
    A finite weighted atom set.

    log_propagated holds, for atoms whose preimages were computed, the log of
    the mass carried to the next level (atom weight times any resampling
    multiplier); -inf for atoms without computed preimages.
    """
    locations: np.ndarray
    log_weights: np.ndarray
    depths: np.ndarray
    params: MeasureParams
    log_propagated: Optional[np.ndarray] = None
    log_normalizer: Optional[float] = None
    boundary_depth: Optional[int] = None

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=complex)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.depths = np.asarray(self.depths, dtype=np.int64)
        if self.log_propagated is None:
            self.log_propagated = self.log_weights.copy()

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def size(self) -> int:
        return int(self.locations.size)

    @property
    def total_mass(self) -> float:
        return float(np.exp(logsumexp(self.log_weights))) if self.size else 0.0

    def layer_masses(self) -> Dict[int, float]:
        """Total mass per depth."""
        return {int(n): float(np.exp(logsumexp(self.log_weights[self.depths == n])))
                for n in np.unique(self.depths)}

    def mass_in_disc(self, center: complex, radius: float) -> float:
        mask = np.abs(self.locations - center) < radius
        return float(self.weights[mask].sum())

    def mass_outside(self, radius: float) -> float:
        return float(self.weights[np.abs(self.locations) >= radius].sum())

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(self.weights * func(self.locations)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'location_re': self.locations.real,
            'location_im': self.locations.imag,
            'depth': self.depths,
            'weight': self.weights,
        }, columns=['location_re', 'location_im', 'depth', 'weight'])

    def provenance(self) -> Dict:
        return {
            'params': self.params.to_dict(),
            'atoms': self.size,
            'log_normalizer': self.log_normalizer,
            'boundary_depth': self.boundary_depth,
            'layer_masses': {str(k): v for k, v in self.layer_masses().items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.provenance(), sort_keys=True, indent=2)


def dirac(point: complex, t: float) -> AtomicMeasure:
    """The probability measure delta_point."""
    return AtomicMeasure(locations=np.asarray([point]), log_weights=np.zeros(1),
                         depths=np.zeros(1, dtype=np.int64),
                         params=MeasureParams(t=float(t), z0=complex(point)))


def from_tree(tree: PreimageTree, s: float, b: BSequence = BSequence()) -> AtomicMeasure:
    """
    mu_s over the levels 1..N of a built tree (kept in memory).

    Raises:
        DegenerateNormalizer: If Sigma_s is not a finite positive number
    """
    if s <= 0:
        raise ValueError("s must be positive")
    if tree.depth < 1:
        raise ValueError("The tree needs at least one level")
    locs, logw, depths, logp = [], [], [], []
    layer_logs = []
    for n in range(1, tree.depth + 1):
        lvl = tree.level(n)
        shift = float(b.log_b(n)) - n * s
        locs.append(lvl.points)
        logw.append(lvl.log_weight + shift)
        depths.append(np.full(lvl.size, n, dtype=np.int64))
        prop = lvl.log_propagated if lvl.log_propagated is not None else np.full(lvl.size, -np.inf)
        logp.append(prop + shift)
        layer_logs.append(tree.log_sum(n) + shift)

    log_norm = pairwise_logsumexp(layer_logs)
    if not math.isfinite(log_norm):
        raise DegenerateNormalizer(f"Normaliser log Sigma_s = {log_norm} at s={s:g}",
                                   s=s, t=tree.t)
    measure = AtomicMeasure(
        locations=np.concatenate(locs),
        log_weights=np.concatenate(logw) - log_norm,
        depths=np.concatenate(depths),
        params=MeasureParams(t=tree.t, s=float(s), depth=tree.depth, b=b, z0=tree.z0, K=tree.K),
        log_propagated=np.concatenate(logp) - log_norm,
        log_normalizer=log_norm,
        boundary_depth=tree.depth,
    )
    return measure


@log_operation('build_patterson_sullivan')
def build_patterson_sullivan(fmap: TranscendentalMap, t: float, s: float, z0: complex,
                             b: BSequence, N: int, K: int,
                             settings: Optional[TreeSettings] = None,
                             seed: int = 0) -> AtomicMeasure:
    """Build the discrete Patterson-Sullivan measure mu_s from a depth-N preimage tree."""
    settings = settings if settings is not None else TreeSettings.from_config(Config)
    tree = PreimageTree(fmap, z0, t, N, K, settings=settings, keep_levels=True, seed=seed).build()
    return from_tree(tree, s, b)


# Metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class ConformalMetric:
    """Radial conformal metric rho(|z|)|dz|: spherical, euclidean or dz/(1+|z|^beta)."""
    kind: str = 'spherical'
    beta: float = 2.0

    def __post_init__(self):
        if self.kind not in ('spherical', 'euclidean', 'power'):
            raise ValueError(f"Unknown metric: {self.kind}")

    @classmethod
    def spherical(cls) -> 'ConformalMetric':
        return cls('spherical')

    @classmethod
    def euclidean(cls) -> 'ConformalMetric':
        return cls('euclidean')

    @classmethod
    def power(cls, beta: float) -> 'ConformalMetric':
        return cls('power', beta)

    @property
    def label(self) -> str:
        return self.kind if self.kind != 'power' else f"power({self.beta:g})"

    def log_density_from_log_abs(self, log_abs: np.ndarray) -> np.ndarray:
        if self.kind == 'spherical':
            return math.log(2.0) - np.logaddexp(0.0, 2.0 * log_abs)
        if self.kind == 'euclidean':
            return np.zeros_like(log_abs)
        return -np.logaddexp(0.0, self.beta * log_abs)

    def log_density(self, z) -> np.ndarray:
        with np.errstate(divide='ignore'):
            return self.log_density_from_log_abs(np.log(np.abs(np.asarray(z, dtype=complex))))

    def log_derivative(self, fmap: TranscendentalMap, z) -> np.ndarray:
        """log|f'(z)| in this metric: log rho(f z) - log rho(z) + log|f'(z)|."""
        z = np.asarray(z, dtype=complex)
        if self.kind == 'spherical':
            return log_spherical_derivative(fmap, z)
        with np.errstate(invalid='ignore'):
            return (self.log_density_from_log_abs(log_abs_f(fmap, z)) - self.log_density(z)
                    + log_abs_derivative(fmap, z))


class DensityRatio:
    """eta(z) = (rho_target(z) / rho_source(z))^t, evaluated in log-space."""

    def __init__(self, source: ConformalMetric, target: ConformalMetric, t: float):
        self.source = source
        self.target = target
        self.t = float(t)

    def log(self, z) -> np.ndarray:
        return self.t * (self.target.log_density(z) - self.source.log_density(z))

    def __call__(self, z) -> np.ndarray:
        return np.exp(self.log(z))

    def inverse(self) -> 'DensityRatio':
        return DensityRatio(self.target, self.source, self.t)


def reweight_metric(measure: AtomicMeasure, t: float,
                    density_ratio: Union[DensityRatio, Callable[[np.ndarray], np.ndarray]],
                    ) -> AtomicMeasure:
    """
    d mu = (eta / M) d nu with M = integral of eta d nu, done in log-space.

    Raises:
        InfiniteMass: If M is not finite (or beyond the double range)
    """
    if hasattr(density_ratio, 'log'):
        log_eta = np.asarray(density_ratio.log(measure.locations), dtype=float)
        metric = getattr(getattr(density_ratio, 'target', None), 'label', 'reweighted')
    else:
        with np.errstate(divide='ignore', over='ignore'):
            log_eta = np.log(np.asarray(density_ratio(measure.locations), dtype=float))
        metric = 'reweighted'
    if np.any(np.isnan(log_eta)) or np.any(log_eta == np.inf):
        raise InfiniteMass("Density ratio is infinite or undefined on the atoms", t=t)
    log_mass = float(logsumexp(measure.log_weights + log_eta))
    if not math.isfinite(log_mass) or log_mass >= Config.MAX_LOG_MASS:
        raise InfiniteMass(f"Reweighted mass exp({log_mass:.4g}) is not normalisable",
                           log_mass=log_mass, t=t)
    params = MeasureParams(t=measure.params.t, s=measure.params.s, depth=measure.params.depth,
                           b=measure.params.b, z0=measure.params.z0, K=measure.params.K,
                           metric=metric)
    return AtomicMeasure(locations=measure.locations.copy(),
                         log_weights=measure.log_weights + log_eta - log_mass,
                         depths=measure.depths.copy(), params=params,
                         log_propagated=measure.log_propagated + log_eta - log_mass,
                         log_normalizer=measure.log_normalizer,
                         boundary_depth=measure.boundary_depth)


# Conformality ------------------------------------------------------------

@dataclass(frozen=True)
class TestDisc:
    """Open disc used as a test set in the conformality check."""
    __test__ = False    # keeps pytest from collecting it

    center: complex
    radius: float


@dataclass
class ResidualEntry:
    center: complex
    radius: float
    integral: float
    image_mass: float
    atoms_in_set: int
    atoms_in_image: int

    @property
    def residual(self) -> float:
        return abs(self.integral - self.image_mass)


@dataclass
class ConformalityReport:
    entries: List[ResidualEntry]
    metric: str = 'spherical'
    s: Optional[float] = None

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries), default=0.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            's': self.s if self.s is not None else float('nan'),
            'metric': self.metric,
            'center_re': e.center.real, 'center_im': e.center.imag, 'radius': e.radius,
            'integral': e.integral, 'image_mass': e.image_mass, 'residual': e.residual,
            'atoms_in_set': e.atoms_in_set, 'atoms_in_image': e.atoms_in_image,
        } for e in self.entries], columns=RESIDUAL_COLUMNS)


RESIDUAL_COLUMNS = ['s', 'metric', 'center_re', 'center_im', 'radius', 'integral', 'image_mass',
                    'residual', 'atoms_in_set', 'atoms_in_image']


def _boundary(center: complex, radius: float) -> np.ndarray:
    theta = np.linspace(0.0, 2.0 * math.pi, BOUNDARY_SAMPLES, endpoint=False)
    return center + radius * np.exp(1j * theta)


def injectivity_radius(fmap: TranscendentalMap, center: complex, radius: float) -> float:
    """0.5 |f'(c)| / sup |f''| over the disc, the sup sampled on its boundary."""
    ring = np.append(_boundary(center, radius), center)
    sup2 = float(np.max(np.abs(second_derivative(fmap, ring))))
    d1 = abs(complex(derivative(fmap, np.asarray([center]))[0]))
    if not np.isfinite(sup2) or d1 == 0:
        return 0.0
    if sup2 == 0:
        return math.inf
    return INJECTIVITY_FACTOR * d1 / sup2


def certify_test_disc(fmap: TranscendentalMap, disc: TestDisc) -> None:
    safe = injectivity_radius(fmap, disc.center, disc.radius)
    if not disc.radius <= safe:
        raise NonInjectiveTestSet(
            f"Disc around {disc.center} with radius {disc.radius:g} "
            f"exceeds the safe radius {safe:.3g}",
            center=disc.center, radius=disc.radius, safe_radius=safe)


def _image_members(fmap: TranscendentalMap, measure: AtomicMeasure, disc: TestDisc) -> np.ndarray:
    """Indices of propagating atoms v with a preimage inside the disc."""
    ring = _boundary(disc.center, disc.radius)
    sup1 = float(np.max(np.abs(np.append(derivative(fmap, ring),
                                         derivative(fmap, np.asarray([disc.center]))))))
    f_center = complex(f_values(fmap, np.asarray([disc.center]))[0])
    reach = 1.05 * disc.radius * sup1
    candidates = np.flatnonzero(np.isfinite(measure.log_propagated)
                                & (np.abs(measure.locations - f_center) <= reach))
    if candidates.size == 0:
        return candidates
    v = measure.locations[candidates]
    singular = np.zeros(v.size, dtype=bool)
    for value in fmap.omitted_values() + fmap.critical_values():
        singular |= np.abs(v - value) <= 1e-14 * (1.0 + abs(value))
    if np.any(singular):
        logger.debug(f"Skipping {int(singular.sum())} atoms at singular values")
        candidates, v = candidates[~singular], v[~singular]
    if candidates.size == 0:
        return candidates
    _, pre = nearest_preimages(fmap, v, disc.center)
    return candidates[np.abs(pre - disc.center) < disc.radius]


def conformality_residual(measure: AtomicMeasure, fmap: TranscendentalMap,
                          test_sets: Sequence[TestDisc],
                          metric: Optional[ConformalMetric] = None) -> ConformalityReport:
    """
    Per test disc A: |integral over A of |f'_rho|^t d mu - mu(f(A))|.

    Membership in f(A) is decided by pulling atoms back with the inverse
    branch through the disc center. On truncated trees the image side counts
    the mass each atom propagated to the next level, so atoms of the deepest
    level never count.

    Raises:
        NonInjectiveTestSet: If a disc is not certified injective
    """
    metric = metric or ConformalMetric.spherical()
    t = measure.params.t
    entries = []
    for disc in test_sets:
        disc = disc if isinstance(disc, TestDisc) else TestDisc(*disc)
        certify_test_disc(fmap, disc)
        inside = np.flatnonzero(np.abs(measure.locations - disc.center) < disc.radius)
        if inside.size:
            log_terms = measure.log_weights[inside] + t * metric.log_derivative(
                fmap, measure.locations[inside])
            integral = float(np.exp(logsumexp(log_terms)))
        else:
            integral = 0.0
        members = _image_members(fmap, measure, disc)
        image = float(np.exp(logsumexp(measure.log_propagated[members]))) if members.size else 0.0
        entries.append(ResidualEntry(center=complex(disc.center), radius=float(disc.radius),
                                     integral=integral, image_mass=image,
                                     atoms_in_set=int(inside.size),
                                     atoms_in_image=int(members.size)))
    report = ConformalityReport(entries=entries, metric=metric.label, s=measure.params.s)
    logger.info(f"Conformality residual (s={measure.params.s}): max {report.max_residual:.3e}")
    return report


def default_test_panel(measure: AtomicMeasure, fmap: TranscendentalMap, size: int = 5,
                       max_radius: float = 0.25, min_depth: int = 2) -> List[TestDisc]:
    """
    Certified discs around heavy atoms, pairwise separated, whose images stay
    away from the root z0.
    """
    order = np.argsort(-measure.log_weights, kind='stable')
    z0 = measure.params.z0
    panel: List[TestDisc] = []
    for i in order:
        if len(panel) >= size:
            break
        if measure.boundary_depth is not None and measure.depths[i] < min_depth:
            continue
        c = complex(measure.locations[i])
        if any(abs(c - d.center) < 2.0 * max_radius for d in panel):
            continue
        r = min(max_radius, 0.9 * injectivity_radius(fmap, c, max_radius))
        if r <= 1e-6:
            continue
        if injectivity_radius(fmap, c, r) < r:
            continue
        ring = _boundary(c, r)
        reach = 1.05 * r * float(np.max(np.abs(derivative(fmap, ring))))
        f_c = complex(f_values(fmap, np.asarray([c]))[0])
        if z0 is not None and abs(f_c - z0) <= 2.0 * reach:
            continue
        panel.append(TestDisc(c, r))
    return panel


def dirac_panel(center: complex = 0j,
                radii: Sequence[float] = (0.02, 0.05, 0.08, 0.1, 0.15)) -> List[TestDisc]:
    return [TestDisc(center, float(r)) for r in radii]


# Tails ------------------------------------------------------------------

@dataclass
class TailProfile:
    """Mass outside D(2^k), annulus masses and the weighted tail series."""
    t: float
    ks: np.ndarray
    masses: np.ndarray
    annulus_masses: np.ndarray
    weighted: np.ndarray
    fitted_c: float
    decay: np.ndarray

    @property
    def weighted_sum(self) -> float:
        return float(np.sum(self.weighted))

    @property
    def annulus_weighted_sum(self) -> float:
        factors = 2.0 ** (self.ks * self.t) / self.ks ** (3.0 * self.t)
        return float(np.sum(factors * self.annulus_masses))

    def bound(self, c: Optional[float] = None) -> np.ndarray:
        """c k^{3t} / 2^{kt} for each k."""
        c = self.fitted_c if c is None else c
        return c * self.ks ** (3.0 * self.t) / 2.0 ** (self.ks * self.t)

    def holds(self, c: float) -> bool:
        return bool(np.all(self.masses <= self.bound(c) * (1.0 + 1e-12)))

    def to_frame(self, s: Optional[float] = None) -> pd.DataFrame:
        return pd.DataFrame({
            's': np.full(self.ks.size, np.nan if s is None else s),
            'k': self.ks,
            'mass_outside': self.masses,
            'annulus_mass': self.annulus_masses,
            'weighted_term': self.weighted,
            'decay': self.decay,
        }, columns=TAIL_COLUMNS)


TAIL_COLUMNS = ['s', 'k', 'mass_outside', 'annulus_mass', 'weighted_term', 'decay']


def tail_profile(measure: AtomicMeasure, k_max: int, t: Optional[float] = None) -> TailProfile:
    """Masses outside the dyadic discs D(2^k), k = 1..k_max, and their weighted sum."""
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    t = measure.params.t if t is None else float(t)
    ks = np.arange(1, k_max + 1, dtype=float)
    mod = np.abs(measure.locations)
    w = measure.weights
    masses = np.array([w[mod >= 2.0 ** k].sum() for k in ks])
    annulus = np.array([w[(mod >= 2.0 ** k) & (mod < 2.0 ** (k + 1))].sum() for k in ks])
    factors = 2.0 ** (ks * t) / ks ** (3.0 * t)
    weighted = factors * masses
    fitted = float(np.max(weighted)) if np.any(masses > 0) else 0.0
    decay = masses * 2.0 ** (ks * t) / (ks * math.log(2.0)) ** (3.0 * t)
    return TailProfile(t=t, ks=ks.astype(int), masses=masses, annulus_masses=annulus,
                       weighted=weighted, fitted_c=fitted, decay=decay)


# Weak limits ------------------------------------------------------------

@dataclass(frozen=True)
class SmoothDisc:
    """Test function 1 on D(c, r), decreasing linearly to 0 on D(c, r(1+width))."""
    center: complex
    radius: float
    width: float = 0.5

    def __call__(self, z: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(z) - self.center)
        ramp = (self.radius * (1.0 + self.width) - d) / (self.radius * self.width)
        return np.clip(ramp, 0.0, 1.0)

    @property
    def label(self) -> str:
        return f"disc({self.center.real:.4g}{self.center.imag:+.4g}i,{self.radius:g})"


class ConstantOne:
    label = 'constant'

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(z))


def default_function_panel(z0: complex) -> List:
    panel = [ConstantOne()]
    panel += [SmoothDisc(complex(z0), r) for r in (0.5, 1.0, 2.0, 4.0)]
    panel += [SmoothDisc(0j, r) for r in (8.0, 32.0)]
    return panel


@dataclass
class WeakLimitResult:
    measure: AtomicMeasure
    measures: Dict[float, AtomicMeasure]
    s_grid: List[float]
    labels: List[str]
    integrals: np.ndarray
    differences: List[float]
    non_cauchy: bool
    tightness: Dict[float, Optional[int]]

    def convergence_frame(self) -> pd.DataFrame:
        rows = []
        for i, s in enumerate(self.s_grid):
            row = {'s': s}
            for j, label in enumerate(self.labels):
                row[label] = self.integrals[i, j]
            row['difference'] = self.differences[i - 1] if i > 0 else float('nan')
            rows.append(row)
        return pd.DataFrame(rows, columns=['s'] + self.labels + ['difference'])


@log_operation('weak_limit_approximation')
def weak_limit_approximation(fmap: TranscendentalMap, t: float, z0: complex, b: BSequence,
                             N: int, K: int, s_grid: Sequence[float],
                             settings: Optional[TreeSettings] = None, seed: int = 0,
                             test_functions: Optional[List] = None,
                             k_max: int = 16) -> WeakLimitResult:
    """
    mu_s for every s of a decreasing grid from one tree, with Cauchy
    differences on a panel of test functions and a tightness surrogate.
    """
    s_grid = [float(s) for s in s_grid]
    if len(s_grid) < 3:
        raise ValueError("s_grid needs at least three values")
    if any(b_ >= a for a, b_ in zip(s_grid, s_grid[1:])):
        raise ValueError("s_grid must be strictly decreasing")
    settings = settings if settings is not None else TreeSettings.from_config(Config)
    tree = PreimageTree(fmap, z0, t, N, K, settings=settings, keep_levels=True, seed=seed).build()
    measures = {s: from_tree(tree, s, b) for s in s_grid}
    functions = test_functions or default_function_panel(z0)
    labels = [getattr(f, 'label', f"f{i}") for i, f in enumerate(functions)]
    integrals = np.array([[measures[s].integrate(f) for f in functions] for s in s_grid])
    differences = [float(np.max(np.abs(integrals[i + 1] - integrals[i])))
                   for i in range(len(s_grid) - 1)]
    non_cauchy = any(b_ > a + 1e-12 for a, b_ in zip(differences, differences[1:]))
    if non_cauchy:
        logger.warning(f"Cauchy differences do not decrease: {differences}")

    tightness: Dict[float, Optional[int]] = {}
    for eps in TIGHTNESS_LEVELS:
        tightness[eps] = next((k for k in range(1, k_max + 1)
                               if max(m.mass_outside(2.0 ** k) for m in measures.values()) < eps),
                              None)
    return WeakLimitResult(measure=measures[s_grid[-1]], measures=measures, s_grid=s_grid,
                           labels=labels, integrals=integrals, differences=differences,
                           non_cauchy=non_cauchy, tightness=tightness)


# Support and diagnostics ------------------------------------------------

@dataclass
class SupportReport:
    verdict: SupportVerdict
    disc_masses: List[Tuple[complex, float, float]]
    top_atoms: List[Tuple[complex, float]]
    exceptional: List[complex] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'verdict': self.verdict.value,
            'discs': [{'center': [c.real, c.imag], 'radius': r, 'mass': m}
                      for c, r, m in self.disc_masses],
            'top_atoms': [{'location': [z.real, z.imag], 'weight': w} for z, w in self.top_atoms],
            'exceptional': [[z.real, z.imag] for z in self.exceptional],
        }


def exceptional_points(fmap: TranscendentalMap) -> List[complex]:
    """Points whose full backward orbit is finite (only 0 for z*e^z)."""
    if fmap.family is MapFamily.ZEXP:
        return [0j]
    return []


def julia_disc_panel(fmap: TranscendentalMap, count: int = 4,
                     radius: float = 0.5) -> List[TestDisc]:
    """Discs around repelling fixed points, which lie in the Julia set."""
    return [TestDisc(z, radius) for z in repelling_fixed_points(fmap, count=count)]


def support_dichotomy_check(measure: AtomicMeasure, fmap: TranscendentalMap,
                            disc_panel: Sequence[TestDisc]) -> SupportReport:
    """Mass of each panel disc, and whether at most two atoms carry the whole mass."""
    order = np.argsort(-measure.log_weights, kind='stable')[:2]
    top = [(complex(measure.locations[i]), float(measure.weights[i])) for i in order]
    concentrated = sum(w for _, w in top) >= CONCENTRATION_LEVEL
    masses = []
    for disc in disc_panel:
        disc = disc if isinstance(disc, TestDisc) else TestDisc(*disc)
        masses.append((complex(disc.center), float(disc.radius),
                       measure.mass_in_disc(disc.center, disc.radius)))
    if concentrated:
        verdict = SupportVerdict.CONCENTRATED
    elif not masses:
        verdict = SupportVerdict.VACUOUS
    elif all(m > 0 for _, _, m in masses):
        verdict = SupportVerdict.POSITIVE_ON_PANEL
    else:
        verdict = SupportVerdict.PARTIAL
    special = exceptional_points(fmap)
    hits = [z for z, _ in top if any(abs(z - e) < 1e-12 for e in special)] if concentrated else []
    return SupportReport(verdict=verdict, disc_masses=masses, top_atoms=top, exceptional=hits)


def postsingular_accumulation(measure: AtomicMeasure, fmap: TranscendentalMap,
                              n_iter: int = 20, eps: float = 0.1) -> Dict:
    """
    Share of mass whose forward orbit ends spherically eps-close to the
    post-singular set or to infinity after n_iter steps.
    """
    targets = [complex(np.inf, 0.0)]
    for value in fmap.singular_values():
        z = value
        targets.append(z)
        for _ in range(n_iter):
            z = complex(f_values(fmap, np.asarray([z]))[0])
            if not np.isfinite(z):
                break
            targets.append(z)
    z = measure.locations.copy()
    for _ in range(n_iter):
        finite = np.isfinite(z)
        z[finite] = f_values(fmap, z[finite])
    dist = spherical_distance_array(z, targets)
    near = dist < eps
    return {'n_iter': n_iter, 'eps': eps, 'fraction': float(measure.weights[near].sum()),
            'atoms_near': int(near.sum())}


def area_density_ratios(measure: AtomicMeasure, centers: Sequence[complex],
                        radii: Sequence[float]) -> pd.DataFrame:
    """m(D(z, delta)) / delta^2, the density diagnostic for t = 2."""
    rows = []
    for c in centers:
        for r in radii:
            mass = measure.mass_in_disc(c, r)
            rows.append({'center_re': complex(c).real, 'center_im': complex(c).imag,
                         'radius': float(r), 'mass': mass, 'ratio': mass / float(r) ** 2})
    return pd.DataFrame(rows, columns=['center_re', 'center_im', 'radius', 'mass', 'ratio'])
