"""
Empirical checks of the distortion estimates and of the geometric
statements behind Bowen's formula.

Existential constants are fitted from samples as running maxima (or
minima), so enlarging a sample never loosens a fitted constant.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from pressure_lab.core.enums import MapFamily
from pressure_lab.core.errors import BranchUndefined, NonHyperbolicMap, TooFewCells
from pressure_lab.core.fitting import RunningConstant, fit_slope
from pressure_lab.core.maps import (
    BOUNDED_RETURNS, TranscendentalMap, classify_orbits, f_values, log_abs_derivative,
    log_spherical_derivative, nearest_preimages, preimage_grid, sheet_range,
    singular_orbit_report,
)
from pressure_lab.core.tree import PreimageTree
from pressure_lab.utils.debug_utils import log_operation
from pressure_lab.utils.helpers import batched

logger = logging.getLogger(__name__)

FIT_CHUNKS = 10
SAMPLE_MAX_MODULUS = 1e6
TRACT_EXPONENT = 4.0 * math.pi
PROBE_ARGUMENTS = 256
NEGLIGIBLE_SHARE = 1e-8


@dataclass
class DistortionReport:
    """Outcome of one distortion check; fitted_c is a running max over the sample."""
    lemma: str
    samples: int
    worst_ratio: float
    fitted_c: float
    bound_holds: bool
    parameters: Dict = field(default_factory=dict)
    c_history: List[float] = field(default_factory=list)
    reused_c: bool = False

    @property
    def fit_monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.c_history, self.c_history[1:]))

    def to_dict(self) -> Dict:
        return {
            'lemma': self.lemma,
            'samples': self.samples,
            'worst_ratio': self.worst_ratio,
            'fitted_c': self.fitted_c,
            'bound_holds': self.bound_holds,
            'reused_c': self.reused_c,
            'fit_monotone': self.fit_monotone,
            'parameters': self.parameters,
        }


def _fit_running(needed: np.ndarray, floor: float = 1.0) -> Tuple[float, List[float]]:
    """Running max of the per-sample constants over growing prefixes."""
    running = RunningConstant('max')
    for part in np.array_split(needed, min(FIT_CHUNKS, max(1, needed.size))):
        running.update(part)
    value = running.value if not math.isnan(running.value) else floor
    return max(floor, value), [max(floor, v) for v in running.history if not math.isnan(v)]


def _finish(lemma: str, needed: np.ndarray, worst: float, c: Optional[float],
            c_limit: float, parameters: Dict, floor: float = 1.0) -> DistortionReport:
    fitted, history = _fit_running(needed, floor)
    reused = c is not None
    bound_c = float(c) if reused else fitted
    holds = bool(np.all(needed <= bound_c * (1.0 + 1e-12))) and bound_c <= c_limit
    report = DistortionReport(lemma=lemma, samples=int(needed.size), worst_ratio=float(worst),
                              fitted_c=fitted if not reused else bound_c, bound_holds=holds,
                              parameters=parameters, c_history=history, reused_c=reused)
    if not holds:
        logger.warning(f"{lemma}: bound fails (c={bound_c:.4g}, needed {float(needed.max()):.4g})")
    return report


# Koebe distortion --------------------------------------------------------

def _postsingular_points(fmap: TranscendentalMap, depth: int) -> List[complex]:
    """Singular values of f^depth: the singular values and their first depth-1 images."""
    points = []
    for value in fmap.singular_values():
        z = value
        for _ in range(depth):
            points.append(z)
            z = complex(f_values(fmap, np.asarray([z]))[0])
            if not np.isfinite(z):
                break
    return points


def _branch_anchors(fmap: TranscendentalMap, center: complex,
                    sheets: Sequence[int]) -> List[complex]:
    anchors = [complex(center)]
    for k in sheets:
        Z, valid = preimage_grid(fmap, np.asarray([anchors[-1]]), np.asarray([k]))
        if not valid[0, 0]:
            raise BranchUndefined(f"Sheet {k} undefined at {anchors[-1]}", sheet=k)
        anchors.append(complex(Z[0, 0]))
    return anchors


def _log_branch_gstar(fmap: TranscendentalMap, points: np.ndarray,
                      anchors: List[complex]) -> np.ndarray:
    """log|g*| of the depth-n inverse branch continued from the anchors: -log|(f^n)*(g(z))|."""
    w = np.asarray(points, dtype=complex)
    total = np.zeros(w.shape)
    for anchor in anchors[1:]:
        _, w = nearest_preimages(fmap, w, anchor)
        total -= log_spherical_derivative(fmap, w)
    return total


def koebe_disc(fmap: TranscendentalMap, center: complex, radius_factor: float = 0.5,
               depth: int = 1) -> Tuple[complex, float]:
    """Disc around center, sized by the distance to the singular values of f^depth."""
    dist = min(abs(center - p) for p in _postsingular_points(fmap, depth))
    return complex(center), radius_factor * dist


def koebe_ratio_check(fmap: TranscendentalMap, center: complex, r: float, lam: float,
                      depth: int = 1, samples: int = 1000, seed: int = 0,
                      sheets: Optional[Sequence[int]] = None,
                      c: Optional[float] = None) -> DistortionReport:
    """
    Ratios |g*(z1)|/|g*(z2)| of a depth-n inverse branch over pairs in D(center, lam*r).

    The bound is c/(1-lam)^4; the first pair is (center, center).

    Raises:
        BranchUndefined: If D(center, r) meets the singular values of f^depth
    """
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    hits = [p for p in _postsingular_points(fmap, depth) if abs(p - center) <= r]
    if hits:
        raise BranchUndefined(f"Disc D({center}, {r:g}) meets singular values of f^{depth}",
                              center=complex(center), radius=r, singular=hits[0])
    sheets = list(sheets) if sheets is not None else [0] * depth
    anchors = _branch_anchors(fmap, center, sheets)

    rng = np.random.default_rng(seed)
    rho = lam * r * np.sqrt(rng.random((samples, 2)))
    theta = 2.0 * math.pi * rng.random((samples, 2))
    pts = center + rho * np.exp(1j * theta)
    pts[0] = center
    logs = _log_branch_gstar(fmap, pts.ravel(), anchors).reshape(pts.shape)
    ratios = np.exp(np.abs(logs[:, 0] - logs[:, 1]))
    needed = ratios * (1.0 - lam) ** 4
    return _finish('koebe', needed, float(ratios.max()), c, math.inf,
                   {'center': [complex(center).real, complex(center).imag], 'r': r,
                    'lambda': lam, 'depth': depth}, floor=0.0)


@dataclass
class KoebeScaling:
    reports: List[DistortionReport]
    c: float

    @property
    def scaling_holds(self) -> bool:
        return all(r.bound_holds for r in self.reports)

    def to_dict(self) -> Dict:
        return {'c': self.c, 'scaling_holds': self.scaling_holds,
                'reports': [r.to_dict() for r in self.reports]}


def koebe_scaling_check(fmap: TranscendentalMap, center: complex, r: float,
                        lambdas: Sequence[float] = (0.25, 0.5, 0.75), depth: int = 1,
                        samples: int = 1000, seed: int = 0) -> KoebeScaling:
    """Fit c at the smallest lambda and check the (1-lambda)^-4 scaling with it."""
    lambdas = sorted(lambdas)
    first = koebe_ratio_check(fmap, center, r, lambdas[0], depth, samples, seed)
    reports = [first]
    for lam in lambdas[1:]:
        reports.append(koebe_ratio_check(fmap, center, r, lam, depth, samples, seed,
                                         c=first.fitted_c))
    return KoebeScaling(reports=reports, c=first.fitted_c)


# Tract distortion --------------------------------------------------------

class TractChart:
    """
    The principal inverse branch h over a logarithmic tract over infinity.

    tan has no tract over infinity; its tracts lie over the asymptotic values
    +-i*lambda, so the chart zeta = 1/(w - i*lambda) turns them into tracts
    over infinity of the composed map.
    """

    def __init__(self, fmap: TranscendentalMap):
        self.fmap = fmap

    @property
    def charted(self) -> bool:
        return self.fmap.family is MapFamily.TAN

    def branch(self, zeta: np.ndarray) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=complex)
        if self.charted:
            eps = 1.0 / (self.fmap.lam * zeta)
            return np.log(1j * eps / (2.0 - 1j * eps)) / 2j
        Z, _ = preimage_grid(self.fmap, zeta, np.asarray([0]))
        return Z[..., 0]

    def log_abs_branch_derivative(self, zeta: np.ndarray, h: np.ndarray) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=complex)
        if self.charted:
            eps = 1.0 / (self.fmap.lam * zeta)
            return -np.log(np.abs(zeta * (2j + eps)))
        return -log_abs_derivative(self.fmap, h)

    def log_branch_spherical_derivative(self, zeta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(h(zeta), log|h*(zeta)|) with h* = (1+|zeta|^2)|h'|/(1+|h|^2)."""
        h = self.branch(zeta)
        log_d = self.log_abs_branch_derivative(zeta, h)
        log_star = (np.logaddexp(0.0, 2.0 * np.log(np.abs(zeta))) + log_d
                    - np.logaddexp(0.0, 2.0 * np.log(np.abs(h))))
        return h, log_star


def principal_log_branch(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed forms for e^z: |Log w| and g*(w) = (1+|w|^2)/(|w|(1+|Log w|^2))."""
    w = np.asarray(w, dtype=complex)
    g = np.log(w)
    mod = np.abs(g)
    gstar = (1.0 + np.abs(w) ** 2) / (np.abs(w) * (1.0 + mod ** 2))
    return mod, gstar


def tract_samples(R: float, L: float, samples: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pairs with |z1| >= |z2| >= LR: log-uniform moduli up to 1e6, uniform
    arguments. The first pair is an identity pair.
    """
    low = L * R
    if low >= SAMPLE_MAX_MODULUS:
        raise ValueError("L*R must stay below the sampling ceiling 1e6")
    rng = np.random.default_rng(seed)
    mods = np.exp(rng.uniform(math.log(low), math.log(SAMPLE_MAX_MODULUS), (samples, 2)))
    args = rng.uniform(-math.pi, math.pi, (samples, 2))
    z = mods * np.exp(1j * args)
    swap = np.abs(z[:, 0]) < np.abs(z[:, 1])
    z[swap] = z[swap][:, ::-1]
    z[0, 1] = z[0, 0]
    return z[:, 0], z[:, 1]


def tract_modulus_ratio_check(fmap: TranscendentalMap, R: float, L: float, samples: int = 1000,
                              seed: int = 0, c: Optional[float] = None,
                              c_limit: float = 1e3) -> DistortionReport:
    """Two-sided bound c^-1 q^-4pi < |g(z1)|/|g(z2)| < c q^4pi with q = ln|z1|/ln|z2|."""
    z1, z2 = tract_samples(R, L, samples, seed)
    chart = TractChart(fmap)
    g1, g2 = chart.branch(z1), chart.branch(z2)
    ratio = np.abs(g1) / np.abs(g2)
    q = np.log(np.abs(z1)) / np.log(np.abs(z2))
    bound = q ** TRACT_EXPONENT
    needed = np.maximum(ratio / bound, 1.0 / (bound * ratio))
    worst = float(np.max(np.maximum(ratio, 1.0 / ratio)))
    return _finish('tract_modulus', needed, worst, c, c_limit,
                   {'R': R, 'L': L, 'charted': chart.charted, 'family': fmap.family.value})


def tract_derivative_ratio_check(fmap: TranscendentalMap, R: float, L: float, samples: int = 1000,
                                 seed: int = 0, c: Optional[float] = None,
                                 c_limit: float = 1e3) -> DistortionReport:
    """c^-1 p q^-3 <= |g*(z1)|/|g*(z2)| <= c p q with p = |z1|/|z2|."""
    z1, z2 = tract_samples(R, L, samples, seed)
    chart = TractChart(fmap)
    _, l1 = chart.log_branch_spherical_derivative(z1)
    _, l2 = chart.log_branch_spherical_derivative(z2)
    log_ratio = l1 - l2
    log_p = np.log(np.abs(z1)) - np.log(np.abs(z2))
    log_q = np.log(np.log(np.abs(z1)) / np.log(np.abs(z2)))
    log_needed = np.maximum(log_ratio - log_p - log_q, log_p - 3.0 * log_q - log_ratio)
    needed = np.exp(log_needed)
    worst = float(np.exp(np.max(np.abs(log_ratio))))
    return _finish('tract_derivative', needed, worst, c, c_limit,
                   {'R': R, 'L': L, 'charted': chart.charted, 'family': fmap.family.value})


# One-step sums ----------------------------------------------------------

def log_one_step_sums(fmap: TranscendentalMap, z: np.ndarray, t: float, K: int,
                      radius=None, batch: int = 16) -> np.ndarray:
    """log S_1^{D(radius)}(t, z) over the sheets |k| <= K, for each z."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    radius = np.broadcast_to(np.inf if radius is None else np.asarray(radius, dtype=float), z.shape)
    ks = sheet_range(K)
    out = np.empty(z.size)
    for rows in batched(np.arange(z.size), batch):
        Z, valid = preimage_grid(fmap, z[rows], ks)
        terms = np.where(valid & (np.abs(Z) < radius[rows][:, None]),
                         -t * log_spherical_derivative(fmap, Z), -np.inf)
        out[rows] = logsumexp(terms, axis=1)
    return out


def _log_scale(r, t: float) -> np.ndarray:
    """log of r^t / (ln r)^{3t}."""
    r = np.asarray(r, dtype=float)
    return t * np.log(r) - 3.0 * t * np.log(np.log(r))


def _disc_radius(r, c1: float) -> np.ndarray:
    return c1 * np.log(np.asarray(r, dtype=float)) ** TRACT_EXPONENT


@dataclass
class LowerBoundReport:
    t: float
    c1: float
    c2: float
    r0: float
    moduli: np.ndarray
    ratios: np.ndarray
    trend: float
    excluded: int
    passed: bool

    def to_dict(self) -> Dict:
        return {
            't': self.t, 'c1': self.c1, 'c2': self.c2, 'r0': self.r0, 'trend': self.trend,
            'excluded': self.excluded, 'passed': self.passed,
            'samples': [{'modulus': float(m), 'ratio': float(q)}
                        for m, q in zip(self.moduli, self.ratios)],
        }


def default_one_step_samples() -> np.ndarray:
    return 10.0 ** np.arange(2, 7) * np.exp(0.3j)


def one_step_lower_bound_check(fmap: TranscendentalMap, t: float, z_samples: Sequence[complex],
                               c1: float = 1.0, r0: float = 50.0, K: int = 10_000,
                               min_trend: float = -0.5) -> LowerBoundReport:
    """
    S_1^{D(c1 (ln|z|)^{4pi})}(t, z) against |z|^t/(ln|z|)^{3t}.

    c2 is the smallest observed ratio; the check passes when c2 > 0 and the
    log-ratio does not fall against log ln|z| faster than min_trend.
    """
    z = np.asarray(z_samples, dtype=complex)
    mods = np.abs(z)
    keep = mods >= r0
    z, mods = z[keep], mods[keep]
    order = np.argsort(mods, kind='stable')
    z, mods = z[order], mods[order]
    if z.size == 0:
        raise ValueError("No samples at or above r0")
    log_s = log_one_step_sums(fmap, z, t, K, radius=_disc_radius(mods, c1))
    log_ratio = log_s - _log_scale(mods, t)
    ratios = np.exp(log_ratio)
    running = RunningConstant('min')
    for value in ratios:
        running.update([value])
    trend = fit_slope(np.log(np.log(mods)), log_ratio).slope if z.size >= 2 else 0.0
    passed = bool(running.value > 0 and np.isfinite(running.value) and trend >= min_trend)
    return LowerBoundReport(t=float(t), c1=c1, c2=float(running.value), r0=r0, moduli=mods,
                            ratios=ratios, trend=float(trend), excluded=int((~keep).sum()),
                            passed=passed)


# Chained bounds on preimage trees ----------------------------------------

@dataclass
class ChainedConstants:
    c1_tilde: float
    c2_tilde: float
    c_compact: float
    k0: int


@dataclass
class ChainedReport:
    t: float
    constants: ChainedConstants
    annuli: pd.DataFrame
    totals: pd.DataFrame

    @property
    def all_hold(self) -> bool:
        return bool(self.annuli['holds'].all() and self.totals['holds'].all()
                    and self.totals['summed_holds'].all())

    def to_dict(self) -> Dict:
        return {
            't': self.t,
            'c1_tilde': self.constants.c1_tilde,
            'c2_tilde': self.constants.c2_tilde,
            'c_compact': self.constants.c_compact,
            'k0': self.constants.k0,
            'all_hold': self.all_hold,
            'annuli': self.annuli.to_dict(orient='records'),
            'totals': self.totals.to_dict(orient='records'),
        }


def _annulus_terms(tree: PreimageTree, n: int, k: int, c1: float) -> Tuple[float, float]:
    """
    log of the children mass of expanded depth-n nodes in D(2^{k+1}) \\ D(2^k)
    that lands in D(c1 (ln 2^k)^{4pi}), and log of the propagated mass of those nodes.
    """
    parent_level = tree.level(n)
    child = tree.level(n + 1)
    r = 2.0 ** k
    mod = np.abs(parent_level.points)
    in_annulus = (mod >= r) & (mod < 2.0 * r) & parent_level.expanded
    if not np.any(in_annulus):
        return -math.inf, -math.inf
    log_rhs = float(logsumexp(parent_level.log_propagated[in_annulus]))
    mask = in_annulus[child.parent] & (np.abs(child.points) < float(_disc_radius(r, c1)))
    log_lhs = float(logsumexp(child.log_weight[mask])) if np.any(mask) else -math.inf
    return log_lhs, log_rhs


def _probe_ratios(tree: PreimageTree, ks: Sequence[int], c1: float,
                  cutoff: int) -> Tuple[float, float]:
    """
    Minimal per-point ratios on the inner circles |z| = 2^k: for the annulus
    bound (restricted one-step sum over r^t/(ln r)^{3t}) and for the compact
    bound (full one-step sum times k^{3t}/2^{kt}).
    """
    t = tree.t
    theta = np.linspace(-math.pi, math.pi, PROBE_ARGUMENTS, endpoint=False)
    best_annulus, best_compact = math.inf, math.inf
    for k in ks:
        r = 2.0 ** k
        probe = r * np.exp(1j * theta)
        restricted = log_one_step_sums(tree.fmap, probe, t, cutoff, radius=_disc_radius(r, c1))
        full = log_one_step_sums(tree.fmap, probe, t, cutoff)
        best_annulus = min(best_annulus, float(np.min(restricted - _log_scale(r, t))))
        compact = full - k * t * math.log(2.0) + 3.0 * t * math.log(k)
        best_compact = min(best_compact, float(np.min(compact)))
    return math.exp(best_annulus), math.exp(best_compact)


def _active_annuli(tree: PreimageTree, n: int, k0: int) -> List[int]:
    lvl = tree.level(n)
    pts = lvl.points[lvl.expanded]
    if pts.size == 0:
        return []
    k_hi = int(math.floor(math.log2(max(float(np.max(np.abs(pts))), 2.0))))
    return list(range(k0, k_hi + 1))


def fit_chained_constants(tree: PreimageTree, c1_tilde: float = 1.0,
                          k0: int = 2) -> ChainedConstants:
    """Fit the constants of the annulus and compact bounds at depth 1."""
    if tree.depth < 2:
        raise ValueError("Fitting needs a tree of depth >= 2")
    ks = _active_annuli(tree, 1, k0)
    cutoff = tree.summaries[2].cutoff
    if ks:
        probe_annulus, probe_compact = _probe_ratios(tree, ks, c1_tilde, cutoff)
    else:
        probe_annulus, probe_compact = math.inf, math.inf

    c2 = RunningConstant('min')
    c2.update([probe_annulus])
    t = tree.t
    for k in ks:
        log_lhs, log_rhs = _annulus_terms(tree, 1, k, c1_tilde)
        if np.isfinite(log_rhs):
            c2.update([math.exp(log_lhs - log_rhs - float(_log_scale(2.0 ** k, t)))])
    compact = RunningConstant('min')
    compact.update([probe_compact])
    log_rhs_total = _compact_rhs(tree, 1, ks)
    if np.isfinite(log_rhs_total):
        compact.update([math.exp(_expanded_children_sum(tree, 1) - log_rhs_total)])
    c2_value = c2.value if np.isfinite(c2.value) else 0.0
    compact_value = compact.value if np.isfinite(compact.value) else 0.0
    return ChainedConstants(c1_tilde=c1_tilde, c2_tilde=c2_value, c_compact=compact_value, k0=k0)


def _expanded_children_sum(tree: PreimageTree, n: int) -> float:
    return float(logsumexp(tree.level(n + 1).log_weight)) if tree.level(n + 1).size else -math.inf


def _compact_rhs(tree: PreimageTree, n: int, ks: Sequence[int], factor_log: float = 0.0) -> float:
    """log sum_k 2^{kt}/k^{3t} P_n(annulus k), P_n the propagated depth-n mass."""
    t = tree.t
    terms = []
    for k in ks:
        _, log_rhs = _annulus_terms(tree, n, k, 1.0)
        if np.isfinite(log_rhs):
            terms.append(log_rhs + k * t * math.log(2.0) - 3.0 * t * math.log(k) + factor_log)
    return float(logsumexp(terms)) if terms else -math.inf


@log_operation('chained_bound_check')
def chained_bound_check(tree: PreimageTree, depths: Optional[Sequence[int]] = None,
                        constants: Optional[ChainedConstants] = None,
                        c1_tilde: float = 1.0, k0: int = 2) -> ChainedReport:
    """
    Annulus bound S_{n+1}^{D(c1 (ln r)^{4pi})} >= c2 r^t/(ln r)^{3t} S_n^{D(2r)\\D(r)}
    and compact bound S_{n+1} >= c sum_k 2^{kt}/k^{3t} S_n^{annulus k}, over
    expanded nodes, with constants fitted at depth 1 and reused.

    Annuli holding a negligible share of the propagated mass are reported but
    skipped, since pruning may have dropped their children.
    """
    constants = constants or fit_chained_constants(tree, c1_tilde, k0)
    depths = list(depths) if depths is not None else list(range(1, tree.depth))
    t = tree.t
    annulus_rows, total_rows = [], []
    for n in depths:
        if not 1 <= n < tree.depth:
            raise ValueError(f"Depth {n} needs level {n + 1} in a tree of depth {tree.depth}")
        lvl = tree.level(n)
        log_level = -math.inf
        if np.any(lvl.expanded):
            log_level = float(logsumexp(lvl.log_propagated[lvl.expanded]))
        ks = _active_annuli(tree, n, constants.k0)
        for k in ks:
            r = 2.0 ** k
            log_lhs, log_rhs = _annulus_terms(tree, n, k, constants.c1_tilde)
            skipped = not np.isfinite(log_rhs) or log_rhs < log_level + math.log(NEGLIGIBLE_SHARE)
            if not np.isfinite(log_rhs):
                holds = True
            else:
                bound = math.log(constants.c2_tilde) + float(_log_scale(r, t)) + log_rhs \
                    if constants.c2_tilde > 0 else -math.inf
                holds = skipped or log_lhs >= bound - 1e-12
            annulus_rows.append({'n': n, 'k': k, 'r': r, 'log_lhs': log_lhs, 'log_rhs': log_rhs,
                                 'skipped': bool(skipped), 'holds': bool(holds)})
        kept = [row['k'] for row in annulus_rows if row['n'] == n and not row['skipped']]
        log_total = _expanded_children_sum(tree, n)
        log_compact = _compact_rhs(tree, n, kept)
        compact_holds = (not np.isfinite(log_compact) or constants.c_compact <= 0
                         or log_total >= math.log(constants.c_compact) + log_compact - 1e-12)
        summed_factor = math.log(constants.c2_tilde) - 3.0 * t * math.log(math.log(2.0)) \
            if constants.c2_tilde > 0 else -math.inf
        log_summed = -math.inf
        if np.isfinite(summed_factor):
            log_summed = _compact_rhs(tree, n, kept, summed_factor)
        summed_holds = not np.isfinite(log_summed) or log_total >= log_summed - 1e-12
        total_rows.append({'n': n, 'log_total': log_total, 'log_compact_rhs': log_compact,
                           'log_summed_rhs': log_summed, 'holds': bool(compact_holds),
                           'summed_holds': bool(summed_holds)})

    annuli = pd.DataFrame(annulus_rows,
                          columns=['n', 'k', 'r', 'log_lhs', 'log_rhs', 'skipped', 'holds'])
    totals = pd.DataFrame(total_rows, columns=['n', 'log_total', 'log_compact_rhs',
                                               'log_summed_rhs', 'holds', 'summed_holds'])
    report = ChainedReport(t=t, constants=constants, annuli=annuli, totals=totals)
    if not report.all_hold:
        logger.warning("Chained bounds fail on some depths")
    return report


# Box counting -----------------------------------------------------------

@dataclass
class DimensionEstimate:
    eps: np.ndarray
    counts: np.ndarray
    dim: float
    ci_low: float
    ci_high: float
    bound_radius: float
    max_iter: int
    window: Tuple[float, float, float, float]

    @property
    def areas(self) -> np.ndarray:
        return self.counts * self.eps ** 2

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'eps': self.eps, 'count': self.counts, 'area': self.areas},
                            columns=['eps', 'count', 'area'])

    def to_dict(self) -> Dict:
        return {'dim': self.dim, 'ci': [self.ci_low, self.ci_high],
                'bound_radius': self.bound_radius, 'max_iter': self.max_iter,
                'window': list(self.window),
                'counts': [{'eps': float(e), 'count': int(c)}
                           for e, c in zip(self.eps, self.counts)]}


def _check_dyadic(eps_list: Sequence[float]) -> np.ndarray:
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if eps.size < 2:
        raise ValueError("Need at least two scales")
    if not np.allclose(eps[1:] / eps[:-1], 0.5, rtol=1e-12):
        raise ValueError("Scales must halve from one to the next")
    return eps


def _require_hyperbolic(fmap: TranscendentalMap, entire: bool):
    if entire and not fmap.is_entire:
        raise NonHyperbolicMap(
            f"{fmap.label} is not entire; the non-escaping proxy needs an entire map",
            family=fmap.family.value)
    report = singular_orbit_report(fmap)
    if not report.hyperbolic:
        raise NonHyperbolicMap(f"{fmap.label} is not hyperbolic: {report.verdict}",
                               report=report.to_dict())
    return report


def _survivors(fmap: TranscendentalMap, points: np.ndarray, max_iter: int, bound_radius: float,
               escape_radius: float, cycles: List[complex], basin_radius: float) -> np.ndarray:
    fates, final = classify_orbits(fmap, points, max_iter, escape_radius, bound_radius,
                                   return_final=True)
    alive = fates == BOUNDED_RETURNS
    if cycles:
        near = np.zeros(points.shape, dtype=bool)
        for p in cycles:
            near |= np.abs(final - p) <= basin_radius * (1.0 + abs(p))
        alive &= ~near
    return alive


def _refine(fmap: TranscendentalMap, window, eps: np.ndarray, max_iter: int, bound_radius: float,
            escape_radius: float, iterations_per_halving: int, basin_radius: float,
            cycles: List[complex]) -> np.ndarray:
    """
    Dyadic refinement of the cells meeting the non-escaping non-Fatou set.

    A cell of side e survives when one of its four quarter-cell centres does;
    only quarters of survivors are tested at e/2. Counts at coarse scales are
    the ancestors of the finest survivors, so N(e/2) <= 4 N(e) and N is
    non-increasing in e.
    """
    x0, x1, y0, y1 = window
    e0 = eps[0]
    nx, ny = int(math.ceil((x1 - x0) / e0)), int(math.ceil((y1 - y0) / e0))
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing='ij')
    cells = (x0 + gx.ravel() * e0) + 1j * (y0 + gy.ravel() * e0)
    quarter = np.array([0.25 + 0.25j, 0.75 + 0.25j, 0.25 + 0.75j, 0.75 + 0.75j])
    survivors_per_scale: List[np.ndarray] = []
    parents_per_scale: List[np.ndarray] = []
    parent_index = np.arange(cells.size)
    for i, e in enumerate(eps):
        if cells.size == 0:
            survivors_per_scale.append(cells)
            parents_per_scale.append(parent_index)
            continue
        pts = (cells[:, None] + e * quarter[None, :]).ravel()
        alive = _survivors(fmap, pts, max_iter + i * iterations_per_halving, bound_radius,
                           escape_radius, cycles, basin_radius).reshape(-1, 4)
        keep = alive.any(axis=1)
        survivors_per_scale.append(np.flatnonzero(keep))
        parents_per_scale.append(parent_index)
        surviving = cells[keep]
        half = 0.5 * e
        offsets = np.array([0, half, 1j * half, half + 1j * half])
        cells = (surviving[:, None] + offsets[None, :]).ravel()
        parent_index = np.repeat(np.arange(surviving.size), 4)

    # ancestors of the finest survivors, walked back scale by scale
    counts = np.zeros(eps.size, dtype=np.int64)
    current = survivors_per_scale[-1]
    counts[-1] = current.size
    for i in range(eps.size - 1, 0, -1):
        # cell j at scale i comes from surviving cell parents_per_scale[i][j] at scale i-1
        ranks = np.unique(parents_per_scale[i][current])
        current = survivors_per_scale[i - 1][ranks]
        counts[i - 1] = current.size
    return counts


def _fit_dimension(eps: np.ndarray, counts: np.ndarray) -> Tuple[float, float, float]:
    positive = counts > 0
    if positive.sum() < 2:
        return 0.0, 0.0, 0.0
    fit = fit_slope(np.log(1.0 / eps[positive]), np.log(counts[positive]))
    def clip(v):
        return float(min(2.0, max(0.0, v)))

    return clip(fit.slope), clip(fit.ci_low), clip(fit.ci_high)


@log_operation('boxcount_nonescaping')
def boxcount_nonescaping(fmap: TranscendentalMap, window: Tuple[float, float, float, float],
                         eps_list: Sequence[float], max_iter: int = 40, R_bnd: float = 1e3,
                         escape_radius: float = 1e6, iterations_per_halving: int = 4,
                         basin_radius: float = 1e-6, min_cells: int = 100) -> DimensionEstimate:
    """
    Box-counting dimension of the non-escaping non-Fatou points of a
    hyperbolic entire map over a window.

    Raises:
        NonHyperbolicMap: If the map is not entire or not hyperbolic
        TooFewCells: If fewer than min_cells boxes survive at the finest scale
    """
    report = _require_hyperbolic(fmap, entire=True)
    eps = _check_dyadic(eps_list)
    cycles = [p for c in report.attracting_cycles for p in c.points]
    counts = _refine(fmap, window, eps, max_iter, R_bnd, escape_radius,
                     iterations_per_halving, basin_radius, cycles)
    dim, lo, hi = _fit_dimension(eps, counts)
    estimate = DimensionEstimate(eps=eps, counts=counts, dim=dim, ci_low=lo, ci_high=hi,
                                 bound_radius=R_bnd, max_iter=max_iter, window=tuple(window))
    logger.info(f"Box counts {counts.tolist()} -> dim {dim:.3f}")
    if counts[-1] < min_cells:
        raise TooFewCells(f"Only {int(counts[-1])} boxes survive at eps={eps[-1]:g}",
                          estimate=estimate, count=int(counts[-1]))
    return estimate


@dataclass
class LebesgueReport:
    eps: np.ndarray
    fractions: np.ndarray

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.fractions) <= 1e-15))

    @property
    def decreasing(self) -> bool:
        return bool(self.fractions[-1] < self.fractions[0]) or bool(self.fractions[0] == 0)

    def to_dict(self) -> Dict:
        return {'monotone': self.monotone, 'decreasing': self.decreasing,
                'fractions': [{'eps': float(e), 'fraction': float(f)}
                              for e, f in zip(self.eps, self.fractions)]}


@log_operation('lebesgue_null_check')
def lebesgue_null_check(fmap: TranscendentalMap, window: Tuple[float, float, float, float],
                        eps: float, halvings: int = 2, max_iter: int = 40, R_bnd: float = 1e3,
                        escape_radius: float = 1e6, iterations_per_halving: int = 4,
                        basin_radius: float = 1e-6) -> LebesgueReport:
    """Area fraction of the window covered by surviving cells at eps, eps/2, ..."""
    report = _require_hyperbolic(fmap, entire=False)
    scales = np.asarray([eps / 2.0 ** i for i in range(halvings + 1)])
    cycles = [p for c in report.attracting_cycles for p in c.points]
    counts = _refine(fmap, window, scales, max_iter, R_bnd, escape_radius,
                     iterations_per_halving, basin_radius, cycles)
    x0, x1, y0, y1 = window
    fractions = counts * scales ** 2 / ((x1 - x0) * (y1 - y0))
    return LebesgueReport(eps=scales, fractions=fractions)
