"""
Preimage sums S_n(t, z0), pressure estimates, the Bowen zero and the regime
classifier.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from pressure_lab.config.settings import Config, TreeSettings
from pressure_lab.core.enums import PressureRegime
from pressure_lab.core.errors import (
    BadBracket, DegenerateRestriction, InconclusiveRegime, InsufficientDepth,
    NoStabilization, TruncationError,
)
from pressure_lab.core.fitting import fit_slope, isotonic_increasing
from pressure_lab.core.maps import TranscendentalMap
from pressure_lab.core.tree import (
    BranchOrbit, PreimageTree, Restriction, restriction_label,
)
from pressure_lab.utils.debug_utils import log_operation

logger = logging.getLogger(__name__)

__all__ = [
    'BranchOrbit', 'PartialSumRecord', 'PressureEstimate', 'PressureCurve',
    'RestrictedPressureTable', 'BowenResult', 'RegimeEvidence',
    'partial_sum', 'estimate_pressure', 'pressure_curve', 'restricted_pressure_check',
    'find_bowen_zero', 'classify_regime',
]

MIN_DEPTH = 4
DIVERGENCE_JUMP = 1.0


@dataclass(frozen=True)
class PartialSumRecord:
    n: int
    t: float
    restriction: Optional[Restriction]
    K: int
    log_sum: float
    term_count: int
    tail_bound: float

    def to_dict(self) -> Dict:
        return {
            'n': self.n, 't': self.t, 'restriction': restriction_label(self.restriction),
            'K': self.K, 'log_sum': self.log_sum, 'term_count': self.term_count,
            'tail_bound': self.tail_bound,
        }


def _record(tree: PreimageTree, n: int, restriction: Optional[Restriction]) -> PartialSumRecord:
    summary = tree.summaries[n]
    return PartialSumRecord(n=n, t=tree.t, restriction=restriction, K=summary.cutoff,
                            log_sum=tree.log_sum(n, restriction),
                            term_count=tree.term_count(n, restriction),
                            tail_bound=summary.tail_bound)


def _settings(settings: Optional[TreeSettings]) -> TreeSettings:
    return settings if settings is not None else TreeSettings.from_config(Config)


def partial_sum(fmap: TranscendentalMap, t: float, z0: complex, n: int, K: int,
                restriction: Optional[Restriction] = None,
                settings: Optional[TreeSettings] = None, seed: int = 0) -> PartialSumRecord:
    """
    log S_n(t, z0), the log of the sum of |(f^n)*(w)|^{-t} over the depth-n
    preimages w of z0 (optionally only those with |w| in the restriction).

    Raises:
        OmittedValueAtNode: If a node of the tree has no preimages
        TreeBudgetExceeded: If a level would exceed the node budget
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return PartialSumRecord(n=0, t=float(t), restriction=restriction, K=int(K),
                                log_sum=0.0, term_count=1, tail_bound=0.0)
    restrictions = [restriction] if restriction is not None else []
    tree = PreimageTree(fmap, z0, t, n, K, settings=_settings(settings),
                        restrictions=restrictions, keep_levels=False, seed=seed).build()
    return _record(tree, n, restriction)


@dataclass
class PressureEstimate:
    t: float
    pressure: float
    error: float
    window: Tuple[int, int]
    records: List[PartialSumRecord]
    tail_bound: float
    diverging: bool = False
    restriction: Optional[Restriction] = None

    @property
    def lower(self) -> float:
        return self.pressure - self.error

    @property
    def upper(self) -> float:
        return self.pressure + self.error

    @property
    def positive(self) -> bool:
        """Strictly positive beyond the error bar."""
        return self.lower > 0

    @property
    def negative(self) -> bool:
        return self.upper < 0

    @property
    def straddles_zero(self) -> bool:
        return not (self.positive or self.negative)

    def __iter__(self):
        return iter((self.pressure, self.error))


def _fit_records(t: float, records: List[PartialSumRecord], n_max: int,
                 restriction: Optional[Restriction]) -> PressureEstimate:
    n1 = int(math.ceil(n_max / 2.0))
    window = [r for r in records if n1 <= r.n <= n_max]
    ns = np.array([r.n for r in window], dtype=float)
    ys = np.array([r.log_sum for r in window], dtype=float)
    if not np.all(np.isfinite(ys)):
        raise DegenerateRestriction("Restricted sum is empty inside the fit window",
                                    t=t, restriction=restriction_label(restriction))
    fit = fit_slope(ns, ys)
    increments = np.diff(ys)
    spread = 0.5 * float(increments.max() - increments.min()) if increments.size > 1 else 0.0
    error = max(fit.stderr, spread)

    ratios = {r.n: r.log_sum / r.n for r in records if r.n >= 1}
    # the three largest depths
    tops = sorted(ratios)[-3:]
    diverging = len(tops) == 3 and all(ratios[b] - ratios[a] > DIVERGENCE_JUMP
                                       for a, b in zip(tops, tops[1:]))
    return PressureEstimate(t=t, pressure=fit.slope, error=error, window=(n1, n_max),
                            records=records, tail_bound=records[-1].tail_bound,
                            diverging=diverging, restriction=restriction)


def _check_tail(tail_bound: float, settings: TreeSettings, t: float) -> None:
    if tail_bound > settings.max_tail_bound:
        raise TruncationError(
            f"Sheet tail {tail_bound:.3g} exceeds {settings.max_tail_bound:g} at t={t:g}",
            t=t, tail_bound=tail_bound)
    if tail_bound > settings.eps_trunc:
        logger.warning(
            f"Sheet tail {tail_bound:.3g} above eps_trunc={settings.eps_trunc:g} at t={t:g}")


def _build_for_estimate(fmap, t, z0, n_max, K, settings, seed, restrictions) -> PreimageTree:
    if n_max < MIN_DEPTH:
        raise InsufficientDepth(f"n_max={n_max} is below the minimum depth {MIN_DEPTH}",
                                n_max=n_max)
    if math.isinf(settings.eps_trunc) or t <= 0.5:
        raise TruncationError(f"Sheet tail is infinite at t={t:g}", t=t)
    return PreimageTree(fmap, z0, t, n_max, K, settings=settings, restrictions=restrictions,
                        keep_levels=False, seed=seed).build()


def estimate_pressure(fmap: TranscendentalMap, t: float, z0: complex, n_max: int, K: int,
                      restriction: Optional[Restriction] = None,
                      settings: Optional[TreeSettings] = None, seed: int = 0) -> PressureEstimate:
    """
    Growth rate of n -> log S_n over the window [ceil(n_max/2), n_max].

    The error is the larger of the regression standard error and half the
    range of the increments log S_{n+1} - log S_n inside the window.

    Raises:
        InsufficientDepth: If n_max < 4
        TruncationError: If the sheet tail exceeds the configured maximum
    """
    settings = _settings(settings)
    restrictions = [restriction] if restriction is not None else []
    tree = _build_for_estimate(fmap, t, z0, n_max, K, settings, seed, restrictions)
    records = [_record(tree, n, restriction) for n in range(0, n_max + 1)]
    _check_tail(records[-1].tail_bound, settings, t)
    estimate = _fit_records(float(t), records, n_max, restriction)
    logger.info(f"P({t:g}) = {estimate.pressure:.6f} +/- {estimate.error:.2e} "
                f"[{restriction_label(restriction) or 'unrestricted'}]")
    return estimate


@dataclass
class PressureCurve:
    """Pressure estimates over a t grid, with the Bowen zero and divergence threshold."""
    fmap: TranscendentalMap
    z0: complex
    entries: List[PressureEstimate] = field(default_factory=list)
    t0: Optional[float] = None
    t_inf: Optional[float] = None

    def non_increasing(self) -> bool:
        """P(t) non-increasing within combined error bars."""
        for a, b in zip(self.entries, self.entries[1:]):
            if b.pressure > a.pressure + a.error + b.error:
                return False
        return True

    def convexity_violations(self) -> List[float]:
        """Grid points where the discrete second difference is below -(combined error)."""
        bad = []
        for a, b, c in zip(self.entries, self.entries[1:], self.entries[2:]):
            second = a.pressure - 2.0 * b.pressure + c.pressure
            if second < -(a.error + 2.0 * b.error + c.error):
                bad.append(b.t)
        return bad

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for e in self.entries:
            last = e.records[-1]
            rows.append({
                'family': self.fmap.family.value,
                'lambda_re': self.fmap.lam.real,
                'lambda_im': self.fmap.lam.imag,
                't': e.t,
                'n': last.n,
                'K': last.K,
                'restriction': restriction_label(e.restriction),
                'log_sum': last.log_sum,
                'term_count': last.term_count,
                'tail_bound': last.tail_bound,
                'pressure': e.pressure,
                'error': e.error,
                'window_start': e.window[0],
                'window_end': e.window[1],
            })
        return pd.DataFrame(rows, columns=PRESSURE_COLUMNS)

    def jsonl_lines(self) -> List[str]:
        base = {'family': self.fmap.family.value, 'lambda_re': self.fmap.lam.real,
                'lambda_im': self.fmap.lam.imag}
        lines = []
        for e in self.entries:
            for r in e.records:
                record = dict(base, type='partial_sum', **r.to_dict())
                lines.append(json.dumps(record, sort_keys=True))
            curve = dict(base, type='curve', t=e.t, pressure=e.pressure, error=e.error,
                         window=list(e.window), diverging=e.diverging)
            lines.append(json.dumps(curve, sort_keys=True))
        if self.t0 is not None or self.t_inf is not None:
            lines.append(json.dumps(dict(base, type='summary', t0=self.t0, t_inf=self.t_inf),
                                    sort_keys=True))
        return lines


PRESSURE_COLUMNS = ['family', 'lambda_re', 'lambda_im', 't', 'n', 'K', 'restriction', 'log_sum',
                    'term_count', 'tail_bound', 'pressure', 'error', 'window_start', 'window_end']


@log_operation('pressure_curve')
def pressure_curve(fmap: TranscendentalMap, t_grid: Sequence[float], z0: complex, n_max: int,
                   K: int, settings: Optional[TreeSettings] = None, seed: int = 0) -> PressureCurve:
    """Estimate the pressure on every t of the grid and attach t0 / t_inf when visible."""
    curve = PressureCurve(fmap=fmap, z0=complex(z0))
    for t in sorted(t_grid):
        curve.entries.append(estimate_pressure(fmap, t, z0, n_max, K, settings=settings, seed=seed))
    if len(curve.entries) >= 2:
        try:
            evidence = classify_regime(curve)
            curve.t0, curve.t_inf = evidence.t0, evidence.t_inf
        except InconclusiveRegime as e:
            logger.info(f"Regime not classified: {e.message}")
    return curve


@dataclass
class RestrictedPressureTable:
    radii: List[float]
    raw: List[PressureEstimate]
    pressures: List[float]
    unrestricted: PressureEstimate
    tolerance: float
    sums_monotone: bool

    @property
    def stabilized(self) -> bool:
        if len(self.pressures) < 2:
            return False
        return abs(self.pressures[-1] - self.pressures[-2]) <= self.tolerance

    @property
    def stabilization_radius(self) -> Optional[float]:
        if not self.stabilized:
            return None
        last = self.pressures[-1]
        radius = self.radii[-1]
        for r, p in zip(reversed(self.radii), reversed(self.pressures)):
            if abs(p - last) > self.tolerance:
                break
            radius = r
        return radius

    def ensure_stable(self) -> 'RestrictedPressureTable':
        if not self.stabilized:
            raise NoStabilization("Restricted pressures of the two largest radii disagree",
                                  table=self, radii=self.radii[-2:], pressures=self.pressures[-2:])
        return self

    def rows(self) -> List[Tuple[float, float]]:
        return list(zip(self.radii, self.pressures))


@log_operation('restricted_pressure_check')
def restricted_pressure_check(fmap: TranscendentalMap, t: float, z0: complex,
                              r_list: Sequence[float], n_max: int, K: int, tol: float = 0.05,
                              settings: Optional[TreeSettings] = None,
                              seed: int = 0) -> RestrictedPressureTable:
    """
    Pressure of the sums restricted to discs D(r), all read off one tree.

    Restricted sums are monotone in r level by level. The reported pressures
    are the least-squares non-decreasing fit of the per-radius slopes;
    the raw slopes are kept alongside.

    Raises:
        DegenerateRestriction: If some level has no endpoint inside a disc
    """
    radii = [float(r) for r in r_list]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("r_list must be strictly increasing")
    settings = _settings(settings)
    discs = [Restriction.disc(r) for r in radii]
    tree = _build_for_estimate(fmap, t, z0, n_max, K, settings, seed, discs)

    for r, disc in zip(radii, discs):
        for n in range(1, n_max + 1):
            if tree.term_count(n, disc) == 0:
                raise DegenerateRestriction(f"No depth-{n} preimage inside D({r:g})",
                                            radius=r, depth=n)

    raw = [_fit_records(float(t), [_record(tree, n, d) for n in range(n_max + 1)], n_max, d)
           for d in discs]
    unrestricted = _fit_records(float(t), [_record(tree, n, None) for n in range(n_max + 1)],
                                n_max, None)
    _check_tail(unrestricted.tail_bound, settings, t)

    sums_monotone = all(
        tree.log_sum(n, a) <= tree.log_sum(n, b) <= tree.log_sum(n)
        for n in range(1, n_max + 1) for a, b in zip(discs, discs[1:])
    )
    pressures = [float(p) for p in isotonic_increasing([e.pressure for e in raw])]
    table = RestrictedPressureTable(radii=radii, raw=raw, pressures=pressures,
                                    unrestricted=unrestricted, tolerance=tol,
                                    sums_monotone=sums_monotone)
    if not table.stabilized:
        logger.warning(f"Restricted pressure not stabilised: {pressures[-2:]} (tol {tol})")
    return table


@dataclass
class BowenResult:
    t0: float
    bracket: Tuple[float, float]
    estimate_lo: PressureEstimate
    estimate_hi: PressureEstimate
    sign_ambiguous: bool
    iterations: int
    evaluations: List[PressureEstimate] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            't0': self.t0,
            'bracket': list(self.bracket),
            'width': self.bracket[1] - self.bracket[0],
            'estimate_lo': {'t': self.estimate_lo.t, 'pressure': self.estimate_lo.pressure,
                            'error': self.estimate_lo.error},
            'estimate_hi': {'t': self.estimate_hi.t, 'pressure': self.estimate_hi.pressure,
                            'error': self.estimate_hi.error},
            'sign_ambiguous': self.sign_ambiguous,
            'iterations': self.iterations,
            'evaluations': [{'t': e.t, 'pressure': e.pressure, 'error': e.error}
                            for e in self.evaluations],
        }


@log_operation('find_bowen_zero')
def find_bowen_zero(fmap: TranscendentalMap, z0: complex, t_bracket: Tuple[float, float],
                    tol: float, n_max: int, K: int, settings: Optional[TreeSettings] = None,
                    seed: int = 0, max_its: int = 60) -> BowenResult:
    """
    Bisection on the sign of the pressure estimate.

    The bracket must certify the sign change: P(t_lo) > 0 and P(t_hi) < 0
    beyond their error bars. Midpoints whose error bar straddles zero are
    followed by the sign of the estimate and flagged.

    Raises:
        BadBracket: If the endpoints do not certify a sign change
    """
    t_lo, t_hi = float(t_bracket[0]), float(t_bracket[1])
    if not t_lo < t_hi:
        raise ValueError("Expected t_lo < t_hi")
    if tol <= 0:
        raise ValueError("tol must be positive")

    def estimate(t):
        return estimate_pressure(fmap, t, z0, n_max, K, settings=settings, seed=seed)

    est_lo, est_hi = estimate(t_lo), estimate(t_hi)
    evaluations = [est_lo, est_hi]
    if not (est_lo.positive and est_hi.negative):
        raise BadBracket(
            f"Bracket [{t_lo:g}, {t_hi:g}] does not certify a sign change",
            t_lo=t_lo, t_hi=t_hi,
            pressure_lo=est_lo.pressure, error_lo=est_lo.error,
            pressure_hi=est_hi.pressure, error_hi=est_hi.error,
            sign_lo=int(np.sign(est_lo.pressure)), sign_hi=int(np.sign(est_hi.pressure)))

    ambiguous = False
    i = 0
    while t_hi - t_lo > tol:
        i += 1
        if i > max_its:
            raise BadBracket("Exceeded maximum number of bisection steps", t_lo=t_lo, t_hi=t_hi)
        t_mid = 0.5 * (t_lo + t_hi)
        est_mid = estimate(t_mid)
        evaluations.append(est_mid)
        if est_mid.straddles_zero:
            ambiguous = True
        if est_mid.pressure > 0:
            t_lo, est_lo = t_mid, est_mid
        else:
            t_hi, est_hi = t_mid, est_mid

    ambiguous = ambiguous or est_lo.straddles_zero or est_hi.straddles_zero
    if ambiguous:
        logger.warning(f"Bowen bracket [{t_lo:g}, {t_hi:g}] is sign-ambiguous within error bars")
    return BowenResult(t0=0.5 * (t_lo + t_hi), bracket=(t_lo, t_hi), estimate_lo=est_lo,
                       estimate_hi=est_hi, sign_ambiguous=ambiguous, iterations=i,
                       evaluations=evaluations)


@dataclass
class RegimeEvidence:
    regime: PressureRegime
    t0: Optional[float]
    t_inf: Optional[float]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {'regime': self.regime.name, 'description': self.regime.value,
                't0': self.t0, 't_inf': self.t_inf, 'notes': self.notes}


def classify_regime(curve: PressureCurve,
                    t_grid: Optional[Sequence[float]] = None) -> RegimeEvidence:
    """
    Empirical label among the three shapes of t -> P(f, t).

    A: divergence below a finite zero; B: finite pressure down to the lowest
    finite grid point with a zero; C: a jump from divergence to negative values.

    Raises:
        InconclusiveRegime: On fewer than two grid points or conflicting evidence
    """
    entries = sorted(curve.entries, key=lambda e: e.t)
    if t_grid is not None:
        wanted = {round(float(t), 12) for t in t_grid}
        entries = [e for e in entries if round(e.t, 12) in wanted]
    if len(entries) < 2:
        raise InconclusiveRegime("Need at least two grid points", points=len(entries))

    diverging = [e for e in entries if e.diverging or not math.isfinite(e.pressure)]
    finite = [e for e in entries if e not in diverging]
    notes: List[str] = []
    if not finite:
        raise InconclusiveRegime("Pressure diverges on the whole grid")
    if diverging and max(e.t for e in diverging) > min(e.t for e in finite):
        raise InconclusiveRegime("Divergence detected above a finite grid point")
    for a, b in zip(finite, finite[1:]):
        if b.pressure > a.pressure + a.error + b.error:
            raise InconclusiveRegime(f"Pressure increases between t={a.t:g} and t={b.t:g}")

    t_inf = None
    if diverging:
        t_inf = 0.5 * (max(e.t for e in diverging) + finite[0].t)
        notes.append(f"divergence detected up to t={max(e.t for e in diverging):g}")

    first_nonpos = next((i for i, e in enumerate(finite) if e.pressure <= 0), None)
    if first_nonpos is None:
        raise InconclusiveRegime("No zero crossing on the grid", t_max=finite[-1].t)

    if first_nonpos > 0:
        a, b = finite[first_nonpos - 1], finite[first_nonpos]
        t0 = a.t + (b.t - a.t) * a.pressure / (a.pressure - b.pressure)
        regime = PressureRegime.A if diverging else PressureRegime.B
        return RegimeEvidence(regime, t0, t_inf, notes)

    head = finite[0]
    if not diverging:
        raise InconclusiveRegime("Grid starts below zero without divergence evidence", t=head.t)
    if head.negative:
        notes.append("pressure jumps from divergence to negative values")
        return RegimeEvidence(PressureRegime.C, t_inf, t_inf, notes)
    notes.append("pressure finite and near zero at the divergence threshold")
    return RegimeEvidence(PressureRegime.B, head.t, t_inf, notes)
