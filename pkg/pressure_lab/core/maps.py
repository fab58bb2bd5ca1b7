"""
Map families, spherical derivatives and inverse branches.

All array routines accept numpy arrays of complex points and work in
log-space wherever |f| or |f'| can leave the double range.
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import lambertw

from pressure_lab.config.settings import Config
from pressure_lab.core.enums import MapFamily, OrbitFate
from pressure_lab.core.errors import (
    ConfigError, CriticalValueHit, NonConvergence, OmittedValue,
)

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi
LOG_POLE_SWITCH = math.log(Config.POLE_SWITCH)
# |Im z| above which |sin z| is replaced by its exponential asymptote
_SIN_ASYMPTOTE = 300.0
_SINGULAR_TOL = 1e-14
REPELLING_MARGIN = 1e-6
_SEED_EXCLUSION = 1e-6

# integer codes used by the vectorised orbit classifier
FATE_CODES = (OrbitFate.UNDECIDED, OrbitFate.ESCAPING,
              OrbitFate.BOUNDED_RETURNS, OrbitFate.HIT_POLE)
UNDECIDED, ESCAPING, BOUNDED_RETURNS, HIT_POLE = range(4)


@dataclass(frozen=True)
class TranscendentalMap:
    """One of the built-in families lambda*e^z, lambda*sin z, lambda*tan z, z*e^z."""
    family: MapFamily
    lam: complex = 1 + 0j

    def __post_init__(self):
        if not isinstance(self.family, MapFamily):
            object.__setattr__(self, 'family', MapFamily(self.family))
        object.__setattr__(self, 'lam', complex(self.lam))
        if self.family is MapFamily.ZEXP:
            object.__setattr__(self, 'lam', 1 + 0j)
        elif self.lam == 0:
            raise ConfigError(f"lambda must be non-zero for {self.family.name}",
                              family=self.family.value)

    @classmethod
    def exp(cls, lam: complex) -> 'TranscendentalMap':
        return cls(MapFamily.EXP, lam)

    @classmethod
    def sin(cls, lam: complex) -> 'TranscendentalMap':
        return cls(MapFamily.SIN, lam)

    @classmethod
    def tan(cls, lam: complex) -> 'TranscendentalMap':
        return cls(MapFamily.TAN, lam)

    @classmethod
    def zexp(cls) -> 'TranscendentalMap':
        return cls(MapFamily.ZEXP)

    @property
    def is_entire(self) -> bool:
        return self.family is not MapFamily.TAN

    @property
    def log_abs_lam(self) -> float:
        return math.log(abs(self.lam))

    @property
    def label(self) -> str:
        if self.family is MapFamily.ZEXP:
            return 'z*exp(z)'
        return f"{self.family.value}(lambda={self.lam.real:g}{self.lam.imag:+g}i)"

    def singular_values(self) -> List[complex]:
        if self.family is MapFamily.EXP:
            return [0j]
        if self.family is MapFamily.SIN:
            return [self.lam, -self.lam]
        if self.family is MapFamily.TAN:
            return [1j * self.lam, -1j * self.lam]
        return [0j, complex(-1.0 / math.e)]

    def critical_values(self) -> List[complex]:
        if self.family is MapFamily.SIN:
            return [self.lam, -self.lam]
        if self.family is MapFamily.ZEXP:
            return [complex(-1.0 / math.e)]
        return []

    def omitted_values(self) -> List[complex]:
        if self.family is MapFamily.EXP:
            return [0j]
        if self.family is MapFamily.TAN:
            return [1j * self.lam, -1j * self.lam]
        return []


@dataclass(frozen=True)
class SphericalPoint:
    """A point of the Riemann sphere."""
    value: complex = 0j
    at_infinity: bool = False

    @classmethod
    def infinity(cls) -> 'SphericalPoint':
        return cls(0j, True)


@dataclass(frozen=True, order=True)
class BranchIndex:
    """Sheet label of an inverse branch."""
    k: int


# Elementary log-space pieces ----------------------------------------------

def _log_abs(z: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(np.abs(z))


def _log_abs_sin(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    y = np.abs(z.imag)
    with np.errstate(all='ignore'):
        direct = _log_abs(np.sin(np.where(y <= _SIN_ASYMPTOTE, z, 0j)))
    return np.where(y <= _SIN_ASYMPTOTE, direct, y - math.log(2.0))


def _log1p_sq(log_abs: np.ndarray) -> np.ndarray:
    """log(1 + |x|^2) given log|x|."""
    return np.logaddexp(0.0, 2.0 * log_abs)


def tan_pole_mask(z: np.ndarray) -> np.ndarray:
    """True where z is a pole pi/2 + k*pi of tan up to rounding."""
    z = np.asarray(z, dtype=complex)
    k = np.round((z.real - HALF_PI) / math.pi)
    pole = HALF_PI + k * math.pi
    return np.abs(z - pole) <= 8.0 * np.finfo(float).eps * (1.0 + np.abs(pole))


def log_abs_f(fmap: TranscendentalMap, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    fam = fmap.family
    if fam is MapFamily.EXP:
        return fmap.log_abs_lam + z.real
    if fam is MapFamily.SIN:
        return fmap.log_abs_lam + _log_abs_sin(z)
    if fam is MapFamily.TAN:
        out = fmap.log_abs_lam + _log_abs_sin(z) - _log_abs_sin(z + HALF_PI)
        return np.where(tan_pole_mask(z), np.inf, out)
    return _log_abs(z) + z.real


def log_abs_derivative(fmap: TranscendentalMap, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    fam = fmap.family
    if fam is MapFamily.EXP:
        return fmap.log_abs_lam + z.real
    if fam is MapFamily.SIN:
        return fmap.log_abs_lam + _log_abs_sin(z + HALF_PI)
    if fam is MapFamily.TAN:
        out = fmap.log_abs_lam - 2.0 * _log_abs_sin(z + HALF_PI)
        return np.where(tan_pole_mask(z), np.inf, out)
    return _log_abs(1.0 + z) + z.real


def log_spherical_derivative(fmap: TranscendentalMap, z) -> np.ndarray:
    """
    log f*(z) = log(1+|z|^2) + log|f'(z)| - log(1+|f(z)|^2), vectorised.

    For tan, points with |f(z)| > 1e8 (poles included) go through the
    reciprocal map 1/f, which keeps the value finite and continuous.
    """
    z = np.asarray(z, dtype=complex)
    log_z = _log1p_sq(_log_abs(z))
    lf = log_abs_f(fmap, z)
    ld = log_abs_derivative(fmap, z)
    if fmap.family is not MapFamily.TAN:
        with np.errstate(invalid='ignore'):
            return log_z + ld - _log1p_sq(lf)

    near = lf > LOG_POLE_SWITCH
    with np.errstate(invalid='ignore'):
        regular = log_z + ld - _log1p_sq(lf)
        # 1/f = cot(z)/lambda, (1/f)' = -1/(lambda sin^2 z)
        log_recip = np.where(tan_pole_mask(z), -np.inf,
                             _log_abs_sin(z + HALF_PI) - _log_abs_sin(z) - fmap.log_abs_lam)
        reciprocal = log_z - fmap.log_abs_lam - 2.0 * _log_abs_sin(z) - _log1p_sq(log_recip)
    return np.where(near, reciprocal, regular)


def spherical_derivative(fmap: TranscendentalMap, z: complex) -> float:
    """|f*(z)| = (1+|z|^2)|f'(z)| / (1+|f(z)|^2)."""
    return float(np.exp(log_spherical_derivative(fmap, np.asarray([z]))[0]))


def f_values(fmap: TranscendentalMap, z) -> np.ndarray:
    """f on an array; overflow and poles give complex infinity (inf + 0j)."""
    z = np.asarray(z, dtype=complex)
    fam = fmap.family
    with np.errstate(all='ignore'):
        if fam is MapFamily.EXP:
            out = fmap.lam * np.exp(z)
        elif fam is MapFamily.SIN:
            out = fmap.lam * np.sin(z)
        elif fam is MapFamily.TAN:
            big = np.abs(z.imag) > _SIN_ASYMPTOTE
            out = fmap.lam * np.where(big, 1j * np.sign(z.imag), np.tan(np.where(big, 0j, z)))
            out = np.where(tan_pole_mask(z), complex(np.inf, 0.0), out)
        else:
            out = z * np.exp(z)
    bad = ~np.isfinite(out)
    if np.any(bad):
        out = np.where(bad, complex(np.inf, 0.0), out)
    return out


def evaluate(fmap: TranscendentalMap, z: complex) -> SphericalPoint:
    """f(z) as a point of the sphere; poles and overflow map to infinity."""
    value = complex(f_values(fmap, np.asarray([z]))[0])
    if not cmath.isfinite(value):
        return SphericalPoint.infinity()
    return SphericalPoint(value, False)


def derivative(fmap: TranscendentalMap, z):
    """f'(z), vectorised."""
    z = np.asarray(z, dtype=complex)
    fam = fmap.family
    with np.errstate(all='ignore'):
        if fam is MapFamily.EXP:
            return fmap.lam * np.exp(z)
        if fam is MapFamily.SIN:
            return fmap.lam * np.cos(z)
        if fam is MapFamily.TAN:
            return fmap.lam / np.cos(z) ** 2
        return (1.0 + z) * np.exp(z)


def second_derivative(fmap: TranscendentalMap, z):
    """f''(z), vectorised."""
    z = np.asarray(z, dtype=complex)
    fam = fmap.family
    with np.errstate(all='ignore'):
        if fam is MapFamily.EXP:
            return fmap.lam * np.exp(z)
        if fam is MapFamily.SIN:
            return -fmap.lam * np.sin(z)
        if fam is MapFamily.TAN:
            return 2.0 * fmap.lam * np.tan(z) / np.cos(z) ** 2
        return (2.0 + z) * np.exp(z)


def log_iterate_spherical_derivative(fmap: TranscendentalMap, z: complex, n: int) -> float:
    """
    log|(f^n)*(z)| from the forward orbit in one product:
    log(1+|z|^2) + sum log|f'(z_j)| - log(1+|z_n|^2).
    """
    if n == 0:
        return 0.0
    orbit = [complex(z)]
    for _ in range(n - 1):
        orbit.append(_step(fmap, orbit[-1]))
    pts = np.asarray(orbit)
    log_end = log_abs_f(fmap, pts[-1:])
    total = float(_log1p_sq(_log_abs(pts[:1]))[0])
    total += float(np.sum(log_abs_derivative(fmap, pts)))
    total -= float(_log1p_sq(log_end)[0])
    return total


def spherical_distance(a: Union[complex, SphericalPoint],
                       b: Union[complex, SphericalPoint]) -> float:
    """Geodesic distance for ds = 2|dz|/(1+|z|^2); the sphere has diameter pi."""
    a = a if isinstance(a, SphericalPoint) else SphericalPoint(complex(a))
    b = b if isinstance(b, SphericalPoint) else SphericalPoint(complex(b))
    if a.at_infinity and b.at_infinity:
        return 0.0
    if a.at_infinity or b.at_infinity:
        finite = b.value if a.at_infinity else a.value
        return 2.0 * math.atan2(1.0, abs(finite))
    num = abs(a.value - b.value)
    den = abs(1.0 + a.value.conjugate() * b.value)
    return 2.0 * math.atan2(num, den)


def spherical_distance_array(z: np.ndarray, targets: Sequence[complex]) -> np.ndarray:
    """Distance from each point (inf allowed) to the nearest target; infinity may be a target."""
    z = np.asarray(z, dtype=complex)
    best = np.full(z.shape, np.pi)
    inf_z = ~np.isfinite(z)
    zf = np.where(inf_z, 0j, z)
    for tgt in targets:
        if not cmath.isfinite(tgt):
            d = np.where(inf_z, 0.0, 2.0 * np.arctan2(1.0, np.abs(zf)))
        else:
            d = 2.0 * np.arctan2(np.abs(zf - tgt), np.abs(1.0 + np.conj(zf) * tgt))
            d = np.where(inf_z, 2.0 * math.atan2(1.0, abs(tgt)), d)
        best = np.minimum(best, d)
    return best


# Inverse branches -----------------------------------------------------------

def preimage_grid(fmap: TranscendentalMap, w, ks,
                  tol: float = Config.ROOT_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Preimages of every w on the sheets ks.

    Args:
        w: complex array of shape (n,)
        ks: integer sheet indices, shape (m,) shared by all rows or (n, m)

    Returns:
        (Z, valid): complex (n, m) preimages and a mask of sheets that exist.

    Raises:
        OmittedValue: If some w is an omitted value of the family
        CriticalValueHit: If some w is a critical value
        NonConvergence: If Newton polishing fails (z*e^z only)
    """
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    ks = np.asarray(ks, dtype=np.int64)
    if ks.ndim == 1:
        ks = ks[None, :]
    W = w[:, None]
    fam = fmap.family

    for value in fmap.omitted_values():
        hit = np.abs(w - value) <= _SINGULAR_TOL * (1.0 + abs(value))
        if np.any(hit):
            raise OmittedValue(f"{complex(w[hit][0])} is an omitted value of {fmap.label}",
                               w=complex(w[hit][0]), family=fam.value)
    for value in fmap.critical_values():
        hit = np.abs(w - value) <= _SINGULAR_TOL * (1.0 + abs(value))
        if np.any(hit):
            raise CriticalValueHit(f"{complex(w[hit][0])} is a critical value of {fmap.label}",
                                   w=complex(w[hit][0]), family=fam.value)

    valid = np.ones(np.broadcast(W, ks).shape, dtype=bool)
    if fam is MapFamily.EXP:
        Z = np.log(W / fmap.lam) + 2j * math.pi * ks
    elif fam is MapFamily.SIN:
        base = np.arcsin(W / fmap.lam)
        sign = np.where(ks % 2 == 0, 1.0, -1.0)
        Z = sign * base + ks * math.pi
    elif fam is MapFamily.TAN:
        Z = np.arctan(W / fmap.lam) + ks * math.pi
    else:
        Z, valid = _zexp_preimages(W, ks, tol)
    return np.asarray(Z, dtype=complex), valid


def _zexp_preimages(W: np.ndarray, ks: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    shape = np.broadcast(W, ks).shape
    Wb = np.broadcast_to(W, shape)
    Kb = np.broadcast_to(ks, shape)
    zero = Wb == 0
    # the only preimage of 0 is 0, on sheet 0
    valid = ~zero | (Kb == 0)
    Wn = np.where(zero, 1.0 + 0j, Wb)

    with np.errstate(all='ignore'):
        Z = lambertw(Wn, Kb, tol=1e-15)
        seed_log = np.log(Wn) + 2j * math.pi * Kb
        fallback = seed_log - np.log(np.where(seed_log == 0, 1.0, seed_log))
        Z = np.where(np.isfinite(Z), Z, fallback)
        for _ in range(Config.NEWTON_MAX_STEPS):
            step = (Z - Wn * np.exp(-Z)) / (1.0 + Z)
            step = np.where(np.isfinite(step), step, 0j)
            Z = Z - step
            if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(Z))):
                break
        residual = np.abs(Z * np.exp(Z) - Wn)
    Z = np.where(zero, 0j, Z)
    ok = (residual < tol * (1.0 + np.abs(Wn))) | zero
    bad = valid & ~ok
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise NonConvergence("Newton iteration did not reach the root tolerance",
                             w=complex(Wb[tuple(idx)]), sheet=int(Kb[tuple(idx)]),
                             residual=float(residual[tuple(idx)]), failures=int(bad.sum()))
    return Z, valid


def sheet_range(K: int) -> np.ndarray:
    return np.arange(-K, K + 1, dtype=np.int64)


def inverse_branches(fmap: TranscendentalMap, w: complex,
                     K: int) -> List[Tuple[BranchIndex, complex]]:
    """
    All preimages of w on sheets with |k| <= K, ordered by k.

    Raises:
        OmittedValue, CriticalValueHit, NonConvergence
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    ks = sheet_range(K)
    Z, valid = preimage_grid(fmap, np.asarray([w]), ks)
    return [(BranchIndex(int(k)), complex(z)) for k, z, ok in zip(ks, Z[0], valid[0]) if ok]


def _sheet_estimate(fmap: TranscendentalMap, w: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    fam = fmap.family
    with np.errstate(all='ignore'):
        if fam is MapFamily.EXP:
            base = np.log(w / fmap.lam)
            return np.round((anchor.imag - base.imag) / TWO_PI)
        if fam is MapFamily.SIN:
            return np.round(anchor.real / math.pi)
        if fam is MapFamily.TAN:
            base = np.arctan(w / fmap.lam)
            return np.round((anchor.real - base.real) / math.pi)
        return np.round(anchor.imag / TWO_PI)


def nearest_preimages(fmap: TranscendentalMap, w, anchor,
                      window: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised continuation of an inverse branch: for each w the preimage
    closest to anchor (a scalar or an array like w).

    Returns:
        (sheet indices, preimages)
    """
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    anchor = np.broadcast_to(np.asarray(anchor, dtype=complex), w.shape)
    k_hat = np.nan_to_num(_sheet_estimate(fmap, w, anchor)).astype(np.int64)
    ks = k_hat[:, None] + np.arange(-window, window + 1)[None, :]
    Z, valid = preimage_grid(fmap, w, ks)
    dist = np.where(valid, np.abs(Z - anchor[:, None]), np.inf)
    best = np.argmin(dist, axis=1)
    rows = np.arange(w.size)
    return ks[rows, best], Z[rows, best]


def nearest_preimage(fmap: TranscendentalMap, w: complex,
                     anchor: complex) -> Tuple[BranchIndex, complex]:
    """The preimage of w closest to anchor, with its sheet index."""
    ks, zs = nearest_preimages(fmap, np.asarray([w]), anchor)
    return BranchIndex(int(ks[0])), complex(zs[0])


# Forward orbits -------------------------------------------------------------

def classify_orbits(fmap: TranscendentalMap, z, max_iter: int,
                    escape_radius: float = Config.ESCAPE_RADIUS,
                    bound_radius: float = Config.BOUND_RADIUS,
                    return_final: bool = False):
    """
    Vectorised orbit classification.

    ESCAPING: overflow to infinity, or |z| above escape_radius and increasing
    for the last quarter of the iterations. BOUNDED_RETURNS: |z| below
    bound_radius at least once in the second half. HIT_POLE: an exact pole of
    tan is met.

    Returns:
        int8 codes indexing FATE_CODES (and the final orbit points if requested)
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not escape_radius > bound_radius > 0:
        raise ValueError("need escape_radius > bound_radius > 0")

    z = np.array(z, dtype=complex, copy=True)
    shape = z.shape
    z = z.ravel()
    fates = np.full(z.size, UNDECIDED, dtype=np.int8)
    active = np.ones(z.size, dtype=bool)
    returned = np.zeros(z.size, dtype=bool)
    run = np.zeros(z.size, dtype=np.int32)
    prev_abs = np.abs(z)
    needed_run = max(1, max_iter // 4)
    half = max_iter / 2.0

    for i in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = z[idx]
        if fmap.family is MapFamily.TAN:
            pole = tan_pole_mask(cur)
            if np.any(pole):
                fates[idx[pole]] = HIT_POLE
                active[idx[pole]] = False
                z[idx[pole]] = complex(np.inf, 0.0)
                idx, cur = idx[~pole], cur[~pole]
        new = f_values(fmap, cur)
        z[idx] = new
        mod = np.abs(new)

        overflow = ~np.isfinite(mod)
        rising = (mod > escape_radius) & (mod >= prev_abs[idx])
        run[idx] = np.where(rising, run[idx] + 1, 0)
        escaped = overflow | (run[idx] >= needed_run)
        fates[idx[escaped]] = ESCAPING
        active[idx[escaped]] = False
        if i >= half:
            returned[idx] |= mod < bound_radius
        prev_abs[idx] = mod

    fates[active & returned] = BOUNDED_RETURNS
    fates = fates.reshape(shape)
    if return_final:
        return fates, z.reshape(shape)
    return fates


def classify_orbit(fmap: TranscendentalMap, z: complex, max_iter: int,
                   escape_radius: float = Config.ESCAPE_RADIUS,
                   bound_radius: float = Config.BOUND_RADIUS) -> OrbitFate:
    """Fate of a single forward orbit."""
    code = classify_orbits(fmap, np.asarray([z]), max_iter, escape_radius, bound_radius)[0]
    return FATE_CODES[int(code)]


@dataclass
class AttractingCycle:
    points: Tuple[complex, ...]
    multiplier: complex

    @property
    def period(self) -> int:
        return len(self.points)


@dataclass
class SingularOrbit:
    value: complex
    cycle: Optional[AttractingCycle] = None
    multiplier: Optional[complex] = None     # multiplier of the detected cycle, attracting or not
    fixed: bool = False                      # the singular value itself is fixed
    diverged: bool = False
    orbit_radius: float = 0.0


@dataclass
class SingularOrbitReport:
    """Hyperbolicity evidence from the forward orbits of the singular values."""
    orbits: List[SingularOrbit]
    hull_radius: float
    julia_distance: Optional[float]
    julia_seeds: List[complex] = field(default_factory=list)

    @property
    def hyperbolic(self) -> bool:
        return (bool(self.orbits) and all(o.cycle is not None for o in self.orbits)
                and math.isfinite(self.hull_radius)
                and (self.julia_distance is None or self.julia_distance > 0))

    @property
    def verdict(self) -> str:
        return 'HYPERBOLIC' if self.hyperbolic else 'FAIL'

    @property
    def attracting_cycles(self) -> List[AttractingCycle]:
        cycles: List[AttractingCycle] = []
        for orbit in self.orbits:
            c = orbit.cycle
            if c is None:
                continue
            seen = any(min(abs(p - q) for q in other.points) < 1e-8
                       for other in cycles for p in c.points)
            if not seen:
                cycles.append(c)
        return cycles

    def to_dict(self) -> dict:
        return {
            'verdict': self.verdict,
            'hull_radius': self.hull_radius,
            'julia_distance': self.julia_distance,
            'orbits': [{
                'value': [o.value.real, o.value.imag],
                'fixed': o.fixed,
                'diverged': o.diverged,
                'period': o.cycle.period if o.cycle else None,
                'multiplier_abs': abs(o.multiplier) if o.multiplier is not None else None,
            } for o in self.orbits],
        }


def _step(fmap: TranscendentalMap, z: complex) -> complex:
    return complex(f_values(fmap, np.asarray([z]))[0])


def singular_orbit_report(fmap: TranscendentalMap, max_iter: int = 400,
                          max_period: int = 12, cycle_tol: float = 1e-10,
                          attract_margin: float = 1e-6) -> SingularOrbitReport:
    """
    Iterate every finite singular value and look for attracting cycles.

    Divergence, pole hits and neutral cycles are reported as missing
    hyperbolicity evidence, never raised.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    orbits: List[SingularOrbit] = []
    tail_points: List[complex] = []
    hull = 0.0

    for value in fmap.singular_values():
        record = SingularOrbit(value=value)
        z = value
        radius = abs(z)
        for _ in range(max_iter):
            z = _step(fmap, z)
            if not cmath.isfinite(z) or abs(z) > Config.ESCAPE_RADIUS:
                record.diverged = True
                break
            radius = max(radius, abs(z))
        record.orbit_radius = math.inf if record.diverged else radius
        if _step(fmap, value) == value:
            record.fixed = True

        if not record.diverged:
            cycle_pts = [z]
            for _ in range(max_period):
                nxt = _step(fmap, cycle_pts[-1])
                if not cmath.isfinite(nxt):
                    break
                if abs(nxt - z) <= cycle_tol * (1.0 + abs(z)):
                    multiplier = complex(np.prod(derivative(fmap, np.asarray(cycle_pts))))
                    record.multiplier = multiplier
                    if abs(multiplier) < 1.0 - attract_margin:
                        record.cycle = AttractingCycle(tuple(cycle_pts), multiplier)
                    break
                cycle_pts.append(nxt)
            tail_points.extend(cycle_pts)
        hull = max(hull, record.orbit_radius)
        orbits.append(record)

    seeds = repelling_fixed_points(fmap, count=6)
    julia_distance = None
    if seeds and tail_points:
        julia_distance = float(min(abs(p - s) for p in tail_points for s in seeds))

    report = SingularOrbitReport(orbits=orbits, hull_radius=hull,
                                 julia_distance=julia_distance, julia_seeds=seeds)
    logger.info(f"Singular orbit report for {fmap.label}: {report.verdict}")
    return report


def _sheet_seed(fmap: TranscendentalMap, k: int) -> complex:
    if fmap.family in (MapFamily.EXP, MapFamily.ZEXP):
        return complex(2.0, TWO_PI * k)
    return complex(k * math.pi + 0.5, 0.5)


def repelling_fixed_points(fmap: TranscendentalMap, count: int = 4,
                           max_sheet: int = 8, steps: int = 200) -> List[complex]:
    """
    Repelling fixed points, found by iterating one inverse branch (which
    contracts towards them) and polishing f(z) = z with Newton.

    Returned sorted by modulus then argument; may be shorter than count.
    """
    found: List[complex] = []
    excluded = fmap.singular_values() + fmap.omitted_values()
    for k in [0] + [s * j for j in range(1, max_sheet + 1) for s in (1, -1)]:
        z = _sheet_seed(fmap, k)
        try:
            for _ in range(steps):
                Z, valid = preimage_grid(fmap, np.asarray([z]), np.asarray([k]))
                if not valid[0, 0] or not np.isfinite(Z[0, 0]):
                    raise NonConvergence("sheet undefined", sheet=k)
                nxt = complex(Z[0, 0])
                if abs(nxt - z) <= 1e-14 * (1.0 + abs(z)):
                    z = nxt
                    break
                z = nxt
            for _ in range(20):
                fz = _step(fmap, z)
                dz = complex(derivative(fmap, np.asarray([z]))[0])
                if not cmath.isfinite(fz) or dz == 1:
                    break
                delta = (fz - z) / (dz - 1.0)
                z -= delta
                if abs(delta) <= 1e-15 * (1.0 + abs(z)):
                    break
        except (OmittedValue, CriticalValueHit, NonConvergence):
            continue
        fz = _step(fmap, z)
        if not cmath.isfinite(fz) or abs(fz - z) > 1e-9 * (1.0 + abs(z)):
            continue
        # neutral points (|f'| = 1 up to round-off) are not repelling
        if abs(complex(derivative(fmap, np.asarray([z]))[0])) <= 1.0 + REPELLING_MARGIN:
            continue
        if any(abs(z - v) <= _SEED_EXCLUSION * (1.0 + abs(v)) for v in excluded):
            continue
        if any(abs(z - q) <= 1e-8 * (1.0 + abs(q)) for q in found):
            continue
        found.append(z)
        if len(found) >= count:
            break
    found.sort(key=lambda q: (round(abs(q), 10), cmath.phase(q)))
    return found


def default_start_point(fmap: TranscendentalMap) -> complex:
    """Default starting point for preimage sums: the first repelling fixed point found."""
    seeds = repelling_fixed_points(fmap, count=1)
    if not seeds:
        raise NonConvergence(f"No repelling fixed point found for {fmap.label}; set z0 explicitly")
    return seeds[0]
