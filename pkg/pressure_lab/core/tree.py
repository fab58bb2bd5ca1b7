"""
Level-synchronous preimage trees.

A tree holds, for every depth n, the endpoints w of backward orbits of z0,
their accumulated log spherical derivative log|(f^n)*(w)|, the parent
pointer and the sheet index of the last step. Weights |(f^n)*(w)|^{-t} are
kept in log-space.

Truncation:
    - sheets |k| <= K_n with K_n chosen from the relative sheet tail;
    - children lighter than prune_ratio times the level sum are dropped;
    - with a beam, at most beam_width nodes per level are expanded. Heavy
      nodes are always kept; light ones are resampled systematically and
      carry a multiplier so that the next level sum stays unbiased.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, zeta

from pressure_lab.config.settings import TreeSettings
from pressure_lab.core.errors import (
    BranchError, OmittedValue, OmittedValueAtNode, TreeBudgetExceeded,
)
from pressure_lab.core.maps import (
    BranchIndex, TranscendentalMap, log_spherical_derivative, preimage_grid, sheet_range,
)
from pressure_lab.utils.helpers import chunked_logsumexp

logger = logging.getLogger(__name__)

PROBE_SHEETS = np.arange(-2, 3, dtype=np.int64)
_CHUNK_NODES = 2048


@dataclass(frozen=True)
class Restriction:
    """Endpoint filter inner <= |w| < outer (a disc when inner is 0)."""
    inner: float = 0.0
    outer: float = math.inf

    def __post_init__(self):
        if not (0.0 <= self.inner < self.outer):
            raise ValueError(f"Invalid restriction [{self.inner}, {self.outer})")

    @classmethod
    def disc(cls, r: float) -> 'Restriction':
        return cls(0.0, float(r))

    @classmethod
    def annulus(cls, r1: float, r2: float) -> 'Restriction':
        return cls(float(r1), float(r2))

    def mask(self, points: np.ndarray) -> np.ndarray:
        mod = np.abs(points)
        return (mod >= self.inner) & (mod < self.outer)

    @property
    def label(self) -> str:
        if self.inner == 0.0:
            return f"disc({self.outer:g})"
        return f"annulus({self.inner:g},{self.outer:g})"


def restriction_label(restriction: Optional[Restriction]) -> str:
    return '' if restriction is None else restriction.label


@dataclass
class BranchOrbit:
    """A depth-n backward orbit identified by its sheet address."""
    address: Tuple[BranchIndex, ...]
    endpoint: complex
    log_deriv: float

    @property
    def depth(self) -> int:
        return len(self.address)


@dataclass
class TreeLevel:
    depth: int
    points: np.ndarray
    log_deriv: np.ndarray
    log_weight: np.ndarray        # -t*log_deriv plus inherited resampling multipliers
    parent: np.ndarray
    index: np.ndarray
    # weight*multiplier of expanded nodes, -inf elsewhere
    log_propagated: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def expanded(self) -> np.ndarray:
        if self.log_propagated is None:
            return np.zeros(self.size, dtype=bool)
        return np.isfinite(self.log_propagated)


@dataclass
class LevelSummary:
    depth: int
    cutoff: int
    level_tail: float
    tail_bound: float
    term_count: int
    pruned: int
    log_sum: float
    restricted: Dict[Restriction, float] = field(default_factory=dict)
    restricted_counts: Dict[Restriction, int] = field(default_factory=dict)
    expanded_count: int = 0
    log_expanded_sum: float = -math.inf


def sheet_tail(t: float, K: int) -> float:
    """
    Relative weight of the sheets |k| > K when sheet k carries (1+|k|)^{-2t}-like
    mass: 2*zeta(2t, K+1) / (1 + 2*sum_{k<=K} k^{-2t}). Infinite for t <= 1/2.
    """
    if t <= 0.5:
        return math.inf
    s = 2.0 * t
    tail = float(zeta(s, K + 1))
    head = float(zeta(s, 1)) - tail
    return 2.0 * tail / (1.0 + 2.0 * head)


def adaptive_cutoff(t: float, K: int, eps_trunc: float, k_min: int = 1) -> Tuple[int, float]:
    """Smallest cutoff in [k_min, K] whose sheet tail is below eps_trunc (else K)."""
    k_min = max(0, min(k_min, K))
    if sheet_tail(t, K) >= eps_trunc:
        return K, sheet_tail(t, K)
    lo, hi = k_min, K
    while lo < hi:
        mid = (lo + hi) // 2
        if sheet_tail(t, mid) < eps_trunc:
            hi = mid
        else:
            lo = mid + 1
    return lo, sheet_tail(t, lo)


def optimal_resample(log_keys: np.ndarray, width: int,
                     offset: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Select at most `width` nodes so that sum(selected key * multiplier) is an
    unbiased estimate of sum(key).

    Nodes with key >= c are kept with multiplier 1; the others are picked by
    systematic sampling with probability key/c and multiplier c/key, where c
    solves sum(min(1, key/c)) = width.

    Returns:
        (sorted selected indices, log multipliers)
    """
    n = log_keys.size
    if n <= width:
        return np.arange(n), np.zeros(n)
    top = float(np.max(log_keys))
    q = np.exp(log_keys - top)
    order = np.argsort(-q, kind='stable')
    qs = q[order]
    suffix = np.cumsum(qs[::-1])[::-1]
    L = 0
    while L < width and qs[L] * (width - L) >= suffix[L]:
        L += 1
    if L >= width:
        chosen = np.sort(order[:width])
        return chosen, np.zeros(width)
    c = suffix[L] / (width - L)
    kept = order[:L]
    rest = np.sort(order[L:])
    probs = q[rest] / c
    cum = np.cumsum(probs)
    marks = offset + np.arange(width - L)
    picks = np.searchsorted(cum, marks, side='right')
    picks = np.unique(picks[picks < rest.size])
    sampled = rest[picks]
    chosen = np.concatenate([kept, sampled])
    log_mult = np.concatenate([np.zeros(kept.size), math.log(c) - np.log(q[sampled])])
    sort = np.argsort(chosen, kind='stable')
    return chosen[sort], log_mult[sort]


class PreimageTree:
    """
    Preimage tree of z0 for the weights |(f^n)*(w)|^{-t}.

    Args:
        fmap: The map
        z0: Root point
        t: Exponent of the weights (drives the cutoff, pruning and beam)
        depth: Number of levels below the root
        K: Upper bound for the per-level sheet cutoff
        settings: Truncation policy
        restrictions: Endpoint filters whose sums are recorded per level
        keep_levels: Keep every level in memory (needed for measures and
            addresses); otherwise only per-level summaries survive
        seed: Seed of the resampling offsets
    """

    def __init__(self, fmap: TranscendentalMap, z0: complex, t: float, depth: int, K: int,
                 settings: Optional[TreeSettings] = None,
                 restrictions: Sequence[Restriction] = (),
                 keep_levels: bool = True, seed: int = 0):
        if depth < 0:
            raise ValueError("depth must be >= 0")
        if K < 0:
            raise ValueError("K must be >= 0")
        if t <= 0:
            raise ValueError("t must be positive")
        self.fmap = fmap
        self.z0 = complex(z0)
        self.t = float(t)
        self.depth = int(depth)
        self.K = int(K)
        self.settings = settings or TreeSettings()
        self.restrictions = list(dict.fromkeys(restrictions))
        self.keep_levels = keep_levels
        self.seed = int(seed)
        self.levels: List[TreeLevel] = []
        self.summaries: List[LevelSummary] = []
        self._built = False

    # construction -------------------------------------------------------

    def build(self) -> 'PreimageTree':
        if self._built:
            return self
        root = TreeLevel(depth=0, points=np.asarray([self.z0]), log_deriv=np.zeros(1),
                         log_weight=np.zeros(1), parent=np.full(1, -1, dtype=np.int64),
                         index=np.zeros(1, dtype=np.int64))
        self.summaries.append(self._summarize(root, cutoff=0, level_tail=0.0, tail_bound=0.0,
                                              pruned=0))
        current = root
        if self.keep_levels:
            self.levels.append(root)

        tail_bound = 0.0
        for n in range(1, self.depth + 1):
            self._select(current)
            self.summaries[-1].expanded_count = int(current.expanded.sum())
            self.summaries[-1].log_expanded_sum = chunked_logsumexp(
                current.log_propagated[current.expanded])
            if self.settings.adaptive_cutoff:
                cutoff, level_tail = adaptive_cutoff(self.t, self.K, self.settings.eps_trunc,
                                                     self.settings.k_min)
            else:
                cutoff, level_tail = self.K, sheet_tail(self.t, self.K)
            child, pruned = self._expand(current, n, cutoff)
            tail_bound += level_tail
            self.summaries.append(self._summarize(child, cutoff, level_tail, tail_bound, pruned))
            current = child
            if self.keep_levels:
                self.levels.append(child)
            logger.debug(f"depth {n}: {child.size} nodes, K={cutoff}, "
                         f"log_sum={self.summaries[-1].log_sum:.6f}")
        self._built = True
        return self

    def _select(self, level: TreeLevel) -> None:
        width = self.settings.beam_width
        if width is None or level.size <= width:
            level.log_propagated = level.log_weight.copy()
            return
        keys = level.log_weight + self._probe(level)
        offset = float(np.random.default_rng([self.seed, level.depth]).random())
        chosen, log_mult = optimal_resample(keys, width, offset)
        propagated = np.full(level.size, -np.inf)
        propagated[chosen] = level.log_weight[chosen] + log_mult
        level.log_propagated = propagated

    def _probe(self, level: TreeLevel) -> np.ndarray:
        """log of the one-step sum over the sheets |k| <= 2, a proxy for growth."""
        def work(bounds):
            a, b = bounds
            Z, valid = preimage_grid(self.fmap, level.points[a:b], PROBE_SHEETS)
            terms = np.where(valid, -self.t * log_spherical_derivative(self.fmap, Z), -np.inf)
            return logsumexp(terms, axis=1)

        try:
            parts = self._map_chunks(work, level.size)
        except BranchError as e:
            logger.debug(f"Probe at depth {level.depth} failed on sheets {PROBE_SHEETS.tolist()}: "
                         f"{e.message} {e.context}; resampling by weight alone")
            return np.zeros(level.size)
        return np.concatenate(parts)

    def _map_chunks(self, work, n_items: int) -> list:
        bounds = [(a, min(a + _CHUNK_NODES, n_items)) for a in range(0, n_items, _CHUNK_NODES)]
        threads = max(1, int(self.settings.threads))
        if threads == 1 or len(bounds) == 1:
            return [work(b) for b in bounds]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, bounds))

    def _expand(self, level: TreeLevel, depth: int, cutoff: int) -> Tuple[TreeLevel, int]:
        parents = np.flatnonzero(level.expanded)
        ks = sheet_range(cutoff)
        n_children = parents.size * ks.size
        if n_children > self.settings.node_budget:
            raise TreeBudgetExceeded(
                f"Depth {depth} needs {n_children} nodes, budget is {self.settings.node_budget}",
                depth=depth, nodes=n_children, budget=self.settings.node_budget)

        def work(bounds):
            a, b = bounds
            idx = parents[a:b]
            w = level.points[idx]
            try:
                Z, valid = preimage_grid(self.fmap, w, ks)
            except OmittedValue as e:
                raise OmittedValueAtNode(f"Node at depth {depth - 1} has no preimages: {e.message}",
                                         depth=depth - 1, node=e.context.get('w')) from e
            logf = log_spherical_derivative(self.fmap, Z)
            logd = level.log_deriv[idx][:, None] + logf
            logw = level.log_propagated[idx][:, None] - self.t * logf
            keep = valid & np.isfinite(logw)
            rows, cols = np.nonzero(keep)
            return (Z[rows, cols], logd[rows, cols], logw[rows, cols],
                    idx[rows], ks[cols])

        parts = self._map_chunks(work, parents.size)
        points = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, complex)
        logd = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
        logw = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0)
        parent = np.concatenate([p[3] for p in parts]) if parts else np.zeros(0, np.int64)
        index = np.concatenate([p[4] for p in parts]) if parts else np.zeros(0, np.int64)

        pruned = 0
        if logw.size:
            total = chunked_logsumexp(logw)
            keep = logw >= total + math.log(self.settings.prune_ratio)
            pruned = int(logw.size - keep.sum())
            if pruned:
                points, logd, logw = points[keep], logd[keep], logw[keep]
                parent, index = parent[keep], index[keep]
        child = TreeLevel(depth=depth, points=points, log_deriv=logd, log_weight=logw,
                          parent=parent, index=index)
        return child, pruned

    def _summarize(self, level: TreeLevel, cutoff: int, level_tail: float,
                   tail_bound: float, pruned: int) -> LevelSummary:
        restricted, counts = {}, {}
        for r in self.restrictions:
            mask = r.mask(level.points)
            restricted[r] = chunked_logsumexp(level.log_weight[mask])
            counts[r] = int(mask.sum())
        return LevelSummary(depth=level.depth, cutoff=cutoff, level_tail=level_tail,
                            tail_bound=tail_bound, term_count=level.size, pruned=pruned,
                            log_sum=chunked_logsumexp(level.log_weight), restricted=restricted,
                            restricted_counts=counts)

    # queries ------------------------------------------------------------

    def _check_depth(self, n: int) -> None:
        if not self._built:
            self.build()
        if not 0 <= n <= self.depth:
            raise ValueError(f"Depth {n} outside [0, {self.depth}]")

    def level(self, n: int) -> TreeLevel:
        self._check_depth(n)
        if not self.keep_levels:
            raise ValueError("Tree was built without keep_levels")
        return self.levels[n]

    def log_sum(self, n: int, restriction: Optional[Restriction] = None) -> float:
        """log S_n over the tree, optionally restricted by endpoint modulus."""
        self._check_depth(n)
        summary = self.summaries[n]
        if restriction is None:
            return summary.log_sum
        if restriction in summary.restricted:
            return summary.restricted[restriction]
        lvl = self.level(n)
        return chunked_logsumexp(lvl.log_weight[restriction.mask(lvl.points)])

    def term_count(self, n: int, restriction: Optional[Restriction] = None) -> int:
        self._check_depth(n)
        summary = self.summaries[n]
        if restriction is None:
            return summary.term_count
        if restriction in summary.restricted_counts:
            return summary.restricted_counts[restriction]
        return int(restriction.mask(self.level(n).points).sum())

    def address(self, n: int, i: int) -> Tuple[BranchIndex, ...]:
        """Sheet indices along the backward orbit ending at node i of level n."""
        path = []
        for depth in range(n, 0, -1):
            lvl = self.level(depth)
            path.append(BranchIndex(int(lvl.index[i])))
            i = int(lvl.parent[i])
        return tuple(reversed(path))

    def branch_orbit(self, n: int, i: int) -> BranchOrbit:
        lvl = self.level(n)
        return BranchOrbit(address=self.address(n, i), endpoint=complex(lvl.points[i]),
                           log_deriv=float(lvl.log_deriv[i]))

    def forward_orbit(self, n: int, i: int) -> List[complex]:
        """Endpoint of node i followed by its ancestors up to z0."""
        points = []
        for depth in range(n, -1, -1):
            lvl = self.level(depth)
            points.append(complex(lvl.points[i]))
            i = int(lvl.parent[i]) if depth > 0 else i
        return points
