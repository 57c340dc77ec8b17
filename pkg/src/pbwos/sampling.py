"""Randomness contract and every distribution sampler used by the walks.

Streams are counter-based (Philox) and keyed by (seed, stream_id): distinct
stream ids give independent streams, identical keys replay bit-identically.
The exit-angle law of the interior walk and the split-radius law of the
branching walk both have closed-form CDFs; the former inverts analytically,
the latter with a fixed 4-step Newton iteration plus a bisection safety net.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigError, NumericalError

# Offspring law: 0 with probability 2 - sinh(1), odd k = 3,5,7,9 with 1/k!,
# renormalized over the capped support (excluded mass ~2.5e-8).
OFFSPRING_VALUES = (0, 3, 5, 7, 9)
_RAW_PROBS = (
    2.0 - math.sinh(1.0),
    1.0 / math.factorial(3),
    1.0 / math.factorial(5),
    1.0 / math.factorial(7),
    1.0 / math.factorial(9),
)
OFFSPRING_PROBS = tuple(p / sum(_RAW_PROBS) for p in _RAW_PROBS)
_OFFSPRING_CUM = np.cumsum(OFFSPRING_PROBS)
_PROB_BY_COUNT = dict(zip(OFFSPRING_VALUES, OFFSPRING_PROBS))

GW_NODE_CAP = 1_000_000


class RngStream:
    """A replayable, independently-keyed random stream.

    Wraps a Philox counter-based generator with key (seed, stream_id).
    Recreating a stream with the same key replays the same outputs, and
    streams with distinct ids are independent by construction.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.reset()

    def reset(self) -> None:
        """Rewind to the start of the stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None):
        return self.gen.random(size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def uniform_on_sphere(rng: RngStream, center, radius: float, size: int | None = None):
    """Uniform point(s) on the sphere of given center and radius.

    Normalized-Gaussian method.  Returns shape (3,) for size=None else
    (size, 3).
    """
    if not radius > 0.0:
        raise ConfigError(f"sphere radius must be > 0, got {radius!r}")
    center = np.asarray(center, dtype=float)
    n = 1 if size is None else int(size)
    g = rng.normal((n, 3))
    norms = np.linalg.norm(g, axis=1)
    # Redraw the (astronomically rare) underflowing directions.
    while np.any(norms < 1.0e-12):
        bad = norms < 1.0e-12
        g[bad] = rng.normal((int(bad.sum()), 3))
        norms = np.linalg.norm(g, axis=1)
    pts = center + radius * (g / norms[:, None])
    return pts[0] if size is None else pts


def uwos_exit_cdf(R: float, r: float, alpha) -> float | np.ndarray:
    """CDF of the exit polar angle for a walk inside a sphere.

    The walker sits at distance r from the center of a sphere of radius R
    (0 < r < R); alpha in [0, pi] is measured from the axis through the
    walker.  F(alpha) = (R^2-r^2)/(2Rr) * (R/(R-r) - R/sqrt(R^2-2Rr cos(a)+r^2)).
    """
    if not (0.0 < r < R):
        raise ConfigError(f"need 0 < r < R, got r={r!r}, R={R!r}")
    alpha = np.asarray(alpha, dtype=float)
    chord = np.sqrt(R * R - 2.0 * R * r * np.cos(alpha) + r * r)
    val = (R * R - r * r) / (2.0 * R * r) * (R / (R - r) - R / chord)
    out = np.clip(val, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def uwos_sample_angle(rng: RngStream, R: float, r: float) -> float:
    """Exact inverse-CDF sample of the exit polar angle (see uwos_exit_cdf)."""
    if not (0.0 < r < R):
        raise ConfigError(f"need 0 < r < R, got r={r!r}, R={R!r}")
    u = float(rng.uniform())
    return _uwos_angle_from_u(R, r, u)


def _uwos_angle_from_u(R: float, r: float, u) -> float | np.ndarray:
    """Closed-form inversion, vectorized in u."""
    t = R / (R - r) - 2.0 * R * r * np.asarray(u, dtype=float) / (R * R - r * r)
    s = R / t
    cos_a = np.clip((R * R + r * r - s * s) / (2.0 * R * r), -1.0, 1.0)
    out = np.arccos(cos_a)
    return float(out) if out.ndim == 0 else out


def _sinh_scaled_terms(a: float, R: float, r):
    """Pieces of the split CDF computed with the e^{aR} factor removed.

    Returns (num, den) such that F = num/den, both scaled by 2*exp(-aR) to
    stay finite for large aR.
    """
    r = np.asarray(r, dtype=float)
    x = a * R
    em = math.exp(-2.0 * x)
    # 2 e^{-aR} sinh(aR) = 1 - e^{-2aR};  2 e^{-aR} aR cosh/sinh terms pick up e^{-ar}.
    den = (1.0 - em) - 2.0 * x * math.exp(-x)
    e_ar = np.exp(-a * r)
    tail = np.exp(-2.0 * a * (R - r))
    num = (1.0 - em) - e_ar * (a * r * (1.0 + tail) + (1.0 - tail))
    return num, den


def bwos_split_cdf(R: float, lam: float, r) -> float | np.ndarray:
    """CDF of the split (death) radius inside a sphere of radius R.

    F(r) = [sinh(aR) - a r cosh(a(R-r)) - sinh(a(R-r))] / [sinh(aR) - aR]
    with a = sqrt(2 lam).  Taylor limit r^2 (3R - 2r) / R^3 for aR < 1e-4.
    """
    if not lam > 0.0:
        raise ConfigError(f"splitting requires lam > 0, got {lam!r}")
    if not R > 0.0:
        raise ConfigError(f"sphere radius must be > 0, got {R!r}")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0.0) or np.any(r_arr > R):
        raise ConfigError(f"split radius outside [0, {R}]")
    a = math.sqrt(2.0 * lam)
    x = a * R
    if x < 1.0e-4:
        val = r_arr * r_arr * (3.0 * R - 2.0 * r_arr) / R**3
    elif x > 30.0:
        num, den = _sinh_scaled_terms(a, R, r_arr)
        val = num / den
    else:
        num = math.sinh(x) - a * r_arr * np.cosh(a * (R - r_arr)) - np.sinh(a * (R - r_arr))
        val = num / (math.sinh(x) - x)
    out = np.clip(val, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def bwos_split_pdf(R: float, lam: float, r) -> float | np.ndarray:
    """Density of the split radius: a^2 r sinh(a(R-r)) / (sinh(aR) - aR)."""
    if not lam > 0.0:
        raise ConfigError(f"splitting requires lam > 0, got {lam!r}")
    r_arr = np.asarray(r, dtype=float)
    a = math.sqrt(2.0 * lam)
    x = a * R
    if x < 1.0e-4:
        val = 6.0 * r_arr * (R - r_arr) / R**3
    elif x > 30.0:
        den = (1.0 - math.exp(-2.0 * x)) - 2.0 * x * math.exp(-x)
        val = a * a * r_arr * np.exp(-a * r_arr) * (1.0 - np.exp(-2.0 * a * (R - r_arr))) / den
    else:
        val = a * a * r_arr * np.sinh(a * (R - r_arr)) / (math.sinh(x) - x)
    return float(val) if np.ndim(val) == 0 else val


def bwos_sample_radius(rng: RngStream, R: float, lam: float) -> float:
    """Sample the split radius by 4 Newton steps on the CDF, from r0 = R*U.

    Iterates are clamped to [1e-9 R, (1-1e-9) R]; if the residual exceeds
    1e-6 after the fixed iterations, 60 bisection steps finish the job.
    """
    u = float(rng.uniform())
    return _split_radius_from_u(R, lam, u)


def _split_radius_from_u(R: float, lam: float, u: float) -> float:
    lo, hi = 1.0e-9 * R, (1.0 - 1.0e-9) * R
    r = min(max(R * u, lo), hi)
    for _ in range(4):
        f = bwos_split_cdf(R, lam, r) - u
        d = bwos_split_pdf(R, lam, r)
        if d <= 0.0:
            break
        r = min(max(r - f / d, lo), hi)
    if abs(bwos_split_cdf(R, lam, r) - u) > 1.0e-6:
        a, b = 0.0, R
        for _ in range(60):
            mid = 0.5 * (a + b)
            if bwos_split_cdf(R, lam, mid) < u:
                a = mid
            else:
                b = mid
        r = min(max(0.5 * (a + b), lo), hi)
    return r


def sample_offspring(rng: RngStream) -> int:
    """Draw one offspring count from the capped law (support 0,3,5,7,9)."""
    u = float(rng.uniform())
    return OFFSPRING_VALUES[int(np.searchsorted(_OFFSPRING_CUM, u, side="right"))]


class GwTree:
    """A finite genealogical tree stored as offspring counts in DFS order.

    counts[0] is the root.  `children(i)` gives the node ids of i's subtrees,
    which appear contiguously in DFS order right after i.
    """

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size == 0:
            raise ConfigError("a tree needs at least a root node")
        bad = set(np.unique(counts)) - set(OFFSPRING_VALUES)
        if bad:
            raise ConfigError(f"invalid offspring counts {sorted(bad)}")
        self.counts = counts
        self._children: list[list[int]] = [[] for _ in range(counts.size)]
        depth = np.zeros(counts.size, dtype=np.int64)
        # Rebuild structure from DFS counts: standard preorder scan.
        pending: list[int] = []  # nodes still owed children
        owed: list[int] = []
        for node, m in enumerate(counts):
            if node > 0:
                if not pending:
                    raise ConfigError("count sequence is not a valid DFS preorder")
                parent = pending[-1]
                self._children[parent].append(node)
                depth[node] = depth[parent] + 1
                owed[-1] -= 1
                if owed[-1] == 0:
                    pending.pop()
                    owed.pop()
            if m > 0:
                pending.append(node)
                owed.append(int(m))
        if pending:
            raise ConfigError("count sequence ends before all children appear")
        self.depth = depth
        self.height = int(depth.max())
        self.node_count = int(counts.size)
        # A leaf here means a node that dies childless.
        self.leaf_death = counts == 0

    def children(self, node: int) -> list[int]:
        return self._children[node]

    def canonical_shape(self):
        """Order-independent shape: (count, sorted tuple of child shapes)."""

        def shape_of(node: int):
            kids = tuple(sorted(shape_of(c) for c in self._children[node]))
            return (int(self.counts[node]), kids)

        return shape_of(0)

    def __repr__(self) -> str:
        return f"GwTree(nodes={self.node_count}, height={self.height})"


def sample_gw_tree(rng: RngStream) -> GwTree:
    """Sample a full genealogical tree, generation by generation.

    Offspring counts are drawn breadth-first until extinction (the law is
    subcritical, so this terminates almost surely); the result is stored in
    DFS order.  Exceeding the 1e6-node cap raises NumericalError.
    """
    counts_bfs = [sample_offspring(rng)]
    parents = [-1]
    queue_start = 0
    while queue_start < len(counts_bfs):
        node = queue_start
        queue_start += 1
        for _ in range(counts_bfs[node]):
            if len(counts_bfs) >= GW_NODE_CAP:
                raise NumericalError(
                    f"genealogical tree exceeded {GW_NODE_CAP} nodes; aborting run"
                )
            counts_bfs.append(sample_offspring(rng))
            parents.append(node)

    # BFS -> DFS preorder.
    children: list[list[int]] = [[] for _ in counts_bfs]
    for node, parent in enumerate(parents):
        if parent >= 0:
            children[parent].append(node)
    counts_df = []
    stack = [0]
    while stack:
        node = stack.pop()
        counts_df.append(counts_bfs[node])
        stack.extend(reversed(children[node]))
    return GwTree(counts_df)


@dataclass(frozen=True)
class Stratum:
    """One stratification cell: a canonical tree shape, or the tail.

    The tail stratum (shape=None) aggregates every tree whose canonical
    shape was not emitted; it is sampled by rejection.
    """

    shape: tuple | None
    probability: float

    @property
    def is_tail(self) -> bool:
        return self.shape is None


def tree_probability(shape) -> float:
    """Probability that sampling produces a tree of this canonical shape.

    Product over nodes of the offspring probability, times a multinomial
    factor at each node counting the orderings of its (unordered) children.
    """
    count, kids = shape
    if count not in _PROB_BY_COUNT:
        raise ConfigError(f"invalid offspring count {count!r} in shape")
    if count != len(kids):
        raise ConfigError(f"node with count {count} has {len(kids)} child shapes")
    prob = _PROB_BY_COUNT[count]
    if kids:
        perm = math.factorial(len(kids))
        seen: dict = {}
        for k in kids:
            seen[k] = seen.get(k, 0) + 1
        for mult in seen.values():
            perm //= math.factorial(mult)
        prob *= perm
        for k in kids:
            prob *= tree_probability(k)
    return prob


@lru_cache(maxsize=None)
def _shapes_up_to_height(max_height: int) -> tuple:
    """All canonical shapes of height <= max_height (grows fast with height)."""
    if max_height < 0:
        return ()
    if max_height == 0:
        return (((0, ())),)
    smaller = _shapes_up_to_height(max_height - 1)
    shapes = [(0, ())]
    for m in OFFSPRING_VALUES[1:]:
        for combo in combinations_with_replacement(smaller, m):
            shapes.append((m, tuple(sorted(combo))))
    return tuple(shapes)


def enumerate_strata(max_height: int = 2, tail_mass: float = 1.0e-6) -> list[Stratum]:
    """Enumerate tree-shape strata by decreasing probability, plus a tail.

    Emits canonical shapes of height <= max_height until their cumulative
    probability reaches 1 - tail_mass or the shapes run out (with the
    default offspring law the mass above height 2 is ~3.9e-2, so for small
    tail_mass every shape is emitted and the tail carries the rest).  The
    returned probabilities always sum to 1 up to float roundoff.
    """
    if not (0.0 < tail_mass <= 0.01):
        raise ConfigError(f"tail_mass must be in (0, 0.01], got {tail_mass!r}")
    shapes = _shapes_up_to_height(max_height)
    ranked = sorted(
        ((tree_probability(s), s) for s in shapes), key=lambda t: (-t[0], t[1])
    )
    out: list[Stratum] = []
    cum = 0.0
    for prob, shape in ranked:
        if cum >= 1.0 - tail_mass:
            break
        out.append(Stratum(shape=shape, probability=prob))
        cum += prob
    out.append(Stratum(shape=None, probability=1.0 - cum))
    return out


def shape_to_tree(shape) -> GwTree:
    """Materialize a canonical shape as a concrete GwTree (DFS order)."""
    counts: list[int] = []

    def emit(s):
        counts.append(s[0])
        for kid in s[1]:
            emit(kid)

    emit(shape)
    return GwTree(counts)


def shape_signature(shape) -> int | None:
    """Compact integer id for height<=2 shapes (root count + child counts).

    Returns None for taller shapes.  Used to hand the retained-strata set to
    compiled kernels.
    """
    count, kids = shape
    sig = count
    shift = 4
    slot = {0: 0, 3: 1, 5: 2, 7: 3, 9: 4}
    tally = [0, 0, 0, 0, 0]
    for kid_count, grandkids in kids:
        # Any grandchild with its own children makes the height >= 3.
        for gk_count, _ in grandkids:
            if gk_count != 0:
                return None
        tally[slot[kid_count]] += 1
    for t in tally:
        sig |= t << shift
        shift += 4
    return sig
