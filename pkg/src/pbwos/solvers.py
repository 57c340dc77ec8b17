"""Monte Carlo estimators for the potential at query points.

Two estimators are provided: a single-particle score loop for the
linearized equation and a branching-particle score for the full nonlinear
equation, the latter optionally stratified over tree shapes.  Both exist in
two interchangeable implementations — a scalar one built on the `walkers`
and `jumps` modules, and compiled chunk kernels — with the scalar form
acting as the executable specification.

Reproducibility contract: every chunk of work owns a random stream keyed by
(purpose, point, stratum, chunk), chunks are merged in a fixed order, and
sample allocation is integer-deterministic, so a run is bit-reproducible
for a fixed seed regardless of worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, PbwosError, WalkDivergenceError
from .jumps import ANJ, SNJ, TAJ, JumpScheme, jump
from .molecule import Molecule, signed_distance
from .physconst import PbParameters, u0
from .sampling import (
    OFFSPRING_PROBS,
    OFFSPRING_VALUES,
    GwTree,
    RngStream,
    Stratum,
    enumerate_strata,
    sample_gw_tree,
    shape_signature,
    shape_to_tree,
)
from .walkers import WalkConfig, bwos_walk, uwos_exit, wos_walk

try:
    from . import _kernels
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels = None

#: Samples per kernel chunk; also the unit of stream-id allocation.
CHUNK_SAMPLES = 65536

_PURPOSE_LINEAR = 1
_PURPOSE_NONLINEAR = 2
_PURPOSE_STRATUM = 3

_CI95 = 1.959964


def kernels_available() -> bool:
    """True when the compiled chunk kernels can be used."""
    return _kernels is not None


def _stream_id(purpose: int, point_idx: int, stratum_idx: int, chunk_idx: int) -> int:
    if not 0 <= point_idx < 1 << 16:
        raise ConfigError(f"point index {point_idx} out of stream-id range")
    if not 0 <= stratum_idx < 1 << 16:
        raise ConfigError(f"stratum index {stratum_idx} out of stream-id range")
    if not 0 <= chunk_idx < 1 << 24:
        raise ConfigError(f"chunk index {chunk_idx} out of stream-id range")
    return (purpose << 56) | (point_idx << 40) | (stratum_idx << 24) | chunk_idx


# --------------------------------------------------------------------------
# Request / result plumbing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveRequest:
    """Everything one solve needs; immutable so runs can be re-described.

    subtract_u0 switches the reported quantity to the regular part
    (u - u0)(x), which stays finite at atom centers; with it disabled the
    raw potential is estimated and query points must avoid the centers.
    """

    molecule: Molecule
    params: PbParameters
    points: np.ndarray
    scheme: JumpScheme
    samples: int
    epsilon_shell: float = 1.0e-4
    seed: int = 0
    workers: int = 1
    stratified: bool = False
    subtract_u0: bool = True
    tail_mass: float = 1.0e-6
    max_strata: int = 50
    pilot_samples: int = 500
    max_steps: int = 1_000_000

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ConfigError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ConfigError("points must be finite")
        object.__setattr__(self, "points", pts)
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.epsilon_shell > 0.0:
            raise ConfigError(f"epsilon_shell must be > 0, got {self.epsilon_shell}")
        if not self.params.lambda0 > 0.0:
            raise ConfigError(
                "exterior walks terminate through the killing rate, which needs "
                "lambda0 > 0; zero ionic strength is outside this estimator"
            )
        if self.pilot_samples < 2:
            raise ConfigError("pilot_samples must be >= 2")
        if self.max_strata < 1:
            raise ConfigError("max_strata must be >= 1")
        if not isinstance(self.scheme, JumpScheme):
            raise ConfigError(f"scheme must be a JumpScheme, got {type(self.scheme)}")
        c = self.params.constants
        if abs(self.scheme.eps_in - c.eps_in) > 1e-9 or abs(self.scheme.eps_out - c.eps_out) > 1e-9:
            raise ConfigError(
                "scheme dielectric constants disagree with params; "
                "build the scheme with scheme_from_params"
            )
        if isinstance(self.scheme, TAJ):
            if abs(self.scheme.kappa_bar - self.params.kappa_bar) > 1e-9 * self.params.kappa_bar:
                raise ConfigError("TAJ kappa_bar disagrees with params")
        if not self.subtract_u0:
            for k, p in enumerate(self.points):
                d = np.linalg.norm(self.molecule.centers - p, axis=1)
                if np.any(d < 1.0e-12):
                    raise ConfigError(
                        f"point {k} sits on an atom center; the raw potential is "
                        "singular there (use subtract_u0)"
                    )


@dataclass(frozen=True)
class Estimate:
    """Per-point Monte Carlo result with streaming-variance error bars."""

    point: np.ndarray
    mean: float
    std_error: float
    ci95_halfwidth: float
    samples_used: int
    wall_time: float
    steps_per_sample: float
    zero_score_fraction: Optional[float] = None
    explosion_flag: bool = False
    error: Optional[str] = None


class _Welford:
    """Numerically stable mean/variance accumulation with chunk merging."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add_chunk(self, scores: np.ndarray) -> None:
        n_c = scores.size
        if n_c == 0:
            return
        mean_c = float(scores.mean())
        m2_c = float(np.sum((scores - mean_c) ** 2))
        total = self.n + n_c
        delta = mean_c - self.mean
        self.mean += delta * n_c / total
        self.m2 += m2_c + delta * delta * self.n * n_c / total
        self.n = total

    @property
    def variance(self) -> float:
        if self.n < 2:
            return float("nan")
        return self.m2 / (self.n - 1)

    @property
    def std_error(self) -> float:
        if self.n < 2:
            return float("nan")
        return math.sqrt(max(self.variance, 0.0) / self.n)


class _TopMass:
    """Tracks the largest |score| values and the total second moment.

    Used for the variance-explosion heuristic: flag when the top-1% of
    |scores| carries more than half of sum(score^2).
    """

    def __init__(self, k: int):
        self.k = max(1, k)
        self.pool = np.empty(0)
        self.sumsq = 0.0
        self.total = 0

    def add_chunk(self, scores: np.ndarray) -> None:
        a = np.abs(scores)
        self.sumsq += float(np.sum(a * a))
        self.total += a.size
        merged = np.concatenate([self.pool, a])
        if merged.size > self.k:
            merged = np.partition(merged, merged.size - self.k)[-self.k :]
        self.pool = merged

    def exploded(self) -> bool:
        if self.total == 0 or self.sumsq <= 0.0:
            return False
        k_eff = max(1, math.ceil(0.01 * self.total))
        top = np.sort(self.pool)[::-1][:k_eff]
        return float(np.sum(top * top)) > 0.5 * self.sumsq


def _scheme_code(scheme: JumpScheme) -> tuple[int, float, float]:
    """(kind, alpha, kappa_bar) for the kernel argument list."""
    if isinstance(scheme, TAJ):
        return 2, scheme.alpha, scheme.kappa_bar
    if isinstance(scheme, ANJ):
        return 1, scheme.alpha, 0.0
    if isinstance(scheme, SNJ):
        return 0, 0.0, 0.0
    raise ConfigError(f"unknown jump scheme {type(scheme).__name__}")


def _initial_score(
    mol: Molecule, params: PbParameters, x0: np.ndarray, subtract_u0: bool
) -> tuple[float, bool]:
    inside = signed_distance(mol, x0) < 0.0
    if inside:
        return (0.0 if subtract_u0 else u0(mol, params, x0)), True
    return ((-u0(mol, params, x0)) if subtract_u0 else 0.0), False


# --------------------------------------------------------------------------
# Scalar score loops (executable specification of the estimators)
# --------------------------------------------------------------------------


def linear_walk_score(
    mol: Molecule,
    params: PbParameters,
    x0,
    scheme: JumpScheme,
    cfg: WalkConfig,
    rng: RngStream,
    subtract_u0: bool = False,
) -> float:
    """One single-particle score whose expectation solves the linear problem.

    The score telescopes the singular part: it starts at u0(x0) for an
    interior start, loses u0 at each interior->surface exit and gains it at
    each surface->interior jump, and is returned when the exterior clock
    (or a tangential-scheme boundary kill) fires.
    """
    x = np.asarray(x0, dtype=float)
    score, inside = _initial_score(mol, params, x, subtract_u0)
    hint: Optional[int] = None
    for _ in range(cfg.max_steps):
        if inside:
            sp = uwos_exit(mol, x, rng)
            score -= u0(mol, params, sp.position)
        else:
            out = wos_walk(mol, x, cfg, rng, hint=hint)
            if out.kind == "killed":
                return score
            sp = out.surface
        res = jump(scheme, sp, mol, rng)
        if res.kind == "boundary_kill":
            return score
        x = res.point
        inside = res.side == "interior"
        if inside:
            score += u0(mol, params, x)
        hint = sp.atom_index
    raise WalkDivergenceError(
        f"linear walk exceeded {cfg.max_steps} boundary alternations"
    )


def _branching_leg(mol, params, x, inside, scheme, cfg, rng):
    """Walk one branching particle to its exponential death.

    Returns (score_delta, split_point); split_point is where the children
    (if any) are born.
    """
    score = 0.0
    hint: Optional[int] = None
    for _ in range(cfg.max_steps):
        if inside:
            sp = uwos_exit(mol, x, rng)
            score -= u0(mol, params, sp.position)
        else:
            out = bwos_walk(mol, x, cfg, rng, hint=hint)
            if out.kind == "split":
                return score, out.split_point
            sp = out.surface
        res = jump(scheme, sp, mol, rng)
        x = res.point
        inside = res.side == "interior"
        if inside:
            score += u0(mol, params, x)
        hint = sp.atom_index
    raise WalkDivergenceError(
        f"branching leg exceeded {cfg.max_steps} boundary alternations"
    )


def branching_walk_score(
    mol: Molecule,
    params: PbParameters,
    x0,
    scheme: JumpScheme,
    cfg: WalkConfig,
    rng: RngStream,
    tree: GwTree,
    subtract_u0: bool = False,
) -> float:
    """One branching-particle score whose expectation solves the nonlinear problem.

    The pre-sampled tree dictates each particle's offspring count at death;
    a node's value is its own telescoped score minus the product of its
    children's values, folded bottom-up.  Once a running child product hits
    exactly zero the remaining siblings are skipped (their factor cannot
    change the product).
    """
    if isinstance(scheme, TAJ):
        raise ConfigError("the branching estimator requires a non-killing scheme (SNJ/ANJ)")
    if not cfg.lam > 0.0:
        raise ConfigError("the branching estimator requires lam > 0")
    x = np.asarray(x0, dtype=float)
    base, inside = _initial_score(mol, params, x, subtract_u0)

    def node_value(node: int, start: np.ndarray, start_inside: bool, init: float) -> float:
        own, split = _branching_leg(mol, params, start, start_inside, scheme, cfg, rng)
        kids = tree.children(node)
        if not kids:
            return init + own
        prod = 1.0
        for c in kids:
            if prod == 0.0:
                break
            prod *= node_value(c, split, False, 0.0)
        return init + own - prod

    return node_value(0, x, inside, base)


# --------------------------------------------------------------------------
# Chunk execution (kernel fast path with a scalar fallback)
# --------------------------------------------------------------------------


class _PointStats:
    def __init__(self, track_explosion: bool, explosion_k: int):
        self.acc = _Welford()
        self.steps = 0
        self.zeros = 0
        self.top = _TopMass(explosion_k) if track_explosion else None

    def add(self, scores: np.ndarray, steps: int) -> None:
        self.acc.add_chunk(scores)
        self.steps += steps
        self.zeros += int(np.count_nonzero(scores == 0.0))
        if self.top is not None:
            self.top.add_chunk(scores)


def _run_linear_chunk_kernel(req, x0, score_init, inside0, stream_id, n):
    mol = req.molecule
    kind, alpha, kb = _scheme_code(req.scheme)
    c = req.params.constants
    u0coef = req.params.source_C / (4.0 * math.pi * c.eps_in)
    scores = np.empty(n)
    status = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    _kernels.linear_chunk(
        mol.centers, mol.radii, mol.charges, u0coef,
        x0[0], x0[1], x0[2], score_init, inside0,
        req.params.lambda0, req.epsilon_shell, req.max_steps,
        kind, req.scheme.h, alpha, kb, c.eps_in, c.eps_out,
        req.seed, stream_id, n, scores, status, steps,
    )
    if np.any(status != 0):
        raise WalkDivergenceError(
            f"{int(np.count_nonzero(status))} of {n} walks hit the step cap"
        )
    return scores, int(steps.sum())


def _run_linear_chunk_scalar(req, x0, stream_id, n):
    mol = req.molecule
    cfg = WalkConfig(
        lam=req.params.lambda0, epsilon_shell=req.epsilon_shell, max_steps=req.max_steps
    )
    rng = RngStream(req.seed, stream_id)
    scores = np.empty(n)
    for j in range(n):
        scores[j] = linear_walk_score(
            mol, req.params, x0, req.scheme, cfg, rng, subtract_u0=req.subtract_u0
        )
    return scores, 0


def _tree_arrays(shape) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Canonical shape -> generation-order (m, first_child, parent) arrays."""
    m: list[int] = []
    parent: list[int] = []
    queue: list[tuple[tuple, int]] = [(shape, -1)]
    while queue:
        node, p = queue.pop(0)
        idx = len(m)
        m.append(node[0])
        parent.append(p)
        for kid in node[1]:
            queue.append((kid, idx))
    n = len(m)
    first_child = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    for j in range(1, n):
        p = parent[j]
        if not seen[p]:
            first_child[p] = j
            seen[p] = True
    return (
        np.asarray(m, dtype=np.int64),
        first_child,
        np.asarray(parent, dtype=np.int64),
        n,
    )


_EMPTY_I64 = np.empty(0, dtype=np.int64)
_OFF_CUM = np.cumsum(np.asarray(OFFSPRING_PROBS))
_OFF_VALS = np.asarray(OFFSPRING_VALUES, dtype=np.int64)


def _run_branching_chunk_kernel(
    req, x0, score_init, inside0, stream_id, n, mode, tree_arrays=None, retained_sigs=None
):
    mol = req.molecule
    kind, alpha, kb = _scheme_code(req.scheme)
    c = req.params.constants
    u0coef = req.params.source_C / (4.0 * math.pi * c.eps_in)
    scores = np.empty(n)
    status = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    if tree_arrays is None:
        fm, ffc, fpar, fn = _EMPTY_I64, _EMPTY_I64, _EMPTY_I64, 0
    else:
        fm, ffc, fpar, fn = tree_arrays
    sigs = retained_sigs if retained_sigs is not None else _EMPTY_I64
    _kernels.branching_chunk(
        mol.centers, mol.radii, mol.charges, u0coef,
        x0[0], x0[1], x0[2], score_init, inside0,
        req.params.lambda0, req.epsilon_shell, req.max_steps,
        kind, req.scheme.h, alpha, kb, c.eps_in, c.eps_out,
        mode, fm, ffc, fpar, fn, sigs, _OFF_CUM, _OFF_VALS,
        req.seed, stream_id, n, scores, status, steps,
    )
    if np.any(status != 0):
        raise WalkDivergenceError(
            f"{int(np.count_nonzero(status))} of {n} branching walks failed "
            f"(statuses {sorted(set(status[status != 0].tolist()))})"
        )
    return scores, int(steps.sum())


def _run_branching_chunk_scalar(req, x0, stream_id, n, mode, tree=None, retained=None):
    mol = req.molecule
    cfg = WalkConfig(
        lam=req.params.lambda0, epsilon_shell=req.epsilon_shell, max_steps=req.max_steps
    )
    rng = RngStream(req.seed, stream_id)
    scores = np.empty(n)
    for j in range(n):
        if mode == 1:
            t = tree
        elif mode == 0:
            t = sample_gw_tree(rng)
        else:
            while True:
                t = sample_gw_tree(rng)
                sig = shape_signature(t.canonical_shape())
                if sig is None or sig not in retained:
                    break
        scores[j] = branching_walk_score(
            mol, req.params, x0, req.scheme, cfg, rng, t, subtract_u0=req.subtract_u0
        )
    return scores, 0


# --------------------------------------------------------------------------
# Public solvers
# --------------------------------------------------------------------------


def _chunk_sizes(total: int) -> list[int]:
    sizes = [CHUNK_SAMPLES] * (total // CHUNK_SAMPLES)
    if total % CHUNK_SAMPLES:
        sizes.append(total % CHUNK_SAMPLES)
    return sizes


_ChunkJob = Callable[[], tuple[np.ndarray, int]]


def _map_ordered(workers: int, jobs: Sequence[_ChunkJob]) -> list[tuple[np.ndarray, int]]:
    """Run chunk jobs and return their results in submission order.

    Each job owns a disjoint random stream and the merge consumes results in
    list order, so scheduling cannot leak into the estimate: worker count
    changes wall time only.  The compiled kernels release the GIL, letting
    threads overlap where cores exist.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def solve_linear(req: SolveRequest) -> list[Estimate]:
    """Estimate the (regular part of the) linearized potential per point.

    Points are processed independently: a failure at one point is reported
    in its Estimate.error and does not abort the others.
    """
    if req.stratified:
        raise ConfigError("stratification applies to the nonlinear solver only")
    results = []
    for p_idx, x0 in enumerate(req.points):
        t0 = time.perf_counter()
        try:
            score_init, inside0 = _initial_score(
                req.molecule, req.params, x0, req.subtract_u0
            )
            stats = _PointStats(track_explosion=False, explosion_k=1)

            def job(c_idx: int, n: int, x0=x0, score_init=score_init, inside0=inside0):
                sid = _stream_id(_PURPOSE_LINEAR, p_idx, 0, c_idx)
                if _kernels is not None:
                    return _run_linear_chunk_kernel(req, x0, score_init, inside0, sid, n)
                return _run_linear_chunk_scalar(req, x0, sid, n)

            jobs = [
                (lambda c=c, n=n: job(c, n))
                for c, n in enumerate(_chunk_sizes(req.samples))
            ]
            for scores, steps in _map_ordered(req.workers, jobs):
                stats.add(scores, steps)
            results.append(
                Estimate(
                    point=x0.copy(),
                    mean=stats.acc.mean,
                    std_error=stats.acc.std_error,
                    ci95_halfwidth=_CI95 * stats.acc.std_error,
                    samples_used=stats.acc.n,
                    wall_time=time.perf_counter() - t0,
                    steps_per_sample=stats.steps / max(stats.acc.n, 1)
                    if _kernels is not None
                    else float("nan"),
                )
            )
        except PbwosError as exc:
            results.append(
                Estimate(
                    point=x0.copy(),
                    mean=float("nan"),
                    std_error=float("nan"),
                    ci95_halfwidth=float("nan"),
                    samples_used=0,
                    wall_time=time.perf_counter() - t0,
                    steps_per_sample=float("nan"),
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return results


def _retained_strata(req: SolveRequest) -> list[Stratum]:
    """Top strata by probability, capped so the pilot fits in the budget."""
    all_strata = enumerate_strata(max_height=2, tail_mass=req.tail_mass)
    non_tail = [s for s in all_strata if s.shape is not None]
    budget_cap = req.samples // (2 * req.pilot_samples) - 1
    k = min(req.max_strata, len(non_tail), max(budget_cap, 1))
    if req.samples < 2 * req.pilot_samples * (k + 1):
        k = max(req.samples // (2 * req.pilot_samples) - 1, 1)
    if req.samples < req.pilot_samples * (k + 1):
        raise ConfigError(
            f"samples={req.samples} cannot cover pilots for {k} strata plus tail"
        )
    return non_tail[:k]


def _allocate(remaining: int, weights: np.ndarray) -> np.ndarray:
    """Integer split of `remaining` proportional to weights (deterministic)."""
    total_w = float(weights.sum())
    if remaining <= 0 or total_w <= 0.0:
        return np.zeros(weights.size, dtype=np.int64)
    raw = remaining * weights / total_w
    alloc = np.floor(raw).astype(np.int64)
    leftover = remaining - int(alloc.sum())
    if leftover > 0:
        order = np.lexsort((np.arange(weights.size), -(raw - alloc)))
        for j in order[:leftover]:
            alloc[j] += 1
    return alloc


def solve_nonlinear(req: SolveRequest) -> list[Estimate]:
    """Estimate the (regular part of the) nonlinear potential per point.

    Unstratified mode draws a fresh genealogical tree per sample.
    Stratified mode conditions on the highest-probability tree shapes of
    height <= 2 (pilot runs size the allocation) and handles everything
    else through a rejection-sampled tail stratum.
    """
    if isinstance(req.scheme, TAJ):
        raise ConfigError("the branching estimator requires a non-killing scheme (SNJ/ANJ)")
    # Stratum retention depends only on the request; do it once so a budget
    # misconfiguration raises instead of nan-ing every point.
    retained = _retained_strata(req) if req.stratified else None
    results = []
    for p_idx, x0 in enumerate(req.points):
        t0 = time.perf_counter()
        try:
            if req.stratified:
                est = _solve_nonlinear_stratified_point(req, p_idx, x0, t0, retained)
            else:
                est = _solve_nonlinear_plain_point(req, p_idx, x0, t0)
            results.append(est)
        except PbwosError as exc:
            results.append(
                Estimate(
                    point=x0.copy(),
                    mean=float("nan"),
                    std_error=float("nan"),
                    ci95_halfwidth=float("nan"),
                    samples_used=0,
                    wall_time=time.perf_counter() - t0,
                    steps_per_sample=float("nan"),
                    zero_score_fraction=float("nan"),
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return results


def _solve_nonlinear_plain_point(req, p_idx, x0, t0) -> Estimate:
    score_init, inside0 = _initial_score(req.molecule, req.params, x0, req.subtract_u0)
    stats = _PointStats(track_explosion=True, explosion_k=max(1, req.samples // 100))

    def job(c_idx: int, n: int) -> tuple[np.ndarray, int]:
        sid = _stream_id(_PURPOSE_NONLINEAR, p_idx, 0, c_idx)
        if _kernels is not None:
            return _run_branching_chunk_kernel(
                req, x0, score_init, inside0, sid, n, mode=0
            )
        return _run_branching_chunk_scalar(req, x0, sid, n, mode=0)

    jobs = [
        (lambda c=c, n=n: job(c, n)) for c, n in enumerate(_chunk_sizes(req.samples))
    ]
    for scores, steps in _map_ordered(req.workers, jobs):
        stats.add(scores, steps)
    return Estimate(
        point=x0.copy(),
        mean=stats.acc.mean,
        std_error=stats.acc.std_error,
        ci95_halfwidth=_CI95 * stats.acc.std_error,
        samples_used=stats.acc.n,
        wall_time=time.perf_counter() - t0,
        steps_per_sample=stats.steps / max(stats.acc.n, 1)
        if _kernels is not None
        else float("nan"),
        zero_score_fraction=stats.zeros / max(stats.acc.n, 1),
        explosion_flag=stats.top.exploded(),
    )


def _solve_nonlinear_stratified_point(req, p_idx, x0, t0, retained) -> Estimate:
    score_init, inside0 = _initial_score(req.molecule, req.params, x0, req.subtract_u0)
    probs = np.array([s.probability for s in retained])
    p_tail = 1.0 - float(probs.sum())
    sigs = sorted(shape_signature(s.shape) for s in retained)
    retained_sigs = np.asarray(sigs, dtype=np.int64)
    retained_set = set(sigs)
    trees = [_tree_arrays(s.shape) for s in retained]
    scalar_trees = [shape_to_tree(s.shape) for s in retained]
    n_strata = len(retained) + 1  # + tail
    all_probs = np.append(probs, p_tail)

    def run(stratum_idx: int, chunk_idx: int, n: int) -> tuple[np.ndarray, int]:
        sid = _stream_id(_PURPOSE_STRATUM, p_idx, stratum_idx, chunk_idx)
        is_tail = stratum_idx == n_strata - 1
        if _kernels is not None:
            if is_tail:
                return _run_branching_chunk_kernel(
                    req, x0, score_init, inside0, sid, n, mode=2,
                    retained_sigs=retained_sigs,
                )
            return _run_branching_chunk_kernel(
                req, x0, score_init, inside0, sid, n, mode=1,
                tree_arrays=trees[stratum_idx],
            )
        if is_tail:
            return _run_branching_chunk_scalar(
                req, x0, sid, n, mode=2, retained=retained_set
            )
        return _run_branching_chunk_scalar(
            req, x0, sid, n, mode=1, tree=scalar_trees[stratum_idx]
        )

    accs = [_Welford() for _ in range(n_strata)]
    top = _TopMass(max(1, req.samples // 100))
    steps_total = 0
    zeros = 0
    chunk_cursor = [0] * n_strata

    def consume(stratum_idx: int, n_samples: int) -> None:
        nonlocal steps_total, zeros
        jobs = []
        for n in _chunk_sizes(n_samples):
            c_idx = chunk_cursor[stratum_idx]
            chunk_cursor[stratum_idx] += 1
            jobs.append(lambda s=stratum_idx, c=c_idx, m=n: run(s, c, m))
        for scores, steps in _map_ordered(req.workers, jobs):
            accs[stratum_idx].add_chunk(scores)
            top.add_chunk(scores)
            steps_total += steps
            zeros += int(np.count_nonzero(scores == 0.0))

    for s_idx in range(n_strata):
        consume(s_idx, req.pilot_samples)
    pilot_total = req.pilot_samples * n_strata
    sigma = np.array([math.sqrt(max(a.variance, 0.0)) for a in accs])
    alloc = _allocate(req.samples - pilot_total, all_probs * sigma)
    for s_idx in range(n_strata):
        if alloc[s_idx] > 0:
            consume(s_idx, int(alloc[s_idx]))

    used = sum(a.n for a in accs)
    mean = float(sum(p * a.mean for p, a in zip(all_probs, accs)))
    var = float(
        sum(p * p * max(a.variance, 0.0) / a.n for p, a in zip(all_probs, accs))
    )
    se = math.sqrt(var)
    return Estimate(
        point=x0.copy(),
        mean=mean,
        std_error=se,
        ci95_halfwidth=_CI95 * se,
        samples_used=used,
        wall_time=time.perf_counter() - t0,
        steps_per_sample=steps_total / max(used, 1) if _kernels is not None else float("nan"),
        zero_score_fraction=zeros / max(used, 1),
        explosion_flag=top.exploded(),
    )


def exterior_exit_fraction(
    mol: Molecule,
    x0,
    lam: float,
    epsilon_shell: float = 1.0e-4,
    samples: int = 1_000_000,
    seed: int = 0,
    max_steps: int = 1_000_000,
    workers: int = 1,
) -> float:
    """Fraction of exterior walks absorbed in the shell before the kill clock.

    Small deterministic harness used by the oracle tests and benchmarks.
    """
    if not lam > 0.0:
        raise ConfigError(f"lam must be > 0, got {lam!r}")
    x0 = np.asarray(x0, dtype=float)
    if _kernels is not None:

        def job(c_idx: int, n: int) -> tuple[np.ndarray, int]:
            sid = _stream_id(_PURPOSE_LINEAR, 0, 1, c_idx)
            hits = _kernels.exit_fraction_chunk(
                mol.centers, mol.radii, x0[0], x0[1], x0[2],
                lam, epsilon_shell, max_steps, seed, sid, n,
            )
            return np.array([hits]), 0

        jobs = [(lambda c=c, n=n: job(c, n)) for c, n in enumerate(_chunk_sizes(samples))]
        exits = sum(int(r[0][0]) for r in _map_ordered(workers, jobs))
        return exits / samples
    cfg = WalkConfig(lam=lam, epsilon_shell=epsilon_shell, max_steps=max_steps)
    exits = 0
    for c_idx, n in enumerate(_chunk_sizes(samples)):
        rng = RngStream(seed, _stream_id(_PURPOSE_LINEAR, 0, 1, c_idx))
        for _ in range(n):
            if wos_walk(mol, x0, cfg, rng).kind == "exit":
                exits += 1
    return exits / samples
