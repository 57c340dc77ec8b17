"""Walk kernels: exterior walk-on-spheres with killing, exact interior walk,
and the splitting variant used by the branching solver.

The exterior walk jumps to uniform points on the largest molecule-free
sphere and is killed with probability 1 - x/sinh(x), x = r sqrt(2 lam),
before each move.  The interior walk uses the atom spheres themselves with
the closed-form exit-angle law, so it has no discretization parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import ConfigError, NumericalError, WalkDivergenceError
from .molecule import Molecule, SurfacePoint, tangent_basis
from .sampling import RngStream, bwos_sample_radius, uniform_on_sphere, uwos_sample_angle

_GAMMA_TOL = 1.0e-9  # boundary membership tolerance for the interior walk

# An exterior walk without killing is transient in 3d: it escapes to infinity
# with probability 1 - R/r and its coordinates eventually overflow.  Treat any
# free-sphere radius beyond this as an escape rather than looping to the step
# cap (with lam > 0 the kill probability is 1 to machine precision long before
# this radius is reached, so the guard only fires for lam = 0 setups).
_ESCAPE_RADIUS = 1.0e12


@dataclass(frozen=True)
class WalkConfig:
    """Killing rate lam (1/A^2), shell width epsilon_shell (A), step cap."""

    lam: float
    epsilon_shell: float = 1.0e-4
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.lam < 0.0:
            raise ConfigError(f"lam must be >= 0, got {self.lam!r}")
        if not self.epsilon_shell > 0.0:
            raise ConfigError(f"epsilon_shell must be > 0, got {self.epsilon_shell!r}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps!r}")


@dataclass(frozen=True)
class WalkOutcome:
    """Result of one exterior walk.

    kind is "exit" (reached the shell and was projected onto the boundary),
    "killed", or "split" (killed, with the death position resolved).  For
    kills, the last sphere (center, radius) is kept so the splitting variant
    can resolve the death position.
    """

    kind: Literal["exit", "killed", "split"]
    steps_taken: int
    surface: Optional[SurfacePoint] = None
    split_point: Optional[np.ndarray] = None
    kill_center: Optional[np.ndarray] = None
    kill_radius: Optional[float] = None


def kill_probability(radius: float, lam: float) -> float:
    """Probability the exponential clock rings before exiting the sphere.

    1 - x/sinh(x) with x = radius*sqrt(2*lam); series x^2/6 - 7x^4/360 for
    tiny x, exponential form for large x to dodge sinh overflow.
    """
    if not radius > 0.0:
        raise ConfigError(f"radius must be > 0, got {radius!r}")
    if lam < 0.0:
        raise ConfigError(f"lam must be >= 0, got {lam!r}")
    x = radius * math.sqrt(2.0 * lam)
    if x < 1.0e-4:
        return x * x / 6.0 - 7.0 * x**4 / 360.0
    if x > 30.0:
        em = math.exp(-x)
        return 1.0 - 2.0 * x * em / (1.0 - em * em)
    return 1.0 - x / math.sinh(x)


def _project_onto_atom(mol: Molecule, x: np.ndarray, i: int) -> SurfacePoint:
    offset = x - mol.centers[i]
    dist = float(np.linalg.norm(offset))
    normal = offset / dist
    return SurfacePoint(
        position=mol.centers[i] + mol.radii[i] * normal, atom_index=i, normal=normal
    )


def wos_walk(
    mol: Molecule,
    x0,
    cfg: WalkConfig,
    rng: RngStream,
    hint: int | None = None,
) -> WalkOutcome:
    """Exterior walk from x0 until killed or absorbed in the epsilon shell.

    Nearest-atom queries thread the previous step's atom as a hint.  The
    shell test happens before any kill/move, so no sphere of radius <=
    epsilon_shell is ever used.
    """
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"walk start must be finite, got {x.tolist()!r}")
    steps = 0
    while True:
        i = mol.nearest_atom(x, hint=hint)
        sd = float(np.linalg.norm(x - mol.centers[i])) - mol.radii[i]
        if sd <= cfg.epsilon_shell:
            return WalkOutcome(kind="exit", steps_taken=steps, surface=_project_onto_atom(mol, x, i))
        if sd > _ESCAPE_RADIUS:
            raise WalkDivergenceError(
                f"exterior walk escaped beyond {_ESCAPE_RADIUS:g} A "
                f"(lam={cfg.lam}); termination requires lam > 0"
            )
        if steps >= cfg.max_steps:
            raise WalkDivergenceError(
                f"exterior walk exceeded {cfg.max_steps} steps (lam={cfg.lam})"
            )
        if cfg.lam > 0.0 and float(rng.uniform()) < kill_probability(sd, cfg.lam):
            return WalkOutcome(
                kind="killed", steps_taken=steps, kill_center=x.copy(), kill_radius=sd
            )
        x = uniform_on_sphere(rng, x, sd)
        steps += 1
        hint = i


def uwos_exit(mol: Molecule, x0, rng: RngStream, max_steps: int = 100_000) -> SurfacePoint:
    """Exact exit point on the molecular boundary for an interior start.

    Repeatedly exits the current containing atom sphere through the
    closed-form polar-angle law until the exit point belongs to no other
    atom (within 1e-9).  A start at a sphere center is handled by uniform
    exit.  No discretization parameter is involved.
    """
    x = np.array(x0, dtype=float)
    for _ in range(max_steps):
        diffs = x - mol.centers
        dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
        inside = dists < mol.radii
        if not np.any(inside):
            raise NumericalError(f"interior walk start {x.tolist()} is not inside any atom")
        i = int(np.argmax(inside))  # lowest index among containing atoms
        center, radius = mol.centers[i], float(mol.radii[i])
        rho = float(dists[i])
        if rho < 1.0e-12:
            exit_point = uniform_on_sphere(rng, center, radius)
        else:
            alpha = uwos_sample_angle(rng, radius, rho)
            phi = 2.0 * math.pi * float(rng.uniform())
            e_r = diffs[i] / rho
            m, q = tangent_basis(e_r)
            direction = (
                math.cos(alpha) * e_r
                + math.sin(alpha) * (math.cos(phi) * m + math.sin(phi) * q)
            )
            exit_point = center + radius * direction
        d_others = np.sqrt(
            np.einsum("ij,ij->i", exit_point - mol.centers, exit_point - mol.centers)
        )
        covered = d_others < mol.radii - _GAMMA_TOL
        covered[i] = False
        if not np.any(covered):
            return SurfacePoint(
                position=exit_point, atom_index=i, normal=(exit_point - center) / radius
            )
        x = exit_point
    raise WalkDivergenceError(f"interior walk exceeded {max_steps} sphere exits")


def bwos_walk(
    mol: Molecule,
    x0,
    cfg: WalkConfig,
    rng: RngStream,
    hint: int | None = None,
) -> WalkOutcome:
    """Exterior walk that resolves the death position on a kill.

    Runs the plain exterior walk; when it is killed, the death radius within
    the last sphere is drawn from its conditional law and the death position
    uniformly on that radius, yielding a "split" outcome strictly outside
    the molecule.
    """
    if not cfg.lam > 0.0:
        raise ConfigError("splitting walk requires lam > 0")
    out = wos_walk(mol, x0, cfg, rng, hint=hint)
    if out.kind != "killed":
        return out
    r = bwos_sample_radius(rng, out.kill_radius, cfg.lam)
    direction = uniform_on_sphere(rng, np.zeros(3), 1.0)
    split = out.kill_center + r * direction
    return WalkOutcome(
        kind="split",
        steps_taken=out.steps_taken,
        split_point=split,
        kill_center=out.kill_center,
        kill_radius=out.kill_radius,
    )
