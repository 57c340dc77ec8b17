"""Deterministic reference solutions for a single charged sphere.

Two oracles used to validate the stochastic solvers:

* a closed-form reaction potential for the linearized equation, obtained by
  matching the interior Coulomb-plus-constant solution to a screened
  exterior mode across the dielectric interface;
* a radial finite-difference solver for the full nonlinear exterior
  equation, with a flux condition at the sphere surface and a far-field
  Dirichlet cutoff.

Both report the regular part of the potential at the sphere center, which is
the quantity the walk-based solvers estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, NumericalError
from .physconst import PbParameters

#: Minimum far-field margin, in units of screening lengths (1/kappa_out).
FAR_FIELD_MARGIN = 30.0

#: Scaled-residual convergence threshold for the Newton iteration.  The
#: residual is measured on the spacing**2-scaled equations so the threshold
#: is meaningful in double precision on fine grids.
NEWTON_TOL = 1.0e-10

_MAX_NEWTON_ITERATIONS = 200
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class RadialGrid:
    """Uniform grid on [r_min, r_max] for the radial exterior problem."""

    r_min: float
    r_max: float
    n_points: int = 10_000

    def __post_init__(self):
        if not self.r_min > 0.0:
            raise ConfigError(f"r_min must be > 0, got {self.r_min!r}")
        if not self.r_max > self.r_min:
            raise ConfigError("r_max must exceed r_min")
        if self.n_points < 10_000:
            raise ConfigError(f"n_points must be >= 10000, got {self.n_points!r}")

    @classmethod
    def for_params(
        cls,
        params: PbParameters,
        r_min: float,
        n_points: int = 10_000,
        margin: float = FAR_FIELD_MARGIN,
    ) -> "RadialGrid":
        """Grid whose far edge sits `margin` screening lengths out."""
        return cls(r_min=r_min, r_max=r_min + margin / params.kappa_out, n_points=n_points)

    @property
    def spacing(self) -> float:
        return (self.r_max - self.r_min) / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_points)


@dataclass(frozen=True)
class RadialSolution:
    """Discrete exterior solution plus the derived center value."""

    grid: RadialGrid
    values: np.ndarray
    reaction_value: float
    residual: float
    iterations: int

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < self.grid.r_min - 1e-12) or np.any(s > self.grid.r_max + 1e-12):
            raise ConfigError("evaluation point outside the solved radial range")
        out = np.interp(s, self.grid.points, self.values)
        return float(out) if out.ndim == 0 else out


def linear_single_atom(params: PbParameters, r: float, z: float) -> float:
    """Regular part of the linearized potential at the center of one sphere.

    For a sphere of radius r carrying a single charge z at its center, the
    screened exterior solution B*exp(-kappa_out*s)/s matches an interior
    Coulomb term plus a constant; that constant is the value returned:

        (C*z / (4*pi*r)) * (1/(eps_out*(1+kappa_out*r)) - 1/eps_in)
    """
    if not r > 0.0:
        raise ConfigError(f"sphere radius must be > 0, got {r!r}")
    c = params.constants
    ko = params.kappa_out
    prefactor = params.source_C * z / (4.0 * math.pi * r)
    return prefactor * (1.0 / (c.eps_out * (1.0 + ko * r)) - 1.0 / c.eps_in)


def _check_grid(params: PbParameters, r: float, grid: RadialGrid) -> None:
    if abs(grid.r_min - r) > 1e-9 * max(1.0, r):
        raise ConfigError("grid.r_min must equal the sphere radius")
    if grid.r_max < r + FAR_FIELD_MARGIN / params.kappa_out - 1e-9:
        raise ConfigError(
            "r_max too small: need at least "
            f"{FAR_FIELD_MARGIN:g} screening lengths beyond the sphere"
        )


def _scaled_residual(v, x, dx, ko2, flux) -> np.ndarray:
    """Residual of the spacing**2-scaled discrete system.

    Row 0 is a one-sided second-order flux condition v'(r_min) = flux, the
    last row pins v(r_max) = 0, interior rows discretize
    v'' + (2/x) v' - ko2*sinh(v) = 0.
    """
    res = np.empty_like(v)
    res[0] = ((-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx) - flux) * dx * dx
    xi = x[1:-1]
    res[1:-1] = (
        (v[:-2] - 2.0 * v[1:-1] + v[2:])
        + (dx / xi) * (v[2:] - v[:-2])
        - dx * dx * ko2 * np.sinh(v[1:-1])
    )
    res[-1] = v[-1]
    return res


def _banded_jacobian(v, x, dx, ko2, linearized=False) -> np.ndarray:
    """Jacobian of the scaled system in solve_banded (1, 2) storage."""
    n = v.size
    ab = np.zeros((4, n))
    # Row layout for (l, u) = (1, 2): ab[0] = second superdiagonal,
    # ab[1] = first superdiagonal, ab[2] = diagonal, ab[3] = subdiagonal.
    xi = x[1:-1]
    cosh_term = np.ones(n - 2) if linearized else np.cosh(v[1:-1])
    ab[3, 0:-2] = 1.0 - dx / xi  # v[i-1] coefficient at column i-1
    ab[2, 1:-1] = -2.0 - dx * dx * ko2 * cosh_term
    ab[1, 2:] = 1.0 + dx / xi  # v[i+1] coefficient at column i+1
    # Flux row touches columns 0..2.
    ab[2, 0] = -1.5 * dx
    ab[1, 1] = 2.0 * dx
    ab[0, 2] = -0.5 * dx
    # Far-field Dirichlet row.
    ab[2, n - 1] = 1.0
    ab[3, n - 2] = 0.0
    return ab


def nonlinear_single_atom(
    params: PbParameters, r: float, z: float, grid: RadialGrid
) -> RadialSolution:
    """Solve the radial nonlinear exterior problem and report the center value.

    The exterior equation v'' + (2/x) v' = kappa_out**2 * sinh(v) is solved
    on [r, r_max] with flux data v'(r) = -C*z/(4*pi*eps_out*r**2) and
    v(r_max) = 0, by damped Newton iteration on a second-order finite
    difference system.  The regular part at the center is
    v(r) - C*z/(4*pi*eps_in*r).

    Raises NumericalError (reporting the last residual) if the iteration has
    not converged after 200 steps.
    """
    _check_grid(params, r, grid)
    c = params.constants
    ko2 = params.kappa_out**2
    x = grid.points
    dx = grid.spacing
    flux = -params.source_C * z / (4.0 * math.pi * c.eps_out * r * r)

    # Linearized solve (sinh v ~ v) as the Newton starting point.
    v = np.zeros(grid.n_points)
    res = _scaled_residual(v, x, dx, ko2, flux)
    ab = _banded_jacobian(v, x, dx, ko2, linearized=True)
    v = v - solve_banded((1, 2), ab, res)

    res = _scaled_residual(v, x, dx, ko2, flux)
    res_norm = float(np.max(np.abs(res)))
    iterations = 0
    while res_norm >= NEWTON_TOL:
        if iterations >= _MAX_NEWTON_ITERATIONS:
            raise NumericalError(
                f"radial Newton iteration stalled: residual {res_norm:.3e} "
                f"after {iterations} iterations"
            )
        ab = _banded_jacobian(v, x, dx, ko2)
        step = solve_banded((1, 2), ab, res)
        damping = 1.0
        for _ in range(_MAX_HALVINGS):
            trial = v - damping * step
            trial_res = _scaled_residual(trial, x, dx, ko2, flux)
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm < res_norm:
                break
            damping *= 0.5
        else:
            raise NumericalError(
                f"radial Newton damping failed: residual {res_norm:.3e} "
                f"after {iterations} iterations"
            )
        v, res, res_norm = trial, trial_res, trial_norm
        iterations += 1

    v0_at_surface = params.source_C * z / (4.0 * math.pi * c.eps_in * r)
    return RadialSolution(
        grid=grid,
        values=v,
        reaction_value=float(v[0]) - v0_at_surface,
        residual=res_norm,
        iterations=iterations,
    )
