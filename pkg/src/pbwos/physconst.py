"""Physical constants and every derived screening parameter.

All lengths inside the package are in angstrom; the SI constants below are
converted exactly once, in :func:`derive_parameters`.  Downstream code should
only ever touch :class:`PbParameters`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularityError

# Unit conversions (exact).
_M_TO_ANGSTROM = 1.0e10
_MOL_PER_L_TO_MOL_PER_M3 = 1.0e3


@dataclass(frozen=True)
class PhysicalConstants:
    """SI constants plus the dielectric/ionic description of the solvent.

    Defaults are the values used for all built-in test cases: a 1:1
    electrolyte at 1 mol/L and 298 K with dielectric constants 2 (molecule
    interior) and 80 (water).
    """

    k_B: float = 1.3806488e-23  # Boltzmann constant, J/K
    e_c: float = 1.602176565e-19  # elementary charge, C
    T: float = 298.0  # temperature, K
    eps0: float = 8.854187817e-12  # vacuum permittivity, F/m
    N_A: float = 6.02214129e23  # Avogadro constant, 1/mol
    eps_in: float = 2.0  # relative permittivity inside the molecule
    eps_out: float = 80.0  # relative permittivity of the solvent
    ion_concentration: float = 1.0  # mol/L
    ion_charge: float = 1.0  # ion valence, +-1

    def validate(self) -> None:
        for name in ("k_B", "e_c", "T", "eps0", "N_A", "eps_in", "eps_out"):
            value = getattr(self, name)
            if not (value > 0.0) or not math.isfinite(value):
                raise ConfigError(f"constant {name} must be strictly positive, got {value!r}")
        if self.ion_concentration < 0.0 or not math.isfinite(self.ion_concentration):
            raise ConfigError(
                f"ion_concentration must be >= 0, got {self.ion_concentration!r}"
            )
        if self.ion_charge not in (1.0, -1.0):
            raise ConfigError(f"ion_charge must be +1 or -1, got {self.ion_charge!r}")


@dataclass(frozen=True)
class PbParameters:
    """Derived screening parameters, all in angstrom-based units.

    kappa_bar   inverse Debye length of the solvent [1/A]
    kappa_out   kappa_bar / sqrt(eps_out) [1/A]
    lambda0     killing rate of the exterior walk, kappa_out^2 / 2 [1/A^2]
    source_C    e_c^2 / (k_B T eps0) expressed in angstrom [A]; multiplies
                every point-charge term of the singular potential
    """

    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    kappa_bar: float = 0.0
    kappa_out: float = 0.0
    lambda0: float = 0.0
    source_C: float = 0.0


def derive_parameters(constants: PhysicalConstants | None = None) -> PbParameters:
    """Compute all derived screening parameters from raw constants.

    The inverse Debye length is computed in SI as
    ``sqrt(2 N_A e_c^2 I / (eps0 k_B T))`` with the ionic strength
    ``I = c z^2`` in mol/m^3, then converted to 1/A.  ``eps_out`` enters only
    through ``kappa_out = kappa_bar / sqrt(eps_out)``; with the default
    constants this yields kappa_bar = 2.9132 1/A.

    Pure and idempotent; raises ConfigError on invalid constants.
    """
    if constants is None:
        constants = PhysicalConstants()
    constants.validate()

    ionic_strength = (
        constants.ion_concentration * _MOL_PER_L_TO_MOL_PER_M3 * constants.ion_charge**2
    )
    kappa_bar_si = math.sqrt(
        2.0 * constants.N_A * constants.e_c**2 * ionic_strength
        / (constants.eps0 * constants.k_B * constants.T)
    )
    kappa_bar = kappa_bar_si / _M_TO_ANGSTROM
    kappa_out = kappa_bar / math.sqrt(constants.eps_out)
    lambda0 = 0.5 * kappa_out**2
    source_C = (
        constants.e_c**2 / (constants.k_B * constants.T * constants.eps0)
    ) * _M_TO_ANGSTROM
    return PbParameters(
        constants=constants,
        kappa_bar=kappa_bar,
        kappa_out=kappa_out,
        lambda0=lambda0,
        source_C=source_C,
    )


def u0(molecule, params: PbParameters, x) -> float:
    """Singular Coulombic part of the potential at point ``x`` (angstrom).

    Returns ``source_C * sum_i z_i / (4 pi eps_in |x - c_i|)``.  Raises
    SingularityError when ``x`` sits within 1e-12 A of an atom center.
    """
    x = np.asarray(x, dtype=float)
    diffs = molecule.centers - x
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    if np.any(dists < 1.0e-12):
        i = int(np.argmin(dists))
        raise SingularityError(
            f"point {x.tolist()} coincides with atom center {i} (distance {dists[i]:.3e} A)"
        )
    coef = params.source_C / (4.0 * math.pi * params.constants.eps_in)
    return coef * float(np.sum(molecule.charges / dists))
