"""Constants, derived screening parameters, and the singular potential."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pbwos import (
    Atom,
    ConfigError,
    Molecule,
    PhysicalConstants,
    SingularityError,
    derive_parameters,
    u0,
)


def test_default_kappa_bar_value(params):
    # Inverse Debye length for a 1 mol/L 1:1 electrolyte at 298 K.
    assert params.kappa_bar == pytest.approx(2.9132, rel=1.0e-3)


def test_derived_relations(params):
    assert params.kappa_out == pytest.approx(params.kappa_bar / math.sqrt(80.0), rel=1e-12)
    assert params.lambda0 == pytest.approx(0.5 * params.kappa_out**2, rel=1e-12)
    assert params.source_C == pytest.approx(7046.485, rel=1e-4)


def test_derive_parameters_is_pure():
    a = derive_parameters()
    b = derive_parameters()
    assert a.kappa_bar == b.kappa_bar
    assert a.source_C == b.source_C


def test_kappa_scales_with_sqrt_concentration():
    base = derive_parameters(PhysicalConstants(ion_concentration=1.0))
    quad = derive_parameters(PhysicalConstants(ion_concentration=4.0))
    assert quad.kappa_bar == pytest.approx(2.0 * base.kappa_bar, rel=1e-12)


def test_zero_concentration_means_no_screening():
    p = derive_parameters(PhysicalConstants(ion_concentration=0.0))
    assert p.kappa_bar == 0.0
    assert p.lambda0 == 0.0


@pytest.mark.parametrize(
    "bad",
    [
        PhysicalConstants(T=-1.0),
        PhysicalConstants(eps_out=0.0),
        PhysicalConstants(ion_concentration=-0.5),
        PhysicalConstants(ion_charge=2.0),
        PhysicalConstants(k_B=float("nan")),
    ],
)
def test_invalid_constants_rejected(bad):
    with pytest.raises(ConfigError):
        derive_parameters(bad)


def test_u0_single_atom_value(params, unit_atom):
    # C * z / (4 pi eps_in r) at r = 1.
    expected = params.source_C / (4.0 * math.pi * 2.0)
    assert u0(unit_atom, params, [1.0, 0.0, 0.0]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(280.37, abs=0.01)


def test_u0_antisymmetry_on_dimer(params, dimer):
    mid = [1.1, 0.7, -0.3]  # equidistant from both centers in x
    assert u0(dimer, params, mid) == pytest.approx(0.0, abs=1e-9)


def test_u0_monotone_decay(params, unit_atom):
    rs = np.linspace(0.5, 50.0, 200)
    vals = [u0(unit_atom, params, [r, 0.0, 0.0]) for r in rs]
    assert all(a > b > 0.0 for a, b in zip(vals, vals[1:]))


def test_u0_center_singularity(params, unit_atom):
    with pytest.raises(SingularityError):
        u0(unit_atom, params, [0.0, 0.0, 0.0])


@given(
    z1=st.floats(-2.0, 2.0),
    z2=st.floats(-2.0, 2.0),
    x=st.floats(-3.0, 3.0),
    y=st.floats(-3.0, 3.0),
)
def test_u0_additive_in_charges(z1, z2, x, y):
    """u0 of a two-atom molecule is the sum of the single-atom u0's."""
    params = derive_parameters()
    a = Molecule([Atom(center=(0, 0, 0), radius=1.0, charge=z1)])
    b = Molecule([Atom(center=(2.5, 0, 0), radius=1.0, charge=z2)])
    both = Molecule(
        [
            Atom(center=(0, 0, 0), radius=1.0, charge=z1),
            Atom(center=(2.5, 0, 0), radius=1.0, charge=z2),
        ]
    )
    pt = [x, y, 1.5]
    if min(np.linalg.norm(np.array(pt)), np.linalg.norm(np.array(pt) - [2.5, 0, 0])) < 1e-6:
        return
    total = u0(a, params, pt) + u0(b, params, pt)
    assert u0(both, params, pt) == pytest.approx(total, rel=1e-10, abs=1e-10)
