import numpy as np
import pytest

from pbwos import Atom, Molecule, PhysicalConstants, derive_parameters


@pytest.fixture(scope="session")
def params():
    return derive_parameters()


@pytest.fixture(scope="session")
def params_no_salt():
    return derive_parameters(PhysicalConstants(ion_concentration=0.0))


@pytest.fixture()
def unit_atom():
    return Molecule([Atom(center=(0.0, 0.0, 0.0), radius=1.0, charge=1.0)])


@pytest.fixture()
def dimer():
    return Molecule(
        [
            Atom(center=(0.0, 0.0, 0.0), radius=1.0, charge=1.0),
            Atom(center=(2.2, 0.0, 0.0), radius=1.0, charge=-1.0),
        ]
    )


@pytest.fixture()
def cluster():
    rng = np.random.default_rng(42)
    atoms = [
        Atom(center=c, radius=float(r), charge=float(z))
        for c, r, z in zip(
            rng.uniform(-4.0, 4.0, size=(30, 3)),
            rng.uniform(0.8, 2.0, size=30),
            rng.choice([-1.0, 1.0], size=30),
        )
    ]
    return Molecule(atoms)
