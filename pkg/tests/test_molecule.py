"""PQR ingestion, geometry predicates, and the three localization paths."""

import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbwos import (
    Atom,
    ConfigError,
    EmptyMoleculeError,
    Molecule,
    PqrParseError,
    QueryStats,
    nearest_atom_brute,
    nearest_atom_indexed,
    parse_pqr,
    project_to_surface,
    signed_distance,
    synthetic_molecule,
    tangent_basis,
)

GOOD_PQR = """\
REMARK   1 generated for tests
ATOM      1  N   ALA A   1      -0.677   1.224  10.295  0.0577  1.8240
ATOM      2  CA  ALA A   1       0.000   0.000  10.000  0.0382  1.9080
HETATM    3  O   HOH B   2       3.500  -1.200   9.100 -0.8340  1.6612
TER
END
"""


class TestParsePqr:
    def test_parses_atom_and_hetatm(self):
        mol = parse_pqr(GOOD_PQR)
        assert len(mol) == 3
        assert mol.charges[2] == pytest.approx(-0.8340)
        assert mol.radii[1] == pytest.approx(1.9080)
        np.testing.assert_allclose(mol.centers[0], [-0.677, 1.224, 10.295])

    def test_accepts_bytes_and_file_objects(self):
        assert len(parse_pqr(GOOD_PQR.encode())) == 3
        assert len(parse_pqr(io.StringIO(GOOD_PQR))) == 3

    def test_last_five_tokens_rule(self):
        # Chain id may be absent; only the numeric tail matters.
        line = "ATOM 1 CA ALA 1 1.0 2.0 3.0 -0.5 1.5\n"
        mol = parse_pqr(line)
        assert signed_distance(mol, [1.0, 2.0, 3.0]) == pytest.approx(-1.5)

    def test_malformed_line_reports_lineno(self):
        bad = "REMARK ok\nATOM 1 CA ALA 1 1.0 2.0 xxx -0.5 1.5\n"
        with pytest.raises(PqrParseError) as err:
            parse_pqr(bad)
        assert err.value.lineno == 2

    def test_short_record_rejected(self):
        with pytest.raises(PqrParseError):
            parse_pqr("ATOM 1 CA 1.0 2.0\n")

    def test_nonpositive_radius_rejected(self):
        with pytest.raises(PqrParseError):
            parse_pqr("ATOM 1 CA ALA 1 0.0 0.0 0.0 1.0 0.0\n")

    def test_no_atoms_is_empty_molecule(self):
        with pytest.raises(EmptyMoleculeError):
            parse_pqr("REMARK nothing here\nEND\n")


def test_atom_validation():
    with pytest.raises(ConfigError):
        Atom(center=(0, 0, 0), radius=-1.0, charge=0.0)
    with pytest.raises(ConfigError):
        Atom(center=(np.inf, 0, 0), radius=1.0, charge=0.0)


def test_signed_distance_signs(dimer):
    assert signed_distance(dimer, [0.0, 0.0, 0.0]) == pytest.approx(-1.0)
    assert signed_distance(dimer, [0.0, 0.0, 2.0]) == pytest.approx(1.0)
    # Between the two atoms the union is what counts.
    assert signed_distance(dimer, [1.1, 0.0, 0.0]) == pytest.approx(0.1)


def test_nearest_atom_tie_prefers_lowest_index(dimer):
    # Equidistant from both sphere surfaces.
    assert nearest_atom_brute(dimer, [1.1, 0.0, 0.0]) == 0
    assert nearest_atom_indexed(dimer.index, [1.1, 0.0, 0.0]) == 0


def test_single_atom_always_index_zero(unit_atom):
    assert unit_atom.nearest_atom([5.0, 5.0, 5.0]) == 0


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_indexed_and_hinted_match_brute(data):
    """All three query paths agree, whatever the hint."""
    n = data.draw(st.integers(2, 40))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    mol = Molecule(
        Atom(center=c, radius=float(r), charge=0.0)
        for c, r in zip(
            rng.uniform(-5, 5, size=(n, 3)), rng.uniform(0.5, 2.5, size=n)
        )
    )
    x = rng.uniform(-8, 8, size=3)
    hint = data.draw(st.one_of(st.none(), st.integers(0, n - 1)))
    expected = nearest_atom_brute(mol, x)
    assert nearest_atom_indexed(mol.index, x) == expected
    assert nearest_atom_indexed(mol.index, x, hint=hint) == expected


def test_hint_certificate_counts(cluster):
    """Hinted queries near the previous answer mostly avoid full searches."""
    stats = QueryStats()
    rng = np.random.default_rng(0)
    pos = np.array([0.0, 0.0, 0.0])
    hint = nearest_atom_indexed(cluster.index, pos)
    for _ in range(300):
        pos = pos + rng.normal(scale=0.4, size=3)
        pos = np.clip(pos, -5, 5)
        hint = nearest_atom_indexed(cluster.index, pos, hint=hint, stats=stats)
    assert stats.hint_hits + stats.hint_fallbacks == 300
    assert stats.hint_hits > stats.hint_fallbacks


def test_hint_out_of_range(cluster):
    with pytest.raises(ConfigError):
        nearest_atom_indexed(cluster.index, [0, 0, 0], hint=len(cluster))


def test_project_to_surface(dimer):
    sp = project_to_surface(dimer, [0.0, 0.0, 3.0])
    np.testing.assert_allclose(sp.position, [0.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(sp.normal, [0.0, 0.0, 1.0], atol=1e-12)
    assert sp.atom_index == 0


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_tangent_basis_orthonormal(a, b, c):
    v = np.array([a, b, c])
    norm = np.linalg.norm(v)
    if norm < 1e-3:
        return
    n = v / norm
    m, q = tangent_basis(n)
    for u, w in [(m, m), (q, q)]:
        assert np.dot(u, w) == pytest.approx(1.0, abs=1e-9)
    for u, w in [(m, q), (m, n), (q, n)]:
        assert np.dot(u, w) == pytest.approx(0.0, abs=1e-9)


def test_tangent_basis_deterministic():
    n = np.array([0.6, 0.0, 0.8])
    m1, q1 = tangent_basis(n)
    m2, q2 = tangent_basis(n)
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(q1, q2)


def test_tangent_basis_rejects_bad_normal():
    with pytest.raises(ConfigError):
        tangent_basis([0.0, 0.0, 0.0])
    with pytest.raises(ConfigError):
        tangent_basis([1.0, 1.0, 0.0])


def test_synthetic_molecule_deterministic():
    a = synthetic_molecule(100, seed=3)
    b = synthetic_molecule(100, seed=3)
    np.testing.assert_array_equal(a.centers, b.centers)
    np.testing.assert_array_equal(a.radii, b.radii)
    assert len(a) == 100
    assert a.radii.min() >= 1.0 and a.radii.max() <= 2.0
