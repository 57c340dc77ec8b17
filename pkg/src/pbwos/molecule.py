"""Molecule ingestion, union-of-spheres geometry, and nearest-atom search.

A molecule is the union of N spheres S(c_i, r_i).  The solvers repeatedly
need the atom minimizing the signed distance |x - c_i| - r_i.  Three query
paths are provided with identical results: a brute-force scan, a kd-tree
backed search with a conservative candidate radius, and a hint-accelerated
search that certifies its answer from the previous atom's neighbor list and
falls back to the kd-tree path when it cannot.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, EmptyMoleculeError, PqrParseError, SingularityError

_PQR_RECORDS = ("ATOM", "HETATM")


@dataclass(frozen=True)
class Atom:
    """One sphere: center (A), radius (A) > 0, and relative charge z."""

    center: np.ndarray
    radius: float
    charge: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        object.__setattr__(self, "center", center)
        if not np.all(np.isfinite(center)):
            raise ConfigError(f"atom center must be finite, got {center.tolist()}")
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise ConfigError(f"atom radius must be > 0, got {self.radius!r}")


class Molecule:
    """Ordered atom list with cached coordinate arrays.

    Attributes
    ----------
    atoms : tuple of Atom
    centers : (N, 3) float array
    radii, charges : (N,) float arrays
    max_radius : float
    """

    def __init__(self, atoms):
        atoms = tuple(atoms)
        if not atoms:
            raise EmptyMoleculeError()
        self.atoms = atoms
        self.centers = np.array([a.center for a in atoms], dtype=float)
        self.radii = np.array([a.radius for a in atoms], dtype=float)
        self.charges = np.array([a.charge for a in atoms], dtype=float)
        self.max_radius = float(self.radii.max())
        self._index = None

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def index(self) -> "SpatialIndex":
        """Spatial index over atom centers, built lazily and cached."""
        if self._index is None:
            self._index = SpatialIndex(self)
        return self._index

    def nearest_atom(self, x, hint: int | None = None) -> int:
        """Nearest atom by signed distance; indexed for large molecules."""
        if len(self.atoms) <= 16 and hint is None:
            return nearest_atom_brute(self, x)
        return nearest_atom_indexed(self.index, x, hint=hint)


@dataclass(frozen=True)
class SurfacePoint:
    """A point on the molecular boundary: position, owning atom, outward normal."""

    position: np.ndarray
    atom_index: int
    normal: np.ndarray


@dataclass
class QueryStats:
    """Caller-owned instrumentation for nearest-atom queries."""

    full_queries: int = 0
    hint_hits: int = 0
    hint_fallbacks: int = 0
    candidates_evaluated: int = 0


class SpatialIndex:
    """kd-tree over atom centers plus per-atom neighbor lists.

    The full query is exact by construction: with d* the distance from x to
    the Euclidean-nearest center, every center within d* + 2*max_radius is
    examined.  The signed-distance argmin j satisfies
    |x - c_j| <= d* + r_j <= d* + max_radius, so it is always in that set.

    The hinted query evaluates only the hint's neighbor list (centers within
    rho_a = r_a + 2*max_radius of atom a) and accepts the local winner only
    when |x - c_hint| + best + max_radius <= rho_hint, which guarantees any
    atom that could beat it is in the list; otherwise it falls back to the
    full query.  Either way the result equals the brute-force answer.
    """

    def __init__(self, molecule: Molecule):
        t0 = time.perf_counter()
        self.molecule = molecule
        self.tree = cKDTree(molecule.centers)
        self.max_radius = molecule.max_radius
        self.neighbor_radii = molecule.radii + 2.0 * self.max_radius
        self.neighbors = [
            np.array(sorted(ix), dtype=np.int64)
            for ix in self.tree.query_ball_point(molecule.centers, self.neighbor_radii)
        ]
        self.build_time_s = time.perf_counter() - t0

    @property
    def stats(self) -> dict:
        """Build statistics for reporting."""
        sizes = [len(n) for n in self.neighbors]
        return {
            "n_atoms": len(self.molecule),
            "build_time_s": self.build_time_s,
            "mean_neighbors": float(np.mean(sizes)),
            "max_neighbors": int(np.max(sizes)),
        }


def parse_pqr(source) -> Molecule:
    """Parse PQR content into a Molecule.

    ``source`` may be bytes, a string, or a file-like object.  Every line
    whose first token is ATOM or HETATM contributes one atom; its last five
    whitespace-separated tokens are read as x, y, z, charge, radius.  All
    other lines are ignored.  Raises PqrParseError (with line number) on a
    malformed record and EmptyMoleculeError when no atom lines are present.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8", errors="replace")
    elif isinstance(source, str):
        text = source
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    else:
        raise TypeError(f"cannot parse PQR from {type(source).__name__}")

    atoms = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        tokens = line.split()
        if not tokens or tokens[0] not in _PQR_RECORDS:
            continue
        if len(tokens) < 6:
            raise PqrParseError(
                f"{tokens[0]} record needs at least 5 numeric fields, got {len(tokens) - 1}",
                lineno,
            )
        tail = tokens[-5:]
        try:
            x, y, z, charge, radius = (float(tok) for tok in tail)
        except ValueError:
            raise PqrParseError(f"non-numeric coordinate/charge/radius in {tail}", lineno)
        if not all(math.isfinite(v) for v in (x, y, z, charge, radius)):
            raise PqrParseError(f"non-finite value in {tail}", lineno)
        if radius <= 0.0:
            raise PqrParseError(f"radius must be > 0, got {radius}", lineno)
        atoms.append(Atom(center=np.array([x, y, z]), radius=radius, charge=charge))

    if not atoms:
        raise EmptyMoleculeError()
    return Molecule(atoms)


def signed_distance(mol: Molecule, x) -> float:
    """min_i |x - c_i| - r_i: negative inside the molecule, positive outside.

    For exterior x this is the radius of the largest molecule-free sphere
    around x, i.e. the next walk-on-spheres step size.
    """
    x = np.asarray(x, dtype=float)
    diffs = mol.centers - x
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    return float(np.min(dists - mol.radii))


def nearest_atom_brute(mol: Molecule, x) -> int:
    """argmin_i |x - c_i| - r_i over all atoms, lowest index on ties."""
    x = np.asarray(x, dtype=float)
    diffs = mol.centers - x
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    return int(np.argmin(dists - mol.radii))


def _eval_candidates(mol: Molecule, x, idxs: np.ndarray):
    diffs = mol.centers[idxs] - x
    sd = np.sqrt(np.einsum("ij,ij->i", diffs, diffs)) - mol.radii[idxs]
    k = int(np.argmin(sd))
    return int(idxs[k]), float(sd[k])


def nearest_atom_indexed(
    index: SpatialIndex, x, hint: int | None = None, stats: QueryStats | None = None
) -> int:
    """Nearest atom by signed distance via the spatial index.

    Identical to nearest_atom_brute for every x.  ``hint`` names the atom
    whose neighbor list is tried first (typically the previous step's
    answer); ``stats`` collects counters when provided.
    """
    mol = index.molecule
    x = np.asarray(x, dtype=float)

    if hint is not None:
        if not 0 <= hint < len(mol):
            raise ConfigError(f"hint {hint} out of range for {len(mol)} atoms")
        neigh = index.neighbors[hint]
        best, best_sd = _eval_candidates(mol, x, neigh)
        if stats is not None:
            stats.candidates_evaluated += len(neigh)
        # Any atom beating `best` has |x-c| <= best_sd + max_radius, hence its
        # center lies within |x-c_hint| + best_sd + max_radius of the hint's.
        d_hint = float(np.linalg.norm(x - mol.centers[hint]))
        if d_hint + best_sd + index.max_radius <= index.neighbor_radii[hint]:
            if stats is not None:
                stats.hint_hits += 1
            return best
        if stats is not None:
            stats.hint_fallbacks += 1

    d_star, _ = index.tree.query(x)
    idxs = index.tree.query_ball_point(x, float(d_star) + 2.0 * index.max_radius)
    idxs = np.array(sorted(idxs), dtype=np.int64)
    best, _ = _eval_candidates(mol, x, idxs)
    if stats is not None:
        stats.full_queries += 1
        stats.candidates_evaluated += len(idxs)
    return best


def project_to_surface(mol: Molecule, x, hint: int | None = None) -> SurfacePoint:
    """Radially project an exterior point onto the sphere of its nearest atom."""
    x = np.asarray(x, dtype=float)
    i = mol.nearest_atom(x, hint=hint)
    center = mol.centers[i]
    offset = x - center
    dist = float(np.linalg.norm(offset))
    if dist < 1.0e-12:
        raise SingularityError(
            f"cannot project point sitting at the center of atom {i}"
        )
    normal = offset / dist
    return SurfacePoint(position=center + mol.radii[i] * normal, atom_index=i, normal=normal)


def tangent_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors (m, q) completing unit normal n to an orthonormal triad.

    Deterministic: the construction seeds from the coordinate axis along the
    smallest-magnitude component of n, so repeated calls agree exactly.
    """
    n = np.asarray(n, dtype=float)
    norm = float(np.linalg.norm(n))
    if norm < 1.0e-12:
        raise ConfigError("tangent_basis: zero normal vector")
    if abs(norm - 1.0) > 1.0e-9:
        raise ConfigError(f"tangent_basis: |n| = {norm!r} is not 1 within 1e-9")
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    m = np.cross(n, axis)
    m /= np.linalg.norm(m)
    q = np.cross(n, m)
    return m, q


def synthetic_molecule(n_atoms: int, seed: int = 0, spacing: float = 3.0) -> Molecule:
    """Random non-degenerate sphere packing for benchmarks.

    Centers sit on a jittered cubic grid with the given spacing; radii are
    uniform in [1, 2] A and charges alternate +-1.  Deterministic in seed.
    """
    if n_atoms < 1:
        raise ConfigError(f"n_atoms must be >= 1, got {n_atoms}")
    rng = np.random.default_rng(seed)
    side = int(math.ceil(n_atoms ** (1.0 / 3.0)))
    grid = np.array(
        [(i, j, k) for i in range(side) for j in range(side) for k in range(side)],
        dtype=float,
    )[:n_atoms]
    centers = grid * spacing + rng.uniform(-0.8, 0.8, size=(n_atoms, 3))
    radii = rng.uniform(1.0, 2.0, size=n_atoms)
    charges = np.where(np.arange(n_atoms) % 2 == 0, 1.0, -1.0)
    return Molecule(
        Atom(center=c, radius=float(r), charge=float(z))
        for c, r, z in zip(centers, radii, charges)
    )
