"""Command-line front end: runs, studies, benchmarks, machine outputs.

Subcommands: solve-linear, solve-nonlinear, reference, convergence-study,
index-bench.  Every run writes a JSON manifest (resolved configuration,
seed, package versions, wall times); numeric results go to CSV with
unit-suffixed headers.  Wall-clock figures are kept out of the CSV on
purpose so re-running a configuration reproduces it byte for byte.

Exit codes: 0 success, 1 configuration, 2 input parsing, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    NumericalError,
    PbwosError,
    PqrParseError,
    SingularityError,
)
from .jumps import scheme_from_params
from .molecule import (
    Atom,
    Molecule,
    QueryStats,
    nearest_atom_brute,
    nearest_atom_indexed,
    parse_pqr,
    synthetic_molecule,
)
from .physconst import PhysicalConstants, derive_parameters
from .reference import RadialGrid, linear_single_atom, nonlinear_single_atom
from .solvers import SolveRequest, solve_linear, solve_nonlinear

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARSE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_DEFAULTS = {
    "scheme": "anj",
    "h": 0.1,
    "alpha": 3.0,
    "epsilon_shell": 1.0e-4,
    "samples": 10_000,
    "seed": 0,
    "workers": 0,  # 0 = use available parallelism
    "stratified": False,
    "raw_potential": False,
    "tail_mass": 1.0e-6,
    "max_strata": 50,
    "radius": 1.0,
    "charge": 1.0,
    "n_points": 10_000,
    "atoms": 10_000,
    "queries": 100_000,
    "h_sweep": "0.4,0.2,0.1,0.05,0.025",
}

_CONSTANT_KEYS = (
    "k_B",
    "e_c",
    "T",
    "eps0",
    "N_A",
    "eps_in",
    "eps_out",
    "ion_concentration",
    "ion_charge",
)

_BOOL_KEYS = {"stratified", "raw_potential"}
_INT_KEYS = {"samples", "seed", "workers", "max_strata", "n_points", "atoms", "queries"}
_STR_KEYS = {"scheme", "h_sweep"}


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage through the config exit code."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    top = _Parser(prog="pbwos", description=__doc__.splitlines()[0])
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file overriding built-in defaults")
        p.add_argument("--csv", default="-", help="output CSV path ('-' = stdout)")
        p.add_argument("--manifest", help="manifest path (default derives from --csv)")
        p.add_argument("--seed", type=int)

    def solver_flags(p):
        p.add_argument("--pqr", help="input molecule in PQR format")
        p.add_argument("--synthetic-atoms", type=int, help="use a synthetic molecule instead of --pqr")
        p.add_argument("--point", nargs=3, type=float, action="append", metavar=("X", "Y", "Z"))
        p.add_argument("--points-file", help="text file with one x y z per line")
        p.add_argument("--scheme", choices=("snj", "anj", "taj"))
        p.add_argument("--h", type=float, help="jump step in angstrom")
        p.add_argument("--alpha", type=float, help="outward step multiplier")
        p.add_argument("--epsilon-shell", type=float, help="absorption shell width in angstrom")
        p.add_argument("--samples", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument(
            "--raw-potential",
            action="store_const",
            const=True,
            help="estimate u instead of the regular part u - u0",
        )

    p = sub.add_parser("solve-linear", help="linearized-model potential at points")
    common(p)
    solver_flags(p)

    p = sub.add_parser("solve-nonlinear", help="nonlinear-model potential at points")
    common(p)
    solver_flags(p)
    p.add_argument("--stratified", action="store_const", const=True)
    p.add_argument("--tail-mass", type=float)
    p.add_argument("--max-strata", type=int)

    p = sub.add_parser("reference", help="deterministic single-sphere oracle values")
    common(p)
    p.add_argument("--radius", type=float, help="sphere radius in angstrom")
    p.add_argument("--charge", type=float, help="central charge in elementary units")
    p.add_argument("--n-points", type=int, help="radial grid size")

    p = sub.add_parser("convergence-study", help="h-sweep of the linear solver vs the oracle")
    common(p)
    p.add_argument("--radius", type=float)
    p.add_argument("--charge", type=float)
    p.add_argument("--scheme", choices=("snj", "anj", "taj"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon-shell", type=float)
    p.add_argument("--samples", type=int, help="samples per sweep value")
    p.add_argument("--workers", type=int)
    p.add_argument("--h-sweep", help="comma-separated h values in angstrom")

    p = sub.add_parser("index-bench", help="nearest-atom localization benchmark")
    common(p)
    p.add_argument("--atoms", type=int)
    p.add_argument("--queries", type=int)
    return top


def _read_config(path: str) -> dict:
    text = Path(path).read_text()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS and key not in _CONSTANT_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if isinstance(value, str):
        if key in _BOOL_KEYS:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        if key in _INT_KEYS:
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
        if key not in _STR_KEYS:
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value


class _Options:
    """Resolved options: CLI flag > config file > built-in default."""

    def __init__(self, args: argparse.Namespace, file_cfg: dict):
        self._args = vars(args)
        self._file = file_cfg

    def __getattr__(self, key: str):
        cli_val = self._args.get(key)
        if cli_val is not None:
            return cli_val
        if key in self._file:
            return _coerce(key, self._file[key])
        if key in _DEFAULTS:
            return _DEFAULTS[key]
        raise AttributeError(key)

    def constants(self) -> PhysicalConstants:
        overrides = {
            k: float(self._file[k]) for k in _CONSTANT_KEYS if k in self._file
        }
        return PhysicalConstants(**overrides)


def _load_molecule(opt: _Options) -> Molecule:
    pqr = opt._args.get("pqr") or opt._file.get("pqr")
    synth = opt._args.get("synthetic_atoms")
    if pqr and synth:
        raise ConfigError("--pqr and --synthetic-atoms are mutually exclusive")
    if pqr:
        with open(pqr, "r") as fh:
            return parse_pqr(fh)
    if synth:
        return synthetic_molecule(int(synth), seed=opt.seed)
    raise ConfigError("a molecule is required: pass --pqr FILE or --synthetic-atoms N")


def _load_points(opt: _Options, mol: Molecule) -> np.ndarray:
    points = []
    pf = opt._args.get("points_file")
    if pf:
        text = Path(pf).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.replace(",", " ").strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ConfigError(f"{pf}:{lineno}: expected three coordinates")
            try:
                points.append([float(v) for v in parts])
            except ValueError:
                raise ConfigError(f"{pf}:{lineno}: non-numeric coordinate") from None
    for triple in opt._args.get("point") or []:
        points.append([float(v) for v in triple])
    if points:
        return np.asarray(points, dtype=float)
    return mol.centers.copy()  # default: the charge locations


def _workers(opt: _Options) -> int:
    w = int(opt.workers)
    if w == 0:
        return os.cpu_count() or 1
    return w


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return format(v, ".17g")
        return v

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    data = buf.getvalue()
    if path == "-":
        sys.stdout.write(data)
    else:
        Path(path).write_text(data)


def _manifest_path(opt: _Options) -> Path:
    explicit = opt._args.get("manifest")
    if explicit:
        return Path(explicit)
    csv_path = opt.csv
    if csv_path == "-":
        return Path("pbwos_manifest.json")
    return Path(str(csv_path) + ".manifest.json")


def _versions() -> dict:
    import scipy

    versions = {
        "pbwos": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    try:
        import numba

        versions["numba"] = numba.__version__
    except ImportError:
        versions["numba"] = None
    return versions


def _write_manifest(opt: _Options, command: str, config: dict, extra: dict) -> None:
    payload = {
        "subcommand": command,
        "config": config,
        "seed": int(opt.seed),
        "versions": _versions(),
        "outputs": {"csv": opt.csv},
    }
    payload.update(extra)
    _manifest_path(opt).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _solver_config(opt: _Options, nonlinear: bool) -> dict:
    cfg = {
        "scheme": str(opt.scheme),
        "h": float(opt.h),
        "alpha": float(opt.alpha),
        "epsilon_shell": float(opt.epsilon_shell),
        "samples": int(opt.samples),
        "workers": _workers(opt),
        "raw_potential": bool(opt.raw_potential),
        "constants": asdict(opt.constants()),
    }
    if nonlinear:
        cfg["stratified"] = bool(opt.stratified)
        cfg["tail_mass"] = float(opt.tail_mass)
        cfg["max_strata"] = int(opt.max_strata)
    return cfg


def _cmd_solve(opt: _Options, command: str) -> int:
    nonlinear = command == "solve-nonlinear"
    mol = _load_molecule(opt)
    params = derive_parameters(opt.constants())
    points = _load_points(opt, mol)
    scheme = scheme_from_params(opt.scheme, float(opt.h), params, alpha=float(opt.alpha))
    req = SolveRequest(
        molecule=mol,
        params=params,
        points=points,
        scheme=scheme,
        samples=int(opt.samples),
        epsilon_shell=float(opt.epsilon_shell),
        seed=int(opt.seed),
        workers=_workers(opt),
        stratified=bool(opt.stratified) if nonlinear else False,
        subtract_u0=not bool(opt.raw_potential),
        tail_mass=float(opt.tail_mass) if nonlinear else 1.0e-6,
        max_strata=int(opt.max_strata) if nonlinear else 50,
    )
    t0 = time.perf_counter()
    estimates = solve_nonlinear(req) if nonlinear else solve_linear(req)
    wall = time.perf_counter() - t0

    header = [
        "point_x_A",
        "point_y_A",
        "point_z_A",
        "mean_dimensionless",
        "std_error_dimensionless",
        "ci95_halfwidth_dimensionless",
        "samples_count",
        "steps_per_sample_count",
    ]
    if nonlinear:
        header += ["zero_score_fraction_dimensionless", "explosion_flag"]
    header.append("error")
    rows = []
    for est in estimates:
        row = [
            float(est.point[0]),
            float(est.point[1]),
            float(est.point[2]),
            est.mean,
            est.std_error,
            est.ci95_halfwidth,
            est.samples_used,
            est.steps_per_sample,
        ]
        if nonlinear:
            row += [est.zero_score_fraction, int(est.explosion_flag)]
        row.append(est.error or "")
        rows.append(row)
    _write_csv(opt.csv, header, rows)
    _write_manifest(
        opt,
        command,
        _solver_config(opt, nonlinear),
        {
            "wall_time_s": wall,
            "point_wall_times_s": [est.wall_time for est in estimates],
            "n_points": len(estimates),
        },
    )
    return EXIT_NUMERICAL if any(est.error for est in estimates) else EXIT_OK


def _cmd_reference(opt: _Options) -> int:
    params = derive_parameters(opt.constants())
    r = float(opt.radius)
    z = float(opt.charge)
    t0 = time.perf_counter()
    lin = linear_single_atom(params, r, z)
    grid = RadialGrid.for_params(params, r, n_points=int(opt.n_points))
    sol = nonlinear_single_atom(params, r, z, grid)
    wall = time.perf_counter() - t0
    rows = [
        ["linear_reaction_potential_center_dimensionless", lin],
        ["nonlinear_reaction_potential_center_dimensionless", sol.reaction_value],
    ]
    _write_csv(opt.csv, ["quantity", "value"], rows)
    _write_manifest(
        opt,
        "reference",
        {
            "radius_A": r,
            "charge": z,
            "n_points": int(opt.n_points),
            "r_max_A": grid.r_max,
        },
        {
            "wall_time_s": wall,
            "newton_iterations": sol.iterations,
            "newton_residual": sol.residual,
        },
    )
    return EXIT_OK


def _cmd_convergence_study(opt: _Options) -> int:
    params = derive_parameters(opt.constants())
    r = float(opt.radius)
    z = float(opt.charge)
    mol = Molecule([Atom(center=(0.0, 0.0, 0.0), radius=r, charge=z)])
    ref = linear_single_atom(params, r, z)
    sweep = []
    for tok in str(opt.h_sweep).split(","):
        tok = tok.strip()
        if tok:
            sweep.append(float(tok))
    if not sweep:
        raise ConfigError("h-sweep is empty")
    rows = []
    walls = []
    for h in sweep:
        scheme = scheme_from_params(opt.scheme, h, params, alpha=float(opt.alpha))
        req = SolveRequest(
            molecule=mol,
            params=params,
            points=np.zeros((1, 3)),
            scheme=scheme,
            samples=int(opt.samples),
            epsilon_shell=float(opt.epsilon_shell),
            seed=int(opt.seed),
            workers=_workers(opt),
        )
        est = solve_linear(req)[0]
        if est.error:
            raise NumericalError(f"h={h}: {est.error}")
        rows.append(
            [h, est.mean, est.ci95_halfwidth, est.mean - ref, est.samples_used]
        )
        walls.append(est.wall_time)
    _write_csv(
        opt.csv,
        [
            "h_A",
            "mean_dimensionless",
            "ci95_halfwidth_dimensionless",
            "error_vs_reference_dimensionless",
            "samples_count",
        ],
        rows,
    )
    _write_manifest(
        opt,
        "convergence-study",
        {
            "radius_A": r,
            "charge": z,
            "scheme": str(opt.scheme),
            "alpha": float(opt.alpha),
            "epsilon_shell_A": float(opt.epsilon_shell),
            "samples": int(opt.samples),
            "h_sweep_A": sweep,
        },
        {"reference_dimensionless": ref, "sweep_wall_times_s": walls},
    )
    return EXIT_OK


def _cmd_index_bench(opt: _Options) -> int:
    n_atoms = int(opt.atoms)
    n_queries = int(opt.queries)
    if n_queries < 1:
        raise ConfigError("queries must be >= 1")
    mol = synthetic_molecule(n_atoms, seed=int(opt.seed))
    rng = np.random.default_rng(int(opt.seed) + 1)
    lo = mol.centers.min(axis=0) - 2.0 * mol.max_radius
    hi = mol.centers.max(axis=0) + 2.0 * mol.max_radius
    # Correlated query stream mimicking consecutive walk positions, which is
    # the access pattern the hint path is designed for.
    steps = rng.normal(scale=1.5, size=(n_queries, 3))
    queries = np.empty((n_queries, 3))
    pos = (lo + hi) / 2.0
    for k in range(n_queries):
        pos = np.clip(pos + steps[k], lo, hi)
        queries[k] = pos

    t0 = time.perf_counter()
    brute = np.empty(n_queries, dtype=np.int64)
    for k in range(n_queries):
        brute[k] = nearest_atom_brute(mol, queries[k])
    t_brute = time.perf_counter() - t0

    index = mol.index
    t0 = time.perf_counter()
    indexed = np.empty(n_queries, dtype=np.int64)
    for k in range(n_queries):
        indexed[k] = nearest_atom_indexed(index, queries[k])
    t_indexed = time.perf_counter() - t0

    hint_stats = QueryStats()
    t0 = time.perf_counter()
    hinted = np.empty(n_queries, dtype=np.int64)
    hint = None
    for k in range(n_queries):
        hint = nearest_atom_indexed(index, queries[k], hint=hint, stats=hint_stats)
        hinted[k] = hint
    t_hinted = time.perf_counter() - t0

    mism_indexed = int(np.count_nonzero(indexed != brute))
    mism_hinted = int(np.count_nonzero(hinted != brute))
    rows = [
        ["brute", n_queries, 0],
        ["indexed", n_queries, mism_indexed],
        ["hinted", n_queries, mism_hinted],
    ]
    _write_csv(opt.csv, ["method", "queries_count", "mismatches_count"], rows)
    _write_manifest(
        opt,
        "index-bench",
        {"atoms": n_atoms, "queries": n_queries},
        {
            "mean_query_time_us": {
                "brute": 1e6 * t_brute / n_queries,
                "indexed": 1e6 * t_indexed / n_queries,
                "hinted": 1e6 * t_hinted / n_queries,
            },
            "index_stats": index.stats,
            "hinted_query_stats": asdict(hint_stats),
        },
    )
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        file_cfg = _read_config(args.config) if getattr(args, "config", None) else {}
        opt = _Options(args, file_cfg)
        if args.command in ("solve-linear", "solve-nonlinear"):
            return _cmd_solve(opt, args.command)
        if args.command == "reference":
            return _cmd_reference(opt)
        if args.command == "convergence-study":
            return _cmd_convergence_study(opt)
        if args.command == "index-bench":
            return _cmd_index_bench(opt)
        raise ConfigError(f"unknown subcommand {args.command!r}")
    except PqrParseError as exc:
        print(f"pbwos: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"pbwos: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SingularityError) as exc:
        print(f"pbwos: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"pbwos: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
