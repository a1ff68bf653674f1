"""Command-line front end.

Subcommands:

* ``estimate``     — fit one of the four estimators to a CSV dataset and
  write a density grid (CSV), the learned partition or tree (JSON), the
  posterior table (JSON) and run metadata (JSON).
* ``simulate``     — draw a benchmark dataset to CSV (plus a small metadata
  sidecar with generator details such as rejection counts).
* ``sample-prior`` — draw random measures from the prior to JSON.
* ``oracle-check`` — compare the floating-point recursion against the exact
  rational oracle on random small binary tables.

Exit codes: 0 success, 1 oracle mismatch, 2 configuration error, 3 data
error, 4 numerical fault.

Every artifact is a pure function of (input file, configuration, seed):
floats are serialized with 17 significant digits, JSON keys are sorted, and
thread counts never change results, so re-runs are byte-identical.  Wall
times are reported on stderr only, keeping artifacts deterministic.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .estimator import (
    HutterDensity,
    PiecewiseDensity,
    conditional_mean_density,
    grid_average,
    hmap_tree,
    mean_density_dichotomous,
)
from .evalsuite import (
    KNOWN_GENERATORS,
    GeneratorSpec,
    brute_force_phi,
    generate_info,
)
from .geometry import PartitionScheme, root_region
from .marginal import (
    DataIndex,
    NumericalFault,
    Posterior,
    RecursionLimits,
    compute_log_phi,
    PhiTable,
)
from .prior import PriorSpec, TauScaled, prior_from_dict, prior_to_dict, standard_polya_tree
from .sampler import sample_measure

__all__ = [
    "ConfigError",
    "DataError",
    "cmd_estimate",
    "cmd_simulate",
    "cmd_sample_prior",
    "cmd_oracle_check",
    "main",
]


class ConfigError(Exception):
    """Invalid configuration; mapped to exit code 2."""


class DataError(Exception):
    """Unusable input data; mapped to exit code 3."""


_SCHEME_NAMES = {"full": "full-dyadic", "cycling": "cycling", "table": "binary-table"}
_ESTIMATORS = ("mean", "hmap", "hutter", "standard-pt")
_ALPHA_RULES = ("constant-half", "tau-scaled", "quadratic-depth")

_DEFAULTS = {
    "scheme": "full",
    "dim": None,
    "rho": 0.5,
    "alpha_rule": "constant-half",
    "tau": 2.0,
    "estimator": "hmap",
    "precision_threshold": None,
    "max_level": 64,
    "seed": 0,
    "grid": None,
    "threads": None,
    "rescale": False,
}


# ---------------------------------------------------------------------------
# Deterministic serialization: 17 significant digits, sorted keys.
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise NumericalFault("non-finite value in output")
    return format(float(x), ".17g")


def dumps_canonical(obj) -> str:
    """Minimal JSON emitter with fixed float formatting and sorted keys."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, bytes):
        return json.dumps(obj.hex())
    if isinstance(obj, dict):
        items = sorted(obj.items())
        body = ",".join(f"{json.dumps(str(k))}:{dumps_canonical(v)}" for k, v in items)
        return "{" + body + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        return "[" + ",".join(dumps_canonical(v) for v in seq) + "]"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")


def _write_json(path: str, doc) -> None:
    _write_text(path, dumps_canonical(doc))


def _write_csv(path: str, rows) -> None:
    lines = []
    for row in rows:
        lines.append(
            ",".join(
                _fmt_float(v) if isinstance(v, (float, np.floating)) else str(v)
                for v in row
            )
        )
    _write_text(path, "\n".join(lines))


# ---------------------------------------------------------------------------
# Configuration handling.
# ---------------------------------------------------------------------------


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(doc) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def merge_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; OPTREE_THREADS as fallback."""
    cfg = dict(_DEFAULTS)
    cfg.update(_load_config_file(getattr(args, "config", None)))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            cfg[key] = value
    if cfg["threads"] is None:
        env = os.environ.get("OPTREE_THREADS")
        if env is not None:
            try:
                cfg["threads"] = int(env)
            except ValueError as exc:
                raise ConfigError(f"OPTREE_THREADS must be an integer: {env!r}") from exc
        else:
            cfg["threads"] = 1
    return cfg


def validate_config(cfg: dict) -> dict:
    """Check every numeric field before touching any data."""
    if cfg["scheme"] not in _SCHEME_NAMES:
        raise ConfigError(f"scheme must be one of {sorted(_SCHEME_NAMES)}")
    if cfg["estimator"] not in _ESTIMATORS:
        raise ConfigError(f"estimator must be one of {_ESTIMATORS}")
    if cfg["alpha_rule"] not in _ALPHA_RULES:
        raise ConfigError(f"alpha rule must be one of {_ALPHA_RULES}")
    rho = float(cfg["rho"])
    if not 0.0 < rho < 1.0:
        raise ConfigError("rho must lie strictly between 0 and 1")
    tau = float(cfg["tau"])
    if not tau > 0:
        raise ConfigError("tau must be positive")
    if cfg["precision_threshold"] is not None and not float(cfg["precision_threshold"]) > 0:
        raise ConfigError("precision threshold must be positive")
    if int(cfg["max_level"]) < 0:
        raise ConfigError("max_level must be nonnegative")
    if int(cfg["seed"]) < 0:
        raise ConfigError("seed must be nonnegative")
    if cfg["dim"] is not None and int(cfg["dim"]) < 1:
        raise ConfigError("dim must be >= 1")
    if cfg["grid"] is not None and int(cfg["grid"]) < 1:
        raise ConfigError("grid must be >= 1")
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def _build_spec(cfg: dict, p: int) -> PriorSpec:
    scheme = PartitionScheme(_SCHEME_NAMES[cfg["scheme"]], p)
    if cfg["estimator"] == "standard-pt":
        return standard_polya_tree(scheme)
    if cfg["alpha_rule"] == "tau-scaled":
        return PriorSpec(scheme, float(cfg["rho"]), TauScaled(float(cfg["tau"])))
    if cfg["alpha_rule"] == "quadratic-depth":
        raise ConfigError("the quadratic-depth rule is used via estimator=standard-pt")
    return PriorSpec(scheme, float(cfg["rho"]))


def _build_limits(cfg: dict, p: int) -> RecursionLimits:
    threshold = cfg["precision_threshold"]
    if threshold is None:
        threshold = 1e-6 if p == 1 else 1e-4
    try:
        return RecursionLimits(float(threshold), int(cfg["max_level"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Data ingestion.
# ---------------------------------------------------------------------------


def read_points_csv(path: str, dim: Optional[int]) -> np.ndarray:
    """Headerless comma-separated floats; malformed rows abort with a
    row/column report."""
    rows: list[list[float]] = []
    width: Optional[int] = None
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read input: {exc}") from exc
    with handle:
        for row_no, row in enumerate(csv.reader(handle), start=1):
            if not row:
                raise DataError(f"row {row_no}: empty line")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"row {row_no}: expected {width} columns, got {len(row)}")
            parsed = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError as exc:
                    raise DataError(
                        f"row {row_no}, column {col_no}: not a number: {cell!r}"
                    ) from exc
            rows.append(parsed)
    if width is None:
        if dim is None:
            raise DataError("input is empty and no dimension was configured")
        width = dim
    if dim is not None and width != dim:
        raise DataError(f"input has {width} columns but dim={dim} was configured")
    out = np.array(rows, dtype=float).reshape(len(rows), width)
    if not np.isfinite(out).all():
        raise DataError("input contains non-finite values")
    return out


def _rescale_to_unit(points: np.ndarray) -> tuple[np.ndarray, Optional[dict]]:
    if points.shape[0] == 0:
        return points, None
    mins = points.min(axis=0)
    maxs = points.max(axis=0)
    if (maxs <= mins).any():
        raise DataError("cannot rescale: a column is constant")
    return (points - mins) / (maxs - mins), {
        "min": [float(v) for v in mins],
        "max": [float(v) for v in maxs],
    }


def _check_domain(points: np.ndarray, scheme_kind: str) -> None:
    if points.shape[0] == 0:
        return
    if scheme_kind == "discrete":
        if not np.isin(points, (1.0, 2.0)).all():
            raise DataError("table data must take the values 1 or 2")
    elif ((points < 0.0) | (points > 1.0)).any():
        raise DataError(
            "data outside the unit cube; pass --rescale to map it there"
        )


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _grid_rows_1d(edges: np.ndarray, values: np.ndarray):
    for i, v in enumerate(values):
        yield (float(edges[i]), float(edges[i + 1]), float(v))


def _grid_rows_2d(edges: np.ndarray, values: np.ndarray):
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            yield (
                float(edges[i]),
                float(edges[i + 1]),
                float(edges[j]),
                float(edges[j + 1]),
                float(values[i, j]),
            )


def _hutter_grid(
    evaluator: HutterDensity, cells: int, p: int, threads: int
) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 1.0, cells + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    if p == 1:
        pts = mids.reshape(-1, 1)
    else:
        gx, gy = np.meshgrid(mids, mids, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
    if threads > 1:
        chunks = np.array_split(np.arange(pts.shape[0]), threads * 4)
        values = np.empty(pts.shape[0])
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for idx, res in zip(
                chunks, pool.map(lambda c: evaluator.on_grid(pts[c]), chunks)
            ):
                values[idx] = res
    else:
        values = evaluator.on_grid(pts)
    if p == 1:
        return edges, values
    return edges, values.reshape(cells, cells)


def _discrete_density_rows(density: PiecewiseDensity, p: int):
    cells = np.stack(
        np.meshgrid(*[[1, 2]] * p, indexing="ij"), axis=-1
    ).reshape(-1, p)
    values = density.evaluate(cells.astype(float))
    for cell, v in zip(cells, values):
        yield (*[int(c) for c in cell], float(v))


def cmd_estimate(cfg: dict, input_path: str, out_dir: str) -> dict:
    """Run the configured estimator; write artifacts; return their paths."""
    t0 = time.perf_counter()
    validate_config(cfg)
    cfg_dim = None if cfg["dim"] is None else int(cfg["dim"])
    points = read_points_csv(input_path, cfg_dim)
    p = points.shape[1]
    scheme_kind = "discrete" if cfg["scheme"] == "table" else "continuous"

    rescale_doc = None
    if cfg["rescale"] and scheme_kind == "continuous":
        points, rescale_doc = _rescale_to_unit(points)
    _check_domain(points, scheme_kind)

    spec = _build_spec(cfg, p)
    limits = _build_limits(cfg, p)
    estimator = cfg["estimator"]
    if estimator in ("mean", "standard-pt") and not (
        spec.scheme.variant == "cycling" or (spec.scheme.variant == "full-dyadic" and p == 1)
    ):
        raise ConfigError(
            "the mean and standard-pt estimators need a unique split per "
            "region: use scheme=cycling (or full with dim 1), or estimator=hmap"
        )
    if scheme_kind == "discrete" and estimator != "hmap":
        raise ConfigError("table data supports the hmap estimator only")

    cells = cfg["grid"]
    if cells is None:
        cells = 4096 if p == 1 else 256
    cells = int(cells)
    threads = int(cfg["threads"])

    try:
        posterior = Posterior(points, spec, limits)
        notes: list[str] = []
        tree_doc: dict
        if estimator == "hmap":
            tree = hmap_tree(points, spec, limits, posterior=posterior)
            density = conditional_mean_density(tree, posterior)
            tree_doc = tree.to_json_dict()
        elif estimator in ("mean", "standard-pt"):
            density = mean_density_dichotomous(points, spec, limits, posterior=posterior)
            tree_doc = density.to_json_dict()
        else:  # hutter
            evaluator = HutterDensity(points, spec, limits, posterior=posterior)
            density = None
            tree_doc = {"format_version": 1, "kind": "point-estimator", "root": None}
            notes.append("hutter densities are pointwise values at grid midpoints")

        out_csv = os.path.join(out_dir, "density.csv")
        if scheme_kind == "discrete":
            _write_csv(out_csv, _discrete_density_rows(density, p))
        elif estimator == "hutter":
            edges, values = _hutter_grid(evaluator, cells, p, threads)
            rows = _grid_rows_1d(edges, values) if p == 1 else _grid_rows_2d(edges, values)
            _write_csv(out_csv, rows)
        else:
            edges, values = grid_average(density, cells)
            rows = _grid_rows_1d(edges, values) if p == 1 else _grid_rows_2d(edges, values)
            _write_csv(out_csv, rows)

        posterior.log_phi()  # ensure the root is computed before export
        phi_doc = posterior.table.to_json_dict(posterior.data, spec)
    except (NumericalFault, ConfigError, DataError):
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    cfg_doc = dict(cfg)
    cfg_doc["dim"] = p
    cfg_doc["grid"] = cells
    cfg_doc["prior"] = prior_to_dict(spec)
    cfg_doc["precision_threshold"] = limits.precision_threshold
    config_hash = hashlib.sha256(dumps_canonical(cfg_doc).encode()).hexdigest()
    metadata = {
        "format_version": 1,
        "command": "estimate",
        "config": cfg_doc,
        "config_hash": config_hash,
        "n_rows": int(points.shape[0]),
        "rescale": rescale_doc,
        "notes": notes,
        "log_phi_root": posterior.log_phi(),
    }

    paths = {
        "density": os.path.join(out_dir, "density.csv"),
        "tree": os.path.join(out_dir, "partition.json"),
        "phi_table": os.path.join(out_dir, "phi_table.json"),
        "metadata": os.path.join(out_dir, "metadata.json"),
    }
    _write_json(paths["tree"], tree_doc)
    _write_json(paths["phi_table"], phi_doc)
    _write_json(paths["metadata"], metadata)
    print(f"[estimate] done in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return paths


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(generator: str, n: int, seed: int, out_path: str) -> dict:
    if generator not in KNOWN_GENERATORS or generator == "custom":
        raise ConfigError(
            f"unknown generator {generator!r}; choose from "
            f"{[g for g in KNOWN_GENERATORS if g != 'custom']}"
        )
    if n < 1:
        raise ConfigError("sample size must be >= 1")
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    spec = GeneratorSpec(generator, seed)
    points, info = generate_info(spec, n)
    _write_csv(out_path, (tuple(float(v) for v in row) for row in points))
    meta_path = out_path + ".meta.json"
    _write_json(meta_path, {"format_version": 1, "command": "simulate", **info})
    return {"dataset": out_path, "metadata": meta_path}


# ---------------------------------------------------------------------------
# sample-prior
# ---------------------------------------------------------------------------


def cmd_sample_prior(cfg: dict, n_draws: int, max_depth: int, out_path: str) -> dict:
    validate_config(cfg)
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    if max_depth < 1:
        raise ConfigError("max_depth must be >= 1")
    p = int(cfg["dim"]) if cfg["dim"] is not None else 1
    spec = _build_spec(cfg, p)
    draws = [
        sample_measure(
            spec, max_depth=max_depth, seed=int(cfg["seed"]), draw_index=i
        ).to_json_dict()
        for i in range(n_draws)
    ]
    doc = {
        "format_version": 1,
        "command": "sample-prior",
        "prior": prior_to_dict(spec),
        "n_draws": n_draws,
        "draws": draws,
    }
    _write_json(out_path, doc)
    return {"draws": out_path}


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


def cmd_oracle_check(p: int, n: int, trials: int, seed: int = 0) -> dict:
    """Compare the recursion against the rational oracle on random tables.

    Each trial draws a dimension in 1..p, a sample size in 0..n and uniform
    cell assignments.  Reports the maximum relative error on Phi; the check
    fails when it exceeds 1e-10.
    """
    if not 1 <= p <= 3:
        raise ConfigError("oracle bounds: p must be in 1..3")
    if not 0 <= n <= 5:
        raise ConfigError("oracle bounds: n must be in 0..5")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    digest = hashlib.blake2b(repr(("oracle", seed)).encode(), digest_size=16).digest()
    rng = np.random.Generator(np.random.Philox(key=np.frombuffer(digest, np.uint64)))
    worst = 0.0
    for _ in range(trials):
        p_t = int(rng.integers(1, p + 1))
        n_t = int(rng.integers(0, n + 1))
        pts = rng.integers(1, 3, size=(n_t, p_t))
        scheme = PartitionScheme("binary-table", p_t)
        spec = PriorSpec(scheme, rho=0.5)
        data = DataIndex(pts.astype(float), scheme)
        table = PhiTable()
        log_phi = compute_log_phi(
            root_region(scheme), data, spec, RecursionLimits(1e-9), table
        )
        exact = brute_force_phi(pts, rho=0.5)
        rel = abs(math.exp(log_phi) / float(exact) - 1.0)
        worst = max(worst, rel)
    passed = worst < 1e-10
    report = {
        "trials": trials,
        "p_max": p,
        "n_max": n,
        "seed": seed,
        "max_relative_error": worst,
        "passed": passed,
    }
    print(
        f"[oracle-check] {trials} trials, max relative error {worst:.3e}: "
        f"{'PASS' if passed else 'FAIL'}"
    )
    return report


# ---------------------------------------------------------------------------
# argparse wiring
# ---------------------------------------------------------------------------


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config document (flags override it)")
    sub.add_argument("--scheme", choices=sorted(_SCHEME_NAMES))
    sub.add_argument("--dim", type=int)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--alpha-rule", dest="alpha_rule", choices=_ALPHA_RULES)
    sub.add_argument("--tau", type=float)
    sub.add_argument("--precision-threshold", dest="precision_threshold", type=float)
    sub.add_argument("--max-level", dest="max_level", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threads", type=int, help="worker cap (or OPTREE_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyatree",
        description="Adaptive Polya tree density estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit an estimator to a CSV dataset")
    _add_config_flags(est)
    est.add_argument("--estimator", choices=_ESTIMATORS)
    est.add_argument("--grid", type=int, help="grid cells per dimension")
    est.add_argument("--rescale", action="store_true", default=None,
                     help="affinely map data to the unit cube")
    est.add_argument("--input", required=True, help="headerless CSV, one point per row")
    est.add_argument("--out-dir", required=True)

    sim = sub.add_parser("simulate", help="draw a benchmark dataset")
    sim.add_argument("--generator", required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)

    sp = sub.add_parser("sample-prior", help="draw random measures from the prior")
    _add_config_flags(sp)
    sp.add_argument("--n-draws", type=int, default=1)
    sp.add_argument("--max-depth", type=int, default=16)
    sp.add_argument("--out", required=True)

    oc = sub.add_parser("oracle-check", help="recursion vs exact rational oracle")
    oc.add_argument("--p", type=int, default=3)
    oc.add_argument("--n", type=int, default=5)
    oc.add_argument("--trials", type=int, default=200)
    oc.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            cfg = merge_config(args)
            os.makedirs(args.out_dir, exist_ok=True)
            cmd_estimate(cfg, args.input, args.out_dir)
        elif args.command == "simulate":
            cmd_simulate(args.generator, args.n, args.seed, args.out)
        elif args.command == "sample-prior":
            cfg = merge_config(args)
            cmd_sample_prior(cfg, args.n_draws, args.max_depth, args.out)
        elif args.command == "oracle-check":
            report = cmd_oracle_check(args.p, args.n, args.trials, args.seed)
            if not report["passed"]:
                return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
