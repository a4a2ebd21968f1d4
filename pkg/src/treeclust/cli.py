"""Command line entry point.

``treeclust ingest`` parses and checks a point file. ``treeclust run`` builds
a cluster tree (and optionally a gap level set) from a file or a registered
synthetic density, or runs one of the experiments. Every artifact is
validated against its schema and written atomically. Exit codes are 0 on
success, 2 for usage errors, 3 for data errors and 4 for numerical or
precondition failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cluster_tree import extract_splits
from .dbscan import ClusterHierarchy, lambda_of_k
from .evaluation import fit_hierarchy, gap_grid, gap_levelset_trial, rate_experiment
from .exceptions import (
    ConfigError,
    InvalidInputError,
    ParameterError,
    PreconditionError,
    TreeclustError,
    UnsupportedDimensionError,
)
from .geometry import Dataset
from .kde import SPHERICAL, ErrorBudget, Kernel, build_valid_kernel, error_budget, optimal_bandwidth
from .levelset import Grid, devroye_wise, dilate_erode, gap_inputs, grid_hierarchy, kde_grid
from .synthetic import get_spec, registered_names, sample

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RATE_FIELDS = ["n", "h", "delta_min", "success_rate", "evaluations", "non_monotone"]
GAP_FIELDS = [
    "n", "seed", "h", "k", "lam", "a_n", "symdiff", "bound", "bound_h",
    "inner_ok", "outer_ok", "clusters_ok",
]


# -- point files ------------------------------------------------------------


def infer_format(path: str | os.PathLike) -> str:
    return "ndjson" if Path(path).suffix.lower() in (".ndjson", ".jsonl") else "csv"


def _parse_row(text: str, fmt: str, where: str) -> list[float]:
    if fmt == "csv":
        try:
            return [float(tok) for tok in text.split(",")]
        except ValueError:
            raise InvalidInputError(f"{where}: expected comma-separated numbers") from None
    try:
        val = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(val, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in val
    ):
        raise InvalidInputError(f"{where}: expected a JSON array of numbers")
    return [float(x) for x in val]


def read_points(path: str | os.PathLike, fmt: str | None = None) -> Dataset:
    """Read a point file, one point per line.

    Raises
    ------
    InvalidInputError
        On ragged rows, unparsable or non-finite values (naming the line),
        and on files without data rows.
    """
    fmt = fmt or infer_format(path)
    if fmt not in ("csv", "ndjson"):
        raise ConfigError(f"unknown format {fmt!r}")
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            where = f"{path}:{lineno}"
            row = _parse_row(text, fmt, where)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise InvalidInputError(f"{where}: expected {width} values, found {len(row)}")
            if not all(math.isfinite(x) for x in row):
                raise InvalidInputError(f"{where}: non-finite value")
            rows.append(row)
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=float))


def format_points(points: np.ndarray, fmt: str = "csv") -> str:
    """Serialise points so that :func:`read_points` recovers them bit for bit."""
    out = io.StringIO()
    for row in np.asarray(points, dtype=float).tolist():
        if fmt == "csv":
            out.write(",".join(repr(x) for x in row))
        else:
            out.write(json.dumps(row))
        out.write("\n")
    return out.getvalue()


# -- writing ------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> str:
    """Write ``text`` through a temporary file and rename; return its SHA-256."""
    data = text.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        os.fchmod(fd, 0o644)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def load_schema(name: str) -> dict:
    text = resources.files("treeclust").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def _json(doc: dict, indent: int | None = None) -> str:
    sep = (",", ":") if indent is None else (",", ": ")
    return json.dumps(doc, sort_keys=True, indent=indent, separators=sep, allow_nan=False) + "\n"


def _csv(rows: list[dict], fields: list[str], schema: dict) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        jsonschema.validate(row, schema)
        writer.writerow({k: _csv_cell(row[k]) for k in fields})
    return out.getvalue()


def _csv_cell(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if x is None:
        return ""
    return x


def _finite_or_none(x: float | None) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved command line configuration."""

    input: str | None
    format: str | None
    synthetic: str | None
    n: int | None
    seed: int
    algorithm: str
    h: float | None
    alpha: float | None
    bandwidth_c: float | None
    kernel_order: int | None
    prune_delta: float | None
    cs: float | None
    gap: tuple | None
    C1: float
    C2: float | None
    gamma: float | None
    L: float | None
    experiment: str | None
    n_grid: tuple | None
    seeds: int
    grid_step: float | None
    out: str


def _positive(name: str, value) -> None:
    if value is not None and not value > 0:
        raise ConfigError(f"{name} must be positive")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Check flag combinations and fill documented defaults.

    Raises
    ------
    ConfigError
        Naming the conflicting or missing flags.
    """
    if (args.input is None) == (args.synthetic is None):
        raise ConfigError("exactly one of --input and --synthetic is required")
    if args.input is not None and args.n is not None:
        raise ConfigError("--n conflicts with --input (the file fixes n)")
    if args.format is not None and args.input is None:
        raise ConfigError("--format applies to --input only")
    if args.h is not None and args.bandwidth_c is not None:
        raise ConfigError("--h conflicts with --bandwidth-c (give an explicit bandwidth or a rule)")
    if args.prune_delta is not None and args.cs is not None:
        raise ConfigError("--prune-delta conflicts with --cs (give the margin or its ingredients)")
    if args.cs is not None and args.alpha is None:
        raise ConfigError("--cs requires --alpha")
    if args.kernel_order is not None and args.algorithm == "dbscan":
        raise ConfigError("--kernel-order conflicts with --algorithm dbscan (ball kernel only)")
    for name in ("h", "alpha", "bandwidth_c", "prune_delta", "cs", "grid_step"):
        _positive("--" + name.replace("_", "-"), getattr(args, name))
    if args.kernel_order is not None and args.kernel_order < 1:
        raise ConfigError("--kernel-order must be at least 1")
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    experiment = args.experiment
    n_grid = None
    if args.n_grid is not None:
        try:
            n_grid = tuple(int(t) for t in args.n_grid.split(","))
        except ValueError:
            raise ConfigError("--n-grid must be a comma-separated list of integers") from None
        if not n_grid or min(n_grid) < 1:
            raise ConfigError("--n-grid entries must be positive")
    if experiment is None:
        if n_grid is not None:
            raise ConfigError("--n-grid requires --experiment")
        if args.synthetic is not None and args.n is None:
            raise ConfigError("--synthetic requires --n")
        if args.h is None and args.alpha is None:
            raise ConfigError("one of --h or --alpha (bandwidth rule) is required")
    else:
        if args.synthetic is None:
            raise ConfigError(f"--experiment {experiment} requires --synthetic")
        if n_grid is None:
            raise ConfigError(f"--experiment {experiment} requires --n-grid")
        if args.n is not None:
            raise ConfigError("--n conflicts with --experiment (use --n-grid)")
        if args.gap is not None or args.prune_delta is not None or args.cs is not None:
            raise ConfigError("--gap, --prune-delta and --cs do not apply to experiments")
        if experiment == "rates":
            if args.algorithm == "gridlevel":
                raise ConfigError("--experiment rates supports --algorithm dbscan or mdbscan")
            if args.h is not None:
                raise ConfigError("--h conflicts with --experiment rates (the bandwidth follows the rule)")
            if args.alpha is None:
                raise ConfigError("--experiment rates requires --alpha")
    if args.algorithm == "mdbscan" and args.kernel_order is None and args.alpha is None:
        raise ConfigError("--algorithm mdbscan requires --kernel-order or --alpha")
    if args.gap is not None:
        lam_star, eps = args.gap
        if not (lam_star >= 0 and eps > 0):
            raise ConfigError("--gap needs lambda_star >= 0 and epsilon > 0")
    bandwidth_c = args.bandwidth_c
    if args.h is None and bandwidth_c is None:
        bandwidth_c = 1.0
    return RunConfig(
        input=args.input,
        format=(args.format or infer_format(args.input)) if args.input else None,
        synthetic=args.synthetic,
        n=args.n,
        seed=args.seed,
        algorithm=args.algorithm,
        h=args.h,
        alpha=args.alpha,
        bandwidth_c=bandwidth_c,
        kernel_order=args.kernel_order,
        prune_delta=args.prune_delta,
        cs=args.cs,
        gap=tuple(args.gap) if args.gap is not None else None,
        C1=args.c1,
        C2=args.c2,
        gamma=args.gamma,
        L=args.lipschitz,
        experiment=experiment,
        n_grid=n_grid,
        seeds=args.seeds,
        grid_step=args.grid_step,
        out=args.out,
    )


# -- run ----------------------------------------------------------------------


def _spec(name: str):
    if name not in registered_names():
        raise ConfigError(f"unknown synthetic density {name!r}; known: {', '.join(registered_names())}")
    return get_spec(name)


def _kernel(cfg: RunConfig, d: int) -> Kernel:
    if cfg.algorithm == "dbscan":
        return SPHERICAL
    if cfg.algorithm == "gridlevel" and cfg.kernel_order is None:
        return SPHERICAL
    order = cfg.kernel_order if cfg.kernel_order is not None else math.ceil(cfg.alpha)
    return build_valid_kernel(int(order), d)


def _lipschitz(cfg: RunConfig, spec) -> float:
    if cfg.L is not None:
        return cfg.L
    if spec is not None and "L" in spec.facts:
        return float(spec.facts["L"])
    return 1.0


def _budget(cfg: RunConfig, n: int, h: float, d: int, L: float) -> ErrorBudget:
    C2 = L if cfg.C2 is None else cfg.C2
    if cfg.alpha is None and C2 != 0:
        raise ConfigError("the error budget needs --alpha (or --c2 0)")
    alpha = cfg.alpha if cfg.alpha is not None else math.inf
    return error_budget(n, h, d, alpha, L, cfg.gamma, cfg.C1, C2)


def _budget_doc(b: ErrorBudget) -> dict:
    return {
        "C1": b.C1,
        "C2": b.C2,
        "L": b.L,
        "alpha": _finite_or_none(b.alpha),
        "gamma": b.gamma,
        "variance_term": b.variance_term,
        "bias_term": b.bias_term,
        "a_n": b.a_n,
    }


def _gridlevel(ds: Dataset, kernel: Kernel, h: float, step: float | None) -> tuple[ClusterHierarchy, dict]:
    if ds.dim > 2:
        raise UnsupportedDimensionError("--algorithm gridlevel is restricted to d <= 2")
    step = step if step is not None else h / 10
    pts = ds.points
    grid = Grid.covering(pts.min(axis=0) - 2 * h, pts.max(axis=0) + 2 * h, step)
    gd = kde_grid(ds, kernel, h, grid)
    return grid_hierarchy(ds, gd, h, kernel), {"grid_step": step, "grid_shape": list(grid.shape)}


def dendrogram_doc(hier: ClusterHierarchy, delta: float | None) -> dict:
    """Serialisable dendrogram with every stored level, merge and split."""
    levels = []
    for lev in hier:
        levels.append({
            "level": lev.level,
            "k": lev.k,
            "clusters": [c.tolist() for c in lev.clusters],
        })
    splits = []
    for rec in extract_splits(hier):
        significant = None
        if delta is not None:
            significant = sum(t >= rec.level + delta for t in rec.tops) >= 2
        splits.append({
            "level": rec.level,
            "children": list(rec.children),
            "witnesses": list(rec.witnesses),
            "tops": list(rec.tops),
            "significant": significant,
        })
    return {
        "algorithm": hier.algorithm,
        "n": hier.n,
        "h": hier.h,
        "leaf_order": hier.order.tolist(),
        "levels": levels,
        "merges": [{"level": float(lv), "a": int(a), "b": int(b)} for lv, a, b in hier.merges],
        "splits": splits,
    }


def check_dendrogram(doc: dict, hier: ClusterHierarchy) -> None:
    """Schema, ordering and nesting checks applied before writing."""
    jsonschema.validate(doc, load_schema("dendrogram"))
    lv = [x["level"] for x in doc["levels"]]
    if any(b <= a for a, b in zip(lv, lv[1:])):
        raise TreeclustError("dendrogram levels are not strictly increasing")
    if hier.nesting_violations():
        raise TreeclustError("dendrogram levels are not nested")


def _source(cfg: RunConfig) -> dict:
    if cfg.input is not None:
        return {"kind": "file", "name": cfg.input, "format": cfg.format, "seed": None, "n": None}
    return {"kind": "synthetic", "name": cfg.synthetic, "format": None, "seed": cfg.seed, "n": cfg.n}


def _finish(out: Path, manifest: dict, texts: dict) -> None:
    # artifacts are written only after every computation succeeded; the manifest goes last
    artifacts = {name: atomic_write(out / name, text) for name, text in sorted(texts.items())}
    manifest["artifacts"] = artifacts
    jsonschema.validate(manifest, load_schema("manifest"))
    atomic_write(out / "manifest.json", _json(manifest, indent=2))


def run(cfg: RunConfig) -> dict:
    """Execute a single run and write its artifacts; returns the manifest."""
    out = Path(cfg.out)
    spec = None
    if cfg.input is not None:
        ds = read_points(cfg.input, cfg.format)
    else:
        spec = _spec(cfg.synthetic)
        ds = sample(spec, cfg.n, cfg.seed)
    n, d = ds.n, ds.dim
    if cfg.h is not None:
        h, rule = cfg.h, None
    else:
        h = optimal_bandwidth(n, d, cfg.alpha, cfg.bandwidth_c)
        rule = {"alpha": cfg.alpha, "C": cfg.bandwidth_c}
    kernel = _kernel(cfg, d)
    params: dict = {
        "algorithm": cfg.algorithm,
        "n": n,
        "d": d,
        "h": h,
        "bandwidth_rule": rule,
        "kernel": {"kind": kernel.kind, "order": kernel.order if kernel.kind == "valid" else None},
    }
    if cfg.algorithm == "gridlevel":
        hier, extra = _gridlevel(ds, kernel, h, cfg.grid_step)
        params.update(extra)
    else:
        hier = fit_hierarchy(ds, cfg.algorithm, h, kernel)
    if cfg.algorithm == "dbscan":
        params["lambda_k"] = [lambda_of_k(k, n, h, d) for k in range(n + 1)]

    L = _lipschitz(cfg, spec)
    budget = None
    needs_budget = cfg.cs is not None or cfg.gap is not None
    if needs_budget:
        budget = _budget(cfg, n, h, d, L)
    elif cfg.alpha is not None:
        try:
            budget = _budget(cfg, n, h, d, L)
        except PreconditionError:
            budget = None
    params["budget"] = _budget_doc(budget) if budget is not None else None

    delta = None
    if cfg.prune_delta is not None:
        delta = cfg.prune_delta
        params["pruning"] = {"delta": delta, "c_S": None, "alpha": None}
    elif cfg.cs is not None:
        delta = 2 * budget.a_n + (4 * h / cfg.cs) ** cfg.alpha
        params["pruning"] = {"delta": delta, "c_S": cfg.cs, "alpha": cfg.alpha}
    else:
        params["pruning"] = None

    artifacts = {}
    doc = dendrogram_doc(hier, delta)
    check_dendrogram(doc, hier)
    artifacts["dendrogram.json"] = _json(doc)
    results = {
        "levels": len(doc["levels"]),
        "splits": len(doc["splits"]),
        "significant_splits": sum(bool(s["significant"]) for s in doc["splits"]) if delta is not None else None,
    }

    if cfg.gap is not None:
        lam_star, eps = cfg.gap
        gi = gap_inputs(n, d, h, lam_star, lam_star + eps, budget, C1=cfg.C1)
        est = devroye_wise(ds, h, gi.k)
        ls = {"radius": h, "k": gi.k, "level": gi.lam, "indices": est.centers.tolist(),
              "centers": est.center_points.tolist()}
        jsonschema.validate(ls, load_schema("levelset"))
        artifacts["levelset.json"] = _json(ls)
        params["gap"] = {"lambda_star": lam_star, "epsilon": eps, **gi._asdict()}
    else:
        params["gap"] = None

    if spec is not None:
        artifacts["sample.csv"] = format_points(ds.points)

    manifest = {
        "tool": "treeclust",
        "version": __version__,
        "mode": "run",
        "source": _source(cfg),
        "parameters": params,
        "results": results,
    }
    _finish(out, manifest, artifacts)
    return manifest


def run_rates(cfg: RunConfig) -> dict:
    """Rate experiment: smallest handled separation margin per sample size."""
    spec = _spec(cfg.synthetic)
    seeds = list(range(cfg.seed, cfg.seed + cfg.seeds))
    res = rate_experiment(
        spec, cfg.algorithm, cfg.n_grid, seeds,
        alpha=cfg.alpha, bandwidth_c=cfg.bandwidth_c, kernel_order=cfg.kernel_order,
        grid_step=cfg.grid_step or 0.002,
    )
    rows = [asdict(r) for r in res.rows]
    out = Path(cfg.out)
    artifacts = {"rates.csv": _csv(rows, RATE_FIELDS, load_schema("rates"))}
    manifest = {
        "tool": "treeclust",
        "version": __version__,
        "mode": "rates",
        "source": {"kind": "synthetic", "name": cfg.synthetic, "format": None, "seed": cfg.seed, "n": None},
        "parameters": {
            "algorithm": cfg.algorithm,
            "n_grid": list(cfg.n_grid),
            "seeds": seeds,
            "bandwidth_rule": {"alpha": cfg.alpha, "C": cfg.bandwidth_c},
            "kernel_order": cfg.kernel_order,
            "grid_step": cfg.grid_step or 0.002,
        },
        "results": {"slope": _finite_or_none(res.slope), "flagged": res.flagged},
    }
    _finish(out, manifest, artifacts)
    return manifest


def run_gap_levelset(cfg: RunConfig) -> dict:
    """Level-set error and cluster recovery on a gap density over seeds and sample sizes."""
    spec = _spec(cfg.synthetic)
    if spec.family != "gap_density":
        raise ConfigError(f"--experiment gap-levelset needs a gap density, got {spec.family}")
    facts = spec.facts
    seeds = list(range(cfg.seed, cfg.seed + cfg.seeds))
    step = cfg.grid_step or 0.01
    C = cfg.bandwidth_c if cfg.bandwidth_c is not None else 1.0
    rows, summary = [], {}
    for n in cfg.n_grid:
        h = cfg.h if cfg.h is not None else C * (math.log(n) / (n * facts["eps"] ** 2)) ** (1.0 / spec.dim)
        budget = _budget(cfg, n, h, spec.dim, _lipschitz(cfg, spec))
        gd = gap_grid(spec, step, 3 * h)
        bands = dilate_erode(gd.region(facts["lam_high"]), 2 * h)
        trials = [gap_levelset_trial(spec, n, s, h, budget.a_n, gd, bands=bands) for s in seeds]
        for t in trials:
            row = asdict(t)
            rows.append(row)
        summary[str(n)] = {
            "h": h,
            "a_n": budget.a_n,
            "median_symdiff": float(np.median([t.symdiff for t in trials])),
            "within_bound": sum(t.within_bound for t in trials),
            "inclusions": sum(t.inner_ok and t.outer_ok for t in trials),
            "clusters_ok": sum(bool(t.clusters_ok) for t in trials),
        }
    out = Path(cfg.out)
    artifacts = {"gap_levelset.csv": _csv(rows, GAP_FIELDS, load_schema("gap_levelset"))}
    manifest = {
        "tool": "treeclust",
        "version": __version__,
        "mode": "gap-levelset",
        "source": {"kind": "synthetic", "name": cfg.synthetic, "format": None, "seed": cfg.seed, "n": None},
        "parameters": {
            "n_grid": list(cfg.n_grid),
            "seeds": seeds,
            "grid_step": step,
            "h": cfg.h,
            "bandwidth_rule": None if cfg.h is not None else {"C": C, "form": "C (log n / (n eps^2))^(1/d)"},
            "C1": cfg.C1,
            "C2": cfg.C2,
        },
        "results": summary,
    }
    _finish(out, manifest, artifacts)
    return manifest


def ingest(path: str, fmt: str | None, out: str | None) -> dict:
    """Parse a point file; with ``out`` also write its canonical CSV copy."""
    ds = read_points(path, fmt)
    info = {"n": ds.n, "dim": ds.dim, "format": fmt or infer_format(path)}
    if out is not None:
        info["sha256"] = atomic_write(Path(out) / "sample.csv", format_points(ds.points))
    return info


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeclust", description="Density cluster tree estimation.")
    parser.add_argument("--version", action="version", version=f"treeclust {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_in = sub.add_parser("ingest", help="parse and check a point file")
    p_in.add_argument("--input", required=True)
    p_in.add_argument("--format", choices=["csv", "ndjson"])
    p_in.add_argument("--out", help="directory for a canonical sample.csv copy")

    p = sub.add_parser("run", help="build a cluster tree or run an experiment")
    src = p.add_argument_group("data source")
    src.add_argument("--input", help="point file, one point per line")
    src.add_argument("--format", choices=["csv", "ndjson"], help="default: from the file suffix")
    src.add_argument("--synthetic", help="registered density name")
    src.add_argument("--n", type=int, help="sample size for --synthetic")
    src.add_argument("--seed", type=int, default=0)

    est = p.add_argument_group("estimator")
    est.add_argument("--algorithm", choices=["dbscan", "mdbscan", "gridlevel"], default="dbscan")
    est.add_argument("--h", type=float, help="explicit bandwidth")
    est.add_argument("--alpha", type=float, help="smoothness for the bandwidth rule, budget and pruning")
    est.add_argument("--bandwidth-c", type=float, help="bandwidth rule constant (default 1.0)")
    est.add_argument("--kernel-order", type=int)
    est.add_argument("--grid-step", type=float)

    prune = p.add_argument_group("pruning and level sets")
    prune.add_argument("--prune-delta", type=float, help="significance margin")
    prune.add_argument("--cs", type=float, help="separation constant; margin = 2 a_n + (4h/cs)^alpha")
    prune.add_argument("--gap", type=float, nargs=2, metavar=("LAMBDA_STAR", "EPSILON"))
    prune.add_argument("--c1", type=float, default=1.0, help="variance constant of the error budget")
    prune.add_argument("--c2", type=float, help="bias constant of the error budget (default: Lipschitz constant)")
    prune.add_argument("--gamma", type=float, help="confidence parameter (default log n)")
    prune.add_argument("--lipschitz", type=float, help="Hölder constant (default: known value or 1.0)")

    exp = p.add_argument_group("experiments")
    exp.add_argument("--experiment", choices=["rates", "gap-levelset"])
    exp.add_argument("--n-grid", help="comma-separated sample sizes")
    exp.add_argument("--seeds", type=int, default=50, help="number of consecutive seeds from --seed")

    p.add_argument("--out", required=True, help="output directory")
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ParameterError)):
        return EXIT_USAGE
    if isinstance(exc, (InvalidInputError, UnsupportedDimensionError, OSError, UnicodeDecodeError)):
        return EXIT_DATA
    return EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            info = ingest(args.input, args.format, args.out)
            print(json.dumps(info, sort_keys=True))
            return EXIT_OK
        cfg = resolve_config(args)
        if cfg.experiment == "rates":
            run_rates(cfg)
        elif cfg.experiment == "gap-levelset":
            run_gap_levelset(cfg)
        else:
            run(cfg)
    except (TreeclustError, OSError, UnicodeDecodeError) as exc:
        print(f"treeclust: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
