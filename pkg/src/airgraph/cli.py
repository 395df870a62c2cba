"""Command-line driver: ``airgraph generate | solve | report``.

Settings come from built-in defaults, then an optional JSON ``--config``
document, then flags (flags win).  Exit codes: 0 success, 1 solver did not
converge, 2 usage or validation error, 3 I/O error.

``runs.csv`` columns (one row appended per solve)::

    alpha, cf_algorithm, seed, levels, grid_comp, op_comp, storage_comp,
    its, WUs, converged, max_theta, max_theta_split, aff_diagonal,
    setup_time, solve_time
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .coarsening import F_POINT
from .hierarchy import CF_ALGORITHMS, CoarseningStall, SetupConfig, setup
from .parallel_model import replay_triggers
from .solve import SolveConfig, richardson_solve
from .sparse import MatrixMarketError
from .transport import MAX_JITTER, export_problem, import_problem, streaming_problem

log = logging.getLogger("airgraph")

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

CSV_COLUMNS = [
    "alpha", "cf_algorithm", "seed", "levels", "grid_comp", "op_comp", "storage_comp",
    "its", "WUs", "converged", "max_theta", "max_theta_split", "aff_diagonal",
    "setup_time", "solve_time",
]


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything one command needs; serialised verbatim into ``stats.json``."""

    # problem
    problem: str | None = None
    nx: int = 47
    mesh_seed: int = 0
    jitter: float = 0.2
    diagonals: str = "random"
    # setup
    preset: str = "default"
    strength_alpha: float | None = None
    cf_splitting: str | None = None
    ddc_fraction: float | None = None
    poly_order: int | None = None
    sparsity_order: int | None = None
    coarse_poly_order: int | None = None
    coarse_iterations: int | None = None
    drop_coarse: float | None = None
    drop_restrict: float | None = None
    coarse_size_target: int | None = None
    seed: int = 0
    # solve
    rtol: float = 1e-10
    max_iterations: int = 100
    up_f_smooths: int = 2
    # analysis
    ranks: int = 64
    ratio_threshold: float = 2.0
    out: str = "airgraph_out"

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self):
        if self.preset not in ("default", "serial"):
            raise UsageError("preset must be 'default' or 'serial'")
        if not 0.0 <= self.jitter <= MAX_JITTER:
            raise UsageError(f"jitter must lie in [0, {MAX_JITTER}]")
        if self.nx < 1:
            raise UsageError("nx must be positive")
        if self.ranks < 1:
            raise UsageError("ranks must be positive")
        self.setup_config()
        self.solve_config()

    def setup_config(self):
        overrides = {
            k: getattr(self, k)
            for k in SetupConfig.field_names()
            if hasattr(self, k) and getattr(self, k) is not None
        }
        try:
            if self.preset == "serial":
                return SetupConfig.serial(**overrides)
            return SetupConfig(**overrides)
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from exc

    def solve_config(self):
        try:
            return SolveConfig(
                rtol=self.rtol, max_iterations=self.max_iterations, up_f_smooths=self.up_f_smooths
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


# flag name -> (RunConfig field, type)
_FLAGS = {
    "--nx": ("nx", int),
    "--mesh-seed": ("mesh_seed", int),
    "--jitter": ("jitter", float),
    "--diagonals": ("diagonals", str),
    "--problem": ("problem", str),
    "--preset": ("preset", str),
    "--alpha": ("strength_alpha", float),
    "--cf": ("cf_splitting", str),
    "--ddc-fraction": ("ddc_fraction", float),
    "--poly-order": ("poly_order", int),
    "--sparsity-order": ("sparsity_order", int),
    "--coarse-order": ("coarse_poly_order", int),
    "--coarse-its": ("coarse_iterations", int),
    "--drop-coarse": ("drop_coarse", float),
    "--drop-restrict": ("drop_restrict", float),
    "--truncate-size": ("coarse_size_target", int),
    "--rtol": ("rtol", float),
    "--max-its": ("max_iterations", int),
    "--f-smooths": ("up_f_smooths", int),
    "--ranks": ("ranks", int),
    "--ratio-threshold": ("ratio_threshold", float),
}


def _parser():
    p = argparse.ArgumentParser(prog="airgraph", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a streaming test problem")
    gen.add_argument("--config")
    gen.add_argument("--out")
    gen.add_argument("--seed", type=int, help="mesh seed")
    for flag in ("--nx", "--jitter", "--diagonals"):
        gen.add_argument(flag, type=_FLAGS[flag][1], dest=_FLAGS[flag][0])

    for name, text in (("solve", "set up and solve"), ("report", "setup analysis files")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int, help="setup seed (CF weights, polynomials)")
        for flag, (dest, typ) in _FLAGS.items():
            kw = {"choices": CF_ALGORITHMS} if flag == "--cf" else {}
            sp.add_argument(flag, type=typ, dest=dest, **kw)
    return p


def _run_config(args, mesh_seed_flag=False):
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    cfg = RunConfig.from_mapping(data)
    for flag, (dest, _) in _FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            setattr(cfg, dest, v)
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        if mesh_seed_flag:
            cfg.mesh_seed = args.seed
        else:
            cfg.seed = args.seed
    cfg.validate()
    return cfg


def _load_problem(cfg):
    if cfg.problem:
        path = Path(cfg.problem)
        if not path.exists():
            raise FileNotFoundError(f"problem not found: {path}")
        return import_problem(path)
    return streaming_problem(cfg.nx, cfg.mesh_seed, cfg.jitter, cfg.diagonals)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _write_json(path, data):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def aff_is_diagonal(h):
    """True when every level's ``A_ff`` has no off-diagonal entries."""
    for lv in h.levels:
        A = lv.A_ff
        if np.any(A.row_ids() != A.col_indices):
            return False
    return True


def cmd_generate(cfg):
    problem = streaming_problem(cfg.nx, cfg.mesh_seed, cfg.jitter, cfg.diagonals)
    out = export_problem(problem, cfg.out)
    print(f"wrote {out} (n={problem.A.nrows}, nnz={problem.A.nnz})")
    return EXIT_OK


def _setup(cfg, problem):
    t0 = time.perf_counter()
    h = setup(problem.A, cfg.setup_config())
    return h, time.perf_counter() - t0


def csv_row(cfg, h, stats, setup_time):
    scfg = h.config
    pre = [lv.theta_split.max() for lv in h.levels
           if lv.theta_split is not None and len(lv.theta_split)]
    return {
        "alpha": scfg.strength_alpha,
        "cf_algorithm": scfg.cf_splitting,
        "seed": scfg.seed,
        "levels": h.n_levels,
        "grid_comp": round(h.metrics["grid_complexity"], 6),
        "op_comp": round(h.metrics["operator_complexity"], 6),
        "storage_comp": round(h.metrics["storage_complexity"], 6),
        "its": stats.iterations,
        "WUs": round(stats.work_units, 4),
        "converged": int(stats.converged),
        "max_theta": round(h.max_theta, 6),
        "max_theta_split": round(float(max(pre)) if pre else 0.0, 6),
        "aff_diagonal": int(aff_is_diagonal(h)),
        "setup_time": round(setup_time, 4),
        "solve_time": round(stats.solve_time, 4),
    }


def _append_csv(path, row):
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        w.writerow(row)


def cmd_solve(cfg):
    problem = _load_problem(cfg)
    h, setup_time = _setup(cfg, problem)
    _, stats = richardson_solve(h, problem.b, cfg.solve_config())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    row = csv_row(cfg, h, stats, setup_time)
    _write_json(out / "stats.json", {
        "config": asdict(cfg),
        "problem": {"n": problem.A.nrows, "nnz": problem.A.nnz, "meta": problem.meta},
        "hierarchy": h.report(),
        "solve": stats.to_dict(),
        "setup_time": setup_time,
        "aff_diagonal": bool(row["aff_diagonal"]),
        "row": row,
    })
    _append_csv(out / "runs.csv", row)
    print(", ".join(f"{k}={row[k]}" for k in ("alpha", "cf_algorithm", "levels", "grid_comp",
                                             "its", "WUs", "max_theta")))
    if not stats.converged:
        log.error("no convergence after %d iterations", stats.iterations)
        return EXIT_DIVERGED
    return EXIT_OK


def write_histograms(h, out, bins):
    """One ``hist_levelN.csv`` per level with pre- and post-cleanup counts of theta."""
    paths = []
    for i, lv in enumerate(h.levels):
        pre = lv.theta_split if lv.theta_split is not None else lv.theta_final
        post = lv.theta_final
        top = max(float(pre.max()) if len(pre) else 0.0, float(post.max()) if len(post) else 0.0)
        edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
        c_pre, _ = np.histogram(pre, bins=edges)
        c_post, _ = np.histogram(post, bins=edges)
        path = out / f"hist_level{i}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count_pre", "count_post"])
            for lo, hi, a, b in zip(edges[:-1], edges[1:], c_pre, c_post):
                w.writerow([f"{lo:.8g}", f"{hi:.8g}", int(a), int(b)])
        paths.append(path)
    return paths


def write_cf_points(h, problem, out):
    """``cf_levelN.csv``: position, angle block and F/C label of every row."""
    if problem.coords is None:
        return []
    nodes = problem.coords
    bs = len(nodes)
    origin = np.arange(h.top.nrows)
    paths = []
    for i, lv in enumerate(h.levels):
        node = origin % bs
        path = out / f"cf_level{i}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "angle", "label"])
            for k, lab in enumerate(lv.labels.label):
                j = node[k]
                w.writerow([f"{nodes[j, 0]:.8g}", f"{nodes[j, 1]:.8g}", int(origin[k] // bs),
                            "F" if lab == F_POINT else "C"])
        paths.append(path)
        origin = origin[lv.lmap.coarse_rows]
    return paths


def cmd_report(cfg):
    problem = _load_problem(cfg)
    h, setup_time = _setup(cfg, problem)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    hists = write_histograms(h, out, h.config.ddc_bins)
    pts = write_cf_points(h, problem, out)
    state = replay_triggers(h, cfg.ranks, cfg.ratio_threshold)
    _write_json(out / "partition.json", state.to_dict())
    _write_json(out / "hierarchy.json", {"config": asdict(cfg), "setup_time": setup_time,
                                         "hierarchy": h.report()})
    print(f"{len(hists)} histograms, {len(pts)} CF dumps, "
          f"trigger levels {state.trigger_levels}")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args, mesh_seed_flag=args.command == "generate")
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        return cmd_report(cfg)
    except UsageError as exc:
        print(f"airgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MatrixMarketError) as exc:
        print(f"airgraph: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CoarseningStall as exc:
        print(f"airgraph: setup failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
