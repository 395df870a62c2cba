"""V-cycles with up F-point smoothing and the undamped Richardson driver.

FLOP convention (used for work units): a matvec costs ``2 nnz``, a vector
sum or difference ``n``, an axpy or scaled update ``2n`` and a 2-norm ``2n``.
Work units are total solve FLOPs over one top-grid matvec, ``2 nnz(A)``.
"""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .sparse import DimensionError, spmv

__all__ = [
    "SolveConfig",
    "SolveStats",
    "FlopCounter",
    "f_smooth",
    "vcycle",
    "coarse_solve",
    "richardson_solve",
    "predicted_flops",
]


@dataclass
class SolveConfig:
    rtol: float = 1e-10
    max_iterations: int = 100
    up_f_smooths: int = 2
    down_smooths: int = 0
    coarse_iterations: int | None = None

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.down_smooths != 0:
            raise ValueError("only up F-point smoothing is supported")
        if self.up_f_smooths < 0 or self.max_iterations < 0:
            raise ValueError("counts must be non-negative")


class FlopCounter:
    """Accumulates FLOPs by category."""

    def __init__(self):
        self.by_kind = defaultdict(int)

    def add(self, flops, kind="other"):
        self.by_kind[kind] += int(flops)

    @property
    def total(self):
        return sum(self.by_kind.values())


@dataclass
class SolveStats:
    iterations: int
    residual_history: list
    converged: bool
    flops: int
    work_units: float
    shadow_flops: int
    final_relative_residual: float
    grid_complexity: float
    operator_complexity: float
    storage_complexity: float
    n_levels: int
    solve_time: float
    wu_ratio: float | None = None
    c_grind: float | None = None
    d_grind: float | None = None
    flops_by_kind: dict = field(default_factory=dict)

    def to_dict(self):
        d = dict(self.__dict__)
        d["residual_history"] = [float(v) for v in self.residual_history]
        return d


def f_smooth(level, b, x, counter=None):
    """One F-point relaxation ``x_f += Aff_inv (b - A x)_f``; C values untouched.

    Only ``A_ff`` and ``A_fc`` are needed to form the F residual.
    """
    lmap = level.lmap
    f, c = lmap.fine_rows, lmap.coarse_rows
    x = np.array(x, dtype=np.float64, copy=True)
    r_f = b[f] - spmv(level.A_ff, x[f]) - spmv(level.A_fc, x[c])
    x[f] += spmv(level.Aff_inv, r_f)
    if counter is not None:
        nf = len(f)
        counter.add(
            2 * (level.A_ff.nnz + level.A_fc.nnz + level.Aff_inv.nnz) + 3 * nf, "smooth"
        )
    return x


def coarse_solve(h, r, iterations=None, counter=None):
    """Richardson on the coarsest grid preconditioned by its approximate inverse."""
    its = h.coarse_iterations if iterations is None else iterations
    if h.coarse_lu is not None:
        n = len(r)
        if counter is not None:
            counter.add(2 * n * n, "coarse")
        return scipy.linalg.lu_solve(h.coarse_lu, r) if n else r.copy()
    Ainv, Ac = h.coarse_inv, h.coarse_A
    x = spmv(Ainv, r)
    n = len(r)
    flops = 2 * Ainv.nnz
    for _ in range(its - 1):
        x = x + spmv(Ainv, r - spmv(Ac, x))
        flops += 2 * Ac.nnz + 2 * Ainv.nnz + 2 * n
    if counter is not None:
        counter.add(flops, "coarse")
    return x


def _cycle(h, level, r, cfg, counter):
    if level == len(h.levels):
        return coarse_solve(h, r, cfg.coarse_iterations, counter)
    lv = h.levels[level]
    r_c = spmv(lv.R, r)
    e_c = _cycle(h, level + 1, r_c, cfg, counter)
    e = spmv(lv.P, e_c)
    if counter is not None:
        counter.add(2 * lv.R.nnz, "restrict")
        counter.add(2 * lv.P.nnz, "prolong")
    for _ in range(cfg.up_f_smooths):
        e = f_smooth(lv, r, e, counter)
    return e


def vcycle(h, b, x=None, cfg=None, counter=None):
    """One V-cycle: no pre-smoothing, coarse Richardson, up F-point smoothing.

    With ``x`` given the cycle is applied to the residual equation and the
    updated iterate is returned; otherwise ``x = 0`` is assumed.
    """
    cfg = cfg or SolveConfig()
    b = np.asarray(b, dtype=np.float64)
    A = h.top
    if b.shape[0] != A.nrows:
        raise DimensionError("right-hand side does not match the hierarchy")
    if x is None:
        return _cycle(h, 0, b, cfg, counter)
    r = b - spmv(A, x)
    if counter is not None:
        counter.add(2 * A.nnz + len(b), "residual")
        counter.add(len(b), "update")
    return x + _cycle(h, 0, r, cfg, counter)


def predicted_flops(h, cfg, iterations):
    """FLOPs of ``iterations`` Richardson steps computed from stored nnz alone.

    Independent of the instrumented code path; used to cross-check it.
    """
    A = h.top
    n = A.nrows
    coarse_its = h.coarse_iterations if cfg.coarse_iterations is None else cfg.coarse_iterations
    if h.coarse_lu is not None:
        cycle = 2 * h.coarse_A.nrows ** 2
    else:
        cycle = 2 * h.coarse_inv.nnz + (coarse_its - 1) * (
            2 * h.coarse_A.nnz + 2 * h.coarse_inv.nnz + 2 * h.coarse_A.nrows
        )
    for lv in h.levels:
        smooth = 2 * (lv.A_ff.nnz + lv.A_fc.nnz + lv.Aff_inv.nnz) + 3 * lv.lmap.n_fine
        cycle += 2 * lv.R.nnz + 2 * lv.P.nnz + cfg.up_f_smooths * smooth
    # norm of b, then per iteration: cycle, update, residual and its norm
    per_iteration = cycle + n + (2 * A.nnz + n) + 2 * n
    return 2 * n + iterations * per_iteration


def richardson_solve(h, b, cfg=None):
    """Undamped Richardson ``x <- x + V(b - A x)`` from a zero initial guess.

    Stops when ``||b - A x|| / ||b|| <= rtol``; the residual is always a fresh
    matvec.  Non-convergence is reported through ``stats.converged``.

    Returns
    -------
    x : ndarray
    stats : SolveStats
    """
    cfg = cfg or SolveConfig()
    b = np.asarray(b, dtype=np.float64)
    A = h.top
    n = A.nrows
    if b.shape[0] != n:
        raise DimensionError("right-hand side does not match the hierarchy")
    counter = FlopCounter()
    t0 = time.perf_counter()
    x = np.zeros(n)
    norm_b = np.linalg.norm(b)
    counter.add(2 * n, "norm")
    history = []
    its = 0
    converged = True
    if norm_b > 0:
        r = b.copy()
        rel = 1.0
        history.append(rel)
        while rel > cfg.rtol:
            if its >= cfg.max_iterations:
                converged = False
                break
            x += _cycle(h, 0, r, cfg, counter)
            counter.add(n, "update")
            r = b - spmv(A, x)
            counter.add(2 * A.nnz + n, "residual")
            rel = np.linalg.norm(r) / norm_b
            counter.add(2 * n, "norm")
            history.append(rel)
            its += 1
            if not np.isfinite(rel):
                converged = False
                break
    elapsed = time.perf_counter() - t0
    final = float(np.linalg.norm(b - spmv(A, x)) / norm_b) if norm_b > 0 else 0.0
    flops = counter.total
    wu = flops / (2 * A.nnz) if A.nnz else 0.0
    m = h.metrics
    stats = SolveStats(
        iterations=its,
        residual_history=history,
        converged=converged,
        flops=flops,
        work_units=wu,
        shadow_flops=predicted_flops(h, cfg, its),
        final_relative_residual=final,
        grid_complexity=m.get("grid_complexity", 1.0),
        operator_complexity=m.get("operator_complexity", 1.0),
        storage_complexity=m.get("storage_complexity", 1.0),
        n_levels=h.n_levels,
        solve_time=elapsed,
        wu_ratio=elapsed / wu if wu else None,
        c_grind=elapsed / (its * n) * 1e9 if its and n else None,
        flops_by_kind=dict(counter.by_kind),
    )
    return x, stats
