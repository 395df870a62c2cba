"""Setup of the AIRG multigrid hierarchy.

Each level is split into F and C points, the fine-fine block is inverted
approximately with an assembled GMRES polynomial, and that approximate
inverse defines the restrictor ``R = [-A_cf Aff_inv | I]``.  Prolongation is
the classical one-point operator unless ideal prolongation is requested.
The coarse matrix is the triple product ``R A P`` with small entries dropped.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.linalg

from . import coarsening as cf
from .gmres_poly import GmresPolynomial, assemble_fixed_sparsity, compute_coefficients
from .sparse import (
    DimensionError,
    LabelMap,
    SparseMatrix,
    drop_entries,
    extract_blocks,
    spgemm,
)

__all__ = [
    "SetupConfig",
    "Level",
    "Hierarchy",
    "CoarseningStall",
    "CF_ALGORITHMS",
    "build_restriction",
    "build_prolongation",
    "build_ideal_prolongation",
    "coarse_matrix",
    "split",
    "setup",
    "complexities",
]

log = logging.getLogger(__name__)

CF_ALGORITHMS = ("pmisr", "pmisr-ddc", "pmis", "pmis-swap")

# random stream offsets so every level and purpose draws independent numbers
_POLY_STREAM = 1_000
_COARSE_STREAM = 999_999


class CoarseningStall(RuntimeError):
    """A level failed to coarsen."""


@dataclass
class SetupConfig:
    strength_alpha: float = 0.5
    cf_splitting: str = "pmisr-ddc"
    ddc_fraction: float = 0.10
    ddc_bins: int = 1000
    max_loops: int | None = 3
    poly_order: int = 6
    sparsity_order: int = 1
    drop_coarse: float = 0.001
    drop_restrict: float = 0.01
    coarse_size_target: int = 3000
    coarse_poly_order: int = 12
    coarse_sparsity_order: int = 1
    coarse_iterations: int = 3
    max_levels: int = 200
    seed: int = 0
    # test hooks: exact building blocks for the block-LDU checks
    exact_ff_inverse: bool = False
    ideal_prolongation: bool = False
    exact_coarse_solve: bool = False

    def __post_init__(self):
        if self.cf_splitting not in CF_ALGORITHMS:
            raise ValueError(f"cf_splitting must be one of {CF_ALGORITHMS}")
        if min(self.drop_coarse, self.drop_restrict) < 0:
            raise ValueError("drop tolerances must be non-negative")
        orders = (self.poly_order, self.sparsity_order, self.coarse_poly_order,
                  self.coarse_sparsity_order, self.coarse_iterations)
        if min(orders) < 1:
            raise ValueError("orders and iteration counts must be at least 1")
        if not 0.0 <= self.strength_alpha <= 1.0:
            raise ValueError("strength_alpha must lie in [0, 1]")

    @property
    def ddc_enabled(self):
        return self.cf_splitting == "pmisr-ddc"

    @classmethod
    def serial(cls, **overrides):
        """Settings of the single-mesh serial study.

        3rd order fixed-sparsity polynomials everywhere, one coarse iteration,
        drop tolerances 0.0075 (coarse) / 0.025 (restrictor) and coarsening
        until the grid is smaller than the polynomial order.
        """
        base = dict(
            poly_order=3,
            coarse_poly_order=3,
            coarse_iterations=1,
            drop_coarse=0.0075,
            drop_restrict=0.025,
            coarse_size_target=0,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Level:
    A: SparseMatrix
    labels: cf.CfLabels
    lmap: LabelMap
    A_ff: SparseMatrix
    A_fc: SparseMatrix
    A_cf: SparseMatrix
    Aff_inv: SparseMatrix
    R: SparseMatrix
    P: SparseMatrix
    poly: GmresPolynomial | None = None
    theta_split: np.ndarray | None = None
    theta_final: np.ndarray | None = None
    n_ddc_converted: int = 0
    times: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.nrows

    @property
    def max_theta(self):
        t = self.theta_final
        return float(t.max()) if t is not None and len(t) else 0.0

    def summary(self):
        pre = self.theta_split
        return {
            "n": self.n,
            "nnz": self.A.nnz,
            "n_fine": self.lmap.n_fine,
            "n_coarse": self.lmap.n_coarse,
            "nnz_Aff": self.A_ff.nnz,
            "nnz_Afc": self.A_fc.nnz,
            "nnz_Aff_inv": self.Aff_inv.nnz,
            "nnz_R": self.R.nnz,
            "nnz_P": self.P.nnz,
            "max_theta_split": float(pre.max()) if pre is not None and len(pre) else 0.0,
            "max_theta": self.max_theta,
            "ddc_converted": self.n_ddc_converted,
            "poly_effective_order": None if self.poly is None else self.poly.effective_order,
            "times": dict(self.times),
        }


@dataclass
class Hierarchy:
    levels: list
    coarse_A: SparseMatrix
    coarse_inv: SparseMatrix | None
    coarse_poly: GmresPolynomial | None
    coarse_iterations: int
    config: SetupConfig
    coarse_lu: tuple | None = None
    termination: str = ""
    metrics: dict = field(default_factory=dict)

    @property
    def n_levels(self):
        return len(self.levels) + 1

    @property
    def top(self):
        return self.levels[0].A if self.levels else self.coarse_A

    @property
    def max_theta(self):
        return max((lv.max_theta for lv in self.levels), default=0.0)

    def operators(self):
        """Matrix of every level, top to bottom, including the coarse one."""
        return [lv.A for lv in self.levels] + [self.coarse_A]

    def report(self):
        out = {
            "n_levels": self.n_levels,
            "termination": self.termination,
            "metrics": dict(self.metrics),
            "max_theta": self.max_theta,
            "levels": [lv.summary() for lv in self.levels],
            "coarse": {
                "n": self.coarse_A.nrows,
                "nnz": self.coarse_A.nnz,
                "nnz_inv": None if self.coarse_inv is None else self.coarse_inv.nnz,
                "iterations": self.coarse_iterations,
            },
            "config": self.config.to_dict(),
        }
        return out


def complexities(h):
    """Grid, operator and storage complexity of a hierarchy.

    Storage counts what an up-F-smoothed cycle keeps: ``Aff_inv``, ``A_ff``,
    ``A_fc``, ``R`` and ``P`` on every level above the coarsest, plus the
    coarse approximate inverse and, when more than one coarse iteration is
    run, the coarse matrix itself.
    """
    ops = h.operators()
    n0, nnz0 = ops[0].nrows, ops[0].nnz
    grid = sum(A.nrows for A in ops) / n0
    op = sum(A.nnz for A in ops) / nnz0
    if h.coarse_inv is not None:
        coarse_inv_nnz = h.coarse_inv.nnz
    else:
        coarse_inv_nnz = h.coarse_A.nrows ** 2
    store = coarse_inv_nnz + min(h.coarse_iterations - 1, 1) * h.coarse_A.nnz
    for lv in h.levels:
        store += lv.Aff_inv.nnz + lv.A_ff.nnz + lv.A_fc.nnz + lv.R.nnz + lv.P.nnz
    return {
        "levels": len(ops),
        "grid_complexity": grid,
        "operator_complexity": op,
        "storage_complexity": store / nnz0,
    }


def build_restriction(A_cf, Aff_inv, drop_restrict, lmap):
    """``R = [Z | I]`` with ``Z = -A_cf Aff_inv`` in global column order.

    ``Z`` is dropped row-wise relative to its own infinity norm; the largest
    entry of every row is always kept.  The identity block is exact.
    """
    if A_cf.ncols != Aff_inv.nrows or A_cf.nrows != lmap.n_coarse:
        raise DimensionError("restriction blocks do not conform to the label map")
    Z = drop_entries(
        -spgemm(A_cf, Aff_inv), drop_restrict, keep_row_max=True, keep_diagonal=False
    )
    nc = lmap.n_coarse
    rows = np.concatenate([Z.row_ids(), np.arange(nc)])
    cols = np.concatenate([lmap.fine_rows[Z.col_indices], lmap.coarse_rows])
    vals = np.concatenate([Z.values, np.ones(nc)])
    return SparseMatrix.from_coo(rows, cols, vals, (nc, lmap.n))


def build_prolongation(lmap, G, A):
    """Classical one-point prolongation ``n x n_C``.

    Each F row takes a unit weight at the C column with the largest
    ``|a_ij|`` among its strong C neighbours (lowest column on ties), falling
    back to the largest C neighbour in the full row; rows without any C
    neighbour stay empty.
    """
    n, nc = lmap.n, lmap.n_coarse
    rows = A.row_ids()
    cols = A.col_indices
    absval = np.abs(A.values)
    fine = lmap.is_fine
    cand = fine[rows] & ~fine[cols] & (absval > 0)
    r, c, a = rows[cand], cols[cand], absval[cand]
    S = G.pattern
    strong = np.zeros(len(r), dtype=bool)
    if len(r):
        # membership of (r, c) in S via sorted keys
        s_rows = np.repeat(np.arange(S.shape[0]), np.diff(S.indptr)).astype(np.int64)
        s_keys = np.sort(s_rows * n + S.indices)
        keys = r.astype(np.int64) * n + c
        pos = np.minimum(np.searchsorted(s_keys, keys), max(len(s_keys) - 1, 0))
        strong = (s_keys[pos] == keys) if len(s_keys) else strong
    # best candidate per row is the last after sorting by (row, strong, |a|, -col)
    order = np.lexsort((-c, a, strong, r))
    r_sorted = r[order]
    last = np.flatnonzero(np.r_[r_sorted[1:] != r_sorted[:-1], True]) if len(r) else []
    chosen_rows = r_sorted[last]
    chosen_cols = c[order][last]
    p_rows = np.concatenate([chosen_rows, lmap.coarse_rows])
    p_cols = np.concatenate([lmap.sub_index[chosen_cols], np.arange(nc)])
    return SparseMatrix.from_coo(p_rows, p_cols, np.ones(len(p_rows)), (n, nc))


def build_ideal_prolongation(Aff_inv, A_fc, lmap, drop=0.0):
    """``P = [W; I]`` with ``W = -Aff_inv A_fc``."""
    W = drop_entries(-spgemm(Aff_inv, A_fc), drop,
                     keep_row_max=True, keep_diagonal=False)
    nc = lmap.n_coarse
    rows = np.concatenate([lmap.fine_rows[W.row_ids()], lmap.coarse_rows])
    cols = np.concatenate([W.col_indices, np.arange(nc)])
    vals = np.concatenate([W.values, np.ones(nc)])
    return SparseMatrix.from_coo(rows, cols, vals, (lmap.n, nc))


def coarse_matrix(R, A, P, drop_coarse):
    """``R (A P)`` followed by relative row-wise dropping."""
    return drop_entries(spgemm(R, spgemm(A, P)), drop_coarse)


def split(A, cfg, level=0, G=None):
    """CF splitting of one level according to ``cfg``.

    Returns
    -------
    labels : CfLabels
    G : StrengthGraph
    theta_split : ndarray or None
        Diagonal-dominance ratios of ``A_ff`` right after the independent-set
        pass (before any cleanup).
    """
    if G is None:
        G = cf.strength(A, cfg.strength_alpha)
    name = cfg.cf_splitting
    if name.startswith("pmisr"):
        labels = cf.pmisr(G, cfg.max_loops, cfg.seed, stream=level)
    else:
        labels = cf.pmis(G, swap=name == "pmis-swap", seed=cfg.seed, stream=level)
    theta = None
    if labels.n_fine and labels.n_coarse:
        A_ff, _, _, _, lmap = extract_blocks(A, labels)
        if cfg.ddc_enabled:
            labels, rep = cf.ddc(A_ff, labels, lmap, cfg.ddc_fraction, cfg.ddc_bins)
            theta = rep.theta
        else:
            theta = cf.diagonal_dominance(A_ff)
    return labels, G, theta


def _check_diagonal(A):
    d = A.diagonal()
    bad = np.flatnonzero(d == 0)
    if len(bad):
        raise cf.ZeroDiagonalError(bad[0])


def _dense_inverse(A):
    return SparseMatrix.from_dense(np.linalg.inv(A.toarray()))


def build_level(A, labels, G, cfg, level=0):
    """Assemble every operator of one level from a complete CF split."""
    times = {}
    t0 = time.perf_counter()
    A_ff, A_fc, A_cf, _, lmap = extract_blocks(A, labels)
    times["extract"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    poly = None
    if cfg.exact_ff_inverse:
        Aff_inv = _dense_inverse(A_ff)
    else:
        poly = compute_coefficients(A_ff, cfg.poly_order + 1, cfg.seed, _POLY_STREAM + level)
        poly = assemble_fixed_sparsity(A_ff, poly, cfg.sparsity_order)
        Aff_inv = poly.assembled
    times["poly"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    R = build_restriction(A_cf, Aff_inv, cfg.drop_restrict, lmap)
    times["restrict"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if cfg.ideal_prolongation:
        P = build_ideal_prolongation(Aff_inv, A_fc, lmap, cfg.drop_restrict)
    else:
        P = build_prolongation(lmap, G, A)
    times["prolong"] = time.perf_counter() - t0
    lv = Level(A, labels, lmap, A_ff, A_fc, A_cf, Aff_inv, R, P, poly=poly, times=times)
    lv.theta_final = cf.diagonal_dominance(A_ff) if A_ff.nrows else np.zeros(0)
    return lv


def setup(A, cfg=None, splitter=None):
    """Build the AIRG hierarchy for ``A``.

    Parameters
    ----------
    A : SparseMatrix
        Square operator; missing diagonal entries are inserted as zeros
        (and then rejected).
    cfg : SetupConfig, optional
    splitter : callable, optional
        ``splitter(A, level) -> CfLabels or label array`` replacing the
        configured CF splitting (used by the exactness tests).

    Raises
    ------
    CoarseningStall
        When a level selects no F points or keeps more than 99% of its rows.
    ZeroDiagonalError
        When a level matrix has a zero diagonal entry.
    """
    cfg = cfg or SetupConfig()
    if A.nrows != A.ncols:
        raise DimensionError("setup needs a square matrix")
    A_cur = A.with_diagonal()
    levels = []
    termination = "max_levels"
    stop_size = max(cfg.coarse_size_target, cfg.poly_order + 1)
    while len(levels) + 1 < cfg.max_levels:
        n = A_cur.nrows
        if n <= stop_size:
            termination = "truncated" if n <= cfg.coarse_size_target else "size"
            break
        _check_diagonal(A_cur)
        t0 = time.perf_counter()
        if splitter is not None:
            labels = splitter(A_cur, len(levels))
            if not isinstance(labels, cf.CfLabels):
                lab = np.asarray(labels, dtype=np.int8)
                labels = cf.CfLabels(lab, np.zeros(len(lab)))
            G = cf.strength(A_cur, cfg.strength_alpha)
            theta = None
        else:
            labels, G, theta = split(A_cur, cfg, len(levels))
        t_split = time.perf_counter() - t0
        nf, nc = labels.n_fine, labels.n_coarse
        if nf == 0:
            if G.pattern.nnz == 0:
                termination = "no_strong_connections"
                break
            raise CoarseningStall(f"level {len(levels)}: no F points selected (n={n})")
        if nc == 0:
            termination = "all_fine"
            break
        if nc > 0.99 * n:
            raise CoarseningStall(
                f"level {len(levels)}: coarsened {n} -> {nc} rows (< 1% reduction)"
            )
        lv = build_level(A_cur, labels, G, cfg, len(levels))
        lv.times["split"] = t_split
        lv.theta_split = theta
        if theta is not None and cfg.ddc_enabled:
            lv.n_ddc_converted = int(len(theta) - nf)
        t0 = time.perf_counter()
        A_next = coarse_matrix(lv.R, A_cur, lv.P, cfg.drop_coarse)
        lv.times["rap"] = time.perf_counter() - t0
        levels.append(lv)
        log.debug("level %d: n=%d nnz=%d nF=%d nC=%d", len(levels) - 1, n, A_cur.nnz, nf, nc)
        A_cur = A_next

    coarse_inv = coarse_poly = coarse_lu = None
    if cfg.exact_coarse_solve:
        coarse_lu = scipy.linalg.lu_factor(A_cur.toarray())
    else:
        _check_diagonal(A_cur)
        coarse_poly = compute_coefficients(
            A_cur, cfg.coarse_poly_order + 1, cfg.seed, _COARSE_STREAM
        )
        coarse_poly = assemble_fixed_sparsity(A_cur, coarse_poly, cfg.coarse_sparsity_order)
        coarse_inv = coarse_poly.assembled
    h = Hierarchy(
        levels, A_cur, coarse_inv, coarse_poly, cfg.coarse_iterations, cfg,
        coarse_lu=coarse_lu, termination=termination,
    )
    h.metrics = complexities(h)
    return h
