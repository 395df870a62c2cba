"""Strength of connection and coarse/fine splitting.

Labels are stored as small integers: ``F_POINT`` (0), ``C_POINT`` (1) and
``UNASSIGNED`` (-1).  The reduction-oriented splitting is PMISR (F points
form an independent set in the symmetrised strength graph) optionally
followed by a diagonal-dominance cleanup of the resulting ``A_ff``.  Classical
PMIS and its F/C-swapped variant are kept for comparison only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _random
from .sparse import C_POINT, F_POINT, DimensionError, LabelMap, SparseMatrix

__all__ = [
    "F_POINT",
    "C_POINT",
    "UNASSIGNED",
    "StrengthGraph",
    "CfLabels",
    "DominanceReport",
    "ZeroDiagonalError",
    "strength",
    "pmisr",
    "ddc",
    "pmis",
    "diagonal_dominance",
    "dominance_report",
    "condition_number",
    "is_independent",
]

UNASSIGNED = -1


class ZeroDiagonalError(ZeroDivisionError):
    """A row needed a nonzero diagonal and did not have one."""

    def __init__(self, row):
        super().__init__(f"zero diagonal in row {row}")
        self.row = int(row)


@dataclass(frozen=True)
class StrengthGraph:
    """Strong dependencies ``S`` (row i lists S_i) and the symmetrised ``S + S^T``."""

    pattern: sp.csr_matrix
    sym_pattern: sp.csr_matrix
    alpha: float

    @property
    def n(self):
        return self.pattern.shape[0]


@dataclass
class CfLabels:
    label: np.ndarray
    weight: np.ndarray
    seed: int | None = None

    @property
    def n_fine(self):
        return int(np.count_nonzero(self.label == F_POINT))

    @property
    def n_coarse(self):
        return int(np.count_nonzero(self.label == C_POINT))

    @property
    def complete(self):
        return not np.any(self.label == UNASSIGNED)

    def copy(self):
        return CfLabels(self.label.copy(), self.weight.copy(), self.seed)


@dataclass
class DominanceReport:
    theta: np.ndarray
    max_theta: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    alpha_diag: float | None = None

    def to_dict(self):
        return {
            "n_fine": int(len(self.theta)),
            "max_theta": float(self.max_theta),
            "alpha_diag": None if self.alpha_diag is None else float(self.alpha_diag),
            "histogram": self.histogram.tolist(),
            "bin_edges": self.bin_edges.tolist(),
        }


def _bool_csr(rows, cols, n):
    M = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    M.data[:] = 1
    M.sort_indices()
    return M


def strength(A, alpha):
    """Classical absolute-value strength of connection.

    ``j`` is in ``S_i`` when ``j != i``, ``a_ij`` is stored and nonzero, and
    ``|a_ij| >= alpha * max_{k != i} |a_ik|``.
    """
    if A.nrows != A.ncols:
        raise DimensionError("strength of connection needs a square matrix")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    n = A.nrows
    rows = A.row_ids()
    cols = A.col_indices
    absval = np.abs(A.values)
    off = (rows != cols) & (absval > 0)
    row_max = np.zeros(n)
    np.maximum.at(row_max, rows[off], absval[off])
    strong = off & (absval >= alpha * row_max[rows])
    S = _bool_csr(rows[strong], cols[strong], n)
    sym = _bool_csr(
        np.concatenate([rows[strong], cols[strong]]),
        np.concatenate([cols[strong], rows[strong]]),
        n,
    )
    return StrengthGraph(S, sym, float(alpha))


def _measure(G, union_measure, seed, stream):
    if union_measure:
        count = np.diff(G.sym_pattern.indptr)
    else:
        count = np.diff(G.pattern.indptr) + np.bincount(G.pattern.indices, minlength=G.n)
    return count + _random.uniform(seed, G.n, stream)


def _order(weight):
    """Rank of every node under (weight, index) ordering."""
    rank = np.empty(len(weight), dtype=np.int64)
    rank[np.lexsort((np.arange(len(weight)), weight))] = np.arange(len(weight))
    return rank


def _extreme_among_unassigned(graph, rank, label, want_min):
    """Unassigned nodes whose rank beats every unassigned neighbour."""
    n = len(rank)
    open_ = label == UNASSIGNED
    rows = np.repeat(np.arange(n), np.diff(graph.indptr))
    cols = graph.indices
    live = open_[rows] & open_[cols]
    if want_min:
        best = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(best, rows[live], rank[cols[live]])
        return open_ & (rank < best)
    best = np.full(n, -1, dtype=np.int64)
    np.maximum.at(best, rows[live], rank[cols[live]])
    return open_ & (rank > best)


def pmisr(G, max_loops=3, seed=0, union_measure=False, stream=0):
    """PMISR coarse/fine splitting.

    Nodes with measure below one (no strong connections) start as F.  Each
    sweep turns every unassigned node whose measure is smaller than all its
    unassigned neighbours in ``S + S^T`` into an F point and its neighbours
    into C points.  After ``max_loops`` sweeps (``None`` for unlimited)
    leftover nodes become C.

    Parameters
    ----------
    G : StrengthGraph
    max_loops : int or None
    seed : int
    union_measure : bool
        Use ``|S_i U S_i^T|`` instead of ``|S_i| + |S_i^T|`` in the measure.
    stream : int
        Independent random stream id (the setup uses the level number).
    """
    if max_loops is not None and max_loops < 1:
        raise ValueError("max_loops must be at least 1")
    n = G.n
    weight = _measure(G, union_measure, seed, stream)
    label = np.full(n, UNASSIGNED, dtype=np.int8)
    label[weight < 1.0] = F_POINT
    rank = _order(weight)
    sym = G.sym_pattern
    loops = 0
    while np.any(label == UNASSIGNED) and (max_loops is None or loops < max_loops):
        new_f = _extreme_among_unassigned(sym, rank, label, want_min=True)
        label[new_f] = F_POINT
        nbrs = sym[np.flatnonzero(new_f)].indices
        hit = np.zeros(n, dtype=bool)
        hit[nbrs] = True
        label[hit & (label == UNASSIGNED)] = C_POINT
        loops += 1
    label[label == UNASSIGNED] = C_POINT
    return CfLabels(label, weight, seed)


def pmis(G, swap=False, seed=0, stream=0):
    """Classical PMIS, or PMIS on ``S + S^T`` with F and C exchanged on output.

    Measures are ``|S_i^T| + rand``.  Isolated nodes (no edge in ``S + S^T``)
    become C points before any sweep; with ``swap`` they therefore end as F.
    Each sweep makes the local measure maxima C and every unassigned node that
    strongly depends on a new C point an F point.
    """
    n = G.n
    S = G.sym_pattern if swap else G.pattern
    sym = G.sym_pattern
    weight = np.bincount(S.indices, minlength=n) + _random.uniform(seed, n, stream)
    label = np.full(n, UNASSIGNED, dtype=np.int8)
    label[np.diff(sym.indptr) == 0] = C_POINT
    rank = _order(weight)
    ST = S.T.tocsr()
    while np.any(label == UNASSIGNED):
        new_c = _extreme_among_unassigned(sym, rank, label, want_min=False)
        label[new_c] = C_POINT
        # nodes i with some new C point in S_i are the rows of S^T at new_c
        dep = ST[np.flatnonzero(new_c)].indices
        hit = np.zeros(n, dtype=bool)
        hit[dep] = True
        label[hit & (label == UNASSIGNED)] = F_POINT
    if swap:
        label = np.where(label == F_POINT, C_POINT, F_POINT).astype(np.int8)
    return CfLabels(label, weight, seed)


def diagonal_dominance(A_ff):
    """Row-wise ratio ``sum_{j != i} |a_ij| / |a_ii|`` for a square block."""
    n = A_ff.nrows
    rows = A_ff.row_ids()
    absval = np.abs(A_ff.values)
    diag_mask = rows == A_ff.col_indices
    diag = np.zeros(n)
    diag[rows[diag_mask]] = absval[diag_mask]
    off = np.bincount(rows[~diag_mask], weights=absval[~diag_mask], minlength=n)
    bad = np.flatnonzero(diag == 0)
    if len(bad):
        raise ZeroDiagonalError(bad[0])
    return off / diag


def _histogram(theta, bins):
    top = float(theta.max()) if len(theta) else 0.0
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    counts, _ = np.histogram(theta, bins=edges)
    return counts, edges


def select_alpha_diag(theta, fraction, bins=1000, exact=False):
    """Threshold above which roughly ``fraction`` of the rows lie.

    The exact mode uses a selection on the sorted ratios; the default picks
    the bin boundary (``bins`` uniform bins on ``[0, max theta]``) whose
    exceedance count is closest to the target.
    """
    nf = len(theta)
    target = int(round(fraction * nf))
    if nf == 0:
        return 0.0
    if target <= 0:
        return float(theta.max())
    if exact:
        if target >= nf:
            return 0.0
        return float(np.partition(theta, nf - target - 1)[nf - target - 1])
    counts, edges = _histogram(theta, bins)
    # rows in bins j..end lie at or above boundary j
    above = np.concatenate([np.cumsum(counts[::-1])[::-1], [0]])
    j = int(np.argmin(np.abs(above - target)[::-1]))
    return float(edges[len(edges) - 1 - j])


def ddc(A_ff, labels, lmap, fraction=0.10, bins=1000, alpha_diag=None, exact=False):
    """Diagonal-dominance cleanup: turn weakly dominant F rows into C points.

    Ratios are measured once on the given ``A_ff``; every F row with
    ``theta_i > alpha_diag`` and ``theta_i != 0`` is converted at once.

    Returns
    -------
    CfLabels
        New labels (the input is not modified).
    DominanceReport
        Ratios before conversion and the threshold used.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if A_ff.nrows != lmap.n_fine:
        raise DimensionError("A_ff does not match the label map")
    theta = diagonal_dominance(A_ff)
    if alpha_diag is None:
        alpha_diag = select_alpha_diag(theta, fraction, bins, exact)
    convert = (theta > alpha_diag) & (theta != 0)
    out = labels.copy()
    out.label[lmap.fine_rows[convert]] = C_POINT
    report = dominance_report(A_ff, bins, theta=theta)
    report.alpha_diag = float(alpha_diag)
    return out, report


def dominance_report(A_ff, bins=1000, theta=None):
    if theta is None:
        theta = diagonal_dominance(A_ff)
    counts, edges = _histogram(theta, bins)
    max_theta = float(theta.max()) if len(theta) else 0.0
    return DominanceReport(theta, max_theta, counts, edges)


def condition_number(A, max_n=5000):
    """2-norm condition number from dense singular values."""
    if A.nrows > max_n or A.ncols > max_n:
        raise ValueError(f"dense condition number limited to n <= {max_n}")
    if A.nrows == 0:
        return 1.0
    s = np.linalg.svd(A.toarray(), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def is_independent(graph, label):
    """True when no edge of ``graph`` joins two F points."""
    rows = np.repeat(np.arange(graph.shape[0]), np.diff(graph.indptr))
    fine = np.asarray(label) == F_POINT
    return not np.any(fine[rows] & fine[graph.indices])
