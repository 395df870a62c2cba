"""Simulated distributed-memory layout of a hierarchy.

Nothing is communicated; rows are only labelled with owning ranks so that
the local/non-local nonzero balance of every level can be measured and the
rank-reduction trigger replayed.  Row ``i`` of a matrix lives on
``assignment[i]``; a stored entry ``(i, j)`` is local when column ``j`` is
owned by the same rank.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ALL_LOCAL",
    "PartitionState",
    "partition_rows",
    "rank_counts",
    "locality_ratio",
    "local_share",
    "replay_triggers",
]

# ratio reported when no active rank has any non-local entry
ALL_LOCAL = math.inf


def partition_rows(n, nranks):
    """Contiguous balanced blocks; the first ``n % nranks`` ranks get one extra row.

    ``nranks`` is clamped to ``[1, n]``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    nranks = max(1, min(int(nranks), n)) if n else 1
    base, extra = divmod(n, nranks)
    sizes = np.full(nranks, base, dtype=np.int64)
    sizes[:extra] += 1
    return np.repeat(np.arange(nranks, dtype=np.int64), sizes)


def rank_counts(A, assignment):
    """Per-rank ``(local, nonlocal)`` nonzero counts, indexed by rank id."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if len(assignment) != A.nrows or A.nrows != A.ncols:
        raise ValueError("assignment must cover every row of a square matrix")
    nr = int(assignment.max()) + 1 if len(assignment) else 0
    owner_r = assignment[A.row_ids()]
    is_local = owner_r == assignment[A.col_indices]
    local = np.bincount(owner_r[is_local], minlength=nr)
    nonlocal_ = np.bincount(owner_r[~is_local], minlength=nr)
    return local, nonlocal_


def locality_ratio(A, assignment):
    """Mean over active ranks of local nnz / non-local nnz.

    Ranks with no non-local entries would contribute an infinite ratio; they
    are left out of the mean.  If every active rank is all-local the result
    is ``ALL_LOCAL`` (``inf``).  Ranks owning no rows are not active.
    """
    local, nonlocal_ = rank_counts(A, assignment)
    active = np.bincount(np.asarray(assignment, dtype=np.int64), minlength=len(local)) > 0
    use = active & (nonlocal_ > 0)
    if not np.any(use):
        return ALL_LOCAL
    return float(np.mean(local[use] / nonlocal_[use]))


def local_share(A, assignment):
    """Fraction of all stored entries that are local (1.0 for an empty matrix)."""
    local, nonlocal_ = rank_counts(A, assignment)
    total = local.sum() + nonlocal_.sum()
    return float(local.sum() / total) if total else 1.0


@dataclass
class PartitionState:
    """Replay of the rank-reduction trigger over a hierarchy.

    ``ratio`` and ``share`` describe the layout each level is finally run on;
    at trigger levels ``ratio_before``/``share_before`` hold the values that
    fired the trigger.
    """

    assignments: list
    active_ranks: list
    ratio: list
    share: list
    triggered: list
    ratio_before: list
    share_before: list
    threshold: float
    initial_ranks: int
    levels: list = field(default_factory=list)

    @property
    def trigger_levels(self):
        return [i for i, t in enumerate(self.triggered) if t]

    def to_dict(self):
        def num(v):
            return None if v is None else ("inf" if math.isinf(v) else float(v))

        return {
            "initial_ranks": self.initial_ranks,
            "threshold": self.threshold,
            "trigger_levels": self.trigger_levels,
            "levels": [
                {
                    "level": i,
                    "n": lv["n"],
                    "nnz": lv["nnz"],
                    "active_ranks": self.active_ranks[i],
                    "ratio": num(self.ratio[i]),
                    "local_share": self.share[i],
                    "triggered": self.triggered[i],
                    "ratio_before": num(self.ratio_before[i]),
                    "local_share_before": self.share_before[i],
                }
                for i, lv in enumerate(self.levels)
            ],
        }


def _merge(assignment):
    """Halve the ranks: ranks ``2k`` and ``2k+1`` merge into rank ``k``."""
    return assignment // 2


def replay_triggers(h, initial_ranks, threshold=2.0):
    """Walk the hierarchy top-down and replay the rank-reduction trigger.

    The top level starts in contiguous blocks over ``initial_ranks``.  Coarse
    rows stay on the rank that owned them on the finer level.  Whenever a
    level's locality ratio drops below ``threshold`` the active ranks are
    halved by merging neighbouring pairs, so every surviving rank takes the
    rows of two old ones and no new cut appears.  Halving stops at one rank.
    """
    ops = h.operators()
    assign = partition_rows(ops[0].nrows, initial_ranks)
    out = PartitionState([], [], [], [], [], [], [], float(threshold), int(initial_ranks))
    for lvl, A in enumerate(ops):
        if lvl > 0:
            prev = h.levels[lvl - 1]
            assign = assign[prev.lmap.coarse_rows]
        ratio = locality_ratio(A, assign)
        share = local_share(A, assign)
        nactive = int(len(np.unique(assign))) if len(assign) else 0
        fired = ratio < threshold and nactive > 1
        before_r, before_s = None, None
        if fired:
            before_r, before_s = ratio, share
            # renumber so the active ranks stay 0..k-1 before merging pairs
            _, assign = np.unique(assign, return_inverse=True)
            assign = _merge(assign.astype(np.int64))
            ratio = locality_ratio(A, assign)
            share = local_share(A, assign)
            nactive = int(len(np.unique(assign)))
        out.assignments.append(assign.copy())
        out.active_ranks.append(nactive)
        out.ratio.append(ratio)
        out.share.append(share)
        out.triggered.append(bool(fired))
        out.ratio_before.append(before_r)
        out.share_before.append(before_s)
        out.levels.append({"n": A.nrows, "nnz": A.nnz})
    return out
