"""Stationary GMRES polynomials as approximate inverses.

The coefficients come from a single random right-hand side: build the power
basis ``[b, A b, ..., A^m b]``, take a Householder QR and solve the small
least-squares problem that GMRES would solve at step ``m``.  The polynomial
can be applied matrix-free or assembled with a fixed sparsity pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _random
from .sparse import DimensionError, SparseMatrix, identity, restrict_to_pattern, spgemm, spmv

__all__ = [
    "GmresPolynomial",
    "SingularPolynomialError",
    "compute_coefficients",
    "apply_polynomial",
    "assemble_fixed_sparsity",
    "sparsity_pattern",
    "residual_reduction",
    "RANK_TOL",
]

RANK_TOL = 1e-12


class SingularPolynomialError(np.linalg.LinAlgError):
    """The projected least-squares system is singular."""


@dataclass(frozen=True)
class GmresPolynomial:
    """Coefficients ``alpha_0 .. alpha_order`` of ``q(A) = sum alpha_k A^k``.

    ``order`` is the requested degree; ``effective_order`` is the degree
    actually supported by the Krylov space (trailing coefficients are zero).
    """

    coefficients: np.ndarray
    order: int
    effective_order: int
    sparsity_order: int | None = None
    assembled: SparseMatrix | None = None

    @property
    def m(self):
        return self.order + 1


def compute_coefficients(A, m, seed=0, stream=0):
    """GMRES polynomial of degree ``m - 1`` for ``A``.

    Parameters
    ----------
    A : SparseMatrix
        Square matrix.
    m : int
        Number of coefficients (GMRES steps).
    seed, stream : int
        Select the random right-hand side.

    Raises
    ------
    SingularPolynomialError
        If the projected least-squares system is singular.
    """
    if A.nrows != A.ncols:
        raise DimensionError("polynomial needs a square matrix")
    if m < 1:
        raise ValueError("m must be at least 1")
    n = A.nrows
    coeffs = np.zeros(m)
    if n == 0:
        coeffs[0] = 1.0
        return GmresPolynomial(coeffs, m - 1, 0)

    K = np.empty((n, m + 1))
    K[:, 0] = _random.standard_normal(seed, n, stream)
    for k in range(m):
        K[:, k + 1] = spmv(A, K[:, k])
    if not np.all(np.isfinite(K)):
        raise SingularPolynomialError("power basis overflowed")
    R = np.linalg.qr(K, mode="r")
    if R.shape[0] < m + 1:
        R = np.vstack([R, np.zeros((m + 1 - R.shape[0], m + 1))])

    beta = R[0, 0]
    colnorm = np.linalg.norm(R, axis=0)
    if colnorm[0] == 0:
        coeffs[0] = 1.0
        return GmresPolynomial(coeffs, m - 1, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(np.diag(R)) / colnorm
    small = np.flatnonzero(~(rel[1:] > RANK_TOL))
    # Krylov dimension: first power that falls (numerically) into the span
    dim = int(small[0]) + 1 if len(small) else m + 1
    k = min(dim, m)

    # columns 1..k of R against rows 0..k: the rows beyond are zero
    R_tilde = R[: k + 1, 1 : k + 1]
    scale = colnorm[1 : k + 1]
    if np.any(scale == 0):
        raise SingularPolynomialError("A annihilates the Krylov space")
    R_scaled = R_tilde / scale
    rhs = np.zeros(k + 1)
    rhs[0] = beta
    sv = np.linalg.svd(R_scaled, compute_uv=False)
    if sv[-1] <= 1e-14 * sv[0]:
        raise SingularPolynomialError("singular projected system; retry with another seed")
    y, *_ = np.linalg.lstsq(R_scaled, rhs, rcond=None)
    coeffs[:k] = y / scale
    if not np.all(np.isfinite(coeffs)):
        raise SingularPolynomialError("non-finite polynomial coefficients")
    return GmresPolynomial(coeffs, m - 1, k - 1)


def apply_polynomial(A, p, b, counter=None):
    """Evaluate ``q(A) b`` matrix-free with ``effective_order`` matvecs."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != A.ncols or A.nrows != A.ncols:
        raise DimensionError("vector length does not match the matrix")
    coeffs = p.coefficients[: p.effective_order + 1]
    # Horner: q = a0 + A (a1 + A (a2 + ...))
    y = coeffs[-1] * b
    for a in coeffs[-2::-1]:
        y = spmv(A, y) + a * b
    if counter is not None:
        n = len(b)
        counter.add((len(coeffs) - 1) * (2 * A.nnz + 2 * n) + n, "poly")
    return y


def sparsity_pattern(A, sparsity_order):
    """Structural pattern of ``(|A| + I)^s``: the union of patterns of ``A^0 .. A^s``."""
    if sparsity_order < 1:
        raise ValueError("sparsity order must be at least 1")
    base = A.with_diagonal().pattern()
    pat = base
    for _ in range(sparsity_order - 1):
        pat = spgemm(pat, base).pattern()
    return pat


def assemble_fixed_sparsity(A, p, sparsity_order=1):
    """Assemble ``q(A)`` with every power restricted to a fixed pattern.

    Powers are accumulated as ``T_{k+1} = restrict(T_k A)`` where ``restrict``
    keeps only the structure of ``(|A| + I)^sparsity_order``.  Each step is
    row-local and never forms an unrestricted high power.  When
    ``sparsity_order >= effective_order`` the result is the exact polynomial.

    Returns
    -------
    GmresPolynomial
        ``p`` with ``assembled`` and ``sparsity_order`` filled in.
    """
    if A.nrows != A.ncols:
        raise DimensionError("polynomial needs a square matrix")
    pat = sparsity_pattern(A, sparsity_order)
    coeffs = p.coefficients[: p.effective_order + 1]
    eye = restrict_to_pattern(identity(A.nrows), pat)
    total = coeffs[0] * eye.values
    power = eye
    for a in coeffs[1:]:
        power = restrict_to_pattern(spgemm(power, A), pat)
        total = total + a * power.values
    M = SparseMatrix(pat.row_offsets, pat.col_indices, total, pat.shape, check=False)
    return replace(p, assembled=M, sparsity_order=int(sparsity_order))


def residual_reduction(A, p, trials=10, seed=0):
    """Largest sampled ``||b - A q(A) b|| / ||b||`` over random normal ``b``.

    This is a sampled lower estimate of the worst case.  The assembled
    inverse is used when present, otherwise the polynomial is applied
    matrix-free.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    worst = 0.0
    for t in range(trials):
        b = _random.standard_normal(seed, A.nrows, stream=10_000 + t)
        qb = spmv(p.assembled, b) if p.assembled is not None else apply_polynomial(A, p, b)
        nb = np.linalg.norm(b)
        if nb > 0:
            worst = max(worst, float(np.linalg.norm(b - spmv(A, qb)) / nb))
    return worst
