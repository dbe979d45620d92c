"""Dense complex tensor primitives and a restarted-Arnoldi eigensolver.

Tensors are plain ``numpy.ndarray`` objects of dtype complex128 stored
row-major over the declared index order; every function in this package
states the index order of its arguments explicitly.  All operations here
are pure: inputs are never mutated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg


class ContractionError(ValueError):
    """Incompatible index pairing in a tensor contraction."""


class DecompositionError(RuntimeError):
    """A matrix factorization failed to converge."""


class RankDeficiencyWarning(UserWarning):
    """A decomposition hit a (numerically) rank-deficient input."""


def contract(a: np.ndarray, b: np.ndarray, pairs) -> np.ndarray:
    """Contract two tensors over the given index pairs.

    Parameters
    ----------
    a, b : np.ndarray
        Tensors of arbitrary rank.
    pairs : sequence of (int, int)
        Index pairs ``(i, j)`` meaning axis ``i`` of `a` is summed against
        axis ``j`` of `b`.

    Returns
    -------
    np.ndarray
        The remaining indices of `a` (in order) followed by the remaining
        indices of `b` (in order).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    pairs = list(pairs)
    ax_a = [p[0] for p in pairs]
    ax_b = [p[1] for p in pairs]
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise ContractionError(f"repeated axis in pairs {pairs}")
    for i, j in pairs:
        if not (-a.ndim <= i < a.ndim) or not (-b.ndim <= j < b.ndim):
            raise ContractionError(
                f"pair ({i},{j}) out of range for shapes {a.shape} x {b.shape}")
        if a.shape[i] != b.shape[j]:
            raise ContractionError(
                f"pair ({i},{j}): extent {a.shape[i]} != {b.shape[j]} "
                f"(shapes {a.shape} x {b.shape})")
    return np.tensordot(a, b, axes=(ax_a, ax_b))


def qr_positive(m: np.ndarray):
    """Thin QR decomposition with real positive diagonal of R.

    The sign/phase convention makes the factorization unique, so repeated
    decompositions of the same matrix are bit-stable.

    Parameters
    ----------
    m : np.ndarray
        Matrix with at least as many rows as columns.

    Returns
    -------
    (Q, R) : Q isometric (Q^dag Q = 1), R upper triangular with strictly
    positive real diagonal.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] < m.shape[1]:
        raise ValueError(f"qr_positive needs rows >= cols, got {m.shape}")
    q, r = np.linalg.qr(m)
    d = np.diagonal(r).copy()
    scale = np.linalg.norm(m)
    small = np.abs(d) <= 1e-14 * scale
    if np.any(small):
        warnings.warn(
            f"rank-deficient QR input: {int(small.sum())} diagonal(s) below "
            f"1e-14*|m|", RankDeficiencyWarning)
        d[small] = 1.0
    phase = d / np.abs(d)
    q = q * phase[np.newaxis, :]
    r = r * np.conj(phase)[:, np.newaxis]
    return q, r


def rq_positive(m: np.ndarray):
    """Thin RQ decomposition, R upper triangular with positive real diagonal.

    `m` must have at least as many columns as rows; returns (R, Q) with
    m = R Q and Q Q^dag = 1.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[1] < m.shape[0]:
        raise ValueError(f"rq_positive needs cols >= rows, got {m.shape}")
    r, q = scipy.linalg.rq(m, mode="economic")
    d = np.diagonal(r).copy()
    scale = np.linalg.norm(m)
    small = np.abs(d) <= 1e-14 * scale
    if np.any(small):
        warnings.warn(
            f"rank-deficient RQ input: {int(small.sum())} diagonal(s) below "
            f"1e-14*|m|", RankDeficiencyWarning)
        d[small] = 1.0
    phase = d / np.abs(d)
    r = r * np.conj(phase)[np.newaxis, :]
    q = q * phase[:, np.newaxis]
    return r, q


def svd(m: np.ndarray):
    """Thin SVD, singular values descending.

    Returns (U, S, Vh) with m = U @ diag(S) @ Vh, U and Vh isometric.
    LAPACK convergence failures are surfaced as DecompositionError after a
    retry with the slower but more robust gesvd driver.
    """
    m = np.asarray(m, dtype=complex)
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            return scipy.linalg.svd(m, full_matrices=False,
                                    lapack_driver="gesvd")
        except Exception as exc:  # pragma: no cover - LAPACK-dependent
            raise DecompositionError(f"SVD failed for shape {m.shape}") from exc


def polar_left(m: np.ndarray):
    """Left polar decomposition m = W P.

    W is an isometry (W^dag W = 1, needs rows >= cols) and P is Hermitian
    positive semidefinite.  Computed from the SVD: W = U Vh, P = Vh^dag S Vh.
    """
    m = np.asarray(m, dtype=complex)
    if m.shape[0] < m.shape[1]:
        raise ValueError(f"polar_left needs rows >= cols, got {m.shape}")
    u, s, vh = svd(m)
    w = u @ vh
    p = vh.conj().T @ (s[:, np.newaxis] * vh)
    return w, p


def polar_right(m: np.ndarray):
    """Right polar decomposition m = P W.

    W satisfies W W^dag = 1 (needs cols >= rows), P is Hermitian PSD.
    """
    m = np.asarray(m, dtype=complex)
    if m.shape[1] < m.shape[0]:
        raise ValueError(f"polar_right needs cols >= rows, got {m.shape}")
    u, s, vh = svd(m)
    w = u @ vh
    p = u @ (s[:, np.newaxis] * u.conj().T)
    return p, w


@dataclass(frozen=True)
class LinearMap:
    """Matrix-free linear operator on complex vectors of length `dim`."""

    dim: int
    matvec: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.matvec(v)

    def materialize(self) -> np.ndarray:
        """Dense matrix of the map; only sensible for small dims."""
        eye = np.eye(self.dim, dtype=complex)
        return np.column_stack([self.matvec(eye[:, k]) for k in range(self.dim)])


@dataclass(frozen=True)
class EigResult:
    """Leading eigenpair: value, unit-norm vector, true residual |Av - lv|."""

    value: complex
    vector: np.ndarray
    residual: float
    converged: bool
    degenerate: bool = False
    iterations: int = 0


def leading_eig(op: LinearMap, guess: np.ndarray, tol: float = 1e-12,
                max_iter: int = 4000, subspace: int = 30) -> EigResult:
    """Leading (largest |value|) eigenpair via restarted Arnoldi iteration.

    Builds a Krylov subspace of size `subspace` from the current vector,
    extracts the dominant Ritz pair, and restarts from it until the true
    residual drops below `tol` or the matvec budget `max_iter` is spent.
    Deterministic for a fixed guess.  A spectral gap below `tol` between
    the top two Ritz magnitudes is reported through the `degenerate` flag;
    the pair itself is still the dominant one found.
    """
    n = op.dim
    if n < 1:
        raise ValueError("empty domain")
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.asarray(guess, dtype=complex).reshape(n).copy()
    nv = np.linalg.norm(v)
    if nv == 0 or not np.isfinite(nv):
        raise ValueError("guess must be a nonzero finite vector")
    v /= nv

    m = min(subspace, n)
    nmv = 0
    best = None

    while True:
        q = np.empty((m + 1, n), dtype=complex)
        h = np.zeros((m + 1, m), dtype=complex)
        q[0] = v
        k = m
        for j in range(m):
            w = np.asarray(op.matvec(q[j]), dtype=complex).reshape(n)
            nmv += 1
            # modified Gram-Schmidt with one reorthogonalization pass
            for _ in range(2):
                for i in range(j + 1):
                    c = np.vdot(q[i], w)
                    h[i, j] += c
                    w -= c * q[i]
            beta = np.linalg.norm(w)
            h[j + 1, j] = beta
            if beta < 1e-14:
                k = j + 1  # invariant subspace reached
                break
            q[j + 1] = w / beta

        theta, y = np.linalg.eig(h[:k, :k])
        order = np.argsort(-np.abs(theta))
        lead = order[0]
        lam = theta[lead]
        x = y[:, lead] @ q[:k]
        x /= np.linalg.norm(x)

        ax = np.asarray(op.matvec(x), dtype=complex).reshape(n)
        nmv += 1
        residual = float(np.linalg.norm(ax - lam * x))
        gap = (np.abs(theta[order[0]]) - np.abs(theta[order[1]])
               if k >= 2 else np.inf)

        if best is None or residual < best.residual:
            best = EigResult(value=complex(lam), vector=x, residual=residual,
                             converged=residual <= tol,
                             degenerate=bool(gap < tol), iterations=nmv)
        if residual <= tol or nmv >= max_iter or k < m:
            # k < m: exact invariant subspace, no further progress possible
            if k < m and residual > tol and best.residual > tol:
                best = EigResult(value=complex(lam), vector=x,
                                 residual=residual, converged=residual <= tol,
                                 degenerate=bool(gap < tol), iterations=nmv)
            return EigResult(value=best.value, vector=best.vector,
                             residual=best.residual, converged=best.converged,
                             degenerate=best.degenerate, iterations=nmv)
        v = x
