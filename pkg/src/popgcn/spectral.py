"""Unnormalized-Laplacian spectral embedding of ROI correlation matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SYMMETRY_TOL, InvariantError, NumericalError, ParameterError, ShapeError

DEFAULT_K = 10
# columns whose min-max span falls below this (relative) are treated as constant
CONSTANT_TOL = 1e-10


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # column j pairs with eigenvalues[j]


@dataclass(frozen=True)
class SpectralEmbedding:
    features: np.ndarray  # n_roi x k, columns in [0, 1]

    @property
    def k(self) -> int:
        return self.features.shape[1]

    @property
    def flattened(self) -> np.ndarray:
        # eigenvector-major: flattened[r + j * n_roi] == features[r, j]
        return self.features.ravel(order="F")


def _check_square_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
        raise InvariantError("matrix is not symmetric")
    return m


def laplacian(C: np.ndarray) -> np.ndarray:
    """L = D - C with D the row sums of C.

    The diagonal of C cancels out of L, so it is zeroed before summing; that
    makes the result bit-identical whatever the input diagonal holds.
    """
    A = _check_square_symmetric(C).copy()
    np.fill_diagonal(A, 0.0)
    L = -A
    np.fill_diagonal(L, A.sum(axis=1))
    return L


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    V = np.array(vectors, dtype=np.float64, copy=True)
    if V.size == 0:
        return V
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def jacobi_eigh(S: np.ndarray, max_sweeps: int = 60, tol: float = 1e-14):
    """Cyclic Jacobi rotations; slow but dependency-free and easy to audit."""
    A = np.array(S, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(A)))
    off_mask = ~np.eye(n, dtype=bool)
    for sweep in range(1, max_sweeps + 1):
        # summed directly: |A|^2 - |diag|^2 cancels catastrophically near convergence
        if float(np.sqrt(np.sum(A[off_mask] ** 2))) <= tol * scale:
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    raise NumericalError(f"Jacobi eigensolver did not converge after {max_sweeps} sweeps")


def eigendecompose_symmetric(L: np.ndarray, method: str = "lapack", max_sweeps: int = 60) -> EigenSystem:
    """Full eigensystem, ascending eigenvalues, sign-fixed eigenvectors.

    Ties are broken stably by the solver's column order, which is itself
    deterministic for a given input.
    """
    L = _check_square_symmetric(L)
    if method == "lapack":
        try:
            w, V = np.linalg.eigh(L)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigendecomposition failed to converge: {exc}") from exc
    elif method == "jacobi":
        w, V = jacobi_eigh(L, max_sweeps=max_sweeps)
    else:
        raise ParameterError(f"unknown eigensolver {method!r}")
    order = np.argsort(w, kind="stable")
    w = w[order]
    V = fix_signs(V[:, order])
    return EigenSystem(w, V)


def minmax_columns(V: np.ndarray) -> np.ndarray:
    lo = V.min(axis=0)
    hi = V.max(axis=0)
    span = hi - lo
    constant = span <= CONSTANT_TOL * np.maximum(1.0, np.abs(V).max(axis=0))
    out = np.zeros_like(V)
    live = ~constant
    out[:, live] = (V[:, live] - lo[live]) / span[live]
    return np.clip(out, 0.0, 1.0)


def spectral_embedding(C: np.ndarray, k: int = DEFAULT_K, skip_trivial: bool = False,
                       method: str = "lapack") -> SpectralEmbedding:
    """Embed ROIs with the k eigenvectors of smallest Laplacian eigenvalue.

    With ``skip_trivial`` the first (near-constant, eigenvalue ~0) vector is
    dropped and the next k are used instead.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    start = 1 if skip_trivial else 0
    if not (1 <= k <= n - start):
        raise ParameterError(f"k={k} out of range for n_roi={n}")
    system = eigendecompose_symmetric(laplacian(C), method=method)
    return SpectralEmbedding(minmax_columns(system.eigenvectors[:, start:start + k]))


def embed_many(matrices, k: int = DEFAULT_K, skip_trivial: bool = False) -> np.ndarray:
    """Stack flattened embeddings into an n_subjects x (n_roi * k) feature matrix."""
    rows = [spectral_embedding(C, k, skip_trivial).flattened for C in matrices]
    return np.vstack(rows)
