"""Dense Hermitian eigensolvers sized for this package.

Three entry points: a closed-form 2x2 solver (``eigh2``), a general dense
solver (``eigh``, a checked LAPACK wrapper), and a windowed variant
(``eigh_partial``) for in-gap states of slab matrices.  Every result
satisfies the same contract: ascending eigenvalues, orthonormal
eigenvector columns, and residuals ``|H v - lambda v| <= 1e-9 (1 + |H|)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

__all__ = [
    "SpectralDecomposition",
    "eigh",
    "eigh2",
    "eigh_batch",
    "eigh_partial",
]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues in ascending order; column i of ``eigenvectors`` pairs with eigenvalue i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)


def _check_hermitian(H, tol, who):
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"{who}: expected a square matrix, got shape {H.shape}")
    scale = 1.0 + float(np.max(np.abs(H))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T)) > tol * scale:
        raise ValueError(f"{who}: matrix is not Hermitian within tolerance {tol}")
    return H


def eigh2(H2) -> SpectralDecomposition:
    """Closed-form spectral decomposition of a 2x2 Hermitian matrix.

    Eigenvalues are ``h0 -+ |h|`` of the traceless decomposition.  The
    eigenvectors use the spinor formula for the spin operator along
    ``h/|h|``, evaluated on whichever branch keeps the denominator large
    (stable at both poles).  For ``|h| = 0`` the standard basis is
    returned.
    """
    H2 = _check_hermitian(H2, 1e-10, "eigh2")
    if H2.shape != (2, 2):
        raise ValueError(f"eigh2: expected a 2x2 matrix, got {H2.shape}")
    h0 = 0.5 * (H2[0, 0].real + H2[1, 1].real)
    h1 = H2[1, 0].real
    h2 = H2[1, 0].imag
    h3 = 0.5 * (H2[0, 0].real - H2[1, 1].real)
    n = float(np.sqrt(h1 * h1 + h2 * h2 + h3 * h3))
    vals = np.array([h0 - n, h0 + n])
    if n == 0.0:
        return SpectralDecomposition(vals, np.eye(2, dtype=complex))
    if h3 >= 0.0:
        up = np.array([n + h3, h1 + 1j * h2]) / np.sqrt(2.0 * n * (n + h3))
    else:
        up = np.array([h1 - 1j * h2, n - h3]) / np.sqrt(2.0 * n * (n - h3))
    down = np.array([-np.conj(up[1]), np.conj(up[0])])
    return SpectralDecomposition(vals, np.stack([down, up], axis=1))


def eigh(H, tol=1e-10) -> SpectralDecomposition:
    """Spectral decomposition of an n x n Hermitian matrix.

    Deterministic for fixed input (fixed LAPACK path, no randomized
    pivoting).  Raises ``ConvergenceError`` if the backend fails to
    converge, reporting the matrix size and remaining off-diagonal norm.
    """
    H = _check_hermitian(H, tol, "eigh")
    Hs = 0.5 * (H + H.conj().T)
    try:
        vals, vecs = np.linalg.eigh(Hs)
    except np.linalg.LinAlgError as exc:
        off = float(np.linalg.norm(Hs - np.diag(np.diag(Hs))))
        raise ConvergenceError(
            f"eigh failed to converge on a {H.shape[0]}x{H.shape[1]} matrix "
            f"(off-diagonal norm {off:.3e})"
        ) from exc
    return SpectralDecomposition(vals, vecs)


def eigh_batch(H_batch):
    """Eigenvalues and eigenvectors for a stack of Hermitian matrices.

    Thin vectorized wrapper used by grid scans; same ordering contract as
    :func:`eigh`.  Returns ``(values, vectors)`` arrays.
    """
    H = np.asarray(H_batch, dtype=complex)
    Hs = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    return np.linalg.eigh(Hs)


def eigh_partial(H, window, max_count=None) -> SpectralDecomposition:
    """Eigenpairs with eigenvalue inside the closed interval ``window``.

    Baseline implementation: full decomposition followed by filtering,
    which is ample for the banded slab matrices this package builds (a few
    hundred rows).  Raises ``ValueError`` for an empty window and
    ``ConvergenceError`` via :func:`eigh`; raises ``ValueError`` when more
    than ``max_count`` eigenvalues fall inside the window.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError(f"eigh_partial: empty window ({lo}, {hi})")
    full = eigh(H)
    mask = (full.eigenvalues >= lo) & (full.eigenvalues <= hi)
    count = int(np.count_nonzero(mask))
    if max_count is not None and count > max_count:
        raise ValueError(
            f"eigh_partial: {count} eigenvalues in window, more than max_count={max_count}"
        )
    return SpectralDecomposition(
        full.eigenvalues[mask].copy(), full.eigenvectors[:, mask].copy()
    )
