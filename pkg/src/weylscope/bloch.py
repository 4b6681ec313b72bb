"""Finite-range tight-binding models and their Bloch matrices on the 3-torus.

A model is a finite set of hopping terms: an integer lattice displacement
``r`` together with an ``m x m`` complex amplitude matrix.  Its Bloch matrix
at quasimomentum ``theta`` is the trigonometric polynomial

    H(theta) = sum_r A_r exp(i r . theta),

which is Hermitian for every ``theta`` once the terms satisfy
``A_{-r} = A_r^dagger``.  ``build_model`` enforces that relation by
symmetrization, so input term lists only need one member of each ``+-r``
pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import ModelError

__all__ = [
    "SIGMA",
    "SIGMA_0",
    "SIGMA_1",
    "SIGMA_2",
    "SIGMA_3",
    "HoppingTerm",
    "PauliDecomposition",
    "TightBindingModel",
    "angles_equal",
    "bloch_matrix",
    "build_model",
    "gradient_bound",
    "minimal_model",
    "pauli_decompose",
    "pauli_fields",
    "reduce_angles",
    "torus_delta",
    "torus_distance",
]

TWO_PI = 2.0 * np.pi

# Pauli basis of Herm(2), ordered so that -i*s1*s2*s3 = 1.  This ordering
# fixes the fibre orientation that every chirality and Chern sign in the
# package refers back to.
SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_1 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_2 = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA = np.stack([SIGMA_1, SIGMA_2, SIGMA_3])
for _s in (SIGMA_0, SIGMA_1, SIGMA_2, SIGMA_3, SIGMA):
    _s.setflags(write=False)


def reduce_angles(theta):
    """Reduce angles to the canonical interval [-pi, pi)."""
    theta = np.asarray(theta, dtype=float)
    return (theta + np.pi) % TWO_PI - np.pi


def torus_delta(a, b):
    """Minimal-image difference a - b, componentwise in [-pi, pi)."""
    return reduce_angles(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def torus_distance(a, b):
    """Euclidean distance between two angle tuples on the torus."""
    return float(np.linalg.norm(torus_delta(a, b)))


def angles_equal(a, b, tol=1e-12):
    """True when two angle tuples agree modulo 2*pi within ``tol``."""
    return bool(np.max(np.abs(torus_delta(a, b))) <= tol)


class HoppingTerm(NamedTuple):
    """One hopping term: integer displacement and complex amplitude matrix."""

    displacement: tuple
    amplitude: np.ndarray


@dataclass(frozen=True)
class PauliDecomposition:
    """Expansion of a 2x2 Hermitian matrix as h0*1 + h . sigma."""

    h0: float
    h: np.ndarray

    def matrix(self):
        """Reconstruct the 2x2 Hermitian matrix."""
        return self.h0 * SIGMA_0 + np.tensordot(self.h, SIGMA, axes=1)


def _as_displacement(r):
    arr = np.asarray(r)
    if arr.shape != (3,):
        raise ModelError(f"displacement must have 3 components, got shape {arr.shape}")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ModelError(f"displacement must be integer, got {r!r}")
    return tuple(int(x) for x in arr)


class TightBindingModel:
    """Immutable finite-range hopping model with Hermitian Bloch matrices.

    Instances are created through :func:`build_model`, which symmetrizes the
    term list.  Evaluation is a pure function of the quasimomentum and is
    safe to call from any number of workers.
    """

    def __init__(self, m, terms):
        self.m = int(m)
        items = sorted(terms.items())
        self._terms = {}
        for r, amp in items:
            a = np.array(amp, dtype=complex)
            a.setflags(write=False)
            self._terms[r] = a
        disp = np.array([r for r, _ in items], dtype=float)
        self._displacements = disp if len(items) else np.zeros((0, 3))
        self._amplitudes = (
            np.stack([self._terms[r] for r, _ in items])
            if items
            else np.zeros((0, self.m, self.m), dtype=complex)
        )
        self.r_max = int(np.max(np.abs(self._displacements))) if items else 0

    @property
    def terms(self) -> Mapping:
        """Read-only map displacement -> amplitude (Hermitian-complete)."""
        return MappingProxyType(self._terms)

    def matrix(self, k):
        """Bloch matrix at one quasimomentum (angles, shape (3,))."""
        k = np.asarray(k, dtype=float)
        phases = np.exp(1j * (self._displacements @ k))
        return np.tensordot(phases, self._amplitudes, axes=1)

    def matrix_many(self, ks):
        """Bloch matrices at a batch of quasimomenta, shape (..., 3) -> (..., m, m)."""
        ks = np.asarray(ks, dtype=float)
        phases = np.exp(1j * (ks @ self._displacements.T))
        return np.tensordot(phases, self._amplitudes, axes=([-1], [0]))

    def __eq__(self, other):
        if not isinstance(other, TightBindingModel):
            return NotImplemented
        if self.m != other.m or set(self._terms) != set(other._terms):
            return False
        return all(np.array_equal(self._terms[r], other._terms[r]) for r in self._terms)

    def __hash__(self):
        return hash((self.m, tuple(self._terms)))

    def __repr__(self):
        return f"TightBindingModel(m={self.m}, terms={len(self._terms)}, r_max={self.r_max})"


def build_model(m, terms: Iterable) -> TightBindingModel:
    """Assemble a validated, Hermitian-complete model from hopping terms.

    Parameters
    ----------
    m : int
        Number of bands (matrix size of every amplitude).
    terms : iterable
        ``(displacement, amplitude)`` pairs (or :class:`HoppingTerm`).
        Duplicated displacements are summed.  For each pair ``+-r`` the
        stored amplitude at ``r`` is ``(A_r + A_{-r}^dagger)/2`` and its
        conjugate transpose sits at ``-r``; a one-sided input term is
        mirrored unchanged, so files only need one member of each pair.

    Raises
    ------
    ModelError
        On ``m < 1``, amplitude shape mismatch, or non-finite entries.
    """
    m = int(m)
    if m < 1:
        raise ModelError(f"band count must be >= 1, got {m}")
    acc: dict[tuple, np.ndarray] = {}
    for term in terms:
        r, amp = term
        r = _as_displacement(r)
        a = np.asarray(amp, dtype=complex)
        if a.shape != (m, m):
            raise ModelError(
                f"amplitude at displacement {r} has shape {a.shape}, expected {(m, m)}"
            )
        if not (np.all(np.isfinite(a.real)) and np.all(np.isfinite(a.imag))):
            raise ModelError(f"amplitude at displacement {r} has non-finite entries")
        acc[r] = acc[r] + a if r in acc else a.copy()

    out: dict[tuple, np.ndarray] = {}
    for r, a in acc.items():
        nr = tuple(-x for x in r)
        if r == nr:
            out[r] = 0.5 * (a + a.conj().T)
        elif nr in acc:
            if nr in out:
                continue
            sym = 0.5 * (a + acc[nr].conj().T)
            out[r] = sym
            out[nr] = sym.conj().T
        else:
            out[r] = a
            out[nr] = a.conj().T
    return TightBindingModel(m, out)


def bloch_matrix(model, k):
    """Bloch matrix of ``model`` at quasimomentum ``k`` (angles)."""
    return model.matrix(k)


def pauli_decompose(H2, tol=1e-10) -> PauliDecomposition:
    """Decompose a 2x2 Hermitian matrix as h0*1 + h . sigma.

    ``h0`` is half the trace and ``h_i = tr(sigma_i H)/2``; the
    reconstruction is exact to round-off.  Raises ``ValueError`` when the
    input deviates from Hermiticity by more than ``tol`` (relative to its
    magnitude).
    """
    H2 = np.asarray(H2, dtype=complex)
    if H2.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {H2.shape}")
    scale = 1.0 + float(np.max(np.abs(H2)))
    if np.max(np.abs(H2 - H2.conj().T)) > tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    h0 = 0.5 * (H2[0, 0].real + H2[1, 1].real)
    h = np.array(
        [H2[1, 0].real, H2[1, 0].imag, 0.5 * (H2[0, 0].real - H2[1, 1].real)]
    )
    return PauliDecomposition(h0=float(h0), h=h)


def pauli_fields(H_batch):
    """Vectorized (h0, h) extraction for a batch of 2x2 Hermitian matrices.

    Returns ``(h0, h)`` with shapes ``(...,)`` and ``(..., 3)``.
    """
    H = np.asarray(H_batch)
    h0 = 0.5 * (H[..., 0, 0].real + H[..., 1, 1].real)
    h = np.stack(
        [
            H[..., 1, 0].real,
            H[..., 1, 0].imag,
            0.5 * (H[..., 0, 0].real - H[..., 1, 1].real),
        ],
        axis=-1,
    )
    return h0, h


def minimal_model(t) -> TightBindingModel:
    """Two-band model with h = (sin t1, sin t2, 2 + t - sum_i cos t_i).

    For ``|t| < 1`` it carries a single pair of simple band crossings at
    ``(0, 0, +-arccos t)`` with opposite chirality; the pair is created at
    ``t = -1`` (at ``(0, 0, pi)``) and annihilated at ``t = 1`` (at the
    origin).  The traceful part vanishes identically and all hoppings have
    range 1.
    """
    t = float(t)
    half = -0.5j  # sin(theta) = (e^{i t} - e^{-i t}) / 2i
    terms = [
        ((0, 0, 0), (2.0 + t) * SIGMA_3),
        ((1, 0, 0), half * SIGMA_1 - 0.5 * SIGMA_3),
        ((0, 1, 0), half * SIGMA_2 - 0.5 * SIGMA_3),
        ((0, 0, 1), -0.5 * SIGMA_3),
    ]
    return build_model(2, terms)


def gradient_bound(model) -> float:
    """Upper bound on |grad lambda_i(k)| for every band of ``model``.

    Uses ``|d_j H| <= sum_r |r_j| * |A_r|_2`` together with first-order
    eigenvalue perturbation; handy for choosing scan thresholds.
    """
    if model._displacements.size == 0:
        return 0.0
    specnorms = np.array([np.linalg.norm(a, 2) for a in model._amplitudes])
    per_axis = np.abs(model._displacements).T @ specnorms
    return float(np.linalg.norm(per_axis))
