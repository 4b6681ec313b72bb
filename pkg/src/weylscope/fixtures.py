"""Analytic fixtures: small closed-form Bloch families used in tests and demos.

``FunctionModel`` adapts an explicit matrix-valued function of momentum to
the evaluation protocol (``.m`` plus ``.matrix_many``) that the node and
Berry-phase routines consume, so idealized continuum profiles (a linear
band crossing, a quadratic double crossing) can be fed through the same
machinery as lattice models.
"""

from __future__ import annotations

import numpy as np

from .bloch import SIGMA, SIGMA_3, TightBindingModel, build_model

__all__ = [
    "FunctionModel",
    "double_weyl",
    "linear_weyl",
    "random_two_band_model",
    "trivial_gapped",
    "two_pair_model",
]


class FunctionModel:
    """Bloch family given by an explicit batched map ``k -> H(k)``."""

    def __init__(self, m, matrix_many, name="function-model"):
        self.m = int(m)
        self._matrix_many = matrix_many
        self.name = name

    def matrix(self, k):
        return self._matrix_many(np.asarray(k, dtype=float)[None, :])[0]

    def matrix_many(self, ks):
        return self._matrix_many(np.asarray(ks, dtype=float))

    def __repr__(self):
        return f"FunctionModel({self.name}, m={self.m})"


def _h_to_matrices(h):
    return np.tensordot(h, SIGMA, axes=([-1], [0]))


def linear_weyl() -> FunctionModel:
    """H(k) = k . sigma: one simple crossing of chirality +1 at the origin.

    Over the unit sphere the lower band carries Chern number +1 and the
    upper band -1 (the classic two-level crossing / monopole pair).
    """
    return FunctionModel(2, lambda ks: _h_to_matrices(np.asarray(ks, dtype=float)), "linear-weyl")


def double_weyl() -> FunctionModel:
    """h = (k1^2 - k2^2, 2 k1 k2, k3): a double crossing of chirality +2."""

    def fn(ks):
        ks = np.asarray(ks, dtype=float)
        h = np.stack(
            [
                ks[..., 0] ** 2 - ks[..., 1] ** 2,
                2.0 * ks[..., 0] * ks[..., 1],
                ks[..., 2],
            ],
            axis=-1,
        )
        return _h_to_matrices(h)

    return FunctionModel(2, fn, "double-weyl")


def trivial_gapped() -> TightBindingModel:
    """Constant model H(k) = sigma_3: gapped everywhere, all invariants zero."""
    return build_model(2, [((0, 0, 0), SIGMA_3)])


def two_pair_model() -> TightBindingModel:
    """Two-band model with four simple crossings on the theta_3 axis.

    h = (sin t1, sin t2, 2 - cos t1 - cos t2 + cos 2 t3); crossings sit at
    (0, 0, +-pi/4) and (0, 0, +-3 pi/4) with alternating chirality, giving
    two disjoint nonzero stretches in the slice Chern profile along axis 3.
    """
    SIGMA_1, SIGMA_2 = SIGMA[0], SIGMA[1]
    half = -0.5j
    terms = [
        ((0, 0, 0), 2.0 * SIGMA_3),
        ((1, 0, 0), half * SIGMA_1 - 0.5 * SIGMA_3),
        ((0, 1, 0), half * SIGMA_2 - 0.5 * SIGMA_3),
        ((0, 0, 2), 0.5 * SIGMA_3),
    ]
    return build_model(2, terms)


def random_two_band_model(rng, scale=1.0) -> TightBindingModel:
    """Random Hermitian-completed range-1 two-band model.

    One term per displacement in {0, e1, e2, e3} with independent complex
    Gaussian entries; Hermitian completion happens in ``build_model``.
    """
    displacements = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    terms = []
    for r in displacements:
        amp = scale * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        terms.append((r, amp))
    return build_model(2, terms)
