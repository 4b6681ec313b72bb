"""Locating Weyl points and computing their chiralities.

A Weyl point of a two-band model is an isolated zero of the traceless
field ``h(k)``; its chirality is the degree of ``h/|h|`` over a small
sphere, which for a non-degenerate zero equals ``sign det(dh)``.  The two
routes are implemented independently (``refine_node`` reports the Jacobian
sign, ``sphere_degree`` integrates the pulled-back area form) so they can
cross-check each other.  Summed over a complete scan the chiralities must
cancel; ``check_cancellation`` reports the total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bloch
from .errors import ConvergenceError, GapClosureError, NumericalError

__all__ = [
    "NodeSet",
    "WeylNode",
    "check_cancellation",
    "find_nodes",
    "refine_node",
    "scan_nodes",
    "sphere_degree",
]

DEFAULT_NODE_TOLERANCE = 1e-8
DEFAULT_DEGENERACY_THRESHOLD = 1e-6
DEFAULT_FD_STEP = 1e-5
DEFAULT_MERGE_RADIUS = 1e-4


@dataclass(frozen=True)
class WeylNode:
    """A refined band crossing: reduced position, chirality and diagnostics.

    ``residual`` is ``|h|`` at the position for two-band models (the
    spectral gap otherwise).  ``jacobian_det`` is NaN when no global
    h-field exists (more than two bands).
    """

    position: np.ndarray
    chirality: int
    nondegenerate: bool
    residual: float
    jacobian_det: float

    def __post_init__(self):
        object.__setattr__(self, "position", bloch.reduce_angles(self.position))
        self.position.setflags(write=False)


@dataclass(frozen=True)
class NodeSet:
    """Deduplicated nodes from one scan plus their total chirality."""

    nodes: tuple
    total_charge: int

    @staticmethod
    def from_nodes(nodes) -> "NodeSet":
        nodes = tuple(nodes)
        return NodeSet(nodes=nodes, total_charge=sum(n.chirality for n in nodes))


def _grid_centers(grid):
    return -np.pi + (np.arange(grid) + 0.5) * (2.0 * np.pi / grid)


def band_gap_many(model, ks, band_index=1):
    """Gap lambda_{band_index+1} - lambda_{band_index} on a batch of momenta.

    ``band_index`` counts bands from the bottom starting at 1.  Uses the
    closed form ``2|h|`` for two-band models.
    """
    ks = np.asarray(ks, dtype=float)
    H = model.matrix_many(ks)
    if model.m == 2:
        _, h = bloch.pauli_fields(H)
        return 2.0 * np.linalg.norm(h, axis=-1)
    vals = np.linalg.eigvalsh(H)
    return vals[..., band_index] - vals[..., band_index - 1]


def scan_nodes(model, band_index, grid, gap_threshold):
    """Return centers of all grid cells where the band gap is below threshold.

    The scan is complete for simple crossings when the grid spacing is
    below the node separation and the threshold exceeds the gap's maximum
    over a node-carrying cell (``gradient_bound`` times the half-diagonal
    is a safe choice).
    """
    if not 1 <= band_index < model.m:
        raise ValueError(f"band_index must be in [1, {model.m - 1}], got {band_index}")
    if grid < 8:
        raise ValueError(f"grid must be >= 8, got {grid}")
    axes = _grid_centers(grid)
    K = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), axis=-1).reshape(-1, 3)
    gaps = band_gap_many(model, K, band_index)
    return [K[i].copy() for i in np.flatnonzero(gaps < gap_threshold)]


def default_gap_threshold(model, grid):
    """Scan threshold guaranteeing no simple node escapes a ``grid``^3 scan."""
    half_diag = np.pi * np.sqrt(3.0) / grid
    return 2.0 * bloch.gradient_bound(model) * half_diag * 1.05 + 1e-12


def _h_of(model, k):
    return bloch.pauli_fields(model.matrix(k)[None, ...])[1][0]


_STENCIL = np.concatenate([np.zeros((1, 3)), np.eye(3), -np.eye(3)])


def _h_and_jacobian(model, k, step):
    """h(k) and its central-difference Jacobian from one batched evaluation."""
    _, h = bloch.pauli_fields(model.matrix_many(k + step * _STENCIL))
    J = (h[1:4] - h[4:7]).T / (2.0 * step)
    return h[0], J


def _jacobian(model, k, step):
    return _h_and_jacobian(model, k, step)[1]


def refine_node(
    model,
    band_index,
    k0,
    *,
    node_tolerance=DEFAULT_NODE_TOLERANCE,
    degeneracy_threshold=DEFAULT_DEGENERACY_THRESHOLD,
    fd_step=DEFAULT_FD_STEP,
    max_iter=50,
    cell_width=None,
) -> WeylNode:
    """Refine a candidate crossing to ``node_tolerance`` and classify it.

    Two-band models use damped Newton iteration on the h-field; larger
    models minimize the band gap directly.  The Jacobian of ``h`` comes
    from central differences with step ``fd_step``; a node is flagged
    non-degenerate when ``|det| > degeneracy_threshold`` and its chirality
    is then the Jacobian sign.  Degenerate nodes fall back to
    :func:`sphere_degree` for the chirality.

    Raises ``ConvergenceError`` when the iteration stalls, or when
    ``cell_width`` is given and the refined point escapes the scan cell by
    more than one cell width (probable degenerate or line node).
    """
    k = bloch.reduce_angles(np.asarray(k0, dtype=float))
    if model.m == 2:
        # Polish past node_tolerance down to the noise floor: positions of
        # degenerate zeros are only quadratically tied to the residual, and
        # the Jacobian-based degeneracy test needs the extra digits.
        best_k, best_res, stall = k, np.inf, 0
        for _ in range(max_iter):
            h, J = _h_and_jacobian(model, k, fd_step)
            residual = float(np.linalg.norm(h))
            if residual < best_res:
                best_k, best_res, stall = k, residual, 0
            else:
                stall += 1
            if best_res <= 1e-14 or stall >= 3:
                break
            step, *_ = np.linalg.lstsq(J, -h, rcond=None)
            norm = np.linalg.norm(step)
            if norm > 0.5:
                step *= 0.5 / norm
            k = bloch.reduce_angles(k + step)
        k, residual = best_k, best_res
        if residual > node_tolerance:
            raise ConvergenceError(
                f"node refinement did not reach residual {node_tolerance:.1e} in "
                f"{max_iter} iterations (at {residual:.3e})"
            )
    else:
        from scipy.optimize import minimize

        gap = lambda kk: float(band_gap_many(model, kk[None, :], band_index)[0])
        res = minimize(
            gap,
            k,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000},
        )
        k = bloch.reduce_angles(res.x)
        residual = gap(k)
        if residual > node_tolerance:
            raise ConvergenceError(
                f"gap minimization stalled at residual {residual:.3e} (> {node_tolerance:.1e})"
            )

    if cell_width is not None:
        escape = np.max(np.abs(bloch.torus_delta(k, k0)))
        if escape > 1.5 * cell_width:
            raise ConvergenceError(
                f"refined point escaped its scan cell by {escape:.3f} rad; "
                "probable degenerate or line node"
            )

    if model.m == 2:
        J = _jacobian(model, k, fd_step)
        det = float(np.linalg.det(J))
        nondegenerate = abs(det) > degeneracy_threshold
        if nondegenerate:
            chirality = 1 if det > 0 else -1
        else:
            chirality = _degenerate_chirality(model, band_index, k)
        return WeylNode(
            position=k,
            chirality=chirality,
            nondegenerate=nondegenerate,
            residual=residual,
            jacobian_det=det,
        )

    chirality = _flux_chirality(model, band_index, k)
    return WeylNode(
        position=k,
        chirality=chirality,
        nondegenerate=chirality in {-1, 1},
        residual=residual,
        jacobian_det=float("nan"),
    )


def _degenerate_chirality(model, band_index, k, radius=0.2):
    """Degree on a small sphere; stays valid where the Jacobian sign does not."""
    for r in (radius, 0.5 * radius, 0.1 * radius):
        try:
            return sphere_degree(model, band_index, k, r, mesh=32)
        except NumericalError:
            continue
    return 0


def _flux_chirality(model, band_index, k, radius=0.2):
    from . import berry

    for r in (radius, 0.5 * radius, 0.1 * radius):
        try:
            return berry.berry_flux_sphere(model, band_index, k, r, mesh=32)
        except NumericalError:
            continue
    return 0


def _sphere_points(center, radius, alphas, betas):
    """Points center + radius * n(alpha, beta) for angle grids (outer product)."""
    a = np.asarray(alphas)[:, None]
    b = np.asarray(betas)[None, :]
    n = np.stack(
        np.broadcast_arrays(np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a) + 0.0 * b),
        axis=-1,
    )
    return np.asarray(center, dtype=float) + radius * n


def sphere_degree(model, band_index, center, radius, mesh=24, *, full_output=False):
    """Degree of ``h/|h|`` over the sphere of ``radius`` around ``center``.

    Integrates the pulled-back unit-sphere area form over a
    latitude-longitude mesh with ``mesh``^2 cells (midpoint quadrature,
    central differences on the cell edges) and divides by 4*pi.  The
    result is rounded to the nearest integer; the quadrature must land
    within 0.05 of it or ``NumericalError`` is raised (mesh too coarse).
    Raises ``GapClosureError`` when the gap closes on the sphere, i.e. the
    radius reaches another node.

    For models with more than two bands there is no global h-field and the
    equivalent Berry-flux route is used instead.
    """
    if model.m != 2:
        from . import berry

        return berry.berry_flux_sphere(model, band_index, center, radius, mesh)
    if mesh < 16:
        raise ValueError(f"mesh must be >= 16, got {mesh}")
    center = np.asarray(center, dtype=float)
    M = int(mesh)
    d_alpha = np.pi / M
    d_beta = 2.0 * np.pi / M
    alpha_mid = (np.arange(M) + 0.5) * d_alpha
    beta_mid = -np.pi + (np.arange(M) + 0.5) * d_beta
    alpha_edge = np.arange(M + 1) * d_alpha
    beta_edge = -np.pi + np.arange(M + 1) * d_beta

    def unit_h(points):
        flat = points.reshape(-1, 3)
        _, h = bloch.pauli_fields(model.matrix_many(flat))
        norms = np.linalg.norm(h, axis=-1)
        if np.min(norms) <= 1e-12 * (1.0 + np.max(norms)):
            raise GapClosureError(
                "band gap closes on the sphere; radius reaches another node"
            )
        return (h / norms[:, None]).reshape(points.shape)

    n_mid = unit_h(_sphere_points(center, radius, alpha_mid, beta_mid))
    n_a = unit_h(_sphere_points(center, radius, alpha_edge, beta_mid))
    n_b = unit_h(_sphere_points(center, radius, alpha_mid, beta_edge))

    dn_da = (n_a[1:, :] - n_a[:-1, :]) / d_alpha
    dn_db = (n_b[:, 1:] - n_b[:, :-1]) / d_beta
    integrand = np.einsum("ijk,ijk->ij", n_mid, np.cross(dn_da, dn_db))
    raw = float(np.sum(integrand) * d_alpha * d_beta / (4.0 * np.pi))
    degree = int(np.rint(raw))
    if abs(raw - degree) >= 0.05:
        raise NumericalError(
            f"sphere degree integral {raw:.4f} is farther than 0.05 from an integer; "
            "mesh too coarse"
        )
    if full_output:
        return degree, raw
    return degree


def _subdivide_candidates(model, band_index, candidates, cell, levels=3):
    """Shrink scan cells around the gap minima by repeated bisection.

    Vectorized octree descent: each level splits every candidate cell into
    8 subcells and keeps those whose center gap is below the (halved)
    completeness threshold.  Cuts the number of Newton starts by orders of
    magnitude on models with broad small-gap regions while preserving the
    coverage guarantee of the coarse scan.
    """
    if not candidates:
        return candidates, cell
    bound = 2.0 * bloch.gradient_bound(model) * 1.05
    centers = np.asarray(candidates)
    for _ in range(levels):
        quarter = 0.25 * cell
        corners = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        sub = (centers[:, None, :] + quarter * corners[None, :, :]).reshape(-1, 3)
        cell *= 0.5
        threshold = bound * (np.sqrt(3.0) * 0.5 * cell) + 1e-12
        gaps = band_gap_many(model, sub, band_index)
        centers = bloch.reduce_angles(sub[gaps < threshold])
        if len(centers) == 0:
            return [], cell
    return [c for c in centers], cell


def check_cancellation(nodes: NodeSet) -> int:
    """Total chirality of a node set; zero for any complete scan of a valid model."""
    return int(sum(n.chirality for n in nodes.nodes))


def find_nodes(
    model,
    band_index=1,
    grid=32,
    gap_threshold=None,
    *,
    node_tolerance=DEFAULT_NODE_TOLERANCE,
    degeneracy_threshold=DEFAULT_DEGENERACY_THRESHOLD,
    merge_radius=DEFAULT_MERGE_RADIUS,
) -> NodeSet:
    """Two-stage node search: coarse grid scan plus Newton/descent refinement.

    Candidates that fail to converge are dropped (a nonzero total charge
    afterwards flags an incomplete scan).  Refined positions are merged
    when closer than ``2 * merge_radius``, keeping the smaller residual.
    """
    if gap_threshold is None:
        gap_threshold = default_gap_threshold(model, grid)
    candidates = scan_nodes(model, band_index, grid, gap_threshold)
    cell = 2.0 * np.pi / grid
    candidates, cell = _subdivide_candidates(model, band_index, candidates, cell)
    refined = []
    for k0 in candidates:
        try:
            refined.append(
                refine_node(
                    model,
                    band_index,
                    k0,
                    node_tolerance=node_tolerance,
                    degeneracy_threshold=degeneracy_threshold,
                    cell_width=cell,
                )
            )
        except ConvergenceError:
            continue
    refined.sort(key=lambda n: (n.residual, tuple(n.position)))
    kept = []
    for node in refined:
        if all(
            bloch.torus_distance(node.position, other.position) >= 2.0 * merge_radius
            for other in kept
        ):
            kept.append(node)
    kept.sort(key=lambda n: tuple(n.position))
    return NodeSet.from_nodes(kept)
