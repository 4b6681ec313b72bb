"""Gauge-invariant Berry-phase numerics.

Chern numbers are computed with the plaquette (link-variable) method: on a
closed mesh, the link between neighboring points is the determinant of the
overlap matrix of the occupied eigenframes, and the flux through a
plaquette is the argument of the product of its four links.  Each vector
enters every product once as a bra and once as a ket, so per-point phase
(gauge) changes cancel identically and the summed flux is an exact integer
multiple of 2*pi at any resolution.

Orientation conventions: a slice normal to axis ``a`` is oriented by the
remaining axes in cyclic order (axis 3 by (theta1, theta2)); spheres are
oriented by the outward normal.  With these choices the slice Chern number
jumps by the node chirality as the slice angle sweeps upward past a node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bloch
from .eig import eigh, eigh_batch
from .errors import GapClosureError, NumericalError
from .nodes import NodeSet, _sphere_points

__all__ = [
    "BandProjector",
    "ChernProfile",
    "DiracString",
    "band_projector",
    "berry_flux_sphere",
    "chern_number_slice",
    "chern_profile",
    "dirac_string",
    "plaquette_chern",
]

PHASE_CAP = 0.99 * np.pi
SLICE_AXES = {1: (2, 3), 2: (3, 1), 3: (1, 2)}


@dataclass(frozen=True)
class BandProjector:
    """Orthogonal projector onto the lowest ``rank`` eigenvectors at ``k``."""

    k: np.ndarray
    projector: np.ndarray
    rank: int


@dataclass(frozen=True)
class ChernProfile:
    """Per-slice Chern numbers along one torus axis.

    ``chern[i]`` is the integer on the 2-torus slice at ``slice_angles[i]``;
    ``node_projections`` are the angles along ``axis`` where nodes sit.  The
    profile is constant between consecutive projections and jumps by the
    summed chirality across each one.
    """

    axis: int
    slice_angles: tuple
    chern: tuple
    node_projections: tuple


@dataclass(frozen=True)
class DiracString:
    """Intervals along one axis where the slice Chern number is nonzero.

    ``segments`` are ``(start_angle, end_angle, multiplicity)`` triples with
    endpoints at node projections; ``start > end`` means the segment wraps
    through +-pi, and ``(-pi, pi, c)`` denotes a full circle.
    """

    axis: int
    segments: tuple


def _as_batch_eval(model):
    if not hasattr(model, "matrix_many") or not hasattr(model, "m"):
        raise TypeError(
            "expected a model with .m and .matrix_many (TightBindingModel or"
            " a function-backed fixture)"
        )
    return model.matrix_many, model.m


def band_projector(model, k, rank) -> BandProjector:
    """Projector onto the lowest ``rank`` bands at quasimomentum ``k``.

    Raises ``GapClosureError`` when the gap above band ``rank`` is below
    1e-10 (the point is at or near a node).
    """
    k = bloch.reduce_angles(np.asarray(k, dtype=float))
    dec = eigh(model.matrix(k))
    if rank < 1 or rank >= model.m:
        raise ValueError(f"rank must be in [1, {model.m - 1}], got {rank}")
    gap = dec.eigenvalues[rank] - dec.eigenvalues[rank - 1]
    if gap <= 1e-10:
        raise GapClosureError(f"gap above band {rank} is {gap:.3e} at k={k}")
    frame = dec.eigenvectors[:, :rank]
    proj = frame @ frame.conj().T
    proj.setflags(write=False)
    return BandProjector(k=k, projector=proj, rank=rank)


def _frames(model, points, rank, band_start, min_gap):
    """Occupied eigenframes on a batch of momenta, with isolation checks.

    Returns frames of shape ``points.shape[:-1] + (m, rank)``.
    """
    evaluate, m = _as_batch_eval(model)
    if not (0 <= band_start and 1 <= rank and band_start + rank <= m):
        raise ValueError(f"bands [{band_start}, {band_start + rank}) out of range")
    flat = points.reshape(-1, 3)
    vals, vecs = eigh_batch(evaluate(flat))
    top = band_start + rank
    gap_above = np.min(vals[:, top] - vals[:, top - 1]) if top < m else np.inf
    gap_below = np.min(vals[:, band_start] - vals[:, band_start - 1]) if band_start > 0 else np.inf
    gap = min(gap_above, gap_below)
    if gap <= min_gap:
        raise GapClosureError(
            f"band window [{band_start}, {top}) is not isolated on the mesh "
            f"(min gap {gap:.3e} <= {min_gap:.1e}); a node sits on or near it"
        )
    frames = vecs[:, :, band_start:top]
    return frames.reshape(points.shape[:-1] + (m, rank))


def plaquette_chern(frames, wrap_rows=True) -> int:
    """Chern number of a frame field on a closed 2D mesh of shape (na, nb, m, rank).

    Columns are orthonormal occupied states; both mesh directions are
    treated as periodic (rows may instead be pinched to points, e.g. at
    sphere poles, by passing identical frames along the first and last
    row).  The value is exactly invariant under any per-point phase or
    basis change of the frames.

    Raises ``NumericalError`` when a plaquette phase approaches +-pi (mesh
    too coarse: refine and retry) or when the total flux fails to be an
    integer multiple of 2*pi.
    """
    f = np.asarray(frames)
    if wrap_rows:
        rows, rows_up = f, np.roll(f, -1, axis=0)
    else:
        rows, rows_up = f[:-1], f[1:]
    # link_a[i, j]: (i, j) -> (i+1, j);  link_b[i, j]: (i, j) -> (i, j+1)
    link_a = np.linalg.det(np.einsum("ijmr,ijms->ijrs", rows.conj(), rows_up))
    link_b = np.linalg.det(np.einsum("ijmr,ijms->ijrs", f.conj(), np.roll(f, -1, axis=1)))
    if np.min(np.abs(link_a)) < 1e-12 or np.min(np.abs(link_b)) < 1e-12:
        raise NumericalError("vanishing link overlap; mesh too coarse, refine and retry")
    link_b_low = link_b if wrap_rows else link_b[:-1]
    link_b_up = np.roll(link_b, -1, axis=0) if wrap_rows else link_b[1:]
    plaq = (
        link_a
        * link_b_up
        * np.conj(np.roll(link_a, -1, axis=1))
        * np.conj(link_b_low)
    )
    phases = np.angle(plaq)
    if np.max(np.abs(phases)) >= PHASE_CAP:
        raise NumericalError(
            "plaquette phase near +-pi; mesh too coarse, refine and retry"
        )
    total = float(np.sum(phases)) / (2.0 * np.pi)
    chern = int(np.rint(total))
    if abs(total - chern) > 1e-6:
        raise NumericalError(f"plaquette flux sum {total:.6f} is not an integer")
    return -chern


def chern_number_slice(model, rank, axis, angle, grid=24, *, band_start=0) -> int:
    """Chern number of the lowest-``rank`` bundle on the slice ``k_axis = angle``.

    The slice 2-torus is sampled on a ``grid x grid`` mesh of cell centers
    and oriented by the two transverse axes in cyclic order.  Grid
    refinement never changes the returned integer (it is exact once every
    plaquette phase stays clear of +-pi).  Raises ``GapClosureError`` when
    a node lies on the slice.
    """
    if axis not in SLICE_AXES:
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    a_axis, b_axis = SLICE_AXES[axis]
    centers = -np.pi + (np.arange(grid) + 0.5) * (2.0 * np.pi / grid)
    ta, tb = np.meshgrid(centers, centers, indexing="ij")
    points = np.empty((grid, grid, 3))
    points[..., axis - 1] = bloch.reduce_angles(angle)
    points[..., a_axis - 1] = ta
    points[..., b_axis - 1] = tb
    frames = _frames(model, points, rank, band_start, min_gap=1e-6)
    return plaquette_chern(frames)


def berry_flux_sphere(model, rank, center, radius, mesh=24, *, band_start=0) -> int:
    """Chern number of the ``rank`` lowest bands over a small sphere.

    The sphere around ``center`` is meshed in latitude/longitude and
    oriented by the outward normal; when it encloses exactly one node this
    integer is that node's local index (for ``band_start = 0``).  Raises
    ``GapClosureError`` on gap closure anywhere on the mesh.
    """
    if mesh < 8:
        raise ValueError(f"mesh must be >= 8, got {mesh}")
    M = int(mesh)
    alphas = np.arange(M + 1) * (np.pi / M)
    betas = -np.pi + np.arange(M) * (2.0 * np.pi / M)
    points = _sphere_points(np.asarray(center, dtype=float), radius, alphas, betas)
    # Pin each pole row to a single evaluation point so its links are exact 1s.
    points[0, :] = points[0, 0]
    points[M, :] = points[M, 0]
    frames = _frames(model, points, rank, band_start, min_gap=1e-10)
    frames[0, :] = frames[0, 0]
    frames[M, :] = frames[M, 0]
    return plaquette_chern(frames, wrap_rows=False)


def _cluster_angles(angles, tol=1e-6):
    """Sorted distinct reduced angles, merging anything within ``tol`` (circularly)."""
    if len(angles) == 0:
        return []
    red = sorted(float(a) for a in bloch.reduce_angles(np.asarray(angles, dtype=float)))
    clusters = [[red[0]]]
    for a in red[1:]:
        if a - clusters[-1][-1] <= tol:
            clusters[-1].append(a)
        else:
            clusters.append([a])
    reps = [float(np.mean(c)) for c in clusters]
    if len(reps) > 1 and (reps[0] + 2.0 * np.pi) - reps[-1] <= tol:
        merged = float(np.mean([reps[-1], reps[0] + 2.0 * np.pi]))
        reps = [float(bloch.reduce_angles(merged))] + reps[1:-1]
        reps.sort()
    return reps


def _circular_gap(angle, targets):
    if not targets:
        return np.inf
    deltas = np.abs(bloch.reduce_angles(np.asarray(targets) - angle))
    return float(np.min(deltas))


def chern_profile(model, rank, axis, slices=16, grid=24, nodes: NodeSet | None = None) -> ChernProfile:
    """Slice Chern numbers along ``axis`` at midpoint angles avoiding node projections.

    ``nodes`` must come from a complete scan; its chiralities are used to
    verify the profile before it is returned: the value is constant between
    consecutive node projections and jumps by the summed chirality across
    each one.  Slice angles default to midpoints of a uniform partition,
    nudged away from projections by half a spacing when needed.
    """
    if nodes is None:
        raise ValueError("chern_profile requires the model's NodeSet")
    projections = _cluster_angles([n.position[axis - 1] for n in nodes.nodes])
    spacing = 2.0 * np.pi / slices
    half = 0.5 * spacing
    angles = []
    for j in range(slices):
        a = -np.pi + (j + 0.5) * spacing
        gap = _circular_gap(a, projections)
        if gap < half - 1e-9:
            nearest = min(projections, key=lambda p: abs(float(bloch.reduce_angles(p - a))))
            direction = -np.sign(float(bloch.reduce_angles(nearest - a))) or 1.0
            a = float(bloch.reduce_angles(a + direction * half))
            if _circular_gap(a, projections) < half - 1e-9:
                raise NumericalError(
                    f"node projections too dense along axis {axis} for {slices} slices"
                )
        angles.append(float(a))
    angles.sort()

    cherns = []
    for a in angles:
        try:
            cherns.append(chern_number_slice(model, rank, axis, a, grid))
        except NumericalError:
            cherns.append(chern_number_slice(model, rank, axis, a, 2 * grid))

    _verify_profile(axis, angles, cherns, projections, nodes)
    return ChernProfile(
        axis=axis,
        slice_angles=tuple(angles),
        chern=tuple(cherns),
        node_projections=tuple(projections),
    )


def _interval_values(angles, cherns, projections):
    """Chern value per open interval between consecutive projections (cyclic)."""
    if not projections:
        if len(set(cherns)) != 1:
            raise NumericalError("profile varies although no node projects onto the axis")
        return [cherns[0]]
    values = []
    nproj = len(projections)
    for i in range(nproj):
        lo = projections[i]
        hi = projections[(i + 1) % nproj]
        members = [
            c
            for a, c in zip(angles, cherns)
            if _in_cyclic_interval(a, lo, hi)
        ]
        if not members:
            raise NumericalError(
                f"no slice falls between projections {lo:.4f} and {hi:.4f};"
                " increase the slice count"
            )
        if len(set(members)) != 1:
            raise NumericalError(
                f"slice Chern number is not constant between projections"
                f" {lo:.4f} and {hi:.4f}: {sorted(set(members))}"
            )
        values.append(members[0])
    return values


def _in_cyclic_interval(a, lo, hi):
    """True when angle ``a`` lies in the cyclic open interval (lo, hi)."""
    width = float(np.mod(hi - lo, 2.0 * np.pi))
    if width == 0.0:
        width = 2.0 * np.pi
    return 0.0 < float(np.mod(a - lo, 2.0 * np.pi)) < width


def _verify_profile(axis, angles, cherns, projections, nodes):
    values = _interval_values(angles, cherns, projections)
    for i, p in enumerate(projections):
        left = values[i - 1]
        right = values[i]
        jump = right - left
        charge = sum(
            n.chirality
            for n in nodes.nodes
            if abs(float(bloch.reduce_angles(n.position[axis - 1] - p))) <= 1e-6
        )
        if jump != charge:
            raise NumericalError(
                f"profile jump {jump} at angle {p:.4f} does not match the summed"
                f" chirality {charge}; numerical failure upstream"
            )


def dirac_string(profile: ChernProfile, nodes: NodeSet) -> DiracString:
    """Extract the Dirac-string segments dual to a slice Chern profile.

    Segments are the maximal runs of constant nonzero slice Chern number,
    anchored at node projections; the multiplicity of a segment is that
    Chern value.  The jump consistency against ``nodes`` is re-checked and
    an inconsistent profile raises ``NumericalError``.
    """
    projections = list(profile.node_projections)
    _verify_profile(profile.axis, profile.slice_angles, profile.chern, projections, nodes)
    values = _interval_values(list(profile.slice_angles), list(profile.chern), projections)
    if not projections:
        if values[0] == 0:
            return DiracString(axis=profile.axis, segments=())
        return DiracString(axis=profile.axis, segments=((-np.pi, np.pi, values[0]),))
    if all(v == values[0] for v in values):
        if values[0] == 0:
            return DiracString(axis=profile.axis, segments=())
        return DiracString(axis=profile.axis, segments=((-np.pi, np.pi, values[0]),))

    # Rotate so that interval 0 starts a run boundary, then merge equal runs.
    nproj = len(projections)
    start = next(i for i in range(nproj) if values[i] != values[i - 1])
    segments = []
    i = 0
    while i < nproj:
        j = (start + i) % nproj
        v = values[j]
        run = 1
        while run < nproj and values[(start + i + run) % nproj] == v:
            run += 1
        if v != 0:
            lo = projections[j]
            hi = projections[(j + run) % nproj]
            segments.append((float(lo), float(hi), int(v)))
        i += run
    segments.sort()
    return DiracString(axis=profile.axis, segments=tuple(segments))
