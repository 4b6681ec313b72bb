"""Half-space physics via finite slabs over the surface Brillouin 2-torus.

The half-space truncation of a finite-range model (unilateral shift along
the surface normal) is approximated by a slab of ``depth`` layers with
vacuum on both sides.  After a partial Fourier transform the slab is a
block-banded Hermitian matrix for each surface momentum; its spectrum
consists of bulk bands (the union over the perpendicular momentum of the
bulk spectra) plus discrete in-gap states localized at the two surfaces.

The physical half-space has a single surface; the slab's second surface is
an artifact of finiteness.  All flow/arc outputs are therefore resolved by
surface side using localization weights on the outermost layers, with the
first layer block (index 0) called "top".

Orientation conventions match the Berry module: for normal axis ``a`` the
surface momentum is ``(theta_b, theta_c)`` with ``(b, c)`` the cyclic
successors of ``a``, so the spectral flow of a loop equals the slice Chern
number of the corresponding interposed 2-torus.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bloch
from .eig import eigh
from .errors import ModelError, NumericalError

__all__ = [
    "FermiArc",
    "SlabConfig",
    "SlabSpectrum",
    "SpectralFlowResult",
    "bulk_band_intervals",
    "essential_spectrum_intervals",
    "fermi_arc",
    "slab_hamiltonian",
    "spectral_flow",
    "surface_spectrum",
]

PARALLEL_AXES = {1: (2, 3), 2: (3, 1), 3: (1, 2)}
DEFAULT_EXCLUSION_RADIUS = 0.15


def thread_count() -> int:
    """Worker cap for grid scans; the WEYLSCOPE_THREADS env var overrides."""
    env = os.environ.get("WEYLSCOPE_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return min(4, os.cpu_count() or 1)


def _parallel_map(fn, items):
    workers = thread_count()
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SlabConfig:
    """Slab geometry: surface normal, layer count and weight window.

    ``depth`` must be at least ``2 * r_max + 2`` for the model it is used
    with, so the two surfaces decouple at the hopping level.  A state is
    attributed to a surface when more than half its mass sits on that
    surface's outermost ``surface_layers`` layers.
    """

    normal_axis: int
    depth: int
    surface_layers: int = 4

    def __post_init__(self):
        if self.normal_axis not in PARALLEL_AXES:
            raise ValueError(f"normal_axis must be 1, 2 or 3, got {self.normal_axis}")
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.surface_layers < 1:
            raise ValueError("surface_layers must be >= 1")

    @property
    def parallel_axes(self):
        """The two surface axes (cyclic successors of the normal axis)."""
        return PARALLEL_AXES[self.normal_axis]

    def embed(self, k_par, theta_perp):
        """Full quasimomenta from surface momenta and perpendicular angles.

        Broadcasts ``k_par`` (..., 2) against ``theta_perp`` (...,).
        """
        k_par = np.asarray(k_par, dtype=float)
        theta_perp = np.asarray(theta_perp, dtype=float)
        shape = np.broadcast_shapes(k_par.shape[:-1], theta_perp.shape)
        out = np.empty(shape + (3,))
        a, b = self.parallel_axes
        out[..., a - 1] = np.broadcast_to(k_par[..., 0], shape)
        out[..., b - 1] = np.broadcast_to(k_par[..., 1], shape)
        out[..., self.normal_axis - 1] = np.broadcast_to(theta_perp, shape)
        return out


@dataclass(frozen=True)
class SlabSpectrum:
    """In-window slab eigenvalues with per-state surface weights."""

    k_par: np.ndarray
    eigenvalues: np.ndarray
    top_weight: np.ndarray
    bottom_weight: np.ndarray


@dataclass(frozen=True)
class SpectralFlowResult:
    """Signed count of zero crossings along a closed surface-momentum loop.

    ``flow`` and ``crossings`` describe the reference (top) surface; the
    finite slab's opposite surface is reported separately and carries the
    opposite flow.  ``crossings`` entries are ``(loop_parameter, direction)``
    with direction +1 for an upward crossing, so ``flow`` equals the sum of
    the directions.
    """

    loop: np.ndarray
    flow: int
    crossings: tuple
    bottom_flow: int
    bottom_crossings: tuple


@dataclass(frozen=True)
class FermiArc:
    """Surface-momentum locus of near-zero surface-localized states.

    ``side`` is +1 for the top surface, -1 for the bottom one; every point
    passed the energy window and the >1/2 localization filter.
    """

    energy: float
    points: np.ndarray
    side: np.ndarray
    eigenvalues: np.ndarray
    weights: np.ndarray

    def side_points(self, side):
        mask = self.side == (1 if side == "top" else -1)
        return self.points[mask]


def _require_lattice_model(model):
    if not hasattr(model, "r_max") or not hasattr(model, "terms"):
        raise TypeError("slab construction needs a finite-range TightBindingModel")


def slab_hamiltonian(model, config: SlabConfig, k_par):
    """Block-banded slab matrix at surface momentum ``k_par``.

    Block ``(n, n')`` is the sum of amplitudes with perpendicular
    displacement ``n - n'`` times their parallel Bloch phases; layer 0 is
    the top surface.  Hermitian to round-off by construction.
    """
    _require_lattice_model(model)
    if config.depth < 2 * model.r_max + 2:
        raise ModelError(
            f"slab depth {config.depth} too small for hopping range {model.r_max};"
            f" need at least {2 * model.r_max + 2}"
        )
    k_par = np.asarray(k_par, dtype=float)
    ax = config.normal_axis - 1
    a, b = config.parallel_axes
    m, N = model.m, config.depth
    blocks: dict[int, np.ndarray] = {}
    for r, amp in model.terms.items():
        phase = np.exp(1j * (r[a - 1] * k_par[0] + r[b - 1] * k_par[1]))
        d = r[ax]
        blocks[d] = blocks.get(d, np.zeros((m, m), dtype=complex)) + amp * phase
    H = np.zeros((N * m, N * m), dtype=complex)
    for d, B in blocks.items():
        for n in range(max(0, d), min(N, N + d)):
            np_ = n - d
            H[n * m : (n + 1) * m, np_ * m : (np_ + 1) * m] += B
    return H


def bulk_band_intervals(model, config: SlabConfig, k_par, samples=128):
    """Per-band (min, max) of the bulk spectrum over the perpendicular momentum.

    Band functions are continuous in the perpendicular angle, so their
    sampled ranges are intervals; their union is the essential spectrum of
    the half-space operator at ``k_par``.
    """
    thetas = -np.pi + (np.arange(samples) + 0.5) * (2.0 * np.pi / samples)
    K = config.embed(np.asarray(k_par, dtype=float)[None, :], thetas[:, None])
    H = model.matrix_many(K.reshape(-1, 3))
    if model.m == 2:
        h0, h = bloch.pauli_fields(H)
        n = np.linalg.norm(h, axis=-1)
        vals = np.stack([h0 - n, h0 + n], axis=-1)
    else:
        vals = np.linalg.eigvalsh(0.5 * (H + np.conj(np.swapaxes(H, -1, -2))))
    return np.stack([vals.min(axis=0), vals.max(axis=0)], axis=-1)


def essential_spectrum_intervals(model, config: SlabConfig, k_par, samples=256, padding=0.0):
    """Bulk band intervals padded by ``padding`` on both sides."""
    iv = bulk_band_intervals(model, config, k_par, samples)
    return iv + np.array([-padding, padding])


def _window_clear_of_bulk(intervals, window):
    lo, hi = window
    return not np.any((intervals[:, 0] <= hi) & (intervals[:, 1] >= lo))


def surface_weights(vectors, m, depth, surface_layers):
    """Top/bottom mass of eigenvector columns over the outermost layers."""
    W = min(surface_layers, depth // 2)
    dens = (np.abs(vectors) ** 2).reshape(depth, m, -1).sum(axis=1)
    top = dens[:W].sum(axis=0)
    bottom = dens[depth - W :].sum(axis=0)
    return top, bottom


def surface_spectrum(model, config: SlabConfig, k_par, window) -> SlabSpectrum:
    """All slab eigenpairs inside ``window`` with their surface weights.

    ``window`` must lie inside the bulk gap at ``k_par``; otherwise
    ``NumericalError`` reports the offending bulk band edges.
    """
    k_par = bloch.reduce_angles(np.asarray(k_par, dtype=float))
    lo, hi = float(window[0]), float(window[1])
    intervals = bulk_band_intervals(model, config, k_par)
    if not _window_clear_of_bulk(intervals, (lo, hi)):
        bad = intervals[(intervals[:, 0] <= hi) & (intervals[:, 1] >= lo)]
        raise NumericalError(
            f"window ({lo}, {hi}) overlaps bulk bands {np.round(bad, 6).tolist()}"
        )
    dec = eigh(slab_hamiltonian(model, config, k_par))
    mask = (dec.eigenvalues >= lo) & (dec.eigenvalues <= hi)
    vecs = dec.eigenvectors[:, mask]
    top, bottom = surface_weights(vecs, model.m, config.depth, config.surface_layers)
    return SlabSpectrum(
        k_par=k_par,
        eigenvalues=dec.eigenvalues[mask].copy(),
        top_weight=top,
        bottom_weight=bottom,
    )


def _resample_loop(loop, steps):
    """Midpoint resampling of a closed surface-momentum polyline."""
    pts = np.asarray(loop, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("loop must be a sequence of surface momenta (n, 2)")
    if not bloch.angles_equal(pts[0], pts[-1], tol=1e-9):
        pts = np.vstack([pts, pts[0]])
    deltas = bloch.reduce_angles(np.diff(pts, axis=0))
    seg_len = np.linalg.norm(deltas, axis=1)
    total = float(seg_len.sum())
    if total == 0.0:
        raise ValueError("loop has zero length")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    targets = (np.arange(steps) + 0.5) / steps * total
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg_len) - 1)
    frac = (targets - cum[idx]) / np.where(seg_len[idx] > 0, seg_len[idx], 1.0)
    return bloch.reduce_angles(pts[idx] + frac[:, None] * deltas[idx])


def _projected_nodes(model, config, nodes):
    if nodes is None:
        from .nodes import find_nodes

        nodes = find_nodes(model)
    a, b = config.parallel_axes
    return [np.array([n.position[a - 1], n.position[b - 1]]) for n in nodes.nodes]


class _SideStates:
    """In-window slab states at one surface momentum, classified by side."""

    __slots__ = ("top", "bottom", "ambiguous")

    def __init__(self, top, bottom, ambiguous):
        self.top = top
        self.bottom = bottom
        self.ambiguous = ambiguous


def _side_states(model, config, k_par, width):
    H = slab_hamiltonian(model, config, k_par)
    if not np.any(np.abs(np.linalg.eigvalsh(H)) <= width):
        return _SideStates([], [], False)
    dec = eigh(H)
    mask = np.abs(dec.eigenvalues) <= width
    vals = dec.eigenvalues[mask]
    top_w, bot_w = surface_weights(
        dec.eigenvectors[:, mask], model.m, config.depth, config.surface_layers
    )
    top, bottom, ambiguous = [], [], False
    for lam, tw, bw in zip(vals, top_w, bot_w):
        if tw > 0.55:
            top.append(float(lam))
        elif bw > 0.55:
            bottom.append(float(lam))
        else:
            ambiguous = True
    return _SideStates(sorted(top), sorted(bottom), ambiguous)


def _segment_crossings(get_states, side, p0, p1, s0, s1, v0, v1, width, depth):
    """Zero crossings of one side's branch between two loop samples."""
    a, b = list(v0), list(v1)
    while len(a) > len(b):
        a.remove(max(a, key=abs))
    while len(b) > len(a):
        b.remove(max(b, key=abs))
    if not a:
        return []
    moved = max(abs(y - x) for x, y in zip(a, b))
    if moved > 0.5 * width:
        if depth >= 3:
            raise NumericalError(
                "branch-matching ambiguity persists after 3 refinements"
            )
        pm = bloch.reduce_angles(p0 + 0.5 * bloch.reduce_angles(p1 - p0))
        sm = 0.5 * (s0 + s1)
        states = get_states(pm)
        vm = states.top if side == "top" else states.bottom
        return _segment_crossings(
            get_states, side, p0, pm, s0, sm, a, vm, width, depth + 1
        ) + _segment_crossings(
            get_states, side, pm, p1, sm, s1, vm, b, width, depth + 1
        )
    events = []
    for x, y in zip(a, b):
        if x == 0.0 or y == 0.0 or (x < 0.0) == (y < 0.0):
            if x == 0.0 and y != 0.0:
                events.append((s0 % 1.0, 1 if y > 0 else -1))
            continue
        frac = abs(x) / (abs(x) + abs(y))
        events.append(((s0 + frac * (s1 - s0)) % 1.0, 1 if y > x else -1))
    return events


def spectral_flow(
    model,
    config: SlabConfig,
    loop,
    steps=200,
    *,
    nodes=None,
    exclusion_radius=DEFAULT_EXCLUSION_RADIUS,
) -> SpectralFlowResult:
    """Signed zero crossings of surface branches along a closed loop.

    The loop (any closed polyline of surface momenta) is resampled at
    ``steps`` midpoints; at every sample the in-gap slab states are
    classified by surface side, and each side's branch is followed by
    nearest-eigenvalue matching with bisection refinement whenever the
    movement between samples is ambiguous.  The result is invariant under
    re-parametrization, traversal-preserving refinement, and doubling of
    ``steps``; reversing the loop negates it.

    Preconditions: ``steps >= 100``; every loop point stays at least
    ``exclusion_radius`` away from the projected nodes (``nodes`` is
    computed by a default scan when not supplied).
    """
    if steps < 100:
        raise ValueError(f"steps must be >= 100, got {steps}")
    points = _resample_loop(loop, steps)
    projected = _projected_nodes(model, config, nodes)
    for q in projected:
        dmin = np.min(np.linalg.norm(bloch.reduce_angles(points - q), axis=1))
        if dmin < exclusion_radius:
            raise NumericalError(
                f"loop approaches projected node {np.round(q, 4)} within "
                f"{dmin:.3f} < exclusion radius {exclusion_radius}"
            )

    def zero_clearance(intervals):
        lo, hi = intervals[:, 0], intervals[:, 1]
        dist = np.where((lo <= 0.0) & (0.0 <= hi), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
        return float(np.min(dist))

    clearances = [
        zero_clearance(bulk_band_intervals(model, config, p, samples=64)) for p in points
    ]
    gap = min(clearances)
    if gap < 1e-3:
        raise NumericalError(
            f"bulk gap nearly closes along the loop (clearance {gap:.2e});"
            " move the loop away from projected nodes"
        )
    width = 0.75 * gap

    cache: dict[tuple, _SideStates] = {}

    def get_states(k_par):
        key = tuple(np.round(k_par, 12))
        if key not in cache:
            cache[key] = _side_states(model, config, k_par, width)
        return cache[key]

    samples = [get_states(p) for p in points]
    params = (np.arange(steps) + 0.5) / steps
    usable = [i for i, s in enumerate(samples) if not s.ambiguous]
    if len(usable) < 0.9 * steps:
        raise NumericalError(
            "too many samples with unclassifiable surface states;"
            " increase the slab depth"
        )

    results = {}
    for side in ("top", "bottom"):
        events = []
        for j in range(len(usable)):
            i0 = usable[j]
            i1 = usable[(j + 1) % len(usable)]
            s0 = params[i0]
            s1 = params[i1] if i1 > i0 else params[i1] + 1.0
            v0 = getattr(samples[i0], side)
            v1 = getattr(samples[i1], side)
            events.extend(
                _segment_crossings(
                    get_states, side, points[i0], points[i1], s0, s1, v0, v1, width, 0
                )
            )
        events.sort()
        results[side] = (sum(d for _, d in events), tuple(events))

    return SpectralFlowResult(
        loop=points,
        flow=results["top"][0],
        crossings=results["top"][1],
        bottom_flow=results["bottom"][0],
        bottom_crossings=results["bottom"][1],
    )


def fermi_arc(
    model,
    config: SlabConfig,
    grid=64,
    energy=0.0,
    arc_tolerance=0.05,
    *,
    bulk_samples=64,
) -> FermiArc:
    """Scan the surface zone for surface-localized states near ``energy``.

    Grid points are cell centers of a ``grid x grid`` partition.  A point
    contributes when the window ``energy +- arc_tolerance`` lies inside the
    local bulk gap, and each in-window state passes the >1/2 side
    localization filter.  An empty result is valid for gapped models.
    """
    centers = -np.pi + (np.arange(grid) + 0.5) * (2.0 * np.pi / grid)
    ka, kb = np.meshgrid(centers, centers, indexing="ij")
    kpars = np.stack([ka, kb], axis=-1).reshape(-1, 2)

    thetas = -np.pi + (np.arange(bulk_samples) + 0.5) * (2.0 * np.pi / bulk_samples)
    K = config.embed(kpars[:, None, :], thetas[None, :])
    H = model.matrix_many(K.reshape(-1, 3))
    if model.m == 2:
        h0, h = bloch.pauli_fields(H)
        n = np.linalg.norm(h, axis=-1)
        bands = np.stack([h0 - n, h0 + n], axis=-1)
    else:
        bands = np.linalg.eigvalsh(0.5 * (H + np.conj(np.swapaxes(H, -1, -2))))
    bands = bands.reshape(len(kpars), bulk_samples * model.m)
    lo, hi = energy - arc_tolerance, energy + arc_tolerance
    clear = ~np.any((bands >= lo) & (bands <= hi), axis=1)
    candidates = np.flatnonzero(clear)

    def probe(idx):
        k_par = kpars[idx]
        H = slab_hamiltonian(model, config, k_par)
        quick = np.linalg.eigvalsh(H)
        if not np.any((quick >= lo) & (quick <= hi)):
            return []
        dec = eigh(H)
        mask = (dec.eigenvalues >= lo) & (dec.eigenvalues <= hi)
        if not np.any(mask):
            return []
        top, bottom = surface_weights(
            dec.eigenvectors[:, mask], model.m, config.depth, config.surface_layers
        )
        found = []
        for lam, tw, bw in zip(dec.eigenvalues[mask], top, bottom):
            if tw > 0.5:
                found.append((k_par[0], k_par[1], 1, float(lam), float(tw)))
            elif bw > 0.5:
                found.append((k_par[0], k_par[1], -1, float(lam), float(bw)))
        return found

    rows = _parallel_map(probe, candidates)
    flat = [entry for row in rows for entry in row]
    if flat:
        arr = np.array(flat, dtype=float)
        pts, side, vals, w = arr[:, :2], arr[:, 2].astype(int), arr[:, 3], arr[:, 4]
    else:
        pts = np.zeros((0, 2))
        side = np.zeros(0, dtype=int)
        vals = np.zeros(0)
        w = np.zeros(0)
    return FermiArc(
        energy=float(energy), points=pts, side=side, eigenvalues=vals, weights=w
    )
