"""Command-line front-end: model ingestion and deterministic CSV/JSON emission.

Commands: ``bands``, ``find-nodes``, ``chern-profile``, ``fermi-arc``,
``spectral-flow``, ``validate-model``.  Models come either from a JSON file

    {"bands": m, "terms": [{"r": [n1, n2, n3],
                            "matrix": [[[re, im], ...] row-major m x m]}]}

or from the builtin registry (``minimal`` / ``minimal:t=<val>`` with ``--t``).
Every output embeds a run manifest (command, model source, parameters with
defaults applied, version, wall time); numeric tables are formatted to 12
significant digits with '\\n' line endings, so identical invocations
reproduce byte-identical tables.  Exit codes: 0 ok, 2 usage, 3 invalid
model, 4 numerical failure.  The WEYLSCOPE_THREADS environment variable
caps internal parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, berry, bloch, nodes, surface
from .errors import ModelError, NumericalError

__all__ = ["main", "load_model", "model_to_json", "model_from_json"]


def fmt(x) -> str:
    """Format one number to 12 significant digits ('.' decimal, no negative zero)."""
    x = float(x)
    if x == 0.0:
        x = 0.0
    return f"{x:.12g}"


def _round12(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    return obj


def model_from_json(data) -> bloch.TightBindingModel:
    """Build a model from the parsed JSON document, naming offending fields."""
    if not isinstance(data, dict):
        raise ModelError("model document must be a JSON object")
    try:
        m = int(data["bands"])
    except (KeyError, TypeError, ValueError):
        raise ModelError("field 'bands' must be a positive integer") from None
    raw_terms = data.get("terms")
    if not isinstance(raw_terms, list):
        raise ModelError("field 'terms' must be a list")
    terms = []
    for i, entry in enumerate(raw_terms):
        where = f"terms[{i}]"
        if not isinstance(entry, dict) or "r" not in entry or "matrix" not in entry:
            raise ModelError(f"{where}: expected an object with 'r' and 'matrix'")
        r = entry["r"]
        if not (isinstance(r, list) and len(r) == 3):
            raise ModelError(f"{where}.r: expected 3 integers")
        rows = entry["matrix"]
        try:
            amp = np.array(
                [[complex(c[0], c[1]) for c in row] for row in rows], dtype=complex
            )
        except (TypeError, IndexError, ValueError):
            raise ModelError(
                f"{where}.matrix: expected {m}x{m} rows of [re, im] pairs"
            ) from None
        if amp.shape != (m, m):
            raise ModelError(f"{where}.matrix: shape {amp.shape} does not match bands={m}")
        terms.append((tuple(int(x) for x in r), amp))
    return bloch.build_model(m, terms)


def model_to_json(model) -> dict:
    """Serialize a model; full-precision floats so round-trips are exact."""
    terms = []
    for r in sorted(model.terms):
        amp = model.terms[r]
        terms.append(
            {
                "r": list(r),
                "matrix": [[[c.real, c.imag] for c in row] for row in amp],
            }
        )
    return {"bands": model.m, "terms": terms}


def load_model(source: str, t=None) -> tuple[bloch.TightBindingModel, str]:
    """Resolve ``--model`` (path or builtin) to a model and its source label."""
    if source.startswith("minimal"):
        tval = 0.0
        if ":" in source:
            tag = source.split(":", 1)[1]
            if not tag.startswith("t="):
                raise ModelError(f"unknown builtin parameter {tag!r}; use minimal:t=<val>")
            if t is not None:
                raise ModelError("give either minimal:t=<val> or --t, not both")
            try:
                tval = float(tag[2:])
            except ValueError:
                raise ModelError(f"bad builtin parameter value in {source!r}") from None
        elif t is not None:
            tval = float(t)
        return bloch.minimal_model(tval), f"minimal:t={fmt(tval)}"
    if t is not None:
        raise ModelError("--t applies to the builtin 'minimal' model only")
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read model file {source}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(
            f"{source}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    return model_from_json(data), source


def _manifest(command, model_source, params, elapsed):
    return {
        "command": command,
        "model": model_source,
        "parameters": _round12(params),
        "version": __version__,
        "wall_time_s": round(elapsed, 3),
    }


def _emit_csv(out, manifest, header, rows):
    lines = [f"# weylscope-manifest: {json.dumps(manifest, sort_keys=True)}"]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else fmt(cell) for cell in row))
    _write(out, "\n".join(lines) + "\n")


def _emit_json(out, manifest, result):
    doc = {"manifest": manifest, "result": _round12(result)}
    _write(out, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write(out, text):
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)


def _parse_path(spec, samples):
    try:
        waypoints = [
            np.array([float(x) for x in leg.split(",")]) for leg in spec.split(":")
        ]
    except ValueError:
        raise ValueError(f"bad --path {spec!r}; use k1,k2,k3:k1,k2,k3[...]") from None
    if len(waypoints) < 2 or any(w.shape != (3,) for w in waypoints):
        raise ValueError(f"bad --path {spec!r}; need >= 2 waypoints of 3 angles")
    pts = np.stack(waypoints)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        raise ValueError("--path has zero length")
    s = np.linspace(0.0, cum[-1], samples)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    ks = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    return s, ks


def _parse_loop(spec, steps):
    kind, _, rest = spec.partition(":")
    if kind == "circle":
        try:
            ca, cb, radius = (float(x) for x in rest.split(","))
        except ValueError:
            raise ValueError(f"bad --loop {spec!r}; use circle:ca,cb,radius") from None
        phis = np.linspace(0.0, 2.0 * np.pi, max(steps, 64) + 1)
        return np.stack([ca + radius * np.cos(phis), cb + radius * np.sin(phis)], axis=-1)
    if kind == "line":
        axis, _, angle = rest.partition("=")
        try:
            val = float(angle)
        except ValueError:
            raise ValueError(f"bad --loop {spec!r}; use line:a=<angle> or line:b=<angle>") from None
        sweep = np.linspace(-np.pi, np.pi, max(steps, 64) + 1)
        if axis == "a":
            return np.stack([np.full_like(sweep, val), sweep], axis=-1)
        if axis == "b":
            return np.stack([sweep, np.full_like(sweep, val)], axis=-1)
        raise ValueError(f"bad --loop {spec!r}; axis must be 'a' or 'b'")
    raise ValueError(f"bad --loop {spec!r}; supported forms: circle:..., line:...")


def _node_payload(node_set):
    return {
        "nodes": [
            {
                "position": list(n.position),
                "chirality": n.chirality,
                "nondegenerate": n.nondegenerate,
                "residual": n.residual,
                "jacobian_det": None if np.isnan(n.jacobian_det) else n.jacobian_det,
            }
            for n in node_set.nodes
        ],
        "total_charge": node_set.total_charge,
    }


def cmd_bands(args):
    model, source = load_model(args.model, args.t)
    start = time.perf_counter()
    s, ks = _parse_path(args.path, args.samples)
    vals = np.linalg.eigvalsh(model.matrix_many(ks))
    manifest = _manifest(
        "bands", source, {"path": args.path, "samples": args.samples}, time.perf_counter() - start
    )
    header = ["s", "k1", "k2", "k3"] + [f"lambda_{i + 1}" for i in range(model.m)]
    rows = [list(ks_row) for ks_row in np.column_stack([s, ks, vals])]
    _emit_csv(args.out, manifest, header, rows)
    return 0


def cmd_find_nodes(args):
    model, source = load_model(args.model, args.t)
    start = time.perf_counter()
    node_set = nodes.find_nodes(
        model, band_index=args.band_index, grid=args.grid, gap_threshold=args.gap_threshold
    )
    manifest = _manifest(
        "find-nodes",
        source,
        {
            "band_index": args.band_index,
            "grid": args.grid,
            "gap_threshold": args.gap_threshold,
        },
        time.perf_counter() - start,
    )
    _emit_json(args.out, manifest, _node_payload(node_set))
    return 0


def cmd_chern_profile(args):
    model, source = load_model(args.model, args.t)
    start = time.perf_counter()
    node_set = nodes.find_nodes(model, grid=args.node_grid)
    profile = berry.chern_profile(
        model, args.rank, args.axis, slices=args.slices, grid=args.grid, nodes=node_set
    )
    string = berry.dirac_string(profile, node_set)
    params = {
        "axis": args.axis,
        "slices": args.slices,
        "grid": args.grid,
        "rank": args.rank,
        "node_grid": args.node_grid,
    }
    manifest = _manifest("chern-profile", source, params, time.perf_counter() - start)
    string_doc = {
        "axis": string.axis,
        "segments": [
            {"start": s, "end": e, "multiplicity": mult} for s, e, mult in string.segments
        ],
        "node_projections": list(profile.node_projections),
    }
    if args.json:
        _emit_json(
            args.out,
            manifest,
            {
                "profile": {
                    "axis": profile.axis,
                    "slice_angles": list(profile.slice_angles),
                    "chern": list(profile.chern),
                },
                "dirac_string": string_doc,
                **_node_payload(node_set),
            },
        )
        return 0
    rows = [[a, c] for a, c in zip(profile.slice_angles, profile.chern)]
    _emit_csv(args.out, manifest, ["angle", "chern"], rows)
    sidecar = Path(args.out).with_suffix(".dirac.json") if args.out else None
    _emit_json(sidecar, manifest, string_doc)
    return 0


def cmd_fermi_arc(args):
    model, source = load_model(args.model, args.t)
    start = time.perf_counter()
    config = surface.SlabConfig(normal_axis=args.axis, depth=args.depth)
    arc = surface.fermi_arc(
        model, config, grid=args.grid, energy=args.energy, arc_tolerance=args.tolerance
    )
    manifest = _manifest(
        "fermi-arc",
        source,
        {
            "axis": args.axis,
            "depth": args.depth,
            "grid": args.grid,
            "energy": args.energy,
            "tolerance": args.tolerance,
        },
        time.perf_counter() - start,
    )
    header = ["theta_a", "theta_b", "side", "eigenvalue", "surface_weight"]
    rows = [
        [p[0], p[1], "top" if s > 0 else "bottom", lam, w]
        for p, s, lam, w in zip(arc.points, arc.side, arc.eigenvalues, arc.weights)
    ]
    _emit_csv(args.out, manifest, header, rows)
    return 0


def cmd_spectral_flow(args):
    model, source = load_model(args.model, args.t)
    start = time.perf_counter()
    config = surface.SlabConfig(normal_axis=args.axis, depth=args.depth)
    loop = _parse_loop(args.loop, args.steps)
    result = surface.spectral_flow(model, config, loop, steps=args.steps)
    manifest = _manifest(
        "spectral-flow",
        source,
        {"axis": args.axis, "depth": args.depth, "loop": args.loop, "steps": args.steps},
        time.perf_counter() - start,
    )
    _emit_json(
        args.out,
        manifest,
        {
            "flow": result.flow,
            "crossings": [{"parameter": p, "direction": d} for p, d in result.crossings],
            "bottom_flow": result.bottom_flow,
            "bottom_crossings": [
                {"parameter": p, "direction": d} for p, d in result.bottom_crossings
            ],
        },
    )
    return 0


def cmd_validate_model(args):
    model, source = load_model(args.model, args.t)
    start = time.perf_counter()
    manifest = _manifest("validate-model", source, {}, time.perf_counter() - start)
    if args.out:
        _write(args.out, json.dumps(model_to_json(model), indent=2) + "\n")
    _emit_json(
        None,
        manifest,
        {
            "ok": True,
            "bands": model.m,
            "term_count": len(model.terms),
            "r_max": model.r_max,
        },
    )
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="weylscope",
        description="Topological characterization of 3D tight-binding Weyl semimetals.",
    )
    parser.add_argument("--version", action="version", version=f"weylscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="model JSON path or builtin 'minimal[:t=<val>]'")
        p.add_argument("--t", type=float, default=None, help="parameter for the builtin model")
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("bands", help="eigenvalues along a k-space path (CSV)")
    common(p)
    p.add_argument("--path", required=True, help="waypoints k1,k2,k3:k1,k2,k3[:...]")
    p.add_argument("--samples", type=int, default=201)
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("find-nodes", help="locate band crossings and chiralities (JSON)")
    common(p)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--band-index", type=int, default=1, dest="band_index")
    p.add_argument("--gap-threshold", type=float, default=None, dest="gap_threshold")
    p.set_defaults(func=cmd_find_nodes)

    p = sub.add_parser("chern-profile", help="slice Chern profile and Dirac string")
    common(p)
    p.add_argument("--axis", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--slices", type=int, default=16)
    p.add_argument("--grid", type=int, default=24)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--node-grid", type=int, default=32, dest="node_grid")
    p.add_argument("--json", action="store_true", help="emit one JSON document instead of CSV+sidecar")
    p.set_defaults(func=cmd_chern_profile)

    p = sub.add_parser("fermi-arc", help="surface-localized states near an energy (CSV)")
    common(p)
    p.add_argument("--axis", type=int, choices=(1, 2, 3), default=1, help="surface normal axis")
    p.add_argument("--depth", type=int, default=40)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--energy", type=float, default=0.0)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.set_defaults(func=cmd_fermi_arc)

    p = sub.add_parser("spectral-flow", help="zero crossings along a surface loop (JSON)")
    common(p)
    p.add_argument("--axis", type=int, choices=(1, 2, 3), default=1, help="surface normal axis")
    p.add_argument("--depth", type=int, default=40)
    p.add_argument("--loop", required=True, help="circle:ca,cb,radius or line:a=<angle> / line:b=<angle>")
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(func=cmd_spectral_flow)

    p = sub.add_parser("validate-model", help="validate a model file; --out re-emits normalized JSON")
    common(p)
    p.set_defaults(func=cmd_validate_model)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"[model-invalid] {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"[numerical-failure] {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"[usage] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
