"""Serialization for every artifact exchanged between modules and the CLI.

Formats
-------
ATTN binary (attention stacks):
    magic "ATTN" (4 bytes) | version u16 LE | L, H, Q, S as u32 LE |
    Q float32 LE query scores | L*H*Q*S float32 LE row-major weights.

JSON artifacts carry a "schema" tag and a "version"; units are explicit in
field names (``*_m`` meters, ``*_rad`` radians).  Writers are deterministic:
re-serializing equal values yields byte-identical files.
"""

from __future__ import annotations

import json
import struct
from typing import IO, Iterator

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    LayoutError,
    MagicError,
    PayloadError,
    SchemaError,
    VersionError,
)
from .layout import TokenLayout
from .types import AttentionStack, Box, Detection, Scene, UncertainDetection

ATTN_MAGIC = b"ATTN"
ATTN_VERSION = 1
_HEADER = struct.Struct("<4sHIIII")


# ---------------------------------------------------------------------------
# ATTN binary
# ---------------------------------------------------------------------------

def write_attention(path: str, stack: AttentionStack) -> None:
    with open(path, "wb") as fh:
        _write_attention_fh(fh, stack)


def _write_attention_fh(fh: IO[bytes], stack: AttentionStack) -> None:
    fh.write(
        _HEADER.pack(
            ATTN_MAGIC,
            ATTN_VERSION,
            stack.layers,
            stack.heads,
            stack.queries,
            stack.tokens,
        )
    )
    fh.write(stack.query_scores.astype("<f4").tobytes())
    fh.write(np.ascontiguousarray(stack.values, dtype="<f4").tobytes())


def read_attention_header(fh: IO[bytes]) -> tuple[int, int, int, int]:
    """Parse and validate the ATTN header; returns (L, H, Q, S)."""
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated ATTN header")
    magic, version, layers, heads, queries, tokens = _HEADER.unpack(raw)
    if magic != ATTN_MAGIC:
        raise MagicError(f"expected magic {ATTN_MAGIC!r}, found {magic!r}")
    if version != ATTN_VERSION:
        raise VersionError(f"unsupported ATTN version {version}")
    return layers, heads, queries, tokens


def read_attention(
    path: str, layout: TokenLayout | None = None, validate: bool = True
) -> AttentionStack:
    with open(path, "rb") as fh:
        layers, heads, queries, tokens = read_attention_header(fh)
        if layout is not None and tokens != layout.s_total:
            raise LayoutError(
                f"ATTN file has S={tokens} tokens but layout expects "
                f"{layout.s_total} (= {layout.s_pc} LiDAR + {layout.s_img} camera)"
            )
        body = fh.read()
    expected = 4 * (queries + layers * heads * queries * tokens)
    if len(body) != expected:
        raise DimensionError(
            f"ATTN payload holds {len(body)} bytes, header implies {expected}"
        )
    scores = np.frombuffer(body[: 4 * queries], dtype="<f4")
    values = np.frombuffer(body[4 * queries:], dtype="<f4").reshape(
        layers, heads, queries, tokens
    )
    if not np.isfinite(values).all() or not np.isfinite(scores).all():
        raise PayloadError("ATTN payload contains non-finite values")
    if (values < 0).any():
        raise PayloadError("ATTN payload contains negative attention weights")
    stack = AttentionStack(values, scores)
    if validate:
        stack.validate()
    return stack


def iter_attention_slices(
    path: str,
) -> tuple[tuple[int, int, int, int], np.ndarray, Iterator[tuple[int, int, np.ndarray]]]:
    """Stream an ATTN file one (layer, head) slice at a time.

    Returns ((L, H, Q, S), query_scores, slice_iterator); slices arrive in
    file order (layer-major) as (layer, head, (Q, S) float32).
    """
    with open(path, "rb") as fh:
        dims = read_attention_header(fh)
        layers, heads, queries, tokens = dims
        scores = np.frombuffer(fh.read(4 * queries), dtype="<f4")
        if scores.size != queries:
            raise DimensionError("ATTN file truncated in query scores")
        offset = fh.tell()

    def slices() -> Iterator[tuple[int, int, np.ndarray]]:
        slice_bytes = 4 * queries * tokens
        with open(path, "rb") as body:
            body.seek(offset)
            for layer in range(layers):
                for head in range(heads):
                    raw = body.read(slice_bytes)
                    if len(raw) != slice_bytes:
                        raise DimensionError(
                            f"ATTN file truncated at layer {layer}, head {head}"
                        )
                    block = np.frombuffer(raw, dtype="<f4").reshape(queries, tokens)
                    if not np.isfinite(block).all():
                        raise PayloadError(
                            f"non-finite attention at layer {layer}, head {head}"
                        )
                    yield layer, head, block

    return dims, scores, slices()


# ---------------------------------------------------------------------------
# JSON artifacts
# ---------------------------------------------------------------------------

def write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str, schema: str | None = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: top-level JSON value must be an object")
    if schema is not None:
        found = obj.get("schema")
        if found != schema:
            raise SchemaError(f"{path}: expected schema {schema!r}, found {found!r}")
    return obj


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise SchemaError(f"{path}: missing required field {key!r}")
    return obj[key]


def box_to_dict(box: Box) -> dict:
    return {
        "center_m": list(box.center),
        "size_m": list(box.size),
        "yaw_rad": box.yaw,
        "class_id": box.class_id,
    }


def box_from_dict(d: dict, path: str = "<box>") -> Box:
    return Box(
        center=tuple(_require(d, "center_m", path)),
        size=tuple(_require(d, "size_m", path)),
        yaw=float(_require(d, "yaw_rad", path)),
        class_id=int(d.get("class_id", 0)),
    )


def write_scene(path: str, scene: Scene) -> None:
    write_json(
        path,
        {
            "schema": "scene",
            "version": 1,
            "extent_m": scene.extent,
            "seed": scene.seed,
            "objects": [box_to_dict(b) for b in scene.objects],
        },
    )


def read_scene(path: str) -> Scene:
    d = read_json(path, schema="scene")
    try:
        return Scene(
            extent=float(_require(d, "extent_m", path)),
            objects=tuple(box_from_dict(o, path) for o in _require(d, "objects", path)),
            seed=int(_require(d, "seed", path)),
        )
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed scene ({exc})") from exc


def detection_to_dict(det: Detection) -> dict:
    d = box_to_dict(det)
    d["score"] = det.score
    if isinstance(det, UncertainDetection):
        d["u_x"] = det.u_x
        d["u_y"] = det.u_y
        d["u_z"] = det.u_z
        d["u_theta"] = det.u_theta
    return d


def detection_from_dict(d: dict, path: str = "<detection>") -> Detection:
    base = dict(
        center=tuple(_require(d, "center_m", path)),
        size=tuple(_require(d, "size_m", path)),
        yaw=float(_require(d, "yaw_rad", path)),
        class_id=int(d.get("class_id", 0)),
        score=float(_require(d, "score", path)),
    )
    if "u_x" in d:
        return UncertainDetection(
            **base,
            u_x=float(d["u_x"]),
            u_y=float(_require(d, "u_y", path)),
            u_z=float(_require(d, "u_z", path)),
            u_theta=float(_require(d, "u_theta", path)),
        )
    return Detection(**base)


def write_detections(path: str, detections: list[Detection]) -> None:
    write_json(
        path,
        {
            "schema": "detections",
            "version": 1,
            "detections": [detection_to_dict(det) for det in detections],
        },
    )


def read_detections(path: str) -> list[Detection]:
    d = read_json(path, schema="detections")
    try:
        return [detection_from_dict(r, path) for r in _require(d, "detections", path)]
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed detections ({exc})") from exc


def write_layout(path: str, layout: TokenLayout) -> None:
    write_json(path, layout.to_dict())


def read_layout(path: str) -> TokenLayout:
    d = read_json(path, schema="layout")
    try:
        return TokenLayout.from_dict(d)
    except KeyError as exc:
        raise SchemaError(f"{path}: missing layout field {exc}") from exc


# ---------------------------------------------------------------------------
# CSV and grid exports
# ---------------------------------------------------------------------------

def format_float(v: float) -> str:
    return f"{float(v):.12g}"


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                format_float(v) if isinstance(v, float) else str(v) for v in row
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path: str, expected_header: list[str]) -> list[list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty CSV")
    header = [h.strip() for h in lines[0].split(",")]
    if header != expected_header:
        raise SchemaError(
            f"{path}: expected header {','.join(expected_header)!r}, found {lines[0]!r}"
        )
    return [[c.strip() for c in ln.split(",")] for ln in lines[1:]]


def write_pgm(path: str, grid: np.ndarray) -> None:
    """Export a 2D grid as an 8-bit ASCII PGM image (max-normalized)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise SchemaError(f"PGM export needs a 2D grid, got shape {grid.shape}")
    peak = grid.max(initial=0.0)
    scaled = np.zeros_like(grid) if peak <= 0 else grid / peak
    pixels = np.round(scaled * 255).astype(int)
    lines = [f"P2", f"{grid.shape[1]} {grid.shape[0]}", "255"]
    for row in pixels:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
