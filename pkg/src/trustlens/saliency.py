"""Attention-derived saliency: query filtering, layer/head fusion, modality
views, and per-sensor contribution.

Fusion reductions accumulate in float64 over per-element *sorted* slice
values, which makes the mean fusions bitwise invariant under layer/head
permutations.  The streaming reducer (for stacks too large to materialize)
instead accumulates slices in arrival order with a float32 accumulator and
agrees with the in-memory path to ~1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptySelectionError, LayoutError, ZeroMassError
from .layout import TokenLayout
from .types import AttentionStack, SelectionConfig

FUSION_METHODS = ("mean", "max", "last_layer")


def select_queries(stack: AttentionStack, cfg: SelectionConfig) -> AttentionStack:
    """Keep the top-K queries by score, then drop those below tau.

    Ties at the K-th score break toward the lower query index; surviving
    queries keep their original relative order.  The result may hold zero
    queries, which is a valid (empty) selection.
    """
    k = min(cfg.top_k, stack.queries)
    scores = stack.query_scores.astype(np.float64)
    by_score = np.argsort(-scores, kind="stable")  # stable: ties -> lower index
    top = np.sort(by_score[:k])
    keep = top[scores[top] >= cfg.tau]
    return AttentionStack(stack.values[:, :, keep, :], stack.query_scores[keep])


@dataclass
class SaliencyMap:
    """Fused per-token importance plus the per-query fused rows behind it."""

    importance: np.ndarray  # (S,) float64, >= 0
    rows: np.ndarray  # (Q_valid, S) float64 fused per-query rows
    layout: TokenLayout
    method: str

    @property
    def q_valid(self) -> int:
        return self.rows.shape[0]


@dataclass
class SensorContribution:
    """Fraction of total fused attention mass per sensor; sums to 1."""

    values: dict[str, float]

    def as_array(self, layout: TokenLayout) -> np.ndarray:
        return np.array([self.values[name] for name in layout.sensors()])


def _check_not_empty(stack: AttentionStack) -> None:
    if stack.queries == 0:
        raise EmptySelectionError("no queries survived selection; nothing to fuse")


def _sorted_mean(slices: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with per-element ascending summation order."""
    ordered = np.sort(np.asarray(slices, dtype=np.float64), axis=0)
    return ordered.sum(axis=0) / slices.shape[0]


def fuse_mean(stack: AttentionStack, layout: TokenLayout) -> SaliencyMap:
    """Mean over layers, then heads, then max-pool the query dimension."""
    _check_not_empty(stack)
    _check_layout(stack, layout)
    flat = stack.values.reshape(-1, stack.queries, stack.tokens)
    rows = _sorted_mean(flat)
    return SaliencyMap(rows.max(axis=0), rows, layout, "mean")


def fuse_max(stack: AttentionStack, layout: TokenLayout) -> SaliencyMap:
    """Elementwise max over layers, mean over heads, max-pool over queries."""
    _check_not_empty(stack)
    _check_layout(stack, layout)
    per_head = stack.values.astype(np.float64).max(axis=0)  # (H, Q, S)
    rows = _sorted_mean(per_head)
    return SaliencyMap(rows.max(axis=0), rows, layout, "max")


def fuse_last_layer(stack: AttentionStack, layout: TokenLayout) -> SaliencyMap:
    """Use only the final decoder layer: mean over heads, max-pool queries."""
    _check_not_empty(stack)
    _check_layout(stack, layout)
    rows = _sorted_mean(stack.values[-1].astype(np.float64))
    return SaliencyMap(rows.max(axis=0), rows, layout, "last_layer")


def fuse(stack: AttentionStack, layout: TokenLayout, method: str) -> SaliencyMap:
    if method == "mean":
        return fuse_mean(stack, layout)
    if method == "max":
        return fuse_max(stack, layout)
    if method == "last_layer":
        return fuse_last_layer(stack, layout)
    raise ValueError(f"unknown fusion method {method!r}; expected {FUSION_METHODS}")


def _check_layout(stack: AttentionStack, layout: TokenLayout) -> None:
    if stack.tokens != layout.s_total:
        raise LayoutError(
            f"stack has S={stack.tokens} tokens but layout expects {layout.s_total}"
        )


class StreamingFusion:
    """Incremental fusion of (layer, head) slices without a full stack.

    Feed slices in any order via add(); memory stays O(Q*S) for mean and
    last_layer and O(H*Q*S) for max.  Accumulation is float32 in arrival
    order (performance path for full-scale stacks).
    """

    def __init__(self, method: str, layers: int, heads: int, queries: int, tokens: int):
        if method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {method!r}")
        if queries == 0:
            raise EmptySelectionError("no queries survived selection; nothing to fuse")
        self.method = method
        self.layers = layers
        self.heads = heads
        self.queries = queries
        self.tokens = tokens
        self._seen: set[tuple[int, int]] = set()
        # np.full touches every page up front, keeping add() free of faults
        if method == "max":
            self._acc = np.full((heads, queries, tokens), -np.inf, dtype=np.float32)
        else:
            self._acc = np.full((queries, tokens), 0.0, dtype=np.float32)

    def add(self, layer: int, head: int, sl: np.ndarray) -> None:
        if not (0 <= layer < self.layers and 0 <= head < self.heads):
            raise LayoutError(f"slice ({layer}, {head}) outside {self.layers}x{self.heads}")
        if (layer, head) in self._seen:
            raise LayoutError(f"slice ({layer}, {head}) supplied twice")
        self._seen.add((layer, head))
        sl = np.ascontiguousarray(sl, dtype=np.float32)
        if sl.shape != (self.queries, self.tokens):
            raise LayoutError(
                f"slice shape {sl.shape} does not match ({self.queries}, {self.tokens})"
            )
        if self.method == "mean":
            kernels.accumulate_inplace(self._acc, sl)
        elif self.method == "max":
            kernels.maximum_inplace(self._acc[head], sl)
        elif layer == self.layers - 1:
            kernels.accumulate_inplace(self._acc, sl)

    def finalize(self, layout: TokenLayout) -> SaliencyMap:
        if getattr(self, "_done", False):
            raise LayoutError("streaming fusion already finalized")
        if len(self._seen) != self.layers * self.heads:
            raise LayoutError(
                f"fusion saw {len(self._seen)} slices, expected {self.layers * self.heads}"
            )
        self._done = True
        if layout.s_total != self.tokens:
            raise LayoutError(
                f"stack has S={self.tokens} tokens but layout expects {layout.s_total}"
            )
        # rows stay float32 on this path so full-scale finalization never
        # materializes a float64 copy; importance is exact f64 of the f32 max
        if self.method == "mean":
            scale = np.float32(self.layers * self.heads)
            self._acc /= scale
            rows = self._acc
        elif self.method == "max":
            rows = self._acc.sum(axis=0, dtype=np.float32) / np.float32(self.heads)
        else:
            self._acc /= np.float32(self.heads)
            rows = self._acc
        importance = rows.max(axis=0).astype(np.float64)
        return SaliencyMap(importance, rows, layout, self.method)


STREAMING_THRESHOLD = 30_000_000  # stack elements above which files are streamed


def fuse_attention_file(
    path: str, layout: TokenLayout, cfg: SelectionConfig, method: str
) -> SaliencyMap:
    """Select-and-fuse straight from an ATTN file.

    Stacks under STREAMING_THRESHOLD elements load densely (bitwise equal to
    the in-memory fusion); larger stacks stream one slice at a time with the
    float32 reducer, so full-scale files never materialize.
    """
    from . import io  # local import: io depends on types, not on saliency

    dims, scores, slices = io.iter_attention_slices(path)
    layers, heads, queries, tokens = dims
    if tokens != layout.s_total:
        slices.close()
        raise LayoutError(
            f"ATTN file has S={tokens} tokens but layout expects {layout.s_total}"
        )
    if layers * heads * queries * tokens <= STREAMING_THRESHOLD:
        slices.close()
        stack = io.read_attention(path, layout=layout)
        return fuse(select_queries(stack, cfg), layout, method)
    order = np.argsort(-scores.astype(np.float64), kind="stable")
    top = np.sort(order[: min(cfg.top_k, queries)])
    keep = top[scores.astype(np.float64)[top] >= cfg.tau]
    reducer = StreamingFusion(method, layers, heads, keep.size, tokens)
    for layer, head, block in slices:
        reducer.add(layer, head, block[keep])
    return reducer.finalize(layout)


def split_modalities(smap: SaliencyMap) -> tuple[np.ndarray, np.ndarray]:
    """Reshape importance into (grid_x, grid_y) BEV and (cams, cam_h, cam_w) views."""
    layout = smap.layout
    if smap.importance.shape != (layout.s_total,):
        raise LayoutError(
            f"importance length {smap.importance.shape} does not match S={layout.s_total}"
        )
    bev = smap.importance[: layout.s_pc].reshape(layout.grid_x, layout.grid_y)
    cams = smap.importance[layout.s_pc:].reshape(
        layout.num_cams, layout.cam_h, layout.cam_w
    )
    return bev, cams


def flatten_views(bev: np.ndarray, cams: np.ndarray) -> np.ndarray:
    """Inverse of split_modalities."""
    return np.concatenate([bev.reshape(-1), cams.reshape(-1)])


def sensor_contribution(smap: SaliencyMap) -> SensorContribution:
    """Fraction of total fused attention mass per sensor (queries summed)."""
    if smap.q_valid == 0:
        raise EmptySelectionError("contribution undefined with no surviving queries")
    col_mass = smap.rows.sum(axis=0, dtype=np.float64)
    total = float(col_mass.sum())
    if total <= 0.0:
        raise ZeroMassError("total attention mass is zero; contribution undefined")
    values = {}
    for name in smap.layout.sensors():
        sl = smap.layout.sensor_slice(name)
        values[name] = float(col_mass[sl].sum()) / total
    return SensorContribution(values)


def upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2D grid for visualization export."""
    grid = np.asarray(grid, dtype=np.float64)
    in_h, in_w = grid.shape
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    ry = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    rx = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ry).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(rx).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ry - y0, 0.0, 1.0)[:, None]
    wx = np.clip(rx - x0, 0.0, 1.0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - wx) + grid[np.ix_(y0, x1)] * wx
    bot = grid[np.ix_(y1, x0)] * (1 - wx) + grid[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy
