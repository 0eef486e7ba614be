"""Perturbation-based consistency testing of saliency maps.

A clean detector pass produces a saliency ranking of maskable units (BEV
cells, and camera tokens per view).  For each masking fraction rho the
highest-ranked (positive direction) or lowest-ranked (negative direction)
units are suppressed, the detector re-runs, and detection quality against
the clean ground truth is recorded; the trapezoidal area under the
quality-vs-rho curve summarizes faithfulness.  The ranking is computed once
from the clean pass and reused at every rho.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SchemaError
from .metrics import dqs
from .rng import Rng
from .saliency import EmptySelectionError, fuse, select_queries
from .synthdet import DetectorConfig, TokenField, generate_tokens, run_detector
from .types import Scene, SelectionConfig

DIRECTIONS = ("positive", "negative", "random")
UNITS = ("bev_cell", "camera_token")
METHODS = ("mean", "max", "last_layer", "random")
DEFAULT_RHO_GRID = (0.0, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)


@dataclass(frozen=True)
class PerturbationSpec:
    direction: str = "positive"
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID
    units: tuple[str, ...] = UNITS
    random_repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SchemaError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        grid = tuple(float(r) for r in self.rho_grid)
        if len(grid) < 2 or grid[0] != 0.0:
            raise SchemaError("rho grid must start at 0 and hold at least two points")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise SchemaError(f"rho grid must be strictly increasing, got {grid}")
        if grid[-1] > 100.0 or any(r < 0.0 for r in grid):
            raise SchemaError(f"rho values must lie in [0, 100], got {grid}")
        object.__setattr__(self, "rho_grid", grid)
        for u in self.units:
            if u not in UNITS:
                raise SchemaError(f"unknown masking unit {u!r}; expected {UNITS}")
        if not self.units:
            raise SchemaError("at least one masking unit kind is required")
        if self.random_repeats < 1:
            raise SchemaError("random_repeats must be >= 1")


@dataclass
class FaithfulnessResult:
    method: str
    direction: str
    rho_grid: tuple[float, ...]
    dqs_values: np.ndarray
    auc: float
    clean_dqs: float
    degenerate: bool = False  # no valid queries: curve pinned at the clean score


def mask_count(rho: float, n_units: int) -> int:
    """Number of suppressed units at masking fraction rho (ceiling rule)."""
    return min(n_units, int(np.ceil(rho * n_units / 100.0)))


def mask_tokens(
    tokens: TokenField, ranking: np.ndarray, rho: float, unit: str
) -> TokenField:
    """Suppress the first ceil(rho*N/100) ranked units of one unit kind.

    BEV cells are zeroed (features and occupancy); camera tokens are
    replaced by their camera's mean feature vector and mean occupancy, the
    token-level analogue of mean-color image masking.  Fractions apply per
    camera view.  rho=0 returns an unmodified copy.
    """
    layout = tokens.layout
    ranking = np.asarray(ranking, dtype=np.int64)
    out = tokens.copy()
    if unit == "bev_cell":
        if ranking.size != layout.s_pc or len(np.unique(ranking)) != layout.s_pc:
            raise SchemaError("bev_cell ranking must be a permutation of LiDAR tokens")
        if (ranking < 0).any() or (ranking >= layout.s_pc).any():
            raise SchemaError("bev_cell ranking holds non-LiDAR token indices")
        k = mask_count(rho, layout.s_pc)
        victims = ranking[:k]
        out.features[victims] = 0.0
        out.occupancy[victims] = 0.0
        return out
    if unit != "camera_token":
        raise SchemaError(f"unknown masking unit {unit!r}; expected {UNITS}")
    lo, hi = layout.s_pc, layout.s_total
    if ranking.size != layout.s_img or len(np.unique(ranking)) != layout.s_img:
        raise SchemaError("camera_token ranking must be a permutation of camera tokens")
    if (ranking < lo).any() or (ranking >= hi).any():
        raise SchemaError("camera_token ranking holds non-camera token indices")
    for cam in range(layout.num_cams):
        sl = layout.sensor_slice(f"cam{cam}")
        mean_feature = tokens.features[sl].mean(axis=0)
        mean_occ = float(tokens.occupancy[sl].mean())
        in_cam = ranking[(ranking >= sl.start) & (ranking < sl.stop)]
        k = mask_count(rho, layout.cam_tokens)
        victims = in_cam[:k]
        out.features[victims] = mean_feature
        out.occupancy[victims] = mean_occ
    return out


def _saliency_rankings(
    importance: np.ndarray, layout, direction: str, units: Sequence[str]
) -> dict[str, np.ndarray]:
    """Per-unit-kind orderings from a fused importance vector.

    Positive direction ranks most-salient first, negative least-salient
    first; ties break toward the lower token index (stable sort).
    """
    rankings = {}
    for unit in units:
        if unit == "bev_cell":
            idx = np.arange(layout.s_pc)
            values = importance[: layout.s_pc]
        else:
            idx = np.arange(layout.s_pc, layout.s_total)
            values = importance[layout.s_pc :]
        order = np.argsort(-values if direction == "positive" else values, kind="stable")
        rankings[unit] = idx[order]
    return rankings


def _random_rankings(layout, units: Sequence[str], rng: Rng) -> dict[str, np.ndarray]:
    rankings = {}
    for unit in units:
        if unit == "bev_cell":
            rankings[unit] = rng.permutation(layout.s_pc)
        else:
            rankings[unit] = layout.s_pc + rng.permutation(layout.s_img)
    return rankings


def _curve_for_rankings(
    tokens: TokenField,
    cfg: DetectorConfig,
    gts,
    spec: PerturbationSpec,
    rankings: dict[str, np.ndarray],
    clean_dqs: float,
    score_threshold: float,
) -> np.ndarray:
    values = np.empty(len(spec.rho_grid))
    for i, rho in enumerate(spec.rho_grid):
        if rho == 0.0:
            values[i] = clean_dqs
            continue
        masked = tokens
        for unit in spec.units:
            masked = mask_tokens(masked, rankings[unit], rho, unit)
        dets, _ = run_detector(masked, cfg)
        kept = [d for d in dets if d.score >= score_threshold]
        values[i] = dqs(kept, gts)
    return values


def run_curve(
    scene: Scene,
    cfg: DetectorConfig,
    sel: SelectionConfig,
    fusion: str,
    spec: PerturbationSpec,
    noise_std: float = 0.05,
    score_threshold: float = 0.3,
) -> FaithfulnessResult:
    """Score-vs-rho curve for one scene and one saliency method.

    fusion "random" (or spec.direction "random") replaces the saliency
    ranking with seeded shuffles averaged over spec.random_repeats.
    Detections below score_threshold are discarded before quality scoring,
    mirroring the deployment confidence cut.
    """
    if fusion not in METHODS:
        raise SchemaError(f"unknown fusion method {fusion!r}; expected {METHODS}")
    gts = list(scene.objects)
    tokens = generate_tokens(scene, cfg.layout, noise_std, width=cfg.width)
    dets, stack = run_detector(tokens, cfg)
    clean = dqs([d for d in dets if d.score >= score_threshold], gts)

    randomized = fusion == "random" or spec.direction == "random"
    degenerate = False
    if randomized:
        rng = Rng(spec.seed).spawn(f"random-ranking-{spec.direction}")
        curves = []
        for _ in range(spec.random_repeats):
            rankings = _random_rankings(cfg.layout, spec.units, rng)
            curves.append(
                _curve_for_rankings(tokens, cfg, gts, spec, rankings, clean, score_threshold)
            )
        values = np.mean(curves, axis=0)
    else:
        filtered = select_queries(stack, sel)
        try:
            smap = fuse(filtered, cfg.layout, fusion)
        except EmptySelectionError:
            degenerate = True
            values = np.full(len(spec.rho_grid), clean)
        else:
            rankings = _saliency_rankings(
                smap.importance, cfg.layout, spec.direction, spec.units
            )
            values = _curve_for_rankings(
                tokens, cfg, gts, spec, rankings, clean, score_threshold
            )
    auc = float(np.trapezoid(values, np.asarray(spec.rho_grid)))
    return FaithfulnessResult(
        method=fusion,
        direction=spec.direction,
        rho_grid=spec.rho_grid,
        dqs_values=values,
        auc=auc,
        clean_dqs=clean,
        degenerate=degenerate,
    )


@dataclass
class MethodComparison:
    methods: tuple[str, ...]
    directions: tuple[str, ...]
    rho_grid: tuple[float, ...]
    mean_auc: dict[tuple[str, str], float]
    mean_curves: dict[tuple[str, str], np.ndarray]
    n_scenes: int

    def summary_dict(self) -> dict:
        out = {}
        for method in self.methods:
            entry = {}
            if "positive" in self.directions:
                entry["pos_auc"] = self.mean_auc[(method, "positive")]
            if "negative" in self.directions:
                entry["neg_auc"] = self.mean_auc[(method, "negative")]
            out[method] = entry
        return out

    def curve_rows(self) -> list[list]:
        rows = []
        for method in self.methods:
            for direction in self.directions:
                curve = self.mean_curves[(method, direction)]
                for rho, value in zip(self.rho_grid, curve):
                    rows.append([method, direction, float(rho), float(value)])
        return rows


def _scene_worker(args) -> dict[tuple[str, str], tuple[float, np.ndarray]]:
    scene, cfg, sel, methods, directions, base_spec, noise_std, threshold = args
    out = {}
    for method in methods:
        for direction in directions:
            spec = PerturbationSpec(
                direction=direction,
                rho_grid=base_spec.rho_grid,
                units=base_spec.units,
                random_repeats=base_spec.random_repeats,
                seed=base_spec.seed ^ scene.seed,
            )
            res = run_curve(scene, cfg, sel, method, spec, noise_std, threshold)
            out[(method, direction)] = (res.auc, res.dqs_values)
    return out


def compare_methods(
    scenes: Sequence[Scene],
    cfg: DetectorConfig,
    sel: SelectionConfig,
    spec: PerturbationSpec | None = None,
    methods: Sequence[str] = METHODS,
    directions: Sequence[str] = ("positive", "negative"),
    noise_std: float = 0.05,
    score_threshold: float = 0.3,
    jobs: int = 1,
) -> MethodComparison:
    """Mean AUC per (method, direction) over a scene batch.

    With jobs > 1 scenes are evaluated in a process pool; aggregation order
    is fixed by scene order either way.
    """
    if not scenes:
        raise SchemaError("compare_methods needs at least one scene")
    base = spec or PerturbationSpec()
    args = [
        (scene, cfg, sel, tuple(methods), tuple(directions), base, noise_std, score_threshold)
        for scene in scenes
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_scene = list(pool.map(_scene_worker, args))
    else:
        per_scene = [_scene_worker(a) for a in args]

    mean_auc = {}
    mean_curves = {}
    for method in methods:
        for direction in directions:
            key = (method, direction)
            mean_auc[key] = float(np.mean([r[key][0] for r in per_scene]))
            mean_curves[key] = np.mean([r[key][1] for r in per_scene], axis=0)
    return MethodComparison(
        methods=tuple(methods),
        directions=tuple(directions),
        rho_grid=base.rho_grid,
        mean_auc=mean_auc,
        mean_curves=mean_curves,
        n_scenes=len(scenes),
    )
