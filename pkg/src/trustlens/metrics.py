"""Detection matching, the Detection Quality Score, and robustness scoring.

DQS is a deliberately simple, fully documented composite: the equal-weight
mean of mAP over BEV center-distance thresholds (101-point interpolated AP)
and of three normalized true-positive error terms measured on 2 m matches:
translation/2 m, scale (1 - per-axis size ratio product), orientation/pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, SchemaError
from .types import Box, Detection, wrap_angle

DEFAULT_AP_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
ERROR_MATCH_THRESHOLD = 2.0  # meters; center distance defining a true positive
SEVERITIES = (1, 2, 3)


@dataclass
class MatchResult:
    """One-to-one greedy matching between detections and ground truths."""

    pairs: list[tuple[int, int, float]]  # (det index, gt index, center distance m)
    unmatched_dets: list[int]
    unmatched_gts: list[int]
    translation_errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    scale_errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    orientation_errors: np.ndarray = field(default_factory=lambda: np.empty(0))


def _score_order(dets: list[Detection]) -> list[int]:
    """Detection indices in descending score order, ties broken by lower index."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def size_ratio(pred_size, gt_size) -> float:
    """Product over axes of min/max size; 1 for identical boxes."""
    r = 1.0
    for p, g in zip(pred_size, gt_size):
        r *= min(p, g) / max(p, g)
    return r


def match(dets: list[Detection], gts: list[Box], dist_thresh: float) -> MatchResult:
    """Greedy score-ordered matching on BEV center distance.

    Each detection (highest score first) takes the nearest still-unmatched
    ground truth within dist_thresh; ties in score resolve to the lower
    detection index, ties in distance to the lower ground-truth index.
    """
    if dist_thresh <= 0:
        raise ValueError(f"dist_thresh must be positive, got {dist_thresh}")
    gt_xy = np.array([[g.center[0], g.center[1]] for g in gts], dtype=np.float64).reshape(-1, 2)
    taken = np.zeros(len(gts), dtype=bool)
    pairs: list[tuple[int, int, float]] = []
    unmatched_dets: list[int] = []
    for di in _score_order(dets):
        det = dets[di]
        if len(gts) == 0 or taken.all():
            unmatched_dets.append(di)
            continue
        d = np.hypot(gt_xy[:, 0] - det.center[0], gt_xy[:, 1] - det.center[1])
        d[taken] = np.inf
        gi = int(np.argmin(d))
        if d[gi] <= dist_thresh:
            taken[gi] = True
            pairs.append((di, gi, float(d[gi])))
        else:
            unmatched_dets.append(di)
    unmatched_gts = [i for i in range(len(gts)) if not taken[i]]
    trans = np.array([p[2] for p in pairs], dtype=np.float64)
    scale = np.array(
        [1.0 - size_ratio(dets[di].size, gts[gi].size) for di, gi, _ in pairs],
        dtype=np.float64,
    )
    orient = np.array(
        [abs(wrap_angle(dets[di].yaw - gts[gi].yaw)) for di, gi, _ in pairs],
        dtype=np.float64,
    )
    return MatchResult(pairs, sorted(unmatched_dets), unmatched_gts, trans, scale, orient)


def average_precision(dets: list[Detection], gts: list[Box], dist_thresh: float) -> float:
    """101-point interpolated AP at one BEV center-distance threshold."""
    if len(gts) == 0:
        return 1.0 if len(dets) == 0 else 0.0
    if len(dets) == 0:
        return 0.0
    result = match(dets, gts, dist_thresh)
    matched_rank = {di: True for di, _, _ in result.pairs}
    tp = np.array([1.0 if di in matched_rank else 0.0 for di in _score_order(dets)])
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(dets) + 1, dtype=np.float64)
    precision = cum_tp / ranks
    recall = cum_tp / len(gts)
    levels = np.linspace(0.0, 1.0, 101)
    interp = np.zeros_like(levels)
    for i, r in enumerate(levels):
        ok = recall >= r - 1e-12
        interp[i] = precision[ok].max(initial=0.0)
    return float(interp.mean())


def dqs_from_parts(mean_ap: float, ate: float, ase: float, aoe: float) -> float:
    """Combine mAP with normalized error terms into the quality score."""
    terms = [
        1.0 - min(1.0, ate / ERROR_MATCH_THRESHOLD),
        1.0 - min(1.0, ase),
        1.0 - min(1.0, aoe / math.pi),
    ]
    return 0.5 * mean_ap + 0.5 * (sum(terms) / len(terms))


def dqs(
    dets: list[Detection],
    gts: list[Box],
    thresholds: tuple[float, ...] = DEFAULT_AP_THRESHOLDS,
) -> float:
    """Detection Quality Score in [0, 1].

    Edge cases: no ground truth and no detections -> 1 (vacuous perfection);
    detections against empty ground truth -> 0; empty detections against
    non-empty ground truth -> 0.
    """
    if len(thresholds) == 0:
        raise ValueError("dqs needs at least one AP threshold")
    if len(gts) == 0:
        return 1.0 if len(dets) == 0 else 0.0
    if len(dets) == 0:
        return 0.0
    mean_ap = float(np.mean([average_precision(dets, gts, t) for t in thresholds]))
    result = match(dets, gts, ERROR_MATCH_THRESHOLD)
    if result.pairs:
        ate = float(result.translation_errors.mean())
        ase = float(result.scale_errors.mean())
        aoe = float(result.orientation_errors.mean())
    else:
        ate, ase, aoe = ERROR_MATCH_THRESHOLD, 1.0, math.pi  # worst-case terms
    return dqs_from_parts(mean_ap, ate, ase, aoe)


# ---------------------------------------------------------------------------
# robustness scoring
# ---------------------------------------------------------------------------

class RobustnessTable:
    """Rows of (model, corruption, severity in {1,2,3}, score in [0,1])."""

    def __init__(self, rows: list[tuple[str, str, int, float]]):
        self._scores: dict[tuple[str, str, int], float] = {}
        for model, corruption, severity, score in rows:
            severity = int(severity)
            if severity not in SEVERITIES:
                raise SchemaError(
                    f"severity must be one of {SEVERITIES}, got {severity} "
                    f"for ({model}, {corruption})"
                )
            if not 0.0 <= score <= 1.0:
                raise SchemaError(
                    f"score must lie in [0, 1], got {score} for "
                    f"({model}, {corruption}, severity {severity})"
                )
            key = (str(model), str(corruption), severity)
            if key in self._scores:
                raise SchemaError(f"duplicate robustness row {key}")
            self._scores[key] = float(score)

    @property
    def models(self) -> list[str]:
        return sorted({m for m, _, _ in self._scores})

    @property
    def corruptions(self) -> list[str]:
        return sorted({c for _, c, _ in self._scores})

    def severity_sum(self, model: str, corruption: str) -> float:
        missing = [s for s in SEVERITIES if (model, corruption, s) not in self._scores]
        if missing:
            raise SchemaError(
                f"incomplete table: ({model}, {corruption}) lacks severities {missing}"
            )
        return sum(self._scores[(model, corruption, s)] for s in SEVERITIES)


def rra(table: RobustnessTable, model: str, baseline: str, corruption: str) -> float:
    """Relative Resistance Ability in percent for one corruption."""
    model_sum = table.severity_sum(model, corruption)
    base_sum = table.severity_sum(baseline, corruption)
    if base_sum == 0.0:
        raise NumericError(
            f"baseline {baseline!r} has zero severity-summed score for {corruption!r}"
        )
    return 100.0 * (model_sum / base_sum - 1.0)


def mrra(table: RobustnessTable, model: str, baseline: str) -> float:
    """Mean RRA over every corruption present in the table."""
    corruptions = table.corruptions
    if not corruptions:
        raise NumericError("robustness table holds no corruptions")
    return float(np.mean([rra(table, model, baseline, c) for c in corruptions]))


def rra_table(table: RobustnessTable, baseline: str) -> tuple[list[str], list[list]]:
    """Per-model RRA rows mirroring the corruption columns, plus mRRA."""
    corruptions = table.corruptions
    header = ["model"] + corruptions + ["mrra"]
    rows = []
    for model in table.models:
        per = [rra(table, model, baseline, c) for c in corruptions]
        rows.append([model] + per + [float(np.mean(per))])
    return header, rows
