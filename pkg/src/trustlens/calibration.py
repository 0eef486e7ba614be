"""Post-hoc calibration of detection scores and box uncertainties.

Classification scores are re-mapped through the recovered logit z =
log(p/(1-p)): temperature scaling gives sigma(z/T), Platt scaling gives
sigma(a*z + b), both fitted by NLL on the calibration split.  Regression
uncertainties get per-parameter temperatures (sigma <- sigma/T, kappa <-
T*kappa) fitted by minimizing the miscalibration area of centered
prediction intervals.  Fits always evaluate the identity temperature as a
candidate, so the fitted objective never exceeds the uncalibrated one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateFitError, NumericError, SchemaError
from .metrics import match
from .types import Box, Detection, Scene, UncertainDetection, wrap_angle
from .uncertainty import gaussian_pit_centered, vonmises_pit_centered

DETECTION_TAU = 0.3  # confidence cut applied before calibration/evaluation
MATCH_THRESHOLD = 2.0  # meters; matched-vs-ground-truth flag
SCORE_CLAMP = 1e-7  # scores clamped into [SCORE_CLAMP, 1-SCORE_CLAMP] for logits
MCA_LEVELS = np.round(np.arange(0.01, 1.0, 0.01), 2)  # 99 nominal coverage levels
TS_LOG_BOUNDS = (math.log(0.05), math.log(20.0))
REG_LOG_BOUNDS = (math.log(0.1), math.log(10.0))


def logit(score) -> np.ndarray:
    p = np.clip(np.asarray(score, dtype=np.float64), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return np.log(p / (1.0 - p))


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class CalibrationParams:
    """Classification scaler plus per-parameter regression temperatures."""

    cls_method: str = "identity"  # identity | ts | ps
    temperature: float = 1.0
    a: float = 1.0
    b: float = 0.0
    t_sigma_x: float = 1.0
    t_sigma_y: float = 1.0
    t_sigma_z: float = 1.0
    t_kappa: float = 1.0

    def __post_init__(self):
        if self.cls_method not in ("identity", "ts", "ps"):
            raise SchemaError(f"unknown cls_method {self.cls_method!r}")
        if self.temperature <= 0:
            raise SchemaError("temperature must be positive")
        for name in ("t_sigma_x", "t_sigma_y", "t_sigma_z", "t_kappa"):
            if getattr(self, name) <= 0:
                raise SchemaError(f"{name} must be positive")

    def calibrate_scores(self, scores) -> np.ndarray:
        z = logit(scores)
        if self.cls_method == "ts":
            return sigmoid(z / self.temperature)
        if self.cls_method == "ps":
            return sigmoid(self.a * z + self.b)
        return np.asarray(scores, dtype=np.float64)

    def to_dict(self) -> dict:
        d = {"schema": "calibration", "version": 1, "method": self.cls_method}
        if self.cls_method == "ts":
            d["T"] = self.temperature
        elif self.cls_method == "ps":
            d["a"] = self.a
            d["b"] = self.b
        d.update(
            T_sigma_x=self.t_sigma_x,
            T_sigma_y=self.t_sigma_y,
            T_sigma_z=self.t_sigma_z,
            T_kappa=self.t_kappa,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationParams":
        method = d.get("method", "identity")
        return cls(
            cls_method=method,
            temperature=float(d.get("T", 1.0)),
            a=float(d.get("a", 1.0)),
            b=float(d.get("b", 0.0)),
            t_sigma_x=float(d.get("T_sigma_x", 1.0)),
            t_sigma_y=float(d.get("T_sigma_y", 1.0)),
            t_sigma_z=float(d.get("T_sigma_z", 1.0)),
            t_kappa=float(d.get("T_kappa", 1.0)),
        )


@dataclass
class CalibrationDataset:
    """Flat per-detection records pooled over scenes (score >= tau only)."""

    logits: np.ndarray  # (n,)
    matched: np.ndarray  # (n,) bool
    residuals: np.ndarray  # (n, 3) x/y/z errors, NaN when unmatched
    u: np.ndarray  # (n, 3) predicted log-variances
    theta_residuals: np.ndarray  # (n,) wrapped yaw errors, NaN when unmatched
    kappa: np.ndarray  # (n,)
    tau: float = DETECTION_TAU

    @property
    def n(self) -> int:
        return self.logits.size

    @property
    def scores(self) -> np.ndarray:
        return sigmoid(self.logits)

    def matched_only(self) -> "CalibrationDataset":
        m = self.matched
        return CalibrationDataset(
            self.logits[m],
            self.matched[m],
            self.residuals[m],
            self.u[m],
            self.theta_residuals[m],
            self.kappa[m],
            self.tau,
        )


def build_dataset(
    pairs: list[tuple[Scene, list[UncertainDetection]]],
    tau: float = DETECTION_TAU,
    match_thresh: float = MATCH_THRESHOLD,
) -> CalibrationDataset:
    """Pool (scene, detections) pairs into calibration records."""
    logits, flags, residuals, us, theta_res, kappas = [], [], [], [], [], []
    for scene, dets in pairs:
        kept = [d for d in dets if d.score >= tau]
        gts: list[Box] = list(scene.objects)
        result = match(kept, gts, match_thresh)
        matched_gt = {di: gi for di, gi, _ in result.pairs}
        for i, det in enumerate(kept):
            if not isinstance(det, UncertainDetection):
                raise SchemaError("calibration needs uncertainty-carrying detections")
            logits.append(float(logit(det.score)))
            flag = i in matched_gt
            flags.append(flag)
            if flag:
                gt = gts[matched_gt[i]]
                residuals.append(
                    [
                        det.center[0] - gt.center[0],
                        det.center[1] - gt.center[1],
                        det.center[2] - gt.center[2],
                    ]
                )
                theta_res.append(wrap_angle(det.yaw - gt.yaw))
            else:
                residuals.append([np.nan, np.nan, np.nan])
                theta_res.append(np.nan)
            us.append([det.u_x, det.u_y, det.u_z])
            kappas.append(det.kappa)
    return CalibrationDataset(
        np.array(logits),
        np.array(flags, dtype=bool),
        np.array(residuals, dtype=np.float64).reshape(-1, 3),
        np.array(us, dtype=np.float64).reshape(-1, 3),
        np.array(theta_res, dtype=np.float64),
        np.array(kappas, dtype=np.float64),
        tau,
    )


def split_scenes(scenes: list, calib_fraction: float = 0.3) -> tuple[list, list]:
    """Sequential split in scene order: first ~30% calibrate, rest evaluate."""
    if len(scenes) < 2:
        raise SchemaError("need at least two scenes for a calibration/evaluation split")
    n_cal = max(1, int(len(scenes) * calib_fraction))
    return list(scenes[:n_cal]), list(scenes[n_cal:])


# ---------------------------------------------------------------------------
# classification fits
# ---------------------------------------------------------------------------

def binary_nll(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of sigmoid(logits) against 0/1 labels."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _check_two_classes(labels: np.ndarray) -> None:
    if labels.all() or not labels.any():
        raise DegenerateFitError("calibration labels are single-class; scaler fit undefined")


def _golden_min(fn, lo: float, hi: float, tol: float = 1e-6):
    """Golden-section minimum; returns the best point ever evaluated."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    best_x, best_f = lo, fn(lo)
    for x in (hi,):
        f = fn(x)
        if f < best_f:
            best_x, best_f = x, f
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = fn(c), fn(d)
    for x, f in ((c, fc), (d, fd)):
        if f < best_f:
            best_x, best_f = x, f
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = fn(c)
            if fc < best_f:
                best_x, best_f = c, fc
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = fn(d)
            if fd < best_f:
                best_x, best_f = d, fd
    return best_x, best_f


def fit_ts(data: CalibrationDataset) -> float:
    """Temperature minimizing the binary NLL on the calibration records.

    The identity temperature is always evaluated, so NLL(T*) <= NLL(1).
    """
    _check_two_classes(data.matched)
    y = data.matched.astype(np.float64)

    def objective(log_t: float) -> float:
        return binary_nll(data.logits / math.exp(log_t), y)

    best_log_t, best = _golden_min(objective, *TS_LOG_BOUNDS)
    if objective(0.0) <= best:
        return 1.0
    return math.exp(best_log_t)


def fit_ps(data: CalibrationDataset) -> tuple[float, float]:
    """Platt scaling (a, b) by Newton descent on the convex binary NLL.

    Initialized at the fitted-TS point with b=0, with step halving on
    non-decrease, so the achieved NLL never exceeds the TS optimum.
    """
    _check_two_classes(data.matched)
    z = data.logits
    y = data.matched.astype(np.float64)
    a = 1.0 / fit_ts(data)
    b = 0.0
    nll = binary_nll(a * z + b, y)
    for _ in range(100):
        p = sigmoid(a * z + b)
        grad = np.array([np.mean((p - y) * z), np.mean(p - y)])
        if np.hypot(*grad) < 1e-8:
            break
        w = p * (1.0 - p)
        h11 = np.mean(w * z * z)
        h12 = np.mean(w * z)
        h22 = np.mean(w)
        det = h11 * h22 - h12 * h12
        if det <= 1e-14:
            break
        step = np.array([h22 * grad[0] - h12 * grad[1], -h12 * grad[0] + h11 * grad[1]]) / det
        scale = 1.0
        for _ in range(40):
            cand_a, cand_b = a - scale * step[0], b - scale * step[1]
            cand_nll = binary_nll(cand_a * z + cand_b, y)
            if cand_nll <= nll:
                a, b, nll = cand_a, cand_b, cand_nll
                break
            scale *= 0.5
        else:
            break
    return float(a), float(b)


# ---------------------------------------------------------------------------
# calibration metrics
# ---------------------------------------------------------------------------

def d_ece(
    data: CalibrationDataset, params: CalibrationParams | None = None, bins: int = 10
) -> float:
    """Detection expected calibration error in percent.

    Confidences bin into `bins` equal-width bins over [tau, 1]; values
    pushed below tau by calibration land in the first bin.  Each bin
    contributes its sample share times |precision - mean confidence|.
    """
    if bins < 1:
        raise SchemaError(f"bins must be >= 1, got {bins}")
    if data.n == 0:
        raise NumericError("D-ECE undefined on an empty dataset")
    conf = (
        params.calibrate_scores(data.scores)
        if params is not None
        else np.asarray(data.scores)
    )
    edges = np.linspace(data.tau, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, bins - 1)
    total = 0.0
    for b in range(bins):
        mask = idx == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        precision = float(data.matched[mask].mean())
        avg_conf = float(conf[mask].mean())
        total += (n_b / data.n) * abs(precision - avg_conf)
    return 100.0 * total


def _coverage_mca(pit: np.ndarray, levels: np.ndarray = MCA_LEVELS) -> float:
    """Mean absolute gap between nominal and empirical interval coverage."""
    pit = pit[np.isfinite(pit)]
    if pit.size == 0:
        raise NumericError("no matched detections; coverage undefined")
    coverage = (pit[None, :] <= levels[:, None]).mean(axis=1)
    return 100.0 * float(np.mean(np.abs(coverage - levels)))


_AXIS_TEMPS = ("t_sigma_x", "t_sigma_y", "t_sigma_z")


def mca_axis(data: CalibrationDataset, axis: int, temperature: float = 1.0) -> float:
    """Miscalibration area (percent) of one Gaussian axis."""
    matched = data.matched_only()
    if matched.n < 10:
        raise NumericError("need at least 10 matched detections for MCA")
    pit = gaussian_pit_centered(matched.residuals[:, axis], matched.u[:, axis], temperature)
    return _coverage_mca(pit)


def mca_xyz(data: CalibrationDataset, params: CalibrationParams | None = None) -> float:
    """Mean of the three per-axis miscalibration areas, in percent."""
    p = params or CalibrationParams()
    temps = [p.t_sigma_x, p.t_sigma_y, p.t_sigma_z]
    return float(np.mean([mca_axis(data, i, temps[i]) for i in range(3)]))


def mca_theta(data: CalibrationDataset, params: CalibrationParams | None = None) -> float:
    """Miscalibration area (percent) of the von-Mises yaw intervals."""
    matched = data.matched_only()
    if matched.n < 10:
        raise NumericError("need at least 10 matched detections for MCA")
    t_kappa = (params or CalibrationParams()).t_kappa
    pit = vonmises_pit_centered(matched.theta_residuals, matched.kappa, t_kappa)
    return _coverage_mca(pit)


def fit_reg_temperatures(data: CalibrationDataset) -> CalibrationParams:
    """Independent per-parameter temperatures minimizing each MCA.

    Returns a CalibrationParams carrying only regression temperatures
    (cls_method stays identity).  Every search also evaluates T=1, so the
    fitted MCA never exceeds the uncalibrated one.
    """
    fitted = {}
    for axis, name in enumerate(_AXIS_TEMPS):
        def objective(log_t: float, axis=axis) -> float:
            return mca_axis(data, axis, math.exp(log_t))

        best_log_t, best = _golden_min(objective, *REG_LOG_BOUNDS, tol=1e-4)
        fitted[name] = 1.0 if objective(0.0) <= best else math.exp(best_log_t)

    def theta_objective(log_t: float) -> float:
        return mca_theta(data, CalibrationParams(t_kappa=math.exp(log_t)))

    best_log_t, best = _golden_min(theta_objective, *REG_LOG_BOUNDS, tol=1e-4)
    fitted["t_kappa"] = 1.0 if theta_objective(0.0) <= best else math.exp(best_log_t)
    return CalibrationParams(**fitted)


def fit(data: CalibrationDataset, cls_method: str = "ps") -> CalibrationParams:
    """Full calibration fit: classification scaler plus regression temps."""
    reg = fit_reg_temperatures(data)
    if cls_method == "ts":
        return replace(reg, cls_method="ts", temperature=fit_ts(data))
    if cls_method == "ps":
        a, b = fit_ps(data)
        return replace(reg, cls_method="ps", a=a, b=b)
    if cls_method == "identity":
        return reg
    raise SchemaError(f"unknown cls_method {cls_method!r}")


# ---------------------------------------------------------------------------
# applying calibration
# ---------------------------------------------------------------------------

def apply(params: CalibrationParams, detections: list[Detection]) -> list[Detection]:
    """Calibrated copies of detections: scores re-mapped, sigmas/kappa
    rescaled, geometry untouched.  Positive parameters preserve ranking."""
    out: list[Detection] = []
    for det in detections:
        score = float(params.calibrate_scores(np.array([det.score]))[0])
        if isinstance(det, UncertainDetection):
            out.append(
                UncertainDetection(
                    center=det.center,
                    size=det.size,
                    yaw=det.yaw,
                    class_id=det.class_id,
                    score=score,
                    u_x=det.u_x - 2.0 * math.log(params.t_sigma_x),
                    u_y=det.u_y - 2.0 * math.log(params.t_sigma_y),
                    u_z=det.u_z - 2.0 * math.log(params.t_sigma_z),
                    u_theta=det.u_theta - math.log(params.t_kappa),
                )
            )
        else:
            out.append(
                Detection(
                    center=det.center,
                    size=det.size,
                    yaw=det.yaw,
                    class_id=det.class_id,
                    score=score,
                )
            )
    return out
