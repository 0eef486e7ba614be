"""Parametric uncertainty losses and distribution utilities.

Position coordinates are modeled as independent Gaussians parameterized by a
log-variance u = log(sigma^2); yaw is modeled as a von-Mises distribution
with concentration kappa = exp(-u_theta).  Both losses return analytic
gradients.  The yaw loss ships in two variants:

* ``shifted``: log I0(kappa) + kappa * (1 - cos(dtheta)); equals the
  negative log-likelihood plus kappa (minus a constant), making it monotone
  non-decreasing in kappa so the stabilizer sets the equilibrium in u_theta.
* ``nll``: log(2*pi*I0(kappa)) - kappa * cos(dtheta), the plain von-Mises
  negative log-likelihood.

Both include the stabilizer lambda_v * ELU(u_theta - s0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError
from .types import wrap_angle

VARIANTS = ("shifted", "nll")


@dataclass(frozen=True)
class VonMisesLossParams:
    lambda_v: float = 0.01
    s0: float = 2.0
    variant: str = "shifted"

    def __post_init__(self):
        if self.lambda_v < 0:
            raise ValueError(f"lambda_v must be >= 0, got {self.lambda_v}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class GaussianParam:
    mean: float
    u: float  # log-variance, log m^2

    @property
    def sigma(self) -> float:
        return math.exp(0.5 * self.u)


@dataclass(frozen=True)
class VonMisesParam:
    mean_angle: float
    u_theta: float

    @property
    def kappa(self) -> float:
        return math.exp(-self.u_theta)


# ---------------------------------------------------------------------------
# Bessel family (kernel-backed, domain-checked)
# ---------------------------------------------------------------------------

def _check_nonneg(x) -> None:
    if np.any(np.asarray(x) < 0):
        raise ValueError("Bessel I0 family requires x >= 0")


def bessel_i0(x):
    """I0(x) for x >= 0."""
    _check_nonneg(x)
    return kernels.i0(x)


def log_bessel_i0(x):
    """log I0(x) for x >= 0, safe against overflow."""
    _check_nonneg(x)
    return kernels.log_i0(x)


def bessel_ratio_i1_i0(x):
    """I1(x)/I0(x) for x >= 0."""
    _check_nonneg(x)
    return kernels.i1_i0_ratio(x)


def elu(x: float) -> float:
    return x if x > 0 else math.exp(x) - 1.0


def elu_grad(x: float) -> float:
    return 1.0 if x > 0 else math.exp(x)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_xyz(
    pred: tuple[float, float, float, float, float, float],
    gt: tuple[float, float, float],
) -> tuple[float, np.ndarray]:
    """Gaussian log-variance position loss and its analytic gradient.

    pred is (x, y, z, u_x, u_y, u_z); the gradient is ordered the same way:
    d/d x_i = (x_i - gt_i) * exp(-u_i), d/d u_i = (1 - (x_i - gt_i)^2 * exp(-u_i)) / 2.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != (6,) or gt.shape != (3,):
        raise ValueError("loss_xyz expects pred of length 6 and gt of length 3")
    if not (np.isfinite(pred).all() and np.isfinite(gt).all()):
        raise ValueError("loss_xyz inputs must be finite")
    delta = pred[:3] - gt
    u = pred[3:]
    inv_var = np.exp(-u)
    loss = 0.5 * float(np.sum(delta * delta * inv_var + u))
    grad = np.empty(6, dtype=np.float64)
    grad[:3] = delta * inv_var
    grad[3:] = 0.5 * (1.0 - delta * delta * inv_var)
    return loss, grad


def loss_theta(
    pred: tuple[float, float],
    gt: float,
    params: VonMisesLossParams | None = None,
) -> tuple[float, np.ndarray]:
    """Von-Mises yaw loss and its analytic gradient.

    pred is (theta_hat, u_theta); returns (loss, [d/d theta_hat, d/d u_theta]).
    The angular residual is wrapped into (-pi, pi] before evaluation.
    """
    if params is None:
        params = VonMisesLossParams()
    theta_hat, u_theta = float(pred[0]), float(pred[1])
    gt = float(gt)
    if not all(math.isfinite(v) for v in (theta_hat, u_theta, gt)):
        raise ValueError("loss_theta inputs must be finite")
    delta = wrap_angle(theta_hat - gt)
    kappa = math.exp(-u_theta)
    log_i0_k = float(log_bessel_i0(kappa))
    ratio = float(bessel_ratio_i1_i0(kappa))
    one_minus_cos = 1.0 - math.cos(delta)
    if params.variant == "shifted":
        core = log_i0_k + kappa * one_minus_cos
        dcore_dkappa = ratio + one_minus_cos
    else:
        core = math.log(2.0 * math.pi) + log_i0_k - kappa * math.cos(delta)
        dcore_dkappa = ratio - math.cos(delta)
    stab = params.lambda_v * elu(u_theta - params.s0)
    loss = core + stab
    d_theta = kappa * math.sin(delta)
    d_u = -kappa * dcore_dkappa + params.lambda_v * elu_grad(u_theta - params.s0)
    return loss, np.array([d_theta, d_u], dtype=np.float64)


# ---------------------------------------------------------------------------
# quantiles and centered intervals
# ---------------------------------------------------------------------------

def std_normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + float(kernels.erf(z / math.sqrt(2.0))))


def std_normal_quantile(q: float, tol: float = 1e-10) -> float:
    """Inverse standard normal CDF by bisection on the erf-based CDF."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    flip = q < 0.5
    if flip:
        q = 1.0 - q
    lo, hi = 0.0, 45.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if std_normal_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    return -z if flip else z


def gaussian_interval(p: float, mean: float, u: float) -> tuple[float, float]:
    """Centered Gaussian prediction interval at coverage level p."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"coverage level must lie in (0, 1), got {p}")
    z = std_normal_quantile(0.5 * (1.0 + p))
    sigma = math.exp(0.5 * u)
    return mean - z * sigma, mean + z * sigma


def vm_interval_mass(kappa, half_width):
    """Mass of the centered von-Mises interval [-h, h]; broadcasts elementwise."""
    if np.any(np.asarray(kappa) <= 0):
        raise ValueError("kappa must be positive")
    return kernels.vm_interval_mass(kappa, half_width)


def vonmises_halfwidth(p: float, kappa: float, tol: float = 1e-12) -> float:
    """Half-width delta in (0, pi] of the centered von-Mises interval with mass p."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"coverage level must lie in (0, 1), got {p}")
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    lo, hi = 0.0, math.pi
    for _ in range(100):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if kernels.vm_interval_mass(kappa, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gaussian_pit_centered(residuals, u, temperature: float = 1.0):
    """Mass of the centered Gaussian interval just covering each residual.

    With sigma = exp(u/2)/temperature, the value is erf(|r| / (sigma*sqrt(2)));
    empirical coverage at level p is then the fraction of values <= p.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    sigma = np.exp(0.5 * np.asarray(u, dtype=np.float64)) / temperature
    if np.any(sigma <= 0) or temperature <= 0:
        raise NumericError("Gaussian PIT requires positive sigma and temperature")
    return np.asarray(kernels.erf(np.abs(residuals) / (sigma * math.sqrt(2.0))))


def vonmises_pit_centered(residuals, kappa, temperature: float = 1.0):
    """Von-Mises analogue of gaussian_pit_centered with kappa <- temperature*kappa."""
    if temperature <= 0:
        raise NumericError("kappa temperature must be positive")
    residuals = np.asarray(residuals, dtype=np.float64)
    wrapped = np.abs(np.arctan2(np.sin(residuals), np.cos(residuals)))
    return np.asarray(
        kernels.vm_interval_mass(temperature * np.asarray(kappa, dtype=np.float64), wrapped)
    )
