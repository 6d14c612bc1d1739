"""Prior-penalty terms pulling the registration estimate toward GNSS and
IMU readings.

Both penalties are Mahalanobis distances: the translation penalty measures
(t - t_s)^T Sigma_t^-1 (t - t_s) against the GNSS position, and the
rotational penalty measures beta^T Sigma_eps^-1 beta where beta is the
tangent-space difference between the sensor orientation and the estimate.
The left-Jacobian factors that appear when propagating the orientation
noise cancel against beta (J(beta) beta = beta), which is what makes the
short quadratic form valid; the equivalence is covered by tests rather
than assumed.

For the solver, each penalty is also exposed as a whitened residual
r = L^-1 e with Sigma = L L^T, so ||r||^2 reproduces the scalar penalty and
the terms stack into one nonlinear least-squares problem.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import SingularCovariance
from .lie import Rotation, right_jacobian_inv, rotation_error

# Reciprocal condition number below which a covariance is treated as not
# invertible; silently regularizing would corrupt the penalty's meaning.
RCOND_LIMIT = 1e-12


def _check_spd(sigma, name):
    s = np.array(sigma, dtype=float)
    if s.shape != (3, 3) or not np.all(np.isfinite(s)):
        raise ValueError(f"{name} must be a finite 3x3 matrix")
    if np.linalg.norm(s - s.T) > 1e-9:
        raise ValueError(f"{name} must be symmetric within 1e-9")
    if np.linalg.eigvalsh(s).min() <= 0.0:
        raise ValueError(f"{name} must be strictly positive definite")
    s.setflags(write=False)
    return s


def _cholesky(sigma, name):
    eigvals = np.linalg.eigvalsh(sigma)
    if eigvals[0] <= 0.0 or eigvals[0] / eigvals[-1] < RCOND_LIMIT:
        raise SingularCovariance(f"{name} not invertible at working precision")
    return np.linalg.cholesky(sigma)


@dataclass(frozen=True)
class RotationPrior:
    """Sensor orientation with tangent-space covariance of its error."""

    c_s: Rotation
    sigma_eps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma_eps", _check_spd(self.sigma_eps, "sigma_eps"))


@dataclass(frozen=True)
class TranslationPrior:
    """Sensor position with covariance, meters."""

    t_s: np.ndarray
    sigma_t: np.ndarray

    def __post_init__(self):
        t = np.array(self.t_s, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("t_s must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "sigma_t", _check_spd(self.sigma_t, "sigma_t"))


@dataclass(frozen=True)
class PenaltyWeights:
    """Scaling factors for the point, translation and rotation terms."""

    alpha_p: float = 1.0
    alpha_t: float = 1.0
    alpha_theta: float = 1.0

    def __post_init__(self):
        for name in ("alpha_p", "alpha_t", "alpha_theta"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class Priors:
    """Optional pair of sensor priors consumed by the solver."""

    translation: TranslationPrior | None = None
    rotation: RotationPrior | None = None


def _mahalanobis(error, sigma, name):
    eigvals = np.linalg.eigvalsh(sigma)
    if eigvals[0] <= 0.0 or eigvals[0] / eigvals[-1] < RCOND_LIMIT:
        raise SingularCovariance(f"{name} not invertible at working precision")
    factor = cho_factor(np.asarray(sigma), lower=True)
    return float(error @ cho_solve(factor, error))


def rotation_penalty(prior: RotationPrior, c_i: Rotation) -> float:
    """Mahalanobis distance of the orientation disagreement from zero.

    Returns beta^T Sigma_eps^-1 beta with beta = log(c_s @ c_i^T). Raises
    AngleNearPi for antipodal disagreement and SingularCovariance when
    Sigma_eps is not invertible at working precision.
    """
    beta = rotation_error(prior.c_s, c_i)
    return _mahalanobis(beta, prior.sigma_eps, "sigma_eps")


def translation_penalty(prior: TranslationPrior, t_i) -> float:
    """Mahalanobis distance (t_i - t_s)^T Sigma_t^-1 (t_i - t_s)."""
    e = np.asarray(t_i, dtype=float).reshape(3) - prior.t_s
    return _mahalanobis(e, prior.sigma_t, "sigma_t")


def rotation_penalty_residual(prior: RotationPrior, c_i: Rotation):
    """Whitened rotation residual and its Jacobian.

    Returns (r, J) with r = L^-1 beta for Sigma_eps = L L^T, so that
    ||r||^2 equals rotation_penalty. J = dr/ddelta for the left-multiplicative
    local update exp(hat(delta)) @ c_i, i.e. -L^-1 @ Jr(beta)^-1 where Jr is
    the right Jacobian of beta.
    """
    beta = rotation_error(prior.c_s, c_i)
    chol = _cholesky(prior.sigma_eps, "sigma_eps")
    residual = solve_triangular(chol, beta, lower=True)
    jacobian = -solve_triangular(chol, right_jacobian_inv(beta), lower=True)
    return residual, jacobian


def translation_penalty_residual(prior: TranslationPrior, t_i):
    """Whitened translation residual and its (constant) Jacobian L^-1."""
    e = np.asarray(t_i, dtype=float).reshape(3) - prior.t_s
    chol = _cholesky(prior.sigma_t, "sigma_t")
    residual = solve_triangular(chol, e, lower=True)
    jacobian = solve_triangular(chol, np.eye(3), lower=True)
    return residual, jacobian
