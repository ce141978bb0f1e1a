"""Extended GLM on a double exponential family.

Mean model: canonical link, theta_i = x_i^T beta.  Dispersion model: log
link, log gamma_i = z_i^T alpha.  The working log-likelihood uses the C = 1
convention and drops the base-measure term c(y, phi/nu) (constant in beta and
alpha); pass ``include_base_measure=True`` where absolute values must be
comparable, e.g. held-out evaluation.

Per-observation term:

    l_i = 0.5 * z_i^T alpha
          + exp(z_i^T alpha) * (y_i x_i^T beta - b(x_i^T beta)) / (phi/nu_i)
          + (1 - exp(z_i^T alpha)) * (y_i theta(y_i) - b(theta(y_i))) / (phi/nu_i)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .families import FamilyKernel


@dataclass(frozen=True)
class GlmSpec:
    """Immutable bundle of kernel, designs, coefficients and scale."""

    kernel: FamilyKernel
    X: np.ndarray
    Z: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    phi: float = 1.0
    weights: np.ndarray | None = None  # known weights nu_i, default all ones

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if X.ndim != 2 or Z.ndim != 2 or X.shape[0] != Z.shape[0]:
            raise ConfigError(f"design shapes disagree: X {X.shape}, Z {Z.shape}")
        if beta.shape != (X.shape[1],):
            raise ConfigError(f"beta length {beta.shape} vs X columns {X.shape[1]}")
        if alpha.shape != (Z.shape[1],):
            raise ConfigError(f"alpha length {alpha.shape} vs Z columns {Z.shape[1]}")
        w = self.weights
        if w is None:
            w = np.ones(X.shape[0])
        else:
            w = np.asarray(w, dtype=float)
            if w.shape != (X.shape[0],):
                raise ConfigError(f"weights length {w.shape} vs n {X.shape[0]}")
        if self.phi <= 0 or np.any(w <= 0):
            raise ConfigError("phi and all weights must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dispersion_scale(self) -> np.ndarray:
        """phi / nu_i per observation."""
        return self.phi / self.weights

    @property
    def theta(self) -> np.ndarray:
        return self.X @ self.beta

    @property
    def log_gamma(self) -> np.ndarray:
        return self.Z @ self.alpha

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.log_gamma)

    def with_coefs(self, beta, alpha) -> "GlmSpec":
        return replace(self, beta=np.asarray(beta, dtype=float),
                       alpha=np.asarray(alpha, dtype=float))

    def rows(self, idx) -> "GlmSpec":
        return replace(self, X=self.X[idx], Z=self.Z[idx], weights=self.weights[idx])


@dataclass(frozen=True)
class ScoreReport:
    """Analytic first and second derivatives of the log-likelihood."""

    score_beta: np.ndarray
    score_alpha: np.ndarray
    hess_bb: np.ndarray
    hess_ba: np.ndarray
    hess_aa: np.ndarray
    w_beta: np.ndarray  # per-obs mean-block weight exp(z'a) b''(x'b) / (phi/nu)
    w_alpha: np.ndarray  # per-obs dispersion-block Hessian weight


def loglik(spec: GlmSpec, y, include_base_measure: bool = False) -> float:
    """Sum of the per-observation terms l_i (C = 1 convention)."""
    y = spec.kernel.check_support(y)
    r = spec.dispersion_scale
    eta = spec.log_gamma
    gamma = np.exp(eta)
    dev_kernel = (y * spec.theta - spec.kernel.b(spec.theta)) / r
    sat = spec.kernel.saturated_term(y) / r
    # gamma can overflow to inf under extreme alpha; 0 * inf is treated as 0
    # so that a saturated observation does not poison the total with NaN.
    with np.errstate(over="ignore", invalid="ignore"):
        gap = dev_kernel - sat
        term = np.where(gap == 0.0, 0.0, gamma * gap)
    total = 0.5 * eta + term + sat
    if include_base_measure:
        total = total + spec.kernel.base_measure(y, r)
    return float(np.sum(total))


def score(spec: GlmSpec, y) -> ScoreReport:
    """Analytic gradients and the four Hessian blocks."""
    y = spec.kernel.check_support(y)
    X, Z = spec.X, spec.Z
    r = spec.dispersion_scale
    gamma = spec.gamma
    theta = spec.theta
    resid = (y - spec.kernel.b_prime(theta)) / r
    dev_gap = (y * theta - spec.kernel.b(theta) - spec.kernel.saturated_term(y)) / r

    u_beta = gamma * resid
    score_beta = X.T @ u_beta
    score_alpha = Z.T @ (0.5 + gamma * dev_gap)

    w_beta = gamma * spec.kernel.b_second(theta) / r
    w_alpha = -gamma * dev_gap  # = gamma * (saturated - kernel deviance) / r >= 0
    hess_bb = -(X * w_beta[:, None]).T @ X
    hess_ba = (X * u_beta[:, None]).T @ Z
    hess_aa = -(Z * w_alpha[:, None]).T @ Z
    return ScoreReport(
        score_beta=score_beta,
        score_alpha=score_alpha,
        hess_bb=hess_bb,
        hess_ba=hess_ba,
        hess_aa=hess_aa,
        w_beta=w_beta,
        w_alpha=w_alpha,
    )


def fisher_blocks(spec: GlmSpec):
    """Observed Fisher estimates: ((1/n) X'WX, (1/n) Z'Z).

    The dispersion block uses the w_alpha ~ 1 approximation, under which the
    per-observation weight drops out.
    """
    w = spec.gamma * spec.kernel.b_second(spec.theta) / spec.dispersion_scale
    n = spec.n
    i_beta = (spec.X * w[:, None]).T @ spec.X / n
    i_alpha = spec.Z.T @ spec.Z / n
    return i_beta, i_alpha


def unit_deviance(spec: GlmSpec, y) -> np.ndarray:
    """Per-observation EF deviance 2 * (saturated - kernel) / (phi/nu).

    Its model expectation is approximately 1/gamma_i, which underlies the
    w_alpha ~ 1 approximation in :func:`fisher_blocks`.
    """
    y = spec.kernel.check_support(y)
    r = spec.dispersion_scale
    theta = spec.theta
    sat = spec.kernel.saturated_term(y)
    return 2.0 * (sat - (y * theta - spec.kernel.b(theta))) / r
