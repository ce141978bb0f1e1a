"""Exponential-family kernels and double-exponential-family (DEF) densities.

A natural EF in regression form has log-density
``(theta*y - b(theta))/(phi/nu) + c(y, phi/nu)``.  The DEF extends it with a
dispersion parameter ``gamma > 0``:

    log f = log C + 0.5*log(gamma)
            + gamma * (y*theta - b(theta)) / (phi/nu)
            + (1 - gamma) * (y*theta(y) - b(theta(y))) / (phi/nu)
            + c(y, phi/nu),

where ``theta(y)`` is the saturated natural parameter and ``C`` is the exact
normalizing constant.  ``gamma < 1`` models overdispersion, ``gamma > 1``
underdispersion.  Likelihood work elsewhere in the package uses the ``C = 1``
convention; the exact ``C`` is computed here for the verification suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .errors import DomainError, NumericError


def _poisson_cap(mean: float) -> int:
    # Keeps tail mass below ~1e-12 for every regime used in the simulations.
    return int(max(10.0 * mean + 100.0, 200.0))


class FamilyKernel:
    """EF building blocks: partition function b and friends.

    Subclasses provide b, its first three derivatives, the inverse mean map,
    the saturated term ``y*theta(y) - b(theta(y))`` (with the boundary
    convention ``0*log(0) := 0``) and the base measure ``c(y, phi/nu)``.
    """

    name: str = "base"
    discrete: bool = False

    def b(self, theta):
        raise NotImplementedError

    def b_prime(self, theta):
        raise NotImplementedError

    def b_second(self, theta):
        raise NotImplementedError

    def b_third(self, theta):
        raise NotImplementedError

    def mean_to_theta(self, mu):
        raise NotImplementedError

    def saturated_theta(self, y):
        """theta(y); may be +-inf at the support boundary."""
        raise NotImplementedError

    def saturated_term(self, y):
        """y*theta(y) - b(theta(y)) evaluated by its boundary limit."""
        raise NotImplementedError

    def base_measure(self, y, scale):
        """c(y, phi/nu)."""
        raise NotImplementedError

    def in_support(self, y) -> np.ndarray:
        raise NotImplementedError

    def check_support(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ok = self.in_support(y)
        if not np.all(ok):
            bad = np.atleast_1d(y)[~np.atleast_1d(ok)]
            raise DomainError(f"{self.name}: values outside support: {bad[:5]}")
        return y

    def support_grid(self, mean: float) -> np.ndarray:
        """Truncated support grid for discrete kernels."""
        raise NotImplementedError(f"{self.name} has no discrete support grid")


class GaussianKernel(FamilyKernel):
    """b(theta) = theta^2/2, support R.  The DEF is exactly N(theta, (phi/nu)/gamma)."""

    name = "gaussian"
    discrete = False

    def b(self, theta):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * theta**2

    def b_prime(self, theta):
        return np.asarray(theta, dtype=float) + 0.0

    def b_second(self, theta):
        return np.ones_like(np.asarray(theta, dtype=float))

    def b_third(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def mean_to_theta(self, mu):
        return np.asarray(mu, dtype=float) + 0.0

    def saturated_theta(self, y):
        return np.asarray(y, dtype=float) + 0.0

    def saturated_term(self, y):
        y = np.asarray(y, dtype=float)
        return 0.5 * y**2

    def base_measure(self, y, scale):
        y = np.asarray(y, dtype=float)
        return -0.5 * y**2 / scale - 0.5 * np.log(2.0 * np.pi * scale)

    def in_support(self, y):
        return np.isfinite(np.asarray(y, dtype=float))


class PoissonKernel(FamilyKernel):
    """b(theta) = exp(theta), support {0, 1, 2, ...}, phi = nu = 1 in GLM use."""

    name = "poisson"
    discrete = True

    def b(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def b_prime(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def b_second(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def b_third(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def mean_to_theta(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise DomainError("poisson: mean must be positive")
        return np.log(mu)

    def saturated_theta(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), -np.inf)

    def saturated_term(self, y):
        y = np.asarray(y, dtype=float)
        # y*log(y) - y with the 0*log(0) := 0 convention at y = 0.
        return np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)) - y, 0.0)

    def base_measure(self, y, scale):
        y = np.asarray(y, dtype=float)
        return -gammaln(y + 1.0)

    def in_support(self, y):
        y = np.asarray(y, dtype=float)
        return np.isfinite(y) & (y >= 0) & (y == np.floor(y))

    def support_grid(self, mean: float) -> np.ndarray:
        return np.arange(_poisson_cap(mean) + 1, dtype=float)


class BinomialKernel(FamilyKernel):
    """b(theta) = N*log(1 + exp(theta)), support {0, ..., N}, phi = nu = 1.

    The trial count is baked into b, so the base variance function is
    V(mu) = mu*(N - mu)/N.
    """

    name = "binomial"
    discrete = True

    def __init__(self, trials: int):
        if int(trials) != trials or trials < 1:
            raise DomainError(f"binomial: trials must be a positive integer, got {trials}")
        self.trials = int(trials)

    def b(self, theta):
        theta = np.asarray(theta, dtype=float)
        # log(1 + e^t) = max(t, 0) + log1p(exp(-|t|)), stable for large |t|.
        return self.trials * (np.maximum(theta, 0.0) + np.log1p(np.exp(-np.abs(theta))))

    def b_prime(self, theta):
        return self.trials * expit(np.asarray(theta, dtype=float))

    def b_second(self, theta):
        s = expit(np.asarray(theta, dtype=float))
        return self.trials * s * (1.0 - s)

    def b_third(self, theta):
        s = expit(np.asarray(theta, dtype=float))
        return self.trials * s * (1.0 - s) * (1.0 - 2.0 * s)

    def mean_to_theta(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any((mu <= 0) | (mu >= self.trials)):
            raise DomainError(f"binomial: mean must lie in (0, {self.trials})")
        return np.log(mu / (self.trials - mu))

    def saturated_theta(self, y):
        y = np.asarray(y, dtype=float)
        n = float(self.trials)
        with np.errstate(divide="ignore"):
            inner = np.log(np.where((y > 0) & (y < n), y / (n - y), 1.0))
        return np.where(y <= 0, -np.inf, np.where(y >= n, np.inf, inner))

    def saturated_term(self, y):
        y = np.asarray(y, dtype=float)
        n = float(self.trials)
        # Entropy form y*log(y/N) + (N-y)*log((N-y)/N); limits 0 at y in {0, N}.
        ya = np.where(y > 0, y, 1.0)
        yb = np.where(y < n, n - y, 1.0)
        return np.where(y > 0, y * np.log(ya / n), 0.0) + np.where(
            y < n, (n - y) * np.log(yb / n), 0.0
        )

    def base_measure(self, y, scale):
        y = np.asarray(y, dtype=float)
        n = float(self.trials)
        return gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)

    def in_support(self, y):
        y = np.asarray(y, dtype=float)
        return np.isfinite(y) & (y >= 0) & (y <= self.trials) & (y == np.floor(y))

    def support_grid(self, mean: float) -> np.ndarray:
        return np.arange(self.trials + 1, dtype=float)


@dataclass(frozen=True)
class DefParams:
    """Per-observation DEF parameters.

    theta: natural parameter; gamma: dispersion (> 0); scale phi and known
    weight nu enter only through phi/nu.
    """

    theta: float
    gamma: float
    phi: float = 1.0
    nu: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not self.phi / self.nu > 0:
            raise DomainError(f"phi/nu must be positive, got {self.phi}/{self.nu}")

    @property
    def dispersion_scale(self) -> float:
        return self.phi / self.nu


@dataclass(frozen=True)
class DefNormalization:
    """Exact normalizing constant and the truncation used to obtain it."""

    constant: float
    truncation: int | None
    tail_mass: float


def _unnormalized_logpmf(kernel, params: DefParams, grid: np.ndarray) -> np.ndarray:
    r = params.dispersion_scale
    return (
        0.5 * np.log(params.gamma)
        + params.gamma * (grid * params.theta - kernel.b(params.theta)) / r
        + (1.0 - params.gamma) * kernel.saturated_term(grid) / r
        + kernel.base_measure(grid, r)
    )


def _discrete_table(kernel, params: DefParams, tail_tol: float):
    """(grid, normalized pmf, exact constant C, residual tail estimate)."""
    mean = float(kernel.b_prime(params.theta))
    grid = kernel.support_grid(mean)
    logq = _unnormalized_logpmf(kernel, params, grid)
    m = float(np.max(logq))
    q = np.exp(logq - m)
    total = float(q.sum())

    tail = 0.0
    if kernel.name == "poisson" and q[-1] > 0.0:
        # Geometric tail estimate from the last ratio; the pmf must be decaying
        # at the cap for the truncation to be trusted.  q[-1] == 0 means the
        # tail underflowed relative to the mode and is certainly negligible.
        ratio = q[-1] / q[-2] if q[-2] > 0 else np.inf
        if ratio >= 1.0:
            raise NumericError(
                f"poisson truncation at {len(grid) - 1} not convergent "
                f"(theta={params.theta}, gamma={params.gamma}, last ratio={ratio:.3g})"
            )
        tail = float(q[-1] * ratio / (1.0 - ratio) / total)
        if tail > tail_tol:
            raise NumericError(
                f"poisson tail mass {tail:.3g} above tolerance {tail_tol:.3g} "
                f"at cap {len(grid) - 1} (theta={params.theta}, gamma={params.gamma})"
            )
    constant = 1.0 / (total * np.exp(m))
    return grid, q / total, constant, tail


def def_pmf(kernel, params: DefParams, tail_tol: float = 1e-12):
    """Exactly normalized pmf over the truncated support (discrete kernels).

    Returns (support values, probabilities); used by the sampler, the moment
    routine and the verification tests.
    """
    if not kernel.discrete:
        raise DomainError(f"{kernel.name} has no discrete pmf")
    grid, p, _, _ = _discrete_table(kernel, params, tail_tol)
    return grid, p


def def_normalizer(kernel, params: DefParams, tail_tol: float = 1e-12) -> DefNormalization:
    """Exact normalizing constant C(gamma, theta).

    Gaussian: closed form (the DEF is exactly N(theta, (phi/nu)/gamma), so
    C = 1).  Discrete: reciprocal of the truncated sum of the unnormalized pmf.
    """
    if not kernel.discrete:
        return DefNormalization(constant=1.0, truncation=None, tail_mass=0.0)
    grid, _, constant, tail = _discrete_table(kernel, params, tail_tol)
    return DefNormalization(constant=float(constant), truncation=len(grid) - 1,
                            tail_mass=tail)


def def_log_density(kernel, params: DefParams, y, normalized: bool = False):
    """log f_{gamma,theta}(y); with ``normalized`` off, uses the C = 1 convention."""
    y = kernel.check_support(y)
    r = params.dispersion_scale
    out = (
        0.5 * np.log(params.gamma)
        + params.gamma * (y * params.theta - kernel.b(params.theta)) / r
        + (1.0 - params.gamma) * kernel.saturated_term(y) / r
        + kernel.base_measure(y, r)
    )
    if normalized:
        out = out + np.log(def_normalizer(kernel, params).constant)
    return out


def def_moments(kernel, params: DefParams, tail_tol: float = 1e-12):
    """Exact (mean, variance) of the normalized DEF."""
    if not kernel.discrete:
        r = params.dispersion_scale
        return float(params.theta), float(r / params.gamma)
    grid, p = def_pmf(kernel, params, tail_tol)
    mean = float(np.dot(p, grid))
    var = float(np.dot(p, (grid - mean) ** 2))
    return mean, var


def def_sample(kernel, params: DefParams, rng: np.random.Generator, size: int,
               tail_tol: float = 1e-12) -> np.ndarray:
    """i.i.d. draws from the exactly normalized DEF.

    Discrete kernels use inverse-CDF sampling over the truncated support;
    the Gaussian kernel uses its closed form N(theta, (phi/nu)/gamma).
    """
    if not kernel.discrete:
        sd = np.sqrt(params.dispersion_scale / params.gamma)
        return rng.normal(params.theta, sd, size)
    grid, p = def_pmf(kernel, params, tail_tol)
    cdf = np.cumsum(p)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return grid[np.minimum(idx, len(grid) - 1)]


def def_sample_each(kernel, thetas, gammas, rng: np.random.Generator,
                    phi: float = 1.0, nus=None, tail_tol: float = 1e-12) -> np.ndarray:
    """One draw per observation with per-observation (theta, gamma).

    Vectorized Gaussian path; discrete kernels loop over observations with
    one inverse-CDF draw each.
    """
    thetas = np.asarray(thetas, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    if nus is None:
        nus = np.ones_like(thetas)
    nus = np.asarray(nus, dtype=float)
    if np.any(gammas <= 0):
        raise DomainError("gamma must be positive for every observation")
    if not kernel.discrete:
        sd = np.sqrt((phi / nus) / gammas)
        return rng.normal(thetas, sd)
    out = np.empty_like(thetas)
    for i in range(len(thetas)):
        params = DefParams(theta=float(thetas[i]), gamma=float(gammas[i]),
                           phi=phi, nu=float(nus[i]))
        out[i] = def_sample(kernel, params, rng, 1, tail_tol)[0]
    return out


def gaussian() -> GaussianKernel:
    return GaussianKernel()


def poisson() -> PoissonKernel:
    return PoissonKernel()


def binomial(trials: int) -> BinomialKernel:
    return BinomialKernel(trials)
