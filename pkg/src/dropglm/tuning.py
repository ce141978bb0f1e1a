"""Random-search k-fold cross-validation over hyperparameter rectangles.

Each method exposes two nonnegative hyperparameters: the mean-side and
dispersion-side dropout parameters (Bernoulli probability or Gaussian sd),
or the two smoothing weights of the penalized baseline.  ``s`` pairs are
drawn uniformly from the rectangle; each pair is fitted k times leaving one
fold out and scored by the held-out log-likelihood (base-measure terms
included so values are comparable across methods).  The winner is the pair
with the largest mean held-out log-likelihood; ties break to the smallest
sample index.

Fits derive their RNG streams from (seed, sample index, fold index), so the
evaluation order of samples has no effect on the table or the winner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dropout import NoiseSpec
from .errors import ConfigError
from .model import GlmSpec, loglik
from .optim import FitResult, OptimConfig, fit
from .pmle import DiffPenalty, pmle_fit
from .rngs import substream

METHODS = ("bernoulli", "gaussian", "pmle")


@dataclass(frozen=True)
class CvPlan:
    """Search rectangle [lo1,hi1] x [lo2,hi2], sample count, folds and seed."""

    rect: tuple[tuple[float, float], tuple[float, float]]
    n_samples: int
    n_folds: int
    seed: int

    def __post_init__(self):
        (lo1, hi1), (lo2, hi2) = self.rect
        if lo1 > hi1 or lo2 > hi2 or min(lo1, lo2) < 0:
            raise ConfigError(f"invalid hyperparameter rectangle {self.rect}")
        if self.n_samples < 1 or self.n_folds < 2:
            raise ConfigError("need n_samples >= 1 and n_folds >= 2")


@dataclass(frozen=True)
class CvResult:
    params: np.ndarray        # (s, 2) sampled pairs
    fold_logliks: np.ndarray  # (s, k) held-out log-likelihoods (-inf on divergence)
    mean_logliks: np.ndarray  # (s,)
    selected_index: int
    divergent_folds: int

    @property
    def selected_params(self) -> tuple[float, float]:
        p = self.params[self.selected_index]
        return float(p[0]), float(p[1])


def make_folds(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random balanced partition into folds 0..k-1 (sizes differ by <= 1)."""
    if k > n:
        raise ConfigError(f"cannot split {n} observations into {k} folds")
    ids = np.empty(n, dtype=int)
    perm = rng.permutation(n)
    # First n % k folds receive one extra observation.
    base, extra = divmod(n, k)
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        ids[perm[start : start + size]] = f
        start += size
    return ids


def fit_method(spec: GlmSpec, y, method: str, params, config: OptimConfig,
               rng: np.random.Generator) -> FitResult:
    """Fit one method at one hyperparameter pair on the shared engine."""
    p1, p2 = float(params[0]), float(params[1])
    if method == "bernoulli":
        return fit(spec, y, NoiseSpec.bernoulli(p1, p2), config, rng)
    if method == "gaussian":
        return fit(spec, y, NoiseSpec.gaussian(p1, p2), config, rng)
    if method == "pmle":
        penalty = DiffPenalty(lam_mean=p1, lam_disp=p2,
                              dim_mean=spec.X.shape[1], dim_disp=spec.Z.shape[1])
        return pmle_fit(spec, y, penalty, config, rng)
    raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")


def _heldout_loglik(spec: GlmSpec, y, idx_test, result: FitResult) -> float:
    if result.diverged:
        return -np.inf
    test = spec.rows(idx_test).with_coefs(result.beta, result.alpha)
    value = loglik(test, y[idx_test], include_base_measure=True)
    return value if np.isfinite(value) else -np.inf


def random_search_cv(spec: GlmSpec, y, method: str, plan: CvPlan,
                     config: OptimConfig) -> CvResult:
    """Run the search; ``spec`` carries the full-data designs (coefficients
    in it are ignored, each fold fit starts fresh)."""
    if method == "bernoulli":
        (lo1, hi1), (lo2, hi2) = plan.rect
        if hi1 > 1.0 or hi2 > 1.0:
            raise ConfigError("bernoulli dropout probabilities live in [0, 1]")
    y = np.asarray(y, dtype=float)
    n = spec.n
    folds = make_folds(n, plan.n_folds, substream(plan.seed, "folds"))
    draws = substream(plan.seed, "params").random((plan.n_samples, 2))
    rect = np.asarray(plan.rect, dtype=float)
    params = rect[:, 0] + draws * (rect[:, 1] - rect[:, 0])

    fold_logliks = np.empty((plan.n_samples, plan.n_folds))
    divergent = 0
    for j in range(plan.n_samples):
        for f in range(plan.n_folds):
            train = np.flatnonzero(folds != f)
            test = np.flatnonzero(folds == f)
            rng = substream(plan.seed, "cvfit", j, f)
            result = fit_method(spec.rows(train), y[train], method, params[j],
                                config, rng)
            value = _heldout_loglik(spec, y, test, result)
            if value == -np.inf:
                divergent += 1
            fold_logliks[j, f] = value

    mean_logliks = np.where(
        np.all(np.isfinite(fold_logliks), axis=1), fold_logliks.mean(axis=1), -np.inf
    )
    selected = int(np.argmax(mean_logliks))
    return CvResult(params=params, fold_logliks=fold_logliks,
                    mean_logliks=mean_logliks, selected_index=selected,
                    divergent_folds=divergent)


def cv_table(result: CvResult):
    """(header, rows) for the CV table CSV."""
    k = result.fold_logliks.shape[1]
    header = (["sample_index", "param1", "param2"]
              + [f"fold_loglik_{f + 1}" for f in range(k)]
              + ["mean_loglik", "selected_flag"])
    rows = []
    for j in range(result.params.shape[0]):
        rows.append(
            [j, result.params[j, 0], result.params[j, 1]]
            + [result.fold_logliks[j, f] for f in range(k)]
            + [result.mean_logliks[j], int(j == result.selected_index)]
        )
    return header, rows
