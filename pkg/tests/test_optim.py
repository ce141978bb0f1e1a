import numpy as np
import pytest

from dropglm import families as fam
from dropglm.dropout import NoiseSpec
from dropglm.errors import ConfigError
from dropglm.model import GlmSpec, loglik, score
from dropglm.optim import AdadeltaState, OptimConfig, adadelta_step, fit


def reference_adadelta(grads, rho, eps):
    """Independently coded scalar reference of the ADADELTA recurrences."""
    eg = [0.0] * len(grads[0])
    es = [0.0] * len(grads[0])
    out = []
    for g in grads:
        step = []
        for j, gj in enumerate(g):
            eg[j] = rho * eg[j] + (1.0 - rho) * gj * gj
            sj = ((es[j] + eps) / (eg[j] + eps)) ** 0.5 * gj
            es[j] = rho * es[j] + (1.0 - rho) * sj * sj
            step.append(sj)
        out.append(step)
    return np.asarray(out)


class TestAdadelta:
    def test_zero_gradient_zero_update(self):
        state = AdadeltaState(np.array([0.4]), np.array([0.2]))
        step, new = adadelta_step(state, np.zeros(1), 0.95, 1e-6)
        assert step[0] == 0.0
        assert new.avg_sq_grad[0] == pytest.approx(0.95 * 0.4)
        assert new.avg_sq_step[0] == pytest.approx(0.95 * 0.2)

    def test_first_step_magnitude(self):
        # Fresh accumulators, g = 1: E[g^2] = 0.05, |step| = sqrt(1e-6/0.050001).
        step, new = adadelta_step(AdadeltaState.zeros(1), np.ones(1), 0.95, 1e-6)
        assert new.avg_sq_grad[0] == pytest.approx(0.05)
        assert step[0] == pytest.approx(np.sqrt(1e-6 / 0.050001), rel=1e-10)

    def test_matches_reference_over_scripted_sequence(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=(10, 4))
        expected = reference_adadelta(grads.tolist(), 0.95, 1e-6)
        state = AdadeltaState.zeros(4)
        for i, g in enumerate(grads):
            step, state = adadelta_step(state, g, 0.95, 1e-6)
            assert np.max(np.abs(step - expected[i])) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            adadelta_step(AdadeltaState.zeros(2), np.zeros(3), 0.95, 1e-6)


def quadratic_problem(rng, n=80, d=4):
    X = rng.normal(size=(n, d))
    beta_true = rng.normal(size=d)
    y = X @ beta_true + 0.1 * rng.normal(size=n)
    # All-zero dispersion design freezes alpha at 0 (its score vanishes).
    Z = np.zeros((n, 1))
    spec = GlmSpec(kernel=fam.gaussian(), X=X, Z=Z, beta=np.zeros(d),
                   alpha=np.zeros(1))
    return spec, y


class TestFit:
    def test_quadratic_converges_to_least_squares(self):
        # Exact (full-batch) gradients: the tail-averaged iterate must land
        # on the closed-form least-squares solution.
        rng = np.random.default_rng(1)
        spec, y = quadratic_problem(rng)
        target, *_ = np.linalg.lstsq(spec.X, y, rcond=None)
        config = OptimConfig(batch_size=spec.n, max_iters=40_000, tol=1e-12)
        res = fit(spec, y, NoiseSpec.none(), config, np.random.default_rng(2))
        assert np.linalg.norm(res.beta - target) < 1e-3
        assert np.allclose(res.alpha, 0.0)

    def test_ascent_sanity(self):
        rng = np.random.default_rng(3)
        n = 60
        X = np.column_stack([np.ones(n), rng.random(n)])
        Z = X.copy()
        spec = GlmSpec(kernel=fam.poisson(), X=X, Z=Z, beta=np.zeros(2),
                       alpha=np.zeros(2))
        y = rng.poisson(3.0, n).astype(float)
        config = OptimConfig(batch_size=20, max_iters=3000, tol=1e-12)
        res = fit(spec, y, NoiseSpec.none(), config, np.random.default_rng(4))
        final = loglik(spec.with_coefs(res.beta, res.alpha), y)
        # Initialization: warm-started beta, alpha = 0.
        from dropglm.optim import warm_start_beta

        start = loglik(spec.with_coefs(warm_start_beta(spec, y),
                                       np.zeros(2)), y)
        assert final >= start

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        spec, y = quadratic_problem(rng, n=50)
        config = OptimConfig(batch_size=10, max_iters=500, tol=1e-12)
        noise = NoiseSpec.bernoulli(0.2, 0.3)
        a = fit(spec, y, noise, config, np.random.default_rng(11))
        b = fit(spec, y, noise, config, np.random.default_rng(11))
        assert np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.alpha, b.alpha)
        assert np.array_equal(a.trace_loglik, b.trace_loglik)
        assert a.termination == b.termination and a.n_iter == b.n_iter

    def test_batch_score_is_unbiased(self):
        # (n/b) * batch score averages to the full score across batch draws.
        rng = np.random.default_rng(6)
        n, b = 40, 10
        X = rng.normal(size=(n, 3))
        Z = rng.normal(size=(n, 2)) * 0.5
        spec = GlmSpec(kernel=fam.poisson(), X=X, Z=Z,
                       beta=rng.normal(size=3) * 0.2,
                       alpha=rng.normal(size=2) * 0.2)
        y = rng.poisson(np.exp(np.clip(spec.theta, -3, 3))).astype(float)
        full = score(spec, y)
        draws = 10_000
        batch_rng = np.random.default_rng(7)
        samples = np.empty((draws, 5))
        for t in range(draws):
            idx = batch_rng.choice(n, size=b, replace=False)
            rep = score(spec.rows(idx), y[idx])
            samples[t] = (n / b) * np.concatenate([rep.score_beta, rep.score_alpha])
        target = np.concatenate([full.score_beta, full.score_alpha])
        se = samples.std(axis=0, ddof=1) / np.sqrt(draws)
        assert np.all(np.abs(samples.mean(axis=0) - target) <= 3 * se)

    def test_stationary_termination_reported(self):
        rng = np.random.default_rng(8)
        spec, y = quadratic_problem(rng, n=50)
        config = OptimConfig(batch_size=25, max_iters=60_000, tol=1e-6)
        res = fit(spec, y, NoiseSpec.none(), config, np.random.default_rng(9))
        assert res.termination in ("stationary", "max-iter")
        assert np.all(np.isfinite(res.trace_loglik))

    def test_batch_larger_than_n_rejected(self):
        rng = np.random.default_rng(10)
        spec, y = quadratic_problem(rng, n=10)
        with pytest.raises(ConfigError):
            fit(spec, y, NoiseSpec.none(), OptimConfig(batch_size=11),
                np.random.default_rng(0))

    def test_smoothed_objective_nondecreasing_noise_free(self):
        # Strictly concave noise-free problem: windowed means of the traced
        # objective should not decrease (beyond tiny SGD jitter).
        rng = np.random.default_rng(12)
        spec, y = quadratic_problem(rng)
        config = OptimConfig(batch_size=40, max_iters=20_000, tol=1e-14,
                             trace_every=100)
        res = fit(spec, y, NoiseSpec.none(), config, np.random.default_rng(13))
        vals = res.trace_loglik
        window = 10
        means = np.array([vals[i : i + window].mean()
                          for i in range(0, len(vals) - window, window)])
        drops = np.diff(means)
        assert drops.min() > -1e-3 * (1 + np.abs(means[:-1]).max())
