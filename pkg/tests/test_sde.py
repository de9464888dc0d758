import numpy as np
import pytest

from sigdfp import autodiff as ad
from sigdfp.benchmarks import lq, mc_standard_error
from sigdfp.driver import RunConfig, init_nets
from sigdfp.sde import NumericalAbort, ProblemDefinition, rollout, sample_brownian, uniform_grid


class Const:
    """Control returning a fixed value regardless of input."""

    def __init__(self, v):
        self.v = v

    def __call__(self, inp, params=None):
        return np.full((ad.value(inp).shape[0], 1), self.v)


class Inert(ProblemDefinition):
    """b = sigma = sigma0 = 0, f = 0, g(x) = x."""

    def drift(self, t, x, mu, u, types):
        return 0.0 * x

    diffusion = common_diffusion = drift

    def terminal_cost(self, x, mu, types):
        return x


class LogGbm(ProblemDefinition):
    """d log X = pi (mu dt + nu dW + sigma dB) - pi^2 (nu^2 + sigma^2) / 2 dt."""

    state_transform = "log"
    control_names = ("pi",)
    MU, NU, SIG = 0.3, 0.25, 0.35

    def initial_state(self, types, rng):
        return np.full(types.shape[0], 1.5)

    def drift(self, t, y, mu, u, types):
        return u["pi"] * self.MU - 0.5 * (self.NU**2 + self.SIG**2) * u["pi"] ** 2

    def diffusion(self, t, y, mu, u, types):
        return u["pi"] * self.NU

    def common_diffusion(self, t, y, mu, u, types):
        return u["pi"] * self.SIG

    def terminal_cost(self, y, mu, types):
        return y


def test_antithetic_pairs_and_zero_mean():
    b = sample_brownian(2, 10, 1.0, 1, 1, seed=0)
    assert np.array_equal(b.dW[1], -b.dW[0]) and np.array_equal(b.dB[1], -b.dB[0])
    big = sample_brownian(64, 10, 1.0, 2, 3, seed=1)
    assert np.sum(big.dW) == 0.0 and np.sum(big.dB) == 0.0
    assert np.array_equal(big.dW[32:], -big.dW[:32])


def test_odd_antithetic_rejected():
    with pytest.raises(ValueError):
        sample_brownian(3, 10, 1.0, 1, 1, seed=0)
    assert sample_brownian(3, 10, 1.0, 1, 1, seed=0, antithetic=False).n_paths == 3


def test_increment_variance():
    """[DERIVED] sample variance of n = 2^14 * 100 iid N(0, 0.01) has sd 0.01 sqrt(2/n)."""
    b = sample_brownian(2**15, 100, 1.0, 1, 0, seed=7)
    x = b.dW[: 2**14].ravel()
    se = 0.01 * np.sqrt(2.0 / x.size)
    assert abs(x.var() - 0.01) < 3 * se


def test_seed_determinism_and_paths():
    a = sample_brownian(8, 5, 1.0, 1, 1, seed=3)
    b = sample_brownian(8, 5, 1.0, 1, 1, seed=3)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dB, b.dB)
    B = a.common_path()
    assert B.shape == (8, 6, 1) and np.all(B[:, 0] == 0) and np.allclose(B[:, -1, 0], a.dB.sum(1)[:, 0])


def test_inert_problem_cost_is_mean_x0():
    noise = sample_brownian(10, 7, 1.0, 1, 1, seed=2)
    x0 = np.random.default_rng(0).uniform(size=10)
    J, cost, traj = rollout(Inert(), {"alpha": Const(0.0)}, x0, np.empty((10, 0)), np.zeros((10, 8, 1)), noise)
    assert float(J) == pytest.approx(x0.mean(), abs=1e-15)
    assert np.array_equal(traj.X, np.repeat(x0[:, None], 8, axis=1))


def test_lq_uncontrolled_telescopes():
    p = lq.LqParams(a=1e-300)  # a > 0 is required; the drift term is then numerically zero
    noise = sample_brownian(6, 20, 1.0, 1, 1, seed=4)
    x0 = np.linspace(0, 1, 6)
    _, _, traj = rollout(lq.LqProblem(p), {"alpha": Const(0.0)}, x0, np.empty((6, 0)),
                         np.zeros((6, 21, 1)), noise)
    expect = x0[:, None] + p.sigma * (p.rho * noise.common_path()[..., 0]
                                      + np.sqrt(1 - p.rho**2) * noise.idio_path()[..., 0])
    assert np.allclose(traj.X, expect, rtol=0, atol=1e-14)


def test_log_gbm_mean_of_log_terminal():
    """[DERIVED] E log X_T = log X_0 + (pi mu - pi^2 (sigma^2 + nu^2) / 2) T, exact under Euler too."""
    pi, N = 0.8, 2**14
    noise = sample_brownian(N, 50, 1.0, 1, 1, seed=5)
    prob = LogGbm()
    _, cost, traj = rollout(prob, {"pi": Const(pi)}, np.full(N, 1.5), np.empty((N, 0)), np.zeros((N, 51, 1)), noise)
    expect = np.log(1.5) + pi * prob.MU - 0.5 * pi**2 * (prob.NU**2 + prob.SIG**2)
    assert abs(np.mean(cost) - expect) < 3 * mc_standard_error(cost) + 1e-12
    assert np.allclose(np.log(traj.X), traj.state)


def _lq_const_cost(L, N=2**14, seed=0):
    """LQ cost under a fixed smooth feedback with a frozen deterministic flow."""
    p = lq.LqParams()
    prob = lq.LqProblem(p)
    noise = sample_brownian(N, L, 1.0, 1, 1, seed)
    x0 = np.random.default_rng(seed).uniform(size=N)
    m = np.broadcast_to((0.5 + 0.3 * uniform_grid(1.0, L))[None, :, None], (N, L + 1, 1))
    J, _, _ = rollout(prob, {"alpha": lq.LqOracleControl(p)}, x0, np.empty((N, 0)), m, noise)
    return float(J)


def test_weak_euler_bias_halves():
    # bias of a first-order scheme ~ C / L; the same seed keeps Monte Carlo noise common-mode
    fine = np.mean([_lq_const_cost(400, seed=s) for s in range(2)])
    J25, J50, J100 = (np.mean([_lq_const_cost(L, seed=s) for s in range(2)]) for L in (25, 50, 100))
    r1 = abs(J25 - fine) / abs(J50 - fine)
    r2 = abs(J50 - fine) / abs(J100 - fine)
    assert 1.3 <= r1 <= 3.0 and 1.3 <= r2 <= 3.5


def _lq_estimates(antithetic, reps=100, N=256, L=10):
    """Cost and terminal-mean estimates on the LQ benchmark at its oracle equilibrium."""
    p = lq.LqParams()
    prob = lq.LqProblem(p)
    costs, means = [], []
    for s in range(reps):
        noise = sample_brownian(N, L, 1.0, 1, 1, seed=s, antithetic=antithetic)
        x0 = np.random.default_rng(10**6 + s).uniform(size=N)
        m = lq.oracle_flow(p, noise.common_path())
        J, _, traj = rollout(prob, {"alpha": lq.LqOracleControl(p)}, x0, np.empty((N, 0)), m, noise)
        costs.append(float(J))
        means.append(traj.X[:, -1].mean())
    return np.array(costs), np.array(means)


@pytest.fixture(scope="module")
def lq_estimates():
    return {anti: _lq_estimates(anti) for anti in (True, False)}


def test_antithetic_reduces_variance_of_odd_functionals(lq_estimates):
    # X_T is affine in the noise, so the paired halves cancel the noise part exactly
    assert np.var(lq_estimates[True][1]) < 0.5 * np.var(lq_estimates[False][1])


@pytest.mark.xfail(strict=True, reason=(
    "the LQ cost is dominated by terms even in the noise; antithetic pairs then "
    "duplicate rather than cancel, so the cost variance grows (see decisions ledger)"))
def test_antithetic_reduces_variance_of_lq_cost(lq_estimates):
    assert np.var(lq_estimates[True][0]) <= np.var(lq_estimates[False][0])


def test_rollout_deterministic():
    prob = lq.LqProblem()
    nets = init_nets(prob, RunConfig(), np.random.default_rng(0))
    noise = sample_brownian(16, 10, 1.0, 1, 1, seed=1)
    x0 = np.linspace(0, 1, 16)
    mu = np.full((16, 11, 1), 0.4)
    a = rollout(prob, nets, x0, np.empty((16, 0)), mu, noise)[2]
    b = rollout(prob, nets, x0, np.empty((16, 0)), mu, noise)[2]
    assert np.array_equal(a.X, b.X) and np.array_equal(a.cost, b.cost)


def test_nonfinite_state_aborts_with_location():
    class Explode(Inert):
        def drift(self, t, x, mu, u, types):
            return np.where(np.arange(len(x)) == 3, np.inf, 0.0)

    noise = sample_brownian(6, 4, 1.0, 1, 1, seed=0)
    with pytest.raises(NumericalAbort) as info:
        rollout(Explode(), {"alpha": Const(0.0)}, np.zeros(6), np.empty((6, 0)), np.zeros((6, 5, 1)), noise,
                iteration=12)
    assert info.value.path == 3 and info.value.step == 1 and info.value.iteration == 12
