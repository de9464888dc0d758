"""Mean-field game of optimal consumption and investment (power utility).

Agents interact through ``m_t = exp E[log X_t | F^B_t]`` and
``Gamma_t = exp E[log c_t | F^B_t]``. The simulated state is ``log X``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..sde import ProblemDefinition, rollout
from .common import product_grid, uniform_log_mean, uniform_power_mean


def _default_ranges():
    return {
        "xi": (0.0, 1.0),
        "delta": (2.0, 2.5),
        "theta": (0.0, 1.0),
        "mu": (0.25, 0.35),
        "nu": (0.2, 0.4),
        "sigma": (0.2, 0.4),
        "eps": (0.5, 1.0),
    }


@dataclass(frozen=True)
class ConsumptionParams:
    """Uniform type ranges; with ``n0 > 1`` each sigma component uses the sigma range."""

    ranges: dict = field(default_factory=_default_ranges)
    n0: int = 1

    def __post_init__(self):
        r = self.ranges
        missing = {"xi", "delta", "theta", "mu", "nu", "sigma", "eps"} - set(r)
        if missing:
            raise ValueError(f"missing type ranges {sorted(missing)}")
        if r["delta"][0] <= 1.0 <= r["delta"][1]:
            raise ValueError("delta must stay away from 1")
        if r["xi"][1] <= 0 or r["xi"][0] < 0:
            raise ValueError("initial wealth xi must be positive")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")

    @property
    def type_names(self) -> tuple[str, ...]:
        sig = ("sigma",) if self.n0 == 1 else tuple(f"sigma{j + 1}" for j in range(self.n0))
        return ("xi", "delta", "theta", "mu", "nu", *sig, "eps")


class ConsumptionProblem(ProblemDefinition):
    """d log X = pi (mu dt + nu dW + sigma . dB) - (c + pi^2 (|sigma|^2 + nu^2) / 2) dt."""

    name = "consumption"
    sense = "maximize"
    state_transform = "log"
    n_idio = 1
    flow_transforms = ("exp", "exp")
    control_names = ("pi", "log_c")
    control_hidden = {"pi": (64, 64, 64), "log_c": (64, 64, 64)}

    def __init__(self, params: ConsumptionParams | None = None):
        self.params = params or ConsumptionParams()
        self.n_common = self.params.n0
        self.type_names = self.params.type_names

    # column layout: xi, delta, theta, mu, nu, sigma_1..sigma_n0, eps
    def _cols(self, types):
        n0 = self.params.n0
        return types[:, 1], types[:, 2], types[:, 3], types[:, 4], types[:, 5:5 + n0], types[:, 5 + n0]

    def sample_types(self, rng, N):
        r = self.params.ranges
        cols = [rng.uniform(*r[k], size=N) for k in ("xi", "delta", "theta", "mu", "nu")]
        cols += [rng.uniform(*r["sigma"], size=N) for _ in range(self.params.n0)]
        cols.append(rng.uniform(*r["eps"], size=N))
        return np.column_stack(cols)

    def type_ranges(self):
        r = self.params.ranges
        names = ("xi", "delta", "theta", "mu", "nu", *("sigma",) * self.params.n0, "eps")
        return [tuple(r[k]) for k in names]

    def initial_state(self, types, rng):
        return types[:, 0].copy()

    def drift(self, t, y, mu, u, types):
        delta, theta, m, nu, sig, eps = self._cols(types)
        s2 = np.sum(sig**2, axis=1) + nu**2
        pi = u["pi"]
        return pi * m - ad.exp(u["log_c"]) - 0.5 * s2 * ad.square(pi)

    def diffusion(self, t, y, mu, u, types):
        return u["pi"] * types[:, 4]

    def common_diffusion(self, t, y, mu, u, types):
        sig = self._cols(types)[4]
        if sig.shape[1] == 1:
            return u["pi"] * sig[:, 0]
        return ad.columns([u["pi"] * sig[:, j] for j in range(sig.shape[1])])

    def running_cost(self, t, y, mu, u, types):
        delta, theta = types[:, 1], types[:, 2]
        p = 1.0 - 1.0 / delta
        log_pop = np.log(mu[:, 1]) + np.log(mu[:, 0])
        return ad.exp(p * (u["log_c"] + y - theta * log_pop)) / p

    def terminal_cost(self, y, mu, types):
        delta, theta, *_, eps = self._cols(types)
        p = 1.0 - 1.0 / delta
        return eps * ad.exp(p * (y - theta * np.log(mu[:, 0]))) / p

    def moments(self, y, u):
        return [y, u["log_c"]]


def _h(tau, lam, beta):
    """1/c* as a function of time-to-go; stable through beta -> 0."""
    tau = np.asarray(tau, dtype=np.float64)
    small = np.abs(beta) < 1e-12
    b = np.where(small, 1.0, beta)
    gen = np.exp(-b * tau) / lam - np.expm1(-b * tau) / b
    return np.where(small, 1.0 / lam + tau, gen)


@dataclass
class ConsumptionConstants:
    """Population constants entering the closed-form equilibrium."""

    phi: float
    psi: float
    mean_theta_dm1: float
    mean_log_eps_delta: float
    mean_delta_rho: float
    pop1: float
    pop2: float
    A: float
    K: float
    mean_log_xi: float
    T: float
    ranges: dict

    @property
    def k(self) -> float:
        return self.phi / (1.0 + self.psi)

    def pi(self, delta, theta, mu, nu, sigma):
        s2 = sigma**2 + nu**2
        return delta * mu / s2 - theta * (delta - 1.0) * sigma / s2 * self.k

    def rho(self, delta, theta, mu, nu, sigma):
        p = 1.0 - 1.0 / delta
        s2 = sigma**2 + nu**2
        k = self.k
        return p * (
            delta / (2.0 * s2) * (mu - sigma * k * theta * p) ** 2
            + 0.5 * k**2 * theta**2 * p
            - theta * self.pop1
            + 0.5 * theta * self.pop2
        )

    def lam(self, delta, theta, eps):
        expo = -theta * (delta - 1.0) / (1.0 + self.mean_theta_dm1)
        return eps ** (-delta) * np.exp(self.mean_log_eps_delta) ** expo

    def beta(self, delta, theta, mu, nu, sigma):
        return (
            theta * (delta - 1.0) * self.mean_delta_rho / (1.0 + self.mean_theta_dm1)
            - delta * self.rho(delta, theta, mu, nu, sigma)
        )

    def log_c(self, t, delta, theta, mu, nu, sigma, eps):
        lam = self.lam(delta, theta, eps)
        beta = self.beta(delta, theta, mu, nu, sigma)
        return -np.log(_h(self.T - t, lam, beta))

    def cum_c(self, t, delta, theta, mu, nu, sigma, eps):
        """Integral of c*_s over [0, t] (exact antiderivative)."""
        lam = self.lam(delta, theta, eps)
        beta = self.beta(delta, theta, mu, nu, sigma)
        return np.log(_h(self.T, lam, beta) / _h(self.T - t, lam, beta)) + beta * t


def consumption_constants(params: ConsumptionParams, T: float = 1.0, order: int = 32) -> ConsumptionConstants:
    if params.n0 != 1:
        raise NotImplementedError("closed-form benchmark exists only for one-dimensional common noise")
    r = params.ranges

    def E(fn, *names):
        args, w = product_grid({n: r[n] for n in names}, order)
        return float(np.sum(w * fn(**args)))

    phi = E(lambda delta, mu, nu, sigma: delta * mu * sigma / (sigma**2 + nu**2), "delta", "mu", "nu", "sigma")
    psi = E(lambda theta, delta, nu, sigma: theta * (delta - 1) * sigma**2 / (sigma**2 + nu**2),
            "theta", "delta", "nu", "sigma")
    k = phi / (1.0 + psi)
    pop1 = E(lambda theta, delta, mu, nu, sigma:
             (delta * mu**2 - theta * (delta - 1) * sigma * mu * k) / (sigma**2 + nu**2),
             "theta", "delta", "mu", "nu", "sigma")
    pop2 = E(lambda theta, delta, mu, nu, sigma:
             (delta * mu - theta * (delta - 1) * sigma * k) ** 2 / (sigma**2 + nu**2),
             "theta", "delta", "mu", "nu", "sigma")
    mean_theta_dm1 = E(lambda theta, delta: theta * (delta - 1), "theta", "delta")
    mean_log_eps_delta = -E(lambda delta: delta, "delta") * uniform_log_mean(*r["eps"])
    partial = ConsumptionConstants(phi, psi, mean_theta_dm1, mean_log_eps_delta, 0.0, pop1, pop2,
                                   0.0, 0.0, uniform_log_mean(*r["xi"]), T, dict(r))
    mean_delta_rho = E(lambda delta, theta, mu, nu, sigma: delta * partial.rho(delta, theta, mu, nu, sigma),
                       "delta", "theta", "mu", "nu", "sigma")

    def drift_term(delta, theta, mu, nu, sigma):
        pi = partial.pi(delta, theta, mu, nu, sigma)
        return pi * mu - 0.5 * pi**2 * (sigma**2 + nu**2)

    A = E(drift_term, "delta", "theta", "mu", "nu", "sigma")
    K = E(lambda delta, theta, mu, nu, sigma: partial.pi(delta, theta, mu, nu, sigma) * sigma,
          "delta", "theta", "mu", "nu", "sigma")
    partial.mean_delta_rho, partial.A, partial.K = mean_delta_rho, A, K
    return partial


def _type_grid(const: ConsumptionConstants, order: int):
    names = ("delta", "theta", "mu", "nu", "sigma", "eps")
    return product_grid({n: const.ranges[n] for n in names}, order)


def population_curves(const: ConsumptionConstants, grid: np.ndarray, order: int = 32):
    """E[log c*_t] and E[c*_t] on the time grid."""
    args, w = _type_grid(const, order)
    g = np.empty(len(grid))
    ec = np.empty(len(grid))
    for i, t in enumerate(grid):
        lc = const.log_c(t, **args)
        g[i] = np.sum(w * lc)
        ec[i] = np.sum(w * np.exp(lc))
    return g, ec


def log_m_curve(const: ConsumptionConstants, grid: np.ndarray, B: np.ndarray, order: int = 32) -> np.ndarray:
    """E[log X*_t | F^B_t] on each path; the consumption integral uses the trapezoid rule."""
    _, ec = population_curves(const, grid, order)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (ec[1:] + ec[:-1]) * np.diff(grid))])
    return const.mean_log_xi + const.A * grid[None, :] - cum[None, :] + const.K * B[..., 0]


def optimal_value(const: ConsumptionConstants, order: int = 32, n_time: int = 48) -> float:
    """Expected utility of the equilibrium strategy.

    Given the deterministic type-dependent (pi*, c*) and the equilibrium
    (m, Gamma), the utility integrands are lognormal in (W_t, B_t), so the
    expectation over the noise is explicit; time is integrated by
    Gauss-Legendre and types by the product rule.
    """
    T = const.T
    args, w = _type_grid(const, order)
    delta, theta, mu, nu, sigma, eps = (args[n] for n in ("delta", "theta", "mu", "nu", "sigma", "eps"))
    p = 1.0 - 1.0 / delta
    pi = const.pi(delta, theta, mu, nu, sigma)
    own = pi * mu - 0.5 * pi**2 * (sigma**2 + nu**2)
    V = pi**2 * nu**2 + (pi * sigma - theta * const.K) ** 2
    lo, hi = const.ranges["xi"]
    xi_factor = uniform_power_mean(lo, hi, p) * np.exp(-theta * p * const.mean_log_xi)

    def pop_cum(t):
        return float(np.sum(w * const.cum_c(t, **args)))

    def pop_logc(t):
        return float(np.sum(w * const.log_c(t, **args)))

    def log_det(t, with_c):
        out = own * t - const.cum_c(t, **args) - theta * (const.A * t - pop_cum(t))
        if with_c:
            out = out + const.log_c(t, **args) - theta * pop_logc(t)
        return out

    x, wt = np.polynomial.legendre.leggauss(n_time)
    ts = 0.5 * T * (x + 1.0)
    running = 0.0
    for t, wk in zip(ts, 0.5 * T * wt):
        running = running + wk * np.exp(p * log_det(t, True) + 0.5 * p**2 * t * V) / p
    terminal = eps * np.exp(p * log_det(T, False) + 0.5 * p**2 * T * V) / p
    return float(np.sum(w * xi_factor * (running + terminal)))


class ConsumptionOracleControl:
    """Reads the type columns and time from the net-input layout."""

    def __init__(self, const: ConsumptionConstants, which: str):
        self.const, self.which = const, which

    def __call__(self, inp, params=None):
        inp = ad.value(inp)
        delta, theta, mu, nu, sigma, eps, t = (inp[:, j] for j in (1, 2, 3, 4, 5, 6, 7))
        if self.which == "pi":
            out = self.const.pi(delta, theta, mu, nu, sigma)
        else:
            out = self.const.log_c(t, delta, theta, mu, nu, sigma, eps)
        return out[:, None]


def oracle_flow(const: ConsumptionConstants, grid: np.ndarray, B: np.ndarray, order: int = 32) -> np.ndarray:
    """(m_t, Gamma_t) on each path, shape (N, L+1, 2)."""
    g, _ = population_curves(const, grid, order)
    log_m = log_m_curve(const, grid, B, order)
    return np.stack([np.exp(log_m), np.broadcast_to(np.exp(g), log_m.shape)], axis=-1)


@dataclass
class ConsumptionOracle:
    const: ConsumptionConstants
    pi: np.ndarray
    c: np.ndarray
    m: np.ndarray
    gamma: np.ndarray
    X: np.ndarray
    value: float
    cost: np.ndarray


def consumption_oracle(params: ConsumptionParams, types, x0, noise, order: int = 32) -> ConsumptionOracle:
    grid = noise.grid
    const = consumption_constants(params, grid[-1], order)
    flow = oracle_flow(const, grid, noise.common_path(), order)
    problem = ConsumptionProblem(params)
    ctrl = {"pi": ConsumptionOracleControl(const, "pi"), "log_c": ConsumptionOracleControl(const, "log_c")}
    _, cost, traj = rollout(problem, ctrl, x0, types, flow, noise)
    if np.any(traj.X <= 0):
        raise RuntimeError("non-positive wealth on an oracle path")
    return ConsumptionOracle(
        const=const,
        pi=traj.controls["pi"],
        c=np.exp(traj.controls["log_c"]),
        m=flow[..., 0],
        gamma=flow[..., 1],
        X=traj.X,
        value=optimal_value(const, order),
        cost=np.asarray(cost),
    )
