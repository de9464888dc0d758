"""Heterogeneous mean-field portfolio game with exponential utility."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..sde import ProblemDefinition, rollout
from .common import uniform_expectation

TYPE_NAMES = ("xi", "delta", "theta", "mu", "nu", "sigma")


def _default_ranges():
    return {
        "xi": (0.0, 1.0),
        "delta": (5.0, 5.5),
        "theta": (0.0, 1.0),
        "mu": (0.25, 0.35),
        "nu": (0.2, 0.4),
        "sigma": (0.2, 0.4),
    }


@dataclass(frozen=True)
class PortfolioParams:
    """Uniform ranges of the type vector zeta = (xi, delta, theta, mu, nu, sigma)."""

    ranges: dict = field(default_factory=_default_ranges)

    def __post_init__(self):
        missing = set(TYPE_NAMES) - set(self.ranges)
        if missing:
            raise ValueError(f"missing type ranges {sorted(missing)}")
        for name, (lo, hi) in self.ranges.items():
            if hi < lo:
                raise ValueError(f"empty range for {name}")
        if self.ranges["sigma"][1] <= 0 and self.ranges["nu"][1] <= 0:
            raise ValueError("need sigma^2 + nu^2 > 0")


class PortfolioProblem(ProblemDefinition):
    """dX = pi (mu dt + nu dW + sigma dB); maximise E[-exp(-(X_T - theta m_T) / delta)]."""

    name = "portfolio"
    sense = "maximize"
    type_names = TYPE_NAMES
    control_names = ("pi",)
    control_hidden = {"pi": (64, 32, 32, 16)}

    def __init__(self, params: PortfolioParams | None = None):
        self.params = params or PortfolioParams()

    def sample_types(self, rng, N):
        return np.column_stack([rng.uniform(*self.params.ranges[k], size=N) for k in TYPE_NAMES])

    def type_ranges(self):
        return [tuple(self.params.ranges[k]) for k in TYPE_NAMES]

    def initial_state(self, types, rng):
        return types[:, 0].copy()

    def drift(self, t, x, mu, u, types):
        return u["pi"] * types[:, 3]

    def diffusion(self, t, x, mu, u, types):
        return u["pi"] * types[:, 4]

    def common_diffusion(self, t, x, mu, u, types):
        return u["pi"] * types[:, 5]

    def terminal_cost(self, x, mu, types):
        delta, theta = types[:, 1], types[:, 2]
        return -ad.exp((theta * mu[:, 0] - x) / delta)


@dataclass
class PortfolioConstants:
    phi: float
    psi: float
    phi_tilde: float
    psi_tilde: float
    mean_xi: float

    @property
    def k(self) -> float:
        return self.phi / (1.0 - self.psi)

    @property
    def mean_mu_pi(self) -> float:
        return self.psi_tilde + self.phi_tilde * self.k

    @property
    def mean_sigma_pi(self) -> float:
        return self.k


def portfolio_constants(params: PortfolioParams, order: int = 32) -> PortfolioConstants:
    r = params.ranges
    sub = lambda *names: {n: r[n] for n in names}
    phi = uniform_expectation(lambda delta, mu, nu, sigma: delta * mu * sigma / (sigma**2 + nu**2),
                              sub("delta", "mu", "nu", "sigma"), order)
    psi = uniform_expectation(lambda theta, nu, sigma: theta * sigma**2 / (sigma**2 + nu**2),
                              sub("theta", "nu", "sigma"), order)
    psi_t = uniform_expectation(lambda delta, mu, nu, sigma: delta * mu**2 / (sigma**2 + nu**2),
                                sub("delta", "mu", "nu", "sigma"), order)
    phi_t = uniform_expectation(lambda theta, mu, nu, sigma: theta * mu * sigma / (sigma**2 + nu**2),
                                sub("theta", "mu", "nu", "sigma"), order)
    if psi >= 1.0:
        raise ValueError(f"psi = {psi} >= 1: the fixed point degenerates")
    return PortfolioConstants(float(phi), float(psi), float(phi_t), float(psi_t), float(np.mean(r["xi"])))


def optimal_pi(types: np.ndarray, const: PortfolioConstants) -> np.ndarray:
    delta, theta, mu, nu, sigma = (types[:, j] for j in range(1, 6))
    s2 = sigma**2 + nu**2
    return delta * mu / s2 + theta * sigma / s2 * const.k


def discount_rate(delta, theta, mu, nu, sigma, const: PortfolioConstants):
    s2 = sigma**2 + nu**2
    kd = theta / delta * const.k
    return (
        (mu + kd * sigma) ** 2 / (2.0 * s2)
        - theta / delta * (const.psi_tilde + const.phi_tilde * const.k)
        - 0.5 * kd**2
    )


def optimal_value(params: PortfolioParams, const: PortfolioConstants, T: float = 1.0, order: int = 32) -> float:
    """E[v(0, xi - theta E[xi])] with v(t, x) = -exp(-x / delta) exp(-rho (T - t))."""
    def integrand(xi, delta, theta, mu, nu, sigma):
        rho = discount_rate(delta, theta, mu, nu, sigma, const)
        return -np.exp(-(xi - theta * const.mean_xi) / delta) * np.exp(-rho * T)

    return float(uniform_expectation(integrand, dict(params.ranges), order))


class PortfolioOracleControl:
    def __init__(self, const: PortfolioConstants):
        self.const = const

    def __call__(self, inp, params=None):
        inp = ad.value(inp)
        return optimal_pi(inp[:, :6], self.const)[:, None]


def oracle_flow(const: PortfolioConstants, grid: np.ndarray, B: np.ndarray) -> np.ndarray:
    """m_t = E[xi] + E[mu pi*] t + E[sigma pi*] B_t, shape (N, L+1, 1)."""
    return (const.mean_xi + const.mean_mu_pi * grid[None, :] + const.mean_sigma_pi * B[..., 0])[..., None]


@dataclass
class PortfolioOracle:
    const: PortfolioConstants
    pi: np.ndarray
    m: np.ndarray
    X: np.ndarray
    value: float
    cost: np.ndarray


def portfolio_oracle(params: PortfolioParams, types, x0, noise, order: int = 32) -> PortfolioOracle:
    const = portfolio_constants(params, order)
    grid = noise.grid
    m = oracle_flow(const, grid, noise.common_path())
    problem = PortfolioProblem(params)
    _, cost, traj = rollout(problem, {"pi": PortfolioOracleControl(const)}, x0, types, m, noise)
    return PortfolioOracle(
        const=const,
        pi=traj.controls["pi"],
        m=m[..., 0],
        X=traj.X,
        value=optimal_value(params, const, grid[-1], order),
        cost=np.asarray(cost),
    )
