"""Linear-quadratic MFG with common noise and its Riccati closed form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..sde import ProblemDefinition, rollout


@dataclass(frozen=True)
class LqParams:
    sigma: float = 0.2
    q: float = 1.0
    a: float = 1.0
    eps: float = 1.5
    rho: float = 0.2
    c: float = 1.0
    x0_low: float = 0.0
    x0_high: float = 1.0

    def __post_init__(self):
        for name in ("sigma", "q", "a", "eps", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LQ parameter {name} must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.q**2 > self.eps:
            raise ValueError("need q**2 <= eps for a jointly convex Hamiltonian")
        if self.x0_high <= self.x0_low:
            raise ValueError("empty initial-state interval")

    @property
    def mean_x0(self) -> float:
        return 0.5 * (self.x0_low + self.x0_high)

    @property
    def var_x0(self) -> float:
        return (self.x0_high - self.x0_low) ** 2 / 12.0


class LqProblem(ProblemDefinition):
    """dX = [a(m - X) + alpha] dt + sigma(rho dB + sqrt(1 - rho^2) dW)."""

    name = "lq"
    sense = "minimize"
    control_names = ("alpha",)
    control_hidden = {"alpha": (64, 64)}

    def __init__(self, params: LqParams | None = None):
        self.params = params or LqParams()

    def initial_state(self, types, rng):
        p = self.params
        return rng.uniform(p.x0_low, p.x0_high, size=types.shape[0])

    def drift(self, t, x, mu, u, types):
        return self.params.a * (mu[:, 0] - x) + u["alpha"]

    def diffusion(self, t, x, mu, u, types):
        p = self.params
        return p.sigma * np.sqrt(1.0 - p.rho**2)

    def common_diffusion(self, t, x, mu, u, types):
        return self.params.sigma * self.params.rho

    def running_cost(self, t, x, mu, u, types):
        p = self.params
        gap = mu[:, 0] - x
        a = u["alpha"]
        return 0.5 * ad.square(a) - p.q * a * gap + 0.5 * p.eps * ad.square(gap)

    def terminal_cost(self, x, mu, types):
        return 0.5 * self.params.c * ad.square(mu[:, 0] - x)


def riccati_eta(t, params: LqParams, T: float = 1.0):
    """Closed-form solution of eta' = 2(a+q) eta + eta^2 - (eps - q^2), eta_T = c."""
    p = params
    t = np.asarray(t, dtype=np.float64)
    R = (p.a + p.q) ** 2 + (p.eps - p.q**2)
    dp = -(p.a + p.q) + np.sqrt(R)
    dm = -(p.a + p.q) - np.sqrt(R)
    e = np.exp((dp - dm) * (T - t))
    k = p.eps - p.q**2
    num = -k * (e - 1.0) - p.c * (dp * e - dm)
    den = (dm * e - dp) - p.c * (e - 1.0)
    if np.any(np.abs(den) < 1e-14):
        raise ValueError("Riccati denominator vanishes for these parameters")
    return num / den


class LqOracleControl:
    """alpha* = (q + eta_t)(m_t - X_t), reading (t, x, m) from the net-input layout."""

    def __init__(self, params: LqParams, T: float = 1.0):
        self.params, self.T = params, T

    def __call__(self, inp, params=None):
        inp = ad.value(inp)
        t, x, m = inp[:, 0], inp[:, 1], inp[:, 2]
        return ((self.params.q + riccati_eta(t, self.params, self.T)) * (m - x))[:, None]


@dataclass
class LqOracle:
    eta: np.ndarray
    m: np.ndarray
    alpha: np.ndarray
    X: np.ndarray
    value: float
    cost: np.ndarray


def oracle_flow(params: LqParams, B: np.ndarray) -> np.ndarray:
    """m_t = E[X0] + rho sigma B_t on each path; ``B`` is (N, L+1, 1). Returns (N, L+1, 1)."""
    return params.mean_x0 + params.rho * params.sigma * B[..., :1]


def optimal_value(params: LqParams, grid: np.ndarray) -> float:
    """E[V(0, x0 - E x0)] with V(t, x) = eta_t x^2 / 2 + mu_t (trapezoid for mu_0)."""
    T = grid[-1]
    eta = riccati_eta(grid, params, T)
    mu0 = 0.5 * params.sigma**2 * (1.0 - params.rho**2) * np.trapezoid(eta, grid)
    return float(0.5 * eta[0] * params.var_x0 + mu0)


def lq_oracle(params: LqParams, x0, noise) -> LqOracle:
    problem = LqProblem(params)
    grid = noise.grid
    m = oracle_flow(params, noise.common_path())
    ctrl = {"alpha": LqOracleControl(params, grid[-1])}
    _, cost, traj = rollout(problem, ctrl, x0, np.empty((len(x0), 0)), m, noise)
    return LqOracle(
        eta=riccati_eta(grid, params, grid[-1]),
        m=m[..., 0],
        alpha=traj.controls["alpha"],
        X=traj.X,
        value=optimal_value(params, grid),
        cost=np.asarray(cost),
    )
