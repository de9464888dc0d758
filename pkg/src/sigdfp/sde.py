"""Brownian sampling and Euler-Maruyama rollouts of controlled dynamics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class NumericalAbort(RuntimeError):
    """A state, cost or gradient went non-finite; carries where it happened."""

    def __init__(self, message, *, step=None, path=None, iteration=None):
        self.step, self.path, self.iteration = step, path, iteration
        where = ", ".join(
            f"{k}={v}" for k, v in (("iteration", iteration), ("path", path), ("step", step)) if v is not None
        )
        super().__init__(f"{message} ({where})" if where else message)


def uniform_grid(T: float, L: int) -> np.ndarray:
    return np.linspace(0.0, T, L + 1)


@dataclass(frozen=True)
class BrownianBatch:
    """Idiosyncratic increments ``dW`` (N, L, n) and common increments ``dB`` (N, L, n0)."""

    dW: np.ndarray
    dB: np.ndarray
    grid: np.ndarray
    seed: int | None = None

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    def common_path(self) -> np.ndarray:
        """Common noise levels ``B_{t_k}``, shape (N, L+1, n0), starting at 0."""
        zero = np.zeros((self.n_paths, 1, self.dB.shape[2]))
        return np.concatenate([zero, np.cumsum(self.dB, axis=1)], axis=1)

    def idio_path(self) -> np.ndarray:
        zero = np.zeros((self.n_paths, 1, self.dW.shape[2]))
        return np.concatenate([zero, np.cumsum(self.dW, axis=1)], axis=1)

    def subset(self, index) -> "BrownianBatch":
        return BrownianBatch(self.dW[index], self.dB[index], self.grid, self.seed)


def sample_brownian(N: int, L: int, T: float, n: int, n0: int, seed, antithetic: bool = True,
                    grid: np.ndarray | None = None) -> BrownianBatch:
    """Gaussian increments on a grid; with ``antithetic`` row ``i + N/2`` is ``-row i``."""
    if antithetic and N % 2:
        raise ValueError(f"antithetic sampling needs an even number of paths, got N={N}")
    grid = uniform_grid(T, L) if grid is None else np.asarray(grid, dtype=np.float64)
    dt = np.diff(grid)
    rng = np.random.default_rng(seed)
    m = N // 2 if antithetic else N
    z = rng.standard_normal((m, L, n + n0)) * np.sqrt(dt)[None, :, None]
    if antithetic:
        z = np.concatenate([z, -z], axis=0)
    return BrownianBatch(z[:, :, :n], z[:, :, n:], grid, seed if isinstance(seed, int) else None)


class ProblemDefinition:
    """Coefficients of one representative agent's control problem.

    Subclasses describe the *simulated* state variable. With
    ``state_transform = "log"`` that variable is ``log X`` and its drift must
    already carry the Ito correction; :meth:`physical` maps it back.

    ``mu`` handed to the coefficient functions is the ``(B, q)`` block of
    measure-flow values at the current time, already transformed per channel.
    """

    name = "problem"
    sense = "minimize"
    state_transform = "none"
    n_idio = 1
    n_common = 1
    type_names: tuple[str, ...] = ()
    flow_transforms: tuple[str, ...] = ("none",)
    control_names: tuple[str, ...] = ("alpha",)
    control_hidden: dict[str, tuple[int, ...]] = {"alpha": (64, 64)}

    # -- sampling ---------------------------------------------------------
    def sample_types(self, rng: np.random.Generator, N: int) -> np.ndarray:
        return np.empty((N, 0))

    def initial_state(self, types: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=types.shape[0])

    # -- controls ---------------------------------------------------------
    def physical(self, state):
        return ad.exp(state) if self.state_transform == "log" else state

    def to_state(self, x0):
        return np.log(x0) if self.state_transform == "log" else np.asarray(x0, dtype=np.float64)

    def net_inputs(self, t, state, mu, types):
        return ad.columns([*types.T, t, self.physical(state), *mu.T])

    def n_net_inputs(self) -> int:
        return len(self.type_names) + 2 + len(self.flow_transforms)

    def type_ranges(self) -> list[tuple[float, float]]:
        """Support ``(lo, hi)`` of each type column; empty for untyped problems."""
        return []

    def input_normalization(self) -> tuple[np.ndarray, np.ndarray]:
        """``(shift, scale)`` mapping each type input onto [-1, 1]; other inputs pass through."""
        n = self.n_net_inputs()
        shift, scale = np.zeros(n), np.ones(n)
        for j, (lo, hi) in enumerate(self.type_ranges()):
            shift[j] = 0.5 * (lo + hi)
            if hi > lo:
                scale[j] = 0.5 * (hi - lo)
        return shift, scale

    def controls(self, nets, params, t, state, mu, types) -> dict:
        inp = self.net_inputs(t, state, mu, types)
        return {
            name: nets[name](inp, None if params is None else params[name])[:, 0]
            for name in self.control_names
        }

    # -- coefficients -----------------------------------------------------
    def drift(self, t, state, mu, u, types):
        raise NotImplementedError

    def diffusion(self, t, state, mu, u, types):
        raise NotImplementedError

    def common_diffusion(self, t, state, mu, u, types):
        raise NotImplementedError

    def running_cost(self, t, state, mu, u, types):
        return 0.0

    def terminal_cost(self, state, mu, types):
        raise NotImplementedError

    def moments(self, state, u) -> list:
        """Regression targets (one per flow channel) at a single time."""
        return [self.physical(state)]

    @property
    def sign(self) -> float:
        return 1.0 if self.sense == "minimize" else -1.0


@dataclass
class TrajectoryBatch:
    """States ``X`` (N, L+1) in physical units, controls per name, per-path objective."""

    X: np.ndarray
    state: np.ndarray
    controls: dict
    cost: np.ndarray

    @property
    def objective(self) -> float:
        return float(np.mean(self.cost))


def _noise_term(coef, dZ_k):
    cv = ad.value(coef)
    if np.ndim(cv) == 2:
        return ad.total(coef * dZ_k, axis=1)
    return coef * dZ_k[:, 0]


def _check(arr, what, step, iteration):
    v = ad.value(arr)
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(np.ravel(v)))
        raise NumericalAbort(f"non-finite {what}", step=step, path=int(bad[0]), iteration=iteration)


def rollout(problem: ProblemDefinition, nets: dict, x0: np.ndarray, types: np.ndarray, mu: np.ndarray,
            noise: BrownianBatch, params=None, record: bool = True, iteration=None):
    """Euler-Maruyama rollout; returns ``(J, cost_per_path, TrajectoryBatch | None)``.

    ``mu`` holds the frozen measure-flow values ``(B, L+1, q)`` on the same
    paths. ``J`` is the batch-average objective in the problem's own sense
    (cost or utility). With ``params`` (tape variables per net) the returned
    ``J`` is a :class:`~sigdfp.autodiff.Var`.
    """
    grid = noise.grid
    L = noise.n_steps
    dt = np.diff(grid)
    state = problem.to_state(x0)
    cost = 0.0
    states = [ad.value(state)] if record else None
    ctrl_rec = {name: [] for name in problem.control_names} if record else None
    for k in range(L):
        t = grid[k]
        mu_k = mu[:, k, :]
        u = problem.controls(nets, params, t, state, mu_k, types)
        cost = cost + problem.running_cost(t, state, mu_k, u, types) * dt[k]
        nxt = (
            state
            + problem.drift(t, state, mu_k, u, types) * dt[k]
            + _noise_term(problem.diffusion(t, state, mu_k, u, types), noise.dW[:, k])
            + _noise_term(problem.common_diffusion(t, state, mu_k, u, types), noise.dB[:, k])
        )
        _check(nxt, "state", k + 1, iteration)
        state = nxt
        if record:
            states.append(ad.value(state))
            for name in problem.control_names:
                ctrl_rec[name].append(ad.value(u[name]))
    cost = cost + problem.terminal_cost(state, mu[:, L, :], types)
    _check(cost, "cost", L, iteration)
    J = ad.mean(cost)
    traj = None
    if record:
        u_last = problem.controls(nets, None, grid[L], ad.value(state), mu[:, L, :], types)
        for name in problem.control_names:
            ctrl_rec[name].append(ad.value(u_last[name]))
        S = np.stack(states, axis=1)
        traj = TrajectoryBatch(
            X=ad.value(problem.physical(S)),
            state=S,
            controls={k: np.stack(v, axis=1) for k, v in ctrl_rec.items()},
            cost=np.array(ad.value(cost), dtype=np.float64) * np.ones(len(x0)),
        )
    return J, cost, traj


def euler_rollout(problem, nets, flow, noise, prefix_sigs, x0, types, iteration=None):
    """Rollout with the flow evaluated from prefix signatures; returns ``(traj, J_B)``."""
    mu = flow.evaluate_all(prefix_sigs)
    J, _, traj = rollout(problem, nets, x0, types, mu, noise, iteration=iteration)
    return traj, float(J)
