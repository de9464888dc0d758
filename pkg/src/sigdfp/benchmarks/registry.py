"""Uniform access to the benchmarks: construction, oracle reference, compared quantities."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import consumption, lq, portfolio

PROBLEMS = ("lq", "portfolio", "consumption")

# quantities reported in the metrics table, in order
QUANTITIES = {
    "lq": ("X", "alpha", "m"),
    "portfolio": ("X", "pi", "m"),
    "consumption": ("pi", "c", "m", "Gamma", "X"),
}

# channel names of the flow, used for the per-round oracle gap
FLOW_CHANNELS = {"lq": ("m",), "portfolio": ("m",), "consumption": ("m", "Gamma")}


@dataclass
class Reference:
    """Closed-form equilibrium evaluated on a concrete set of paths."""

    flow: np.ndarray  # (N, L+1, q), already transformed
    processes: dict
    value: float
    cost: np.ndarray


def make_problem(name: str, params: dict | None = None, n0: int = 1):
    """``params``: scalar overrides for LQ, ``{type: (lo, hi)}`` range overrides otherwise."""
    params = dict(params or {})
    if name == "lq":
        if n0 != 1:
            raise ValueError("the LQ benchmark has one-dimensional common noise")
        return lq.LqProblem(lq.LqParams(**params))
    if name == "portfolio":
        if n0 != 1:
            raise ValueError("the portfolio benchmark has one-dimensional common noise")
        ranges = portfolio._default_ranges()
        ranges.update({k: tuple(v) for k, v in params.items()})
        return portfolio.PortfolioProblem(portfolio.PortfolioParams(ranges))
    if name == "consumption":
        ranges = consumption._default_ranges()
        ranges.update({k: tuple(v) for k, v in params.items()})
        return consumption.ConsumptionProblem(consumption.ConsumptionParams(ranges, n0))
    raise ValueError(f"unknown problem {name!r}; choose from {PROBLEMS}")


def has_oracle(problem) -> bool:
    return problem.name in ("lq", "portfolio") or problem.params.n0 == 1


def reference(problem, types, x0, noise) -> Reference | None:
    if not has_oracle(problem):
        return None
    if problem.name == "lq":
        o = lq.lq_oracle(problem.params, x0, noise)
        return Reference(o.m[..., None], {"X": o.X, "alpha": o.alpha, "m": o.m}, o.value, o.cost)
    if problem.name == "portfolio":
        o = portfolio.portfolio_oracle(problem.params, types, x0, noise)
        return Reference(o.m[..., None], {"X": o.X, "pi": o.pi, "m": o.m}, o.value, o.cost)
    o = consumption.consumption_oracle(problem.params, types, x0, noise)
    procs = {"pi": o.pi, "c": o.c, "m": o.m, "Gamma": o.gamma, "X": o.X}
    return Reference(np.stack([o.m, o.gamma], axis=-1), procs, o.value, o.cost)


def learned_processes(problem, traj, flow_values: np.ndarray) -> dict:
    """The learned counterparts of :data:`QUANTITIES` from a recorded rollout."""
    out = {"X": traj.X, "m": flow_values[..., 0]}
    if problem.name == "consumption":
        out["pi"] = traj.controls["pi"]
        out["c"] = np.exp(traj.controls["log_c"])
        out["Gamma"] = flow_values[..., 1]
    else:
        out.update(traj.controls)
    return out


def param_names(name: str) -> tuple[str, ...]:
    """Keys accepted in the ``problem_params`` of each benchmark."""
    if name == "lq":
        return tuple(f.name for f in fields(lq.LqParams))
    if name == "portfolio":
        return tuple(portfolio._default_ranges())
    if name == "consumption":
        return tuple(consumption._default_ranges())
    raise ValueError(f"unknown problem {name!r}; choose from {PROBLEMS}")
