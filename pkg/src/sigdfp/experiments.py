"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .driver import RoundRecord, RunConfig, TimingRow, loglog_slope, run_sig_dfp, scaling_study

log = logging.getLogger(__name__)

# desk-scale error budgets (test split, relative L2)
THRESHOLDS = {
    "lq": {"X": 0.01, "alpha": 0.015, "m": 0.12},
    "portfolio": {"X": 0.14, "pi": 0.08, "m": 0.17},
    "consumption": {"pi": 0.25, "c": 0.13, "m": 0.06, "Gamma": 0.03},
}
ROUNDS = {"lq": 300, "portfolio": 300, "consumption": 400}

NESTED_SIZES = (2**4, 2**6, 2**8)
SIG_SIZES = (2**6, 2**8, 2**10, 2**12)


def desk_config(problem: str, **kw) -> RunConfig:
    base = RunConfig(problem=problem, N=2**13, L=100, n_rounds=ROUNDS[problem])
    if problem == "consumption":
        base = replace(base, M=4)
    return replace(base, **kw)


def within_budget(metrics: dict[str, float], problem: str) -> dict[str, bool]:
    return {q: metrics[q] <= tol for q, tol in THRESHOLDS[problem].items()}


def trailing_means(values, window: int = 20) -> np.ndarray:
    v = np.asarray(values, float)
    if v.size < window:
        return np.empty(0)
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


@dataclass
class ConvergenceReport:
    channel: str
    trailing: np.ndarray
    worst_ratio: float  # max over rounds of trailing / running minimum of earlier windows

    @property
    def ok(self) -> bool:
        return self.worst_ratio <= 1.1


def flow_gap_monotone(records: list[RoundRecord], warm_start_rounds: int, window: int = 20,
                      band: float = 0.1) -> dict[str, ConvergenceReport]:
    """Trailing-window flow gap after warm start, checked against its running minimum.

    A window is admitted once all of its rounds are past the warm start. The
    trace passes when no window exceeds the smallest earlier window by more
    than ``band``.
    """
    tail = [r for r in records if r.round > warm_start_rounds]
    out = {}
    for ch in tail[0].flow_gap if tail else ():
        tr = trailing_means([r.flow_gap[ch] for r in tail], window)
        run_min = np.minimum.accumulate(tr)
        ratios = tr[1:] / run_min[:-1] if tr.size > 1 else np.ones(1)
        rep = ConvergenceReport(ch, tr, float(np.max(ratios)))
        if rep.worst_ratio > 1 + band:
            log.info("flow gap %s rises to %.3f of its running minimum", ch, rep.worst_ratio)
        out[ch] = rep
    return out


def objective_gap_in_se(records: list[RoundRecord], oracle_value: float) -> float:
    """Distance of the final validation objective from the oracle value, in its own standard errors."""
    last = records[-1]
    return abs(last.val_objective - oracle_value) / last.val_stderr


@dataclass
class DepthRow:
    M: int
    metrics: dict[str, float]
    seconds: float


def depth_sweep(base: RunConfig, depths=(1, 2, 3, 4), seeds=(0,)) -> list[DepthRow]:
    """Test errors of the same run at several truncation depths, averaged over seeds."""
    rows = []
    for M in depths:
        runs = [run_sig_dfp(replace(base, M=M, seed=s)) for s in seeds]
        keys = runs[0].test.metrics
        metrics = {q: float(np.mean([r.test.metrics[q] for r in runs])) for q in keys}
        rows.append(DepthRow(M, metrics, sum(r.seconds for r in runs)))
        log.info("depth %d: %s", M, {q: round(v, 4) for q, v in metrics.items()})
    return rows


@dataclass
class ScalingReport:
    rows: list[TimingRow]
    nested_slope: float
    sig_slope: float


def complexity_study(base: RunConfig, nested_sizes=NESTED_SIZES, sig_sizes=SIG_SIZES) -> ScalingReport:
    rows = scaling_study(base, nested_sizes, sig_sizes)
    pick = lambda alg: [(r.n_inner, r.seconds) for r in rows if r.algorithm == alg]
    nested, sig = pick("nested"), pick("sig_dfp")
    return ScalingReport(rows, loglog_slope(*zip(*nested)), loglog_slope(*zip(*sig)))
