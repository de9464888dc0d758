"""Signatured deep fictitious play and the nested-loop baseline it replaces."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import control
from . import measure_flow as mf
from .benchmarks import registry
from .benchmarks.common import mc_standard_error, relative_l2
from .sde import BrownianBatch, NumericalAbort, rollout, sample_brownian
from .signatures import PrefixSignatures, common_noise_signatures, load_signatures, save_signatures

log = logging.getLogger(__name__)

# per-benchmark training defaults; None fields of RunConfig resolve to these
DEFAULTS = {
    "lq": {"M": 2, "batch_size": 2**10, "lr_factor": 10.0, "decay": "half", "warm": "half"},
    "portfolio": {"M": 2, "batch_size": 2**10, "lr_factor": 5.0, "decay": 200, "warm": 0},
    "consumption": {"M": 4, "batch_size": 2**11, "lr_factor": 5.0, "decay": 200, "warm": 0},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "lq"
    N: int = 2**13
    L: int = 100
    T: float = 1.0
    n: int = 1
    n0: int = 1
    M: int | None = None
    n_rounds: int = 300
    batch_size: int | None = None
    n_batches: int | None = None
    lr: float = 0.1
    lr_factor: float | None = None
    lr_boundaries: tuple[int, ...] | None = None
    warm_start_rounds: int | None = None
    ridge: float = 0.0
    seed: int = 0
    activation: str = "tanh"
    init: str = "glorot"
    input_scaling: str = "types"
    flow_init_scale: float = 0.01
    stamps: tuple[float, ...] = (0.0, 0.5, 1.0)
    shuffle: bool = True
    evaluate: bool = True
    signature_cache: str | None = None
    outdir: str = "runs/default"
    problem_params: dict = field(default_factory=dict)

    def resolved(self) -> "RunConfig":
        """Fill every ``None`` field with the benchmark default for this config."""
        if self.problem not in DEFAULTS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {registry.PROBLEMS}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        d = DEFAULTS[self.problem]
        M = d["M"] if self.M is None else self.M
        B = min(d["batch_size"], self.N) if self.batch_size is None else self.batch_size
        nb = max(self.N // B, 1) if self.n_batches is None else self.n_batches
        factor = d["lr_factor"] if self.lr_factor is None else self.lr_factor
        if self.lr_boundaries is not None:
            bounds = tuple(self.lr_boundaries)
        elif d["decay"] == "half":
            bounds = (self.n_rounds // 2,)
        else:
            bounds = tuple(range(d["decay"], self.n_rounds, d["decay"]))
        if self.warm_start_rounds is not None:
            warm = self.warm_start_rounds
        else:
            warm = self.n_rounds // 2 if d["warm"] == "half" else d["warm"]
        return replace(self, M=M, batch_size=B, n_batches=nb, lr_factor=factor,
                       lr_boundaries=bounds, warm_start_rounds=warm)

    def validate(self) -> "RunConfig":
        c = self.resolved()
        checks = [
            (c.N >= 1, f"N must be >= 1, got {c.N}"),
            (c.L >= 1, "L must be >= 1"),
            (c.T > 0, "T must be positive"),
            (c.n == 1, "all benchmarks have one idiosyncratic Brownian motion (n = 1)"),
            (c.n0 >= 1, "n0 must be >= 1"),
            (c.M >= 1, "signature depth M must be >= 1"),
            (c.n_rounds >= 1, "N_round must be >= 1"),
            (c.batch_size >= 1 and c.n_batches >= 1, "batch size and N_batch must be >= 1"),
            (c.batch_size * c.n_batches <= c.N,
             f"B * N_batch = {c.batch_size * c.n_batches} exceeds N = {c.N}"),
            (c.lr >= 0 and c.lr_factor > 0, "need lr >= 0 and lr_factor > 0"),
            (c.warm_start_rounds >= 0, "warm_start_rounds must be >= 0"),
            (c.ridge >= 0, "ridge penalty must be >= 0"),
            (c.init in ("glorot", "zeros"), f"unknown init {c.init!r}"),
            (c.input_scaling in ("types", "none"), f"unknown input_scaling {c.input_scaling!r}"),
            (c.activation in control.ad.ACTIVATIONS, f"unknown activation {c.activation!r}"),
            (len(c.stamps) >= 1 and all(0.0 <= s <= 1.0 for s in c.stamps),
             "stamps are fractions of T in [0, 1]"),
            (c.flow_init_scale >= 0, "flow_init_scale must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return c

    def stamp_indices(self) -> list[int]:
        return sorted({int(round(s * self.L)) for s in self.stamps})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Dataset:
    noise: BrownianBatch
    types: np.ndarray
    x0: np.ndarray
    sigs: PrefixSignatures

    @property
    def size(self) -> int:
        return self.noise.n_paths


def split_seeds(seed: int) -> dict[str, np.random.SeedSequence]:
    names = ("train", "val", "test", "init", "shuffle")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def make_dataset(problem, N: int, L: int, T: float, M: int, ss: np.random.SeedSequence,
                 cache_dir=None) -> Dataset:
    """Paths, types, initial states and the (once-only) common-noise signatures."""
    noise_ss, type_ss = ss.spawn(2)
    noise = sample_brownian(N, L, T, problem.n_idio, problem.n_common, noise_ss, antithetic=N % 2 == 0)
    rng = np.random.default_rng(type_ss)
    types = problem.sample_types(rng, N)
    x0 = problem.initial_state(types, rng)
    sigs = None
    if cache_dir is not None:
        key = (int(noise_ss.generate_state(1)[0]), N, L, problem.n_common, M)
        path = Path(cache_dir) / ("sig_" + "_".join(map(str, key)) + f"_T{T!r}.bin")
        if path.exists():
            sigs = load_signatures(path, key)
        else:
            sigs = common_noise_signatures(noise.dB, noise.grid, M)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_signatures(path, sigs, key)
    if sigs is None:
        sigs = common_noise_signatures(noise.dB, noise.grid, M)
    return Dataset(noise, types, x0, sigs)


def init_nets(problem, cfg: RunConfig, rng: np.random.Generator) -> dict[str, control.ControlNet]:
    nets = {}
    norm = problem.input_normalization() if cfg.input_scaling == "types" and problem.type_ranges() else None
    for name in problem.control_names:
        widths = (problem.n_net_inputs(), *problem.control_hidden[name], 1)
        if cfg.init == "zeros":
            nets[name] = control.ControlNet.zeros(widths, cfg.activation, norm)
        else:
            nets[name] = control.ControlNet.init(widths, rng, cfg.activation, norm)
    return nets


@dataclass
class RoundRecord:
    round: int
    lr: float
    train_objectives: list[float]
    val_objective: float
    val_stderr: float
    flow_gap: dict[str, float]
    seconds: float
    rank_deficient: bool = False


@dataclass
class Evaluation:
    metrics: dict[str, float]
    learned: dict[str, np.ndarray]
    oracle: dict[str, np.ndarray] | None
    objective: float
    stderr: float
    oracle_value: float | None


@dataclass
class RunResult:
    config: RunConfig
    nets: dict
    flow: mf.MeasureFlowFunctional
    records: list[RoundRecord]
    test: Evaluation | None
    grid: np.ndarray
    seconds: float


def _sgd_round(problem, nets, data_x0, data_types, mu, noise, cfg, schedule, r, perm, n):
    objs = []
    B = cfg.batch_size
    for b in range(cfg.n_batches):
        idx = perm[b * B:(b + 1) * B]
        loss, grads = control.grad_rollout(nets, problem, data_x0[idx], data_types[idx], mu[idx],
                                           noise.subset(idx), iteration=n)
        for name, net in nets.items():
            control.sgd_step(net, grads[name], schedule, r)
        objs.append(problem.sign * loss)
    return objs


def _targets(problem, traj) -> np.ndarray:
    return np.stack([np.asarray(v) for v in problem.moments(traj.state, traj.controls)], axis=-1)


def evaluate(problem, nets, flow: mf.MeasureFlowFunctional, data: Dataset,
             ref: registry.Reference | None = None) -> Evaluation:
    """Relative L2 errors of every reported quantity against the oracle on ``data``."""
    mu = flow.evaluate_all(data.sigs)
    _, cost, traj = rollout(problem, nets, data.x0, data.types, mu, data.noise)
    cost = np.asarray(cost)
    learned = registry.learned_processes(problem, traj, mu)
    metrics = {}
    if ref is not None:
        grid = data.noise.grid
        for q in registry.QUANTITIES[problem.name]:
            metrics[q] = relative_l2(ref.processes[q], learned[q], grid)
    return Evaluation(metrics, learned, None if ref is None else ref.processes,
                      float(np.mean(cost)), mc_standard_error(cost, data.size % 2 == 0),
                      None if ref is None else ref.value)


def _flow_gap(problem, ref, mu, grid) -> dict[str, float]:
    if ref is None:
        return {}
    return {ch: relative_l2(ref.flow[..., j], mu[..., j], grid)
            for j, ch in enumerate(registry.FLOW_CHANNELS[problem.name])}


def run_sig_dfp(config: RunConfig, on_round=None) -> RunResult:
    """Fictitious play with signature-regressed conditional flows.

    ``on_round(record)`` is called after every round so logs survive an
    abort; a :class:`NumericalAbort` is re-raised with ``records`` attached.
    """
    cfg = config.validate()
    start = time.perf_counter()
    problem = registry.make_problem(cfg.problem, cfg.problem_params, cfg.n0)
    seeds = split_seeds(cfg.seed)
    mk = lambda n, ss: make_dataset(problem, n, cfg.L, cfg.T, cfg.M, ss, cfg.signature_cache)
    train = mk(cfg.N, seeds["train"])
    val = test = val_ref = None
    if cfg.evaluate:
        val = mk(max(cfg.N // 2, 1), seeds["val"])
        val_ref = registry.reference(problem, val.types, val.x0, val.noise)
    grid = train.noise.grid

    init_rng = np.random.default_rng(seeds["init"])
    nets = init_nets(problem, cfg, init_rng)
    flow = mf.MeasureFlowFunctional.random(train.sigs.sig_dim, problem.flow_transforms, init_rng,
                                           cfg.flow_init_scale)
    shuffle_rng = np.random.default_rng(seeds["shuffle"])
    schedule = control.SgdSchedule(cfg.lr, cfg.lr_factor, cfg.lr_boundaries)
    stamps = cfg.stamp_indices()
    records: list[RoundRecord] = []

    try:
        for n in range(1, cfg.n_rounds + 1):
            t0 = time.perf_counter()
            mu = flow.evaluate_all(train.sigs)
            perm = shuffle_rng.permutation(cfg.N) if cfg.shuffle else np.arange(cfg.N)
            objs = _sgd_round(problem, nets, train.x0, train.types, mu, train.noise, cfg, schedule,
                              n - 1, perm, n)
            _, _, traj = rollout(problem, nets, train.x0, train.types, mu, train.noise, iteration=n)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", mf.RankDeficientWarning)
                fresh = mf.fit_from_paths(train.sigs, _targets(problem, traj), stamps, cfg.ridge,
                                          problem.flow_transforms)
            deficient = any(issubclass(w.category, mf.RankDeficientWarning) for w in caught)
            if deficient and not any(r.rank_deficient for r in records):
                log.warning("rank-deficient signature design at depth %d; using min-norm fits", cfg.M)
            flow = mf.average(flow, fresh, n, cfg.warm_start_rounds)

            val_obj = val_se = float("nan")
            gap = {}
            if val is not None:
                mu_val = flow.evaluate_all(val.sigs)
                J, cost, _ = rollout(problem, nets, val.x0, val.types, mu_val, val.noise, record=False,
                                     iteration=n)
                val_obj, val_se = float(J), mc_standard_error(np.asarray(cost), val.size % 2 == 0)
                gap = _flow_gap(problem, val_ref, mu_val, grid)
            if not np.all(np.isfinite(objs)) or (val is not None and not np.isfinite(val_obj)):
                raise NumericalAbort("non-finite objective", iteration=n)
            rec = RoundRecord(n, schedule.lr(n - 1), objs, val_obj, val_se, gap,
                              time.perf_counter() - t0, deficient)
            records.append(rec)
            log.info("round %d  J_B %.6g  val %.6g  gap %s", n, objs[-1], val_obj,
                     {k: round(v, 5) for k, v in gap.items()})
            if on_round is not None:
                on_round(rec)
    except NumericalAbort as exc:
        exc.records = records
        raise

    result_eval = None
    if cfg.evaluate:
        test = mk(cfg.N, seeds["test"])
        ref = registry.reference(problem, test.types, test.x0, test.noise)
        result_eval = evaluate(problem, nets, flow, test, ref)
    return RunResult(cfg, nets, flow, records, result_eval, grid, time.perf_counter() - start)


def regenerate_test_split(cfg: RunConfig, problem) -> Dataset:
    """Regenerate the test split of a run from its (resolved) config."""
    cfg = cfg.validate()
    return make_dataset(problem, cfg.N, cfg.L, cfg.T, cfg.M, split_seeds(cfg.seed)["test"],
                        cfg.signature_cache)


# -- nested-loop baseline ----------------------------------------------------

class MemoryBudgetExceeded(RuntimeError):
    pass


def nested_memory_bytes(problem, n_inner: int, n_outer: int, L: int) -> int:
    """Proxy: float64 arrays of shape (pairs, L+1) held per round (states, controls, flow, targets)."""
    q = len(problem.flow_transforms)
    per_path = 2 + len(problem.control_names) + 2 * q + problem.n_idio + problem.n_common
    return 8 * n_inner * n_outer * (L + 1) * per_path


@dataclass
class NestedResult:
    n_inner: int
    n_outer: int
    records: list[RoundRecord]
    table: np.ndarray
    nets: dict
    seconds: float
    memory_bytes: int


def run_nested_baseline(config: RunConfig, n_inner: int, n_outer: int, memory_budget: int = 2**31,
                        on_round=None) -> NestedResult:
    """Same training loop, but mu on outer path j is the mean over its ``n_inner`` inner paths.

    Every outer common-noise path is paired with every inner idiosyncratic
    path, so one round simulates ``n_inner * n_outer`` paths. The recorded
    ``val_objective`` is the in-sample objective of the re-simulation: the
    empirical flow is only defined on the training common paths.
    """
    if n_inner < 1 or n_outer < 1:
        raise ConfigError("need n_inner, n_outer >= 1")
    P = n_inner * n_outer
    base = replace(config, N=P, batch_size=min(config.resolved().batch_size, P), n_batches=None)
    cfg = base.validate()
    problem = registry.make_problem(cfg.problem, cfg.problem_params, cfg.n0)
    mem = nested_memory_bytes(problem, n_inner, n_outer, cfg.L)
    if mem > memory_budget:
        raise MemoryBudgetExceeded(
            f"nested baseline with n_inner={n_inner}, n_outer={n_outer}, L={cfg.L} needs ~{mem} bytes "
            f"> budget {memory_budget}")
    start = time.perf_counter()
    seeds = split_seeds(cfg.seed)
    inner_ss, outer_ss = seeds["train"].spawn(2)
    w_ss, type_ss = inner_ss.spawn(2)
    W = sample_brownian(n_inner, cfg.L, cfg.T, problem.n_idio, 0, w_ss, antithetic=n_inner % 2 == 0)
    Bn = sample_brownian(n_outer, cfg.L, cfg.T, 0, problem.n_common, outer_ss, antithetic=n_outer % 2 == 0)
    rng = np.random.default_rng(type_ss)
    types_in = problem.sample_types(rng, n_inner)
    x0_in = problem.initial_state(types_in, rng)
    # pair (j, i) lives at row j * n_inner + i
    noise = BrownianBatch(np.tile(W.dW, (n_outer, 1, 1)), np.repeat(Bn.dB, n_inner, axis=0), W.grid)
    types = np.tile(types_in, (n_outer, 1))
    x0 = np.tile(x0_in, n_outer)

    init_rng = np.random.default_rng(seeds["init"])
    nets = init_nets(problem, cfg, init_rng)
    outer_sigs = common_noise_signatures(Bn.dB, Bn.grid, cfg.M)
    flow0 = mf.MeasureFlowFunctional.random(outer_sigs.sig_dim, problem.flow_transforms, init_rng,
                                            cfg.flow_init_scale)
    table = flow0.linear(outer_sigs.data)  # (n_outer, L+1, q), linear scale
    apply = flow0.apply_transforms
    ref = None
    if cfg.evaluate:
        ref = registry.reference(problem, types, x0, noise)
    shuffle_rng = np.random.default_rng(seeds["shuffle"])
    schedule = control.SgdSchedule(cfg.lr, cfg.lr_factor, cfg.lr_boundaries)
    records: list[RoundRecord] = []
    try:
        for n in range(1, cfg.n_rounds + 1):
            t0 = time.perf_counter()
            mu = apply(np.repeat(table, n_inner, axis=0))
            perm = shuffle_rng.permutation(P) if cfg.shuffle else np.arange(P)
            objs = _sgd_round(problem, nets, x0, types, mu, noise, cfg, schedule, n - 1, perm, n)
            _, cost, traj = rollout(problem, nets, x0, types, mu, noise, iteration=n)
            fresh = _targets(problem, traj).reshape(n_outer, n_inner, cfg.L + 1, -1).mean(axis=1)
            table = mf.running_mean(table, fresh, n, cfg.warm_start_rounds)
            cost = np.asarray(cost)
            obj = float(np.mean(cost))
            if not np.all(np.isfinite(objs)) or not np.isfinite(obj):
                raise NumericalAbort("non-finite objective", iteration=n)
            mu_new = apply(np.repeat(table, n_inner, axis=0))
            gap = _flow_gap(problem, ref, mu_new, noise.grid)
            rec = RoundRecord(n, schedule.lr(n - 1), objs, obj, mc_standard_error(cost, False), gap,
                              time.perf_counter() - t0)
            records.append(rec)
            if on_round is not None:
                on_round(rec)
    except NumericalAbort as exc:
        exc.records = records
        raise
    return NestedResult(n_inner, n_outer, records, apply(table), nets, time.perf_counter() - start, mem)


# -- complexity study --------------------------------------------------------

@dataclass
class TimingRow:
    algorithm: str
    n_inner: int
    n_outer: int
    seconds: float
    memory_bytes: int


def loglog_slope(sizes, seconds) -> float:
    """Least-squares slope of log(seconds) against log(size)."""
    x, y = np.log(np.asarray(sizes, float)), np.log(np.asarray(seconds, float))
    return float(np.polyfit(x, y, 1)[0])


def scaling_study(config: RunConfig, nested_sizes, sig_sizes, memory_budget: int = 2**31) -> list[TimingRow]:
    """Wall-clock of both algorithms; Sig-DFP at size N uses N paths with their own (W, B)."""
    base = replace(config, evaluate=False)
    rows = []
    for N in nested_sizes:
        res = run_nested_baseline(base, N, N, memory_budget)
        rows.append(TimingRow("nested", N, N, res.seconds, res.memory_bytes))
        log.info("nested (%d, %d): %.2f s", N, N, res.seconds)
    for N in sig_sizes:
        cfg = replace(base, N=N, batch_size=min(base.resolved().batch_size, N), n_batches=None)
        t0 = time.perf_counter()
        res = run_sig_dfp(cfg)
        p = res.flow.sig_dim
        rows.append(TimingRow("sig_dfp", N, N, time.perf_counter() - t0, 8 * N * (cfg.L + 1) * (p + 4)))
        log.info("sig_dfp (%d, %d): %.2f s", N, N, rows[-1].seconds)
    return rows
