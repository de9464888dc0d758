from dataclasses import replace

import numpy as np
import pytest

from sigdfp import driver
from sigdfp import measure_flow as mf
from sigdfp.benchmarks import lq, registry
from sigdfp.driver import ConfigError, RunConfig
from sigdfp.sde import NumericalAbort

TINY = RunConfig(problem="lq", N=64, L=10, n_rounds=3)


class FreeLq(lq.LqProblem):
    """LQ dynamics without mean reversion, f = g = 0: an uncontrolled state is
    X0 + sigma (sqrt(1 - rho^2) W + rho B), whatever the flow."""

    def drift(self, t, x, mu, u, types):
        return u["alpha"] + 0.0 * x

    def running_cost(self, t, x, mu, u, types):
        return 0.0 * u["alpha"]

    def terminal_cost(self, x, mu, types):
        return 0.0 * x


class Exploding(lq.LqProblem):
    """Drift turns infinite after ``fuse`` evaluations."""

    fuse = 10**9

    def __init__(self, params=None):
        super().__init__(params)
        self.calls = 0

    def drift(self, t, x, mu, u, types):
        self.calls += 1
        out = super().drift(t, x, mu, u, types)
        return out * np.inf if self.calls > self.fuse else out


def _free_path(p, data):
    s = p.sigma
    return data.x0[:, None] + s * (np.sqrt(1 - p.rho**2) * data.noise.idio_path()[..., 0]
                                   + p.rho * data.noise.common_path()[..., 0])


def test_defaults_resolve_per_benchmark():
    lq_cfg = RunConfig(problem="lq", n_rounds=300).validate()
    assert (lq_cfg.M, lq_cfg.batch_size, lq_cfg.n_batches) == (2, 1024, 8)
    assert lq_cfg.warm_start_rounds == 150 and lq_cfg.lr_boundaries == (150,) and lq_cfg.lr_factor == 10
    cons = RunConfig(problem="consumption", n_rounds=400).validate()
    assert (cons.M, cons.batch_size, cons.warm_start_rounds, cons.lr_boundaries) == (4, 2048, 0, (200,))
    small = RunConfig(problem="portfolio", N=100).validate()
    assert small.batch_size == 100 and small.n_batches == 1
    assert small.validate() == small  # resolving is idempotent


@pytest.mark.parametrize("kw, key", [
    ({"batch_size": 64, "n_batches": 2}, "N_batch"),
    ({"n_rounds": 0}, "N_round"),
    ({"N": 0}, "N"),
    ({"stamps": (0.0, 1.5)}, "stamps"),
    ({"activation": "relu6"}, "activation"),
    ({"ridge": -1.0}, "ridge"),
    ({"problem": "heat"}, "problem"),
    ({"input_scaling": "zscore"}, "input_scaling"),
])
def test_invalid_configs_rejected(kw, key):
    with pytest.raises(ConfigError, match=key):
        replace(TINY, **kw).validate()


@pytest.mark.parametrize("name", ["portfolio", "consumption"])
def test_type_inputs_scaled_onto_unit_box(name):
    problem = registry.make_problem(name)
    nets = driver.init_nets(problem, RunConfig(problem=name), np.random.default_rng(0))
    types = problem.sample_types(np.random.default_rng(1), 4000)
    k = types.shape[1]
    for net in nets.values():
        z = (types - net.in_shift[:k]) / net.in_scale[:k]
        assert np.all(np.abs(z) <= 1) and np.all(z.max(0) > 0.99) and np.all(z.min(0) < -0.99)
        assert np.array_equal(net.in_shift[k:], np.zeros(net.n_inputs - k))
        assert np.array_equal(net.in_scale[k:], np.ones(net.n_inputs - k))
    raw = driver.init_nets(problem, RunConfig(problem=name, input_scaling="none"), np.random.default_rng(0))
    assert all(net.in_shift is None for net in raw.values())


def test_untyped_problem_has_no_input_map():
    nets = driver.init_nets(registry.make_problem("lq"), TINY, np.random.default_rng(0))
    assert nets["alpha"].in_shift is None


def test_stamp_indices():
    assert RunConfig(L=100).stamp_indices() == [0, 50, 100]
    assert RunConfig(L=5, stamps=(1.0, 0.0, 0.5)).stamp_indices() == [0, 2, 5]


def test_split_sizes_and_independence():
    cfg = TINY.validate()
    problem = registry.make_problem("lq")
    seeds = driver.split_seeds(0)
    train = driver.make_dataset(problem, 64, 10, 1.0, 2, seeds["train"])
    val = driver.make_dataset(problem, 32, 10, 1.0, 2, seeds["val"])
    test = driver.regenerate_test_split(cfg, problem)
    assert (train.size, val.size, test.size) == (64, 32, 64)
    assert not np.allclose(train.noise.dB, test.noise.dB)
    again = driver.regenerate_test_split(cfg, problem)
    assert np.array_equal(test.noise.dW, again.noise.dW) and np.array_equal(test.x0, again.x0)


def _strip_seconds(records):
    return [replace(r, seconds=0.0) for r in records]


def test_reproducible_round_logs():
    a = driver.run_sig_dfp(TINY)
    b = driver.run_sig_dfp(TINY)
    assert _strip_seconds(a.records) == _strip_seconds(b.records)
    assert np.array_equal(a.flow.coeffs, b.flow.coeffs)
    assert a.test.metrics == b.test.metrics
    c = driver.run_sig_dfp(replace(TINY, seed=1))
    assert _strip_seconds(c.records) != _strip_seconds(a.records)


def test_records_are_complete_and_finite():
    res = driver.run_sig_dfp(replace(TINY, batch_size=16))
    assert [r.round for r in res.records] == [1, 2, 3]
    for r in res.records:
        assert len(r.train_objectives) == 4 and np.all(np.isfinite(r.train_objectives))
        assert np.isfinite(r.val_objective) and r.val_stderr > 0 and set(r.flow_gap) == {"m"}
    assert set(res.test.metrics) == {"X", "alpha", "m"}


def test_single_round_zero_control_fits_uncontrolled_dynamics(monkeypatch):
    monkeypatch.setattr(registry, "make_problem", lambda *a, **k: FreeLq())
    cfg = replace(TINY, n_rounds=1, init="zeros", evaluate=False)
    res = driver.run_sig_dfp(cfg)
    c = cfg.validate()
    data = driver.make_dataset(FreeLq(), c.N, c.L, c.T, c.M, driver.split_seeds(c.seed)["train"])
    expect = mf.fit_from_paths(data.sigs, _free_path(FreeLq().params, data), c.stamp_indices())
    assert np.allclose(res.flow.coeffs, expect.coeffs, rtol=0, atol=1e-12)
    assert all(np.all(w == 0) for w in res.nets["alpha"].weights)


def test_abort_carries_partial_records(monkeypatch):
    L = TINY.L
    # one minibatch, the re-simulation and the validation rollout each evaluate the drift L times
    Exploding.fuse = 3 * L
    monkeypatch.setattr(registry, "make_problem", lambda *a, **k: Exploding())
    logged = []
    with pytest.raises(NumericalAbort) as info:
        driver.run_sig_dfp(TINY, on_round=logged.append)
    assert [r.round for r in info.value.records] == [1] and logged == info.value.records
    assert info.value.iteration == 2


def test_nested_one_by_one_smoke():
    res = driver.run_nested_baseline(replace(TINY, n_rounds=2), 1, 1)
    assert res.table.shape == (1, TINY.L + 1, 1)
    for r in res.records:
        assert np.isfinite(r.val_objective) and all(np.isfinite(v) for v in r.flow_gap.values())


def test_nested_flow_is_inner_average(monkeypatch):
    """One round, zero control, drift-free LQ: the table is the mean over the inner paths."""
    monkeypatch.setattr(registry, "make_problem", lambda *a, **k: FreeLq())
    cfg = replace(TINY, n_rounds=1, init="zeros", evaluate=False)
    n_in, n_out = 8, 4
    res = driver.run_nested_baseline(cfg, n_in, n_out)
    c = replace(cfg, N=n_in * n_out).validate()
    inner_ss, outer_ss = driver.split_seeds(c.seed)["train"].spawn(2)
    w_ss, type_ss = inner_ss.spawn(2)
    from sigdfp.sde import sample_brownian
    W = sample_brownian(n_in, c.L, c.T, 1, 0, w_ss)
    B = sample_brownian(n_out, c.L, c.T, 0, 1, outer_ss)
    rng = np.random.default_rng(type_ss)
    FreeLq().sample_types(rng, n_in)
    x0 = FreeLq().initial_state(np.empty((n_in, 0)), rng)
    p = FreeLq().params
    X = (x0[None, :, None] + p.sigma * np.sqrt(1 - p.rho**2) * W.idio_path()[None, ..., 0]
         + p.sigma * p.rho * B.common_path()[:, None, :, 0])
    assert np.allclose(res.table[..., 0], X.mean(axis=1), rtol=0, atol=1e-13)


def test_nested_memory_budget():
    with pytest.raises(driver.MemoryBudgetExceeded, match="n_inner=256, n_outer=256"):
        driver.run_nested_baseline(TINY, 256, 256, memory_budget=10**6)
    problem = registry.make_problem("lq")
    assert driver.nested_memory_bytes(problem, 4, 8, 10) == 2 * driver.nested_memory_bytes(problem, 2, 8, 10)


def test_signature_cache_reused(tmp_path):
    cfg = replace(TINY, n_rounds=1, signature_cache=str(tmp_path))
    a = driver.run_sig_dfp(cfg)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len(files) == 3  # train, validation and test splits
    stamp = {p: p.stat().st_mtime_ns for p in tmp_path.iterdir()}
    b = driver.run_sig_dfp(cfg)
    assert {p: p.stat().st_mtime_ns for p in tmp_path.iterdir()} == stamp
    assert _strip_seconds(a.records) == _strip_seconds(b.records)
    nocache = driver.run_sig_dfp(replace(cfg, signature_cache=None))
    assert _strip_seconds(nocache.records) == _strip_seconds(a.records)


def test_loglog_slope():
    sizes = [16, 64, 256]
    assert driver.loglog_slope(sizes, [3e-4 * n**2 for n in sizes]) == pytest.approx(2.0)
    assert driver.loglog_slope(sizes, [0.1 * n for n in sizes]) == pytest.approx(1.0)


def test_scaling_study_rows():
    rows = driver.scaling_study(replace(TINY, n_rounds=1), [2, 4], [8])
    assert [(r.algorithm, r.n_inner) for r in rows] == [("nested", 2), ("nested", 4), ("sig_dfp", 8)]
    assert all(r.seconds > 0 and r.memory_bytes > 0 for r in rows)
