import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigdfp.sde import sample_brownian, uniform_grid
from sigdfp.signatures import (
    PrefixSignatures,
    common_noise_signatures,
    load_signatures,
    prefix_signatures,
    save_signatures,
    time_augment,
)
from sigdfp.tensor_algebra import batch_tensor_mul, factorial_bounds, level_sup_norms, path_signature


def test_time_augment_examples():
    grid = np.array([0.0, 0.5, 1.0])
    out = time_augment(np.zeros((3, 1)), grid)
    assert np.array_equal(out, [[0, 0], [0.5, 0], [1, 0]])
    assert time_augment(np.zeros((3, 5)), grid).shape == (3, 6)
    batch = time_augment(np.ones((4, 3, 2)), grid)
    assert batch.shape == (4, 3, 3) and np.array_equal(batch[2, :, 0], grid)


def test_time_augment_rejects_bad_grid():
    with pytest.raises(ValueError):
        time_augment(np.zeros((3, 1)), np.array([0.0, 1.0, 0.5]))
    with pytest.raises(ValueError):
        time_augment(np.zeros((3, 1)), np.array([0.0, 0.5, 0.5]))


def test_straight_line_example():
    grid = np.linspace(0, 1, 5)
    path = np.stack([grid, grid], axis=1)
    sig = prefix_signatures(path, 2)
    last = sig.at(-1)[0]
    assert np.allclose(last[1:3], [1, 1], atol=1e-15)
    assert np.allclose(last[3:7], [0.5] * 4, atol=1e-14)


def test_first_entry_is_identity():
    noise = sample_brownian(6, 10, 1.0, 1, 2, seed=3)
    sig = common_noise_signatures(noise.dB, noise.grid, 3)
    first = sig.at(0)
    assert np.all(first[:, 0] == 1.0) and np.all(first[:, 1:] == 0.0)
    assert np.all(sig.data[..., 0] == 1.0)


def test_prefix_matches_one_shot():
    noise = sample_brownian(4, 50, 1.0, 1, 1, seed=11)
    aug = time_augment(noise.common_path(), noise.grid)
    sig = prefix_signatures(aug, 3)
    for i in range(4):
        for k in (0, 1, 17, 50):
            assert np.allclose(sig.data[i, k], path_signature(aug[i, :k + 1], 3).coeffs, rtol=0, atol=1e-12)


def test_level_one_coordinates():
    noise = sample_brownian(8, 40, 2.0, 1, 2, seed=5)
    sig = common_noise_signatures(noise.dB, noise.grid, 2)
    assert np.allclose(sig.data[:, :, 1], noise.grid[None, :], rtol=0, atol=1e-12)
    assert np.allclose(sig.data[:, :, 2:4], noise.common_path(), rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(0, 30), span=st.integers(0, 30), M=st.integers(1, 4))
def test_chen_consistency_between_prefixes(seed, k, span, M):
    noise = sample_brownian(2, 30, 1.0, 1, 1, seed=seed)
    aug = time_augment(noise.common_path(), noise.grid)
    sig = prefix_signatures(aug, M)
    m = min(k + span, 30)
    piece = np.stack([path_signature(aug[i, k:m + 1], M).coeffs for i in range(2)])
    joined = batch_tensor_mul(sig.data[:, k], piece, 2, M)
    assert np.allclose(joined, sig.data[:, m], rtol=0, atol=1e-10)


def test_factorial_bound_on_sampled_paths():
    noise = sample_brownian(16, 100, 1.0, 1, 1, seed=2)
    aug = time_augment(noise.common_path(), noise.grid)
    sig = prefix_signatures(aug, 4)
    V = np.cumsum(np.abs(np.diff(aug, axis=1)).sum(-1), axis=1)
    bound = factorial_bounds(V, 4)
    assert np.all(level_sup_norms(sig.data[:, 1:], 2, 4) <= bound * (1 + 1e-10))


def test_deterministic_and_read_only():
    noise = sample_brownian(4, 20, 1.0, 1, 1, seed=9)
    a = common_noise_signatures(noise.dB, noise.grid, 3)
    b = common_noise_signatures(noise.dB, noise.grid, 3)
    assert np.array_equal(a.data, b.data)
    with pytest.raises(ValueError):
        a.data[0, 0, 0] = 2.0
    assert a.n_paths == 4 and a.n_steps == 21 and a.sig_dim == 15


def test_depth_zero_rejected():
    with pytest.raises(ValueError):
        prefix_signatures(np.zeros((3, 2)), 0)


def test_cache_round_trip(tmp_path):
    noise = sample_brownian(4, 10, 1.0, 1, 1, seed=1)
    sig = common_noise_signatures(noise.dB, uniform_grid(1.0, 10), 2)
    key = (1, 4, 10, 1, 2)
    save_signatures(tmp_path / "s.bin", sig, key)
    back = load_signatures(tmp_path / "s.bin", key)
    assert isinstance(back, PrefixSignatures)
    assert np.array_equal(back.data, sig.data) and back.dim == 2 and back.depth == 2
    with pytest.raises(ValueError, match="cache key"):
        load_signatures(tmp_path / "s.bin", (2, 4, 10, 1, 2))
    (tmp_path / "bad.bin").write_bytes(b"x" * 100)
    with pytest.raises(ValueError, match="not a signature cache"):
        load_signatures(tmp_path / "bad.bin")
