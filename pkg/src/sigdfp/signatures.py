"""Time augmentation and streamed prefix signatures of the common noise."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_algebra import basis_size, batch_segment_exp, batch_tensor_mul

_MAGIC = b"SIGDFPS\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sI3Q5q")


def time_augment(path: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Prepend the time stamps as column 0.

    Accepts a single path ``(L+1, n0)`` or a stack ``(N, L+1, n0)``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    path = np.asarray(path, dtype=np.float64)
    if path.ndim == 1:
        path = path[:, None]
    if path.shape[-2] != grid.size:
        raise ValueError(f"path has {path.shape[-2]} rows but grid has {grid.size}")
    times = np.broadcast_to(grid[:, None], path.shape[:-1] + (1,))
    return np.concatenate([times, path], axis=-1)


@dataclass(frozen=True)
class PrefixSignatures:
    """``data[i, k]`` is the depth-M signature of path i on ``[0, t_k]``."""

    data: np.ndarray
    dim: int
    depth: int

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def sig_dim(self) -> int:
        return self.data.shape[2]

    def at(self, k) -> np.ndarray:
        return self.data[:, k]

    def subset(self, index) -> "PrefixSignatures":
        return PrefixSignatures(self.data[index], self.dim, self.depth)


def prefix_signatures(augmented: np.ndarray, M: int) -> PrefixSignatures:
    """Signatures of every prefix of each (already time-augmented) path.

    One Chen product with a segment exponential per step, vectorised over
    paths, so the cost is O(N L p) and the output is O(N L p) floats.
    """
    if M < 1:
        raise ValueError("signature depth must be >= 1")
    aug = np.asarray(augmented, dtype=np.float64)
    if aug.ndim == 2:
        aug = aug[None]
    N, L1, d = aug.shape
    p = basis_size(d, M)
    out = np.empty((N, L1, p))
    out[:, 0] = 0.0
    out[:, 0, 0] = 1.0
    incs = np.diff(aug, axis=1)
    for k in range(L1 - 1):
        out[:, k + 1] = batch_tensor_mul(out[:, k], batch_segment_exp(incs[:, k], M), d, M)
    out.flags.writeable = False
    return PrefixSignatures(out, d, M)


def common_noise_signatures(dB: np.ndarray, grid: np.ndarray, M: int) -> PrefixSignatures:
    """Prefix signatures of ``(t, B_t)`` built from common-noise increments ``(N, L, n0)``."""
    dB = np.asarray(dB, dtype=np.float64)
    B = np.concatenate([np.zeros(dB.shape[:1] + (1,) + dB.shape[2:]), np.cumsum(dB, axis=1)], axis=1)
    return prefix_signatures(time_augment(B, grid), M)


def save_signatures(path, sigs: PrefixSignatures, key: tuple[int, int, int, int, int]) -> None:
    """Binary cache: fixed header (magic, version, shape, key) then row-major float64."""
    seed, N, L, n0, M = key
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, *sigs.data.shape, seed, N, L, n0, M))
        fh.write(np.ascontiguousarray(sigs.data, dtype="<f8").tobytes())


def load_signatures(path, key: tuple[int, int, int, int, int] | None = None) -> PrefixSignatures:
    raw = Path(path).read_bytes()
    magic, version, n, l1, p, *stored = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a signature cache (magic={magic!r}, version={version})")
    if key is not None and tuple(stored) != tuple(key):
        raise ValueError(f"{path}: cache key {tuple(stored)} does not match {tuple(key)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, l1, p)
    n0, M = stored[3], stored[4]
    return PrefixSignatures(data, n0 + 1, M)
