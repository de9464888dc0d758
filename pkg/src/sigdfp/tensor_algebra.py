"""Truncated tensor algebra T^M(R^d).

Coefficients are stored as a flat float64 vector graded by word length:
``[level 0 | level 1 | ... | level M]`` where level ``k`` holds ``d**k``
entries in lexicographic word order over the alphabet ``{0, ..., d-1}``.
Letter 0 is the time coordinate once a path has been time-augmented.

All batched helpers (``batch_*``) operate on arrays whose last axis is the
flat coefficient vector, so a whole stack of paths can be multiplied at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import factorial

import numpy as np

_MAX_BASIS = 2**31 - 1


def basis_size(d: int, M: int) -> int:
    """Number of words of length <= M over a d-letter alphabet."""
    if d < 1 or M < 0:
        raise ValueError(f"need d >= 1 and M >= 0, got d={d}, M={M}")
    p = M + 1 if d == 1 else (d ** (M + 1) - 1) // (d - 1)
    if p > _MAX_BASIS:
        raise OverflowError(f"signature dimension {p} too large for d={d}, M={M}")
    return p


@lru_cache(maxsize=None)
def level_slices(d: int, M: int) -> tuple[slice, ...]:
    out = []
    start = 0
    for k in range(M + 1):
        out.append(slice(start, start + d**k))
        start += d**k
    return tuple(out)


@lru_cache(maxsize=None)
def words(d: int, M: int) -> tuple[tuple[int, ...], ...]:
    """All words in basis order; the empty word comes first."""
    return tuple(w for k in range(M + 1) for w in product(range(d), repeat=k))


def word_labels(d: int, M: int) -> list[str]:
    return ["()" if not w else "(" + ",".join(map(str, w)) + ")" for w in words(d, M)]


@dataclass(frozen=True)
class TruncatedTensor:
    dim: int
    depth: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.float64)
        if coeffs.shape != (basis_size(self.dim, self.depth),):
            raise ValueError(
                f"coeffs must have length {basis_size(self.dim, self.depth)}, got {coeffs.shape}"
            )
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def identity(cls, dim: int, depth: int) -> "TruncatedTensor":
        c = np.zeros(basis_size(dim, depth))
        c[0] = 1.0
        return cls(dim, depth, c)

    def level(self, k: int) -> np.ndarray:
        return self.coeffs[level_slices(self.dim, self.depth)[k]]

    def __matmul__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return tensor_mul(self, other)


def batch_segment_exp(increments: np.ndarray, M: int) -> np.ndarray:
    """Signature of linear segments: level k is ``inc^{(x)k} / k!``.

    ``increments`` has shape ``(..., d)``; the result has shape ``(..., p)``.
    """
    inc = np.asarray(increments, dtype=np.float64)
    d = inc.shape[-1]
    lead = inc.shape[:-1]
    levels = [np.ones(lead + (1,))]
    cur = levels[0]
    for k in range(1, M + 1):
        cur = (cur[..., :, None] * inc[..., None, :]).reshape(lead + (d**k,)) / k
        levels.append(cur)
    return np.concatenate(levels, axis=-1)


def batch_tensor_mul(a: np.ndarray, b: np.ndarray, d: int, M: int) -> np.ndarray:
    """Truncated product of stacked tensors (last axis = flat coefficients)."""
    sl = level_slices(d, M)
    lead = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    out = np.empty(lead + (a.shape[-1],))
    for k in range(M + 1):
        acc = np.zeros(lead + (d**k,))
        for i in range(k + 1):
            ai = a[..., sl[i]]
            bj = b[..., sl[k - i]]
            acc += (ai[..., :, None] * bj[..., None, :]).reshape(lead + (d**k,))
        out[..., sl[k]] = acc
    return out


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Chen product: concatenation of paths <-> product of signatures."""
    if a.dim != b.dim or a.depth != b.depth:
        raise ValueError(
            f"shape mismatch: ({a.dim}, {a.depth}) vs ({b.dim}, {b.depth})"
        )
    return TruncatedTensor(a.dim, a.depth, batch_tensor_mul(a.coeffs, b.coeffs, a.dim, a.depth))


def segment_exp(increment, depth: int) -> TruncatedTensor:
    inc = np.asarray(increment, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(inc)):
        raise ValueError("increment must be finite")
    return TruncatedTensor(inc.size, depth, batch_segment_exp(inc, depth))


def path_signature(path: np.ndarray, M: int) -> TruncatedTensor:
    """Signature of the piecewise-linear interpolation of ``path`` (rows = points)."""
    path = np.asarray(path, dtype=np.float64)
    d = path.shape[1]
    sig = np.zeros(basis_size(d, M))
    sig[0] = 1.0
    for inc in np.diff(path, axis=0):
        sig = batch_tensor_mul(sig, batch_segment_exp(inc, M), d, M)
    return TruncatedTensor(d, M, sig)


def level_sup_norms(coeffs: np.ndarray, d: int, M: int) -> np.ndarray:
    """Max-abs coefficient of each level; shape ``(..., M+1)``."""
    return np.stack([np.abs(coeffs[..., s]).max(axis=-1) for s in level_slices(d, M)], axis=-1)


def factorial_bounds(variation: np.ndarray, M: int) -> np.ndarray:
    v = np.asarray(variation, dtype=np.float64)[..., None]
    k = np.arange(M + 1)
    return v**k / np.array([factorial(int(i)) for i in k])
