"""Type-distribution quadrature and the relative L2 path metric."""
from __future__ import annotations

import numpy as np

GRID_CAP = 2**20


def gauss_legendre_uniform(lo: float, hi: float, order: int):
    """Nodes and probability weights for the uniform law on ``[lo, hi]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * w


def product_grid(ranges: dict[str, tuple[float, float]], order: int = 32, cap: int = GRID_CAP):
    """Broadcastable Gauss-Legendre nodes (one axis per variable) and product weights.

    The per-dimension order is lowered until the grid has at most ``cap`` points.
    """
    k = len(ranges)
    while order > 2 and order**k > cap:
        order -= 1
    args, weights = {}, np.ones(())
    for ax, (name, (lo, hi)) in enumerate(ranges.items()):
        x, w = gauss_legendre_uniform(lo, hi, order)
        shape = [1] * k
        shape[ax] = order
        args[name] = x.reshape(shape)
        weights = weights * w.reshape(shape)
    return args, weights


def uniform_expectation(fn, ranges: dict[str, tuple[float, float]], order: int = 32,
                        cap: int = GRID_CAP) -> float:
    """``E[fn(**Z)]`` for independent uniforms via a Gauss-Legendre product rule."""
    args, weights = product_grid(ranges, order, cap)
    return float(np.sum(weights * fn(**args)))


def uniform_log_mean(lo: float, hi: float) -> float:
    """``E[log U]`` for ``U ~ U(lo, hi)``."""
    def antider(x):
        return x * np.log(x) - x if x > 0 else 0.0
    return float((antider(hi) - antider(lo)) / (hi - lo))


def uniform_power_mean(lo: float, hi: float, p):
    """``E[U**p]`` for ``U ~ U(lo, hi)`` (elementwise in ``p``)."""
    p = np.asarray(p, dtype=np.float64)
    return (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo))


def relative_l2(reference: np.ndarray, estimate: np.ndarray, grid: np.ndarray | None = None) -> float:
    """Relative L2 distance of path batches ``(N, L+1[, d])``, trapezoid in time."""
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {est.shape}")
    if ref.ndim == 2:
        ref, est = ref[..., None], est[..., None]
    t = np.arange(ref.shape[1], dtype=np.float64) if grid is None else np.asarray(grid)
    num = np.trapezoid(np.sum((ref - est) ** 2, axis=-1), t, axis=1).mean()
    den = np.trapezoid(np.sum(ref**2, axis=-1), t, axis=1).mean()
    if not den > 0:
        raise ValueError("reference process is identically zero")
    return float(np.sqrt(num / den))


def mc_standard_error(per_path: np.ndarray, antithetic: bool = True) -> float:
    """Standard error of the batch mean; antithetic halves are averaged pairwise first."""
    v = np.asarray(per_path, dtype=np.float64)
    if antithetic and v.size % 2 == 0:
        half = v.size // 2
        v = 0.5 * (v[:half] + v[half:])
    if v.size < 2:
        return float("nan")
    return float(v.std(ddof=1) / np.sqrt(v.size))
