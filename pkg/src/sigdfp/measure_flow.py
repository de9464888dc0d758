"""Linear functionals on truncated signatures approximating conditional moments."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .signatures import PrefixSignatures
from .tensor_algebra import word_labels

_RANK_TOL = 1e-11


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MeasureFlowFunctional:
    """``coeffs[j] . S`` estimates channel j; ``exp`` channels are exponentiated."""

    coeffs: np.ndarray
    transforms: tuple[str, ...] = ("none",)
    ridge: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64, ndmin=2)
        if c.shape[0] != len(self.transforms):
            raise ValueError(f"{c.shape[0]} coefficient rows for {len(self.transforms)} channels")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite functional coefficients")
        bad = set(self.transforms) - {"none", "exp"}
        if bad:
            raise ValueError(f"unknown output transform(s) {sorted(bad)}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "transforms", tuple(self.transforms))

    @property
    def sig_dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.coeffs.shape[0]

    def linear(self, sigs: np.ndarray) -> np.ndarray:
        """Untransformed inner products; ``sigs`` is ``(..., p)``, result ``(..., q)``."""
        sigs = np.asarray(sigs)
        if sigs.shape[-1] != self.sig_dim:
            raise ValueError(f"signature dimension {sigs.shape[-1]} != {self.sig_dim}")
        return sigs @ self.coeffs.T

    def apply_transforms(self, raw: np.ndarray) -> np.ndarray:
        out = np.array(raw, dtype=np.float64, copy=True)
        for j, tr in enumerate(self.transforms):
            if tr == "exp":
                out[..., j] = np.exp(out[..., j])
        return out

    def evaluate(self, sig) -> np.ndarray:
        coeffs = getattr(sig, "coeffs", sig)
        return self.apply_transforms(self.linear(coeffs))

    def evaluate_all(self, prefix: PrefixSignatures) -> np.ndarray:
        """Flow values on every path and grid time, shape ``(N, L+1, q)``."""
        return self.apply_transforms(self.linear(prefix.data))

    @classmethod
    def random(cls, sig_dim: int, transforms, rng: np.random.Generator, scale: float = 0.01):
        transforms = tuple(transforms)
        return cls(scale * rng.standard_normal((len(transforms), sig_dim)), transforms)

    @classmethod
    def constant(cls, values, sig_dim: int, transforms) -> "MeasureFlowFunctional":
        c = np.zeros((len(transforms), sig_dim))
        c[:, 0] = values
        return cls(c, tuple(transforms))


def design_matrix(prefix: PrefixSignatures, stamps) -> np.ndarray:
    """Rows: every path at stamp 0, then every path at the next stamp, and so on."""
    return np.concatenate([prefix.data[:, k] for k in stamps], axis=0)


def fit_functional(X: np.ndarray, Y: np.ndarray, ridge: float = 0.0,
                   transforms=("none",)) -> MeasureFlowFunctional:
    """Least squares (or ridge with unpenalised intercept) via the normal equations.

    ``X`` is the ``(rows, p)`` design of signatures, ``Y`` the ``(rows, q)``
    targets, already in the channel's linear scale (e.g. log-values for
    ``exp`` channels). A singular normal matrix with ``ridge == 0`` falls back
    to the minimum-norm solution and warns.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"{X.shape[0]} design rows but {Y.shape[0]} targets")
    if ridge < 0:
        raise ValueError("ridge penalty must be >= 0")
    G = X.T @ X
    rhs = X.T @ Y
    if ridge > 0:
        pen = np.full(G.shape[0], ridge)
        pen[0] = 0.0
        G = G + np.diag(pen)
    evals = np.linalg.eigvalsh(G)
    if evals[0] <= _RANK_TOL * max(evals[-1], 1e-300):
        if ridge == 0:
            warnings.warn(
                f"rank-deficient normal matrix (min/max eigenvalue {evals[0] / evals[-1]:.2e}); "
                "using minimum-norm least squares",
                RankDeficientWarning,
                stacklevel=2,
            )
            beta = np.linalg.lstsq(X, Y, rcond=None)[0]
        else:
            beta = scipy.linalg.lstsq(G, rhs)[0]
    else:
        beta = scipy.linalg.solve(G, rhs, assume_a="pos")
    return MeasureFlowFunctional(beta.T, tuple(transforms), ridge)


def fit_from_paths(prefix: PrefixSignatures, targets: np.ndarray, stamps, ridge: float = 0.0,
                   transforms=("none",)) -> MeasureFlowFunctional:
    """``targets`` is ``(N, L+1, q)`` (or ``(N, L+1)``) sampled on the same grid as ``prefix``."""
    targets = np.asarray(targets)
    if targets.ndim == 2:
        targets = targets[:, :, None]
    X = design_matrix(prefix, stamps)
    Y = np.concatenate([targets[:, k] for k in stamps], axis=0)
    return fit_functional(X, Y, ridge, transforms)


def average(prev: MeasureFlowFunctional, fresh: MeasureFlowFunctional, n: int,
            warm_start_rounds: int = 0) -> MeasureFlowFunctional:
    """Fictitious-play running mean with an un-averaged warm-start phase.

    Round ``n`` (1-based) has effective count ``n - warm_start_rounds``; while
    that is <= 1 the fresh functional is returned as is.
    """
    if prev.coeffs.shape != fresh.coeffs.shape or prev.transforms != fresh.transforms:
        raise ValueError("cannot average functionals of different shape or transforms")
    if n - warm_start_rounds <= 1:
        return fresh
    return MeasureFlowFunctional(running_mean(prev.coeffs, fresh.coeffs, n, warm_start_rounds),
                                 fresh.transforms, fresh.ridge)


def running_mean(prev: np.ndarray, fresh: np.ndarray, n: int, warm_start_rounds: int = 0) -> np.ndarray:
    """The same averaging rule on raw arrays (used for empirical flow tables)."""
    m = n - warm_start_rounds
    if m <= 1:
        return np.array(fresh, dtype=np.float64, copy=True)
    return (m - 1) / m * prev + fresh / m


def export_csv(flow: MeasureFlowFunctional, path, dim: int, depth: int, channel_names=None) -> None:
    names = channel_names or [f"channel_{j}" for j in range(flow.n_outputs)]
    labels = word_labels(dim, depth)
    if len(labels) != flow.sig_dim:
        raise ValueError("dimension/depth do not match the functional")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["word_index", "word", *names])
        for i, lab in enumerate(labels):
            w.writerow([i, lab, *(repr(float(v)) for v in flow.coeffs[:, i])])
