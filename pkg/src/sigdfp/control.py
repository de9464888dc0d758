"""Feedforward feedback-control networks, SGD schedule and checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1


@dataclass
class ControlNet:
    """MLP with tanh-family hidden layers and an affine output layer.

    ``weights[i]`` has shape ``(widths[i], widths[i+1])`` so a batch of row
    inputs is pushed through with ``x @ W + b``. ``in_shift`` and ``in_scale``
    are a fixed, untrained map ``(x - shift) / scale`` applied to the inputs.
    """

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    in_shift: np.ndarray | None = None
    in_scale: np.ndarray | None = None
    grad_weights: list[np.ndarray] = field(default_factory=list)
    grad_biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} has shapes {W.shape}, {b.shape}")
        if (self.in_shift is None) != (self.in_scale is None):
            raise ValueError("in_shift and in_scale go together")
        if self.in_shift is not None:
            self.in_shift = np.asarray(self.in_shift, dtype=np.float64)
            self.in_scale = np.asarray(self.in_scale, dtype=np.float64)
            if self.in_shift.shape != (self.widths[0],) or self.in_scale.shape != (self.widths[0],):
                raise ValueError("input normalization needs one shift and scale per input")
            if not np.all(self.in_scale > 0):
                raise ValueError("input scales must be positive")
        self.zero_grad()

    @classmethod
    def init(cls, widths, rng: np.random.Generator, activation: str = "tanh",
             normalization=None) -> "ControlNet":
        """Glorot-uniform weights, zero biases; ``normalization`` is ``(shift, scale)`` or None."""
        widths = tuple(widths)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(widths, weights, biases, activation, *(normalization or (None, None)))

    @classmethod
    def zeros(cls, widths, activation: str = "tanh", normalization=None) -> "ControlNet":
        widths = tuple(widths)
        return cls(
            widths,
            [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
            [np.zeros(b) for b in widths[1:]],
            activation,
            *(normalization or (None, None)),
        )

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.grad_weights, self.grad_biases):
            out += [W, b]
        return out

    def zero_grad(self) -> None:
        self.grad_weights = [np.zeros_like(W) for W in self.weights]
        self.grad_biases = [np.zeros_like(b) for b in self.biases]

    def copy(self) -> "ControlNet":
        norm = (None, None) if self.in_shift is None else (self.in_shift.copy(), self.in_scale.copy())
        return ControlNet(
            self.widths, [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation, *norm
        )

    def __call__(self, x, params=None):
        return forward(self, x, params)


def forward(net: ControlNet, x, params=None):
    """Evaluate the network on a batch ``(B, n_inputs)`` or a single input vector.

    ``params`` optionally overrides the stored weights with tape variables
    (alternating weight, bias) so the call can be differentiated.
    """
    single = np.ndim(ad.value(x)) == 1
    if single:
        x = ad.value(x)[None, :]
    if ad.value(x).shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} inputs, got {ad.value(x).shape[1]}")
    if params is None:
        params = net.params()
    act = ad.ACTIVATIONS[net.activation]
    h = x
    if net.in_shift is not None:
        h = ad.mul(ad.add(h, -net.in_shift), 1.0 / net.in_scale)
    n_layers = len(net.weights)
    for i in range(n_layers):
        h = ad.affine(h, params[2 * i], params[2 * i + 1])
        if i < n_layers - 1:
            h = act(h)
    return h[0] if single else h


@dataclass(frozen=True)
class SgdSchedule:
    """Piecewise-constant learning rate: divide by ``factor`` at each boundary round."""

    base_lr: float = 0.1
    factor: float = 5.0
    boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        if self.base_lr < 0 or self.factor <= 0:
            raise ValueError("learning rate must be >= 0 and decay factor > 0")
        object.__setattr__(self, "boundaries", tuple(sorted(int(b) for b in self.boundaries)))

    def lr(self, round_index: int) -> float:
        n = sum(1 for b in self.boundaries if round_index >= b)
        return self.base_lr / self.factor**n

    @classmethod
    def every(cls, base_lr: float, factor: float, period: int, n_rounds: int) -> "SgdSchedule":
        return cls(base_lr, factor, tuple(range(period, n_rounds, period)))


def sgd_step(net: ControlNet, grads, schedule: SgdSchedule, round_index: int) -> ControlNet:
    """In-place descent step ``theta <- theta - lr * g``; returns the net."""
    lr = schedule.lr(round_index)
    params = net.params()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p -= lr * g
    return net


def save_checkpoint(path, nets: dict[str, ControlNet], extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Versioned ``.npz``: every net's layers plus arbitrary arrays and a JSON header."""
    arrays = {}
    header = {"version": CHECKPOINT_VERSION, "nets": {}, "meta": meta or {}}
    for name, net in nets.items():
        header["nets"][name] = {"widths": list(net.widths), "activation": net.activation}
        for i, (W, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}.W{i}"] = W
            arrays[f"{name}.b{i}"] = b
        if net.in_shift is not None:
            arrays[f"{name}.in_shift"] = net.in_shift
            arrays[f"{name}.in_scale"] = net.in_scale
    for k, v in (extra or {}).items():
        arrays[f"extra.{k}"] = np.asarray(v)
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, entry in header["nets"].items():
            n = len(entry["widths"]) - 1
            nets[name] = ControlNet(
                tuple(entry["widths"]),
                [z[f"{name}.W{i}"].copy() for i in range(n)],
                [z[f"{name}.b{i}"].copy() for i in range(n)],
                entry["activation"],
                z[f"{name}.in_shift"].copy() if f"{name}.in_shift" in z.files else None,
                z[f"{name}.in_scale"].copy() if f"{name}.in_scale" in z.files else None,
            )
        extra = {k[len("extra."):]: z[k].copy() for k in z.files if k.startswith("extra.")}
    return nets, extra, header["meta"]


def grad_rollout(nets: dict[str, ControlNet], problem, x0, types, mu, noise, iteration=None):
    """Reverse-mode gradient of the batch objective through the whole rollout.

    The measure flow ``mu`` enters as frozen data. Maximisation problems are
    negated first, so the returned loss is always the quantity to descend and
    the gradients are written into each net's accumulators.
    """
    from .sde import NumericalAbort, rollout

    with ad.Tape() as tape:
        params = {name: [ad.Var(p) for p in net.params()] for name, net in nets.items()}
        J, _, _ = rollout(problem, nets, x0, types, mu, noise, params=params, record=False,
                          iteration=iteration)
        loss = J * problem.sign
        tape.backward(loss)
    out = {}
    for name, net in nets.items():
        gs = [np.zeros_like(p.value) if p.grad is None else p.grad for p in params[name]]
        for g in gs:
            if not np.all(np.isfinite(g)):
                raise NumericalAbort(f"non-finite gradient for net {name!r}", iteration=iteration)
        net.grad_weights, net.grad_biases = gs[0::2], gs[1::2]
        out[name] = gs
    return float(loss.value), out
