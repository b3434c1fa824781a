"""Layers (two-layer ReLU MLP, gated and vanilla recurrent cells), Adam, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, relu, sigmoid, tanh


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MLP:
    """``out = W2 . relu(W1 . x + b1) + b2``; weights stored ``(in, out)`` for row-batched input."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, prefix: str = "mlp") -> "MLP":
        return cls(
            Tensor(_uniform(rng, n_in, (n_in, n_hidden)), True, f"{prefix}.W1"),
            Tensor(_uniform(rng, n_in, (n_hidden,)), True, f"{prefix}.b1"),
            Tensor(_uniform(rng, n_hidden, (n_hidden, n_out)), True, f"{prefix}.W2"),
            Tensor(_uniform(rng, n_hidden, (n_out,)), True, f"{prefix}.b2"),
        )

    @property
    def n_in(self) -> int:
        return self.W1.shape[0]

    @property
    def n_out(self) -> int:
        return self.W2.shape[1]

    def params(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]

    def weights(self) -> list[Tensor]:
        return [self.W1, self.W2]

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"MLP expects input width {self.n_in}, got {x.shape[-1]}")
        return relu(x @ self.W1 + self.b1) @ self.W2 + self.b2


def mlp_apply(params: MLP, x) -> Tensor:
    return params(x)


@dataclass
class GRUCell:
    """Gated recurrent cell; gate blocks are ordered (reset, update, candidate)."""

    Wx: Tensor
    Wh: Tensor
    bx: Tensor
    bh: Tensor

    @classmethod
    def init(cls, n_in: int, n_hidden: int, rng: np.random.Generator, prefix: str = "rnn") -> "GRUCell":
        h3 = 3 * n_hidden
        return cls(
            Tensor(_uniform(rng, n_in, (n_in, h3)), True, f"{prefix}.Wx"),
            Tensor(_uniform(rng, n_hidden, (n_hidden, h3)), True, f"{prefix}.Wh"),
            Tensor(_uniform(rng, n_hidden, (h3,)), True, f"{prefix}.bx"),
            Tensor(_uniform(rng, n_hidden, (h3,)), True, f"{prefix}.bh"),
        )

    @property
    def n_in(self) -> int:
        return self.Wx.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.Wh.shape[0]

    def params(self) -> list[Tensor]:
        return [self.Wx, self.Wh, self.bx, self.bh]

    def weights(self) -> list[Tensor]:
        return [self.Wx, self.Wh]

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        H = self.n_hidden
        gx = x @ self.Wx + self.bx
        gh = h @ self.Wh + self.bh
        r = sigmoid(gx[..., :H] + gh[..., :H])
        u = sigmoid(gx[..., H:2 * H] + gh[..., H:2 * H])
        n = tanh(gx[..., 2 * H:] + r * gh[..., 2 * H:])
        return n + u * (h - n)


@dataclass
class VanillaCell:
    """``h' = tanh(x Wx + h Wh + b)``; same interface as :class:`GRUCell`."""

    Wx: Tensor
    Wh: Tensor
    b: Tensor

    @classmethod
    def init(cls, n_in: int, n_hidden: int, rng: np.random.Generator, prefix: str = "rnn") -> "VanillaCell":
        return cls(
            Tensor(_uniform(rng, n_in, (n_in, n_hidden)), True, f"{prefix}.Wx"),
            Tensor(_uniform(rng, n_hidden, (n_hidden, n_hidden)), True, f"{prefix}.Wh"),
            Tensor(_uniform(rng, n_hidden, (n_hidden,)), True, f"{prefix}.b"),
        )

    @property
    def n_in(self) -> int:
        return self.Wx.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.Wh.shape[0]

    def params(self) -> list[Tensor]:
        return [self.Wx, self.Wh, self.b]

    def weights(self) -> list[Tensor]:
        return [self.Wx, self.Wh]

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        return tanh(x @ self.Wx + h @ self.Wh + self.b)


def run_rnn(cell, inputs: Sequence, step_mask: Sequence[np.ndarray] | None = None) -> Tensor:
    """Run ``cell`` over ``inputs`` (each ``(batch, n_in)``) from a zero state.

    ``step_mask[m]`` (shape ``(batch, 1)``) freezes the state of series that have
    ended, so padded batches give each series its own last hidden state.
    """
    if len(inputs) == 0:
        raise ValueError("cannot encode an empty sequence")
    first = as_tensor(inputs[0])
    batch_shape = first.shape[:-1]
    h = Tensor(np.zeros(batch_shape + (cell.n_hidden,)))
    for m, x in enumerate(inputs):
        x = as_tensor(x)
        if x.shape[-1] != cell.n_in:
            raise ValueError(f"recurrent cell expects input width {cell.n_in}, got {x.shape[-1]}")
        new = cell.step(x, h)
        keep = None if step_mask is None else np.asarray(step_mask[m], dtype=float)
        if m == 0 or keep is None or keep.all():
            h = new
        else:
            h = h + keep * (new - h)
    return h


def rnn_encode(cell, sequence) -> Tensor:
    """Final hidden state for one ``(M, n_in)`` sequence."""
    seq = sequence.data if isinstance(sequence, Tensor) else np.asarray(sequence, dtype=float)
    if len(seq) == 0:
        raise ValueError("cannot encode an empty sequence")
    if isinstance(sequence, Tensor):
        steps = [sequence[m] for m in range(len(seq))]
    else:
        steps = [seq[m] for m in range(len(seq))]
    return run_rnn(cell, steps)


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam descent step.  Returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    m = state.m or [np.zeros_like(p) for p in params]
    v = state.v or [np.zeros_like(p) for p in params]
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, mi, vi in zip(params, grads, m, v):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(mi):
            raise ValueError(f"shape mismatch in adam_step: {np.shape(p)} vs {np.shape(g)}")
        mi = state.beta1 * mi + (1.0 - state.beta1) * g
        vi = state.beta2 * vi + (1.0 - state.beta2) * g * g
        new_p.append(p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps))
        new_m.append(mi)
        new_v.append(vi)
    return new_p, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)


class Adam:
    """Stateful wrapper that updates tensors in place."""

    def __init__(self, params: Iterable[Tensor], lr: float = 0.001):
        self.params = list(params)
        self.state = AdamState(lr=lr)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        new, self.state = adam_step(self.state, [p.data for p in self.params], grads)
        for p, arr in zip(self.params, new):
            p.data = arr


# --- checkpoints ------------------------------------------------------------


def params_to_json(params: dict[str, np.ndarray]) -> dict:
    # json emits repr(float), the shortest string that round-trips exactly
    return {k: {"shape": list(np.shape(v)), "data": [float(x) for x in np.ravel(v)]} for k, v in params.items()}


def params_from_json(obj: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in obj.items()}


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_json(params), fh)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        return params_from_json(json.load(fh))
