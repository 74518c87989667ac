"""Small fully-connected networks and the Adam optimizer.

Networks are capped at four hidden layers.  Defaults (width 128, ReLU
hidden units) are configurable; batch size and the 1e-4 learning rate are
owned by the training configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import RngStream

MAX_HIDDEN_LAYERS = 4


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    IDENTITY = "identity"


_ACTIVATION_FNS = {
    Activation.RELU: ad.relu,
    Activation.TANH: ad.tanh,
    Activation.SIGMOID: ad.sigmoid,
    Activation.SOFTPLUS: ad.softplus,
    Activation.IDENTITY: lambda t: t,
}


class LayerShapeError(ValueError):
    """Layer dimensions do not chain; carries the offending layer index."""

    def __init__(self, layer: int, message: str):
        self.layer = layer
        super().__init__(f"layer {layer}: {message}")


class GradientError(ValueError):
    """A non-finite gradient reached the optimizer; names the parameter."""

    def __init__(self, param_name: str):
        self.param_name = param_name
        super().__init__(f"non-finite gradient for parameter {param_name!r}")


def apply_activation(t: Tensor, activation: Activation) -> Tensor:
    return _ACTIVATION_FNS[Activation(activation)](t)


def mlp_forward(
    layers: Sequence[tuple[Tensor, Tensor]],
    x: Tensor,
    activation: Activation = Activation.RELU,
    output_activation: Activation = Activation.IDENTITY,
) -> Tensor:
    """Run ``x`` through dense layers, recording everything on the tape.

    ``layers`` is a list of (weight, bias) pairs; the given activation is
    applied after every layer except the last, which uses
    ``output_activation``.
    """
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        if h.data.ndim != 2 or h.data.shape[1] != w.data.shape[0]:
            raise LayerShapeError(
                i,
                f"input of shape {h.data.shape} does not match weight "
                f"{w.data.shape}",
            )
        if b.data.shape != (w.data.shape[1],):
            raise LayerShapeError(
                i, f"bias {b.data.shape} does not match weight {w.data.shape}"
            )
        h = ad.add(ad.matmul(h, w), b)
        h = apply_activation(h, activation if i < last else output_activation)
    return h


class Mlp:
    """Fully-connected net with named parameters and He/Xavier init."""

    def __init__(
        self,
        dims: Sequence[int],
        rng: RngStream,
        activation: Activation = Activation.RELU,
        output_activation: Activation = Activation.IDENTITY,
        name: str = "mlp",
        output_weight_scale: float = 1.0,
    ):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        n_hidden = len(dims) - 2
        if n_hidden > MAX_HIDDEN_LAYERS:
            raise ValueError(
                f"at most {MAX_HIDDEN_LAYERS} hidden layers supported, got {n_hidden}"
            )
        self.activation = Activation(activation)
        self.output_activation = Activation(output_activation)
        self.name = name
        self.layers: list[tuple[Tensor, Tensor]] = []
        last = len(dims) - 2
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if self.activation is Activation.RELU and i < last:
                scale = np.sqrt(2.0 / fan_in)
            else:
                scale = np.sqrt(1.0 / fan_in)
            if i == last:
                scale *= output_weight_scale
            w = Tensor(rng.normal((fan_in, fan_out)) * scale, name=f"{name}.layer{i}.weight")
            b = Tensor(np.zeros(fan_out), name=f"{name}.layer{i}.bias")
            self.layers.append((w, b))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self.layers, x, self.activation, self.output_activation)

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass; ops are fused in place since large
        evaluation batches are memory-bandwidth bound."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.data
            h += b.data
            act = self.activation if i < last else self.output_activation
            if act is Activation.RELU:
                np.maximum(h, 0.0, out=h)
            elif act is Activation.TANH:
                np.tanh(h, out=h)
            elif act is Activation.SIGMOID:
                h = np.where(h >= 0, 1.0 / (1.0 + np.exp(-np.abs(h))),
                             np.exp(-np.abs(h)) / (1.0 + np.exp(-np.abs(h))))
            elif act is Activation.SOFTPLUS:
                h = np.logaddexp(0.0, h)
        return h

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def restore(self, snapshot: Sequence[np.ndarray]) -> None:
        for p, saved in zip(self.params, snapshot):
            p.data = saved.copy()


@dataclass
class AdamState:
    """Moment buffers for Adam with bias correction."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_update(
    state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray]
) -> None:
    """One in-place Adam step over ``params`` given matching ``grads``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise GradientError(p.name or f"param{i}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / (1.0 - b1**state.t)
        denom = np.sqrt(v / (1.0 - b2**state.t))
        denom += state.eps
        m_hat /= denom
        m_hat *= state.lr
        p.data -= m_hat


class Adam:
    """Optimizer wrapper binding an AdamState to a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adam_update(self.state, self.params, grads)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
