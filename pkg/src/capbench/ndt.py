"""Neural distribution transformer: source samples in, channel inputs out.

A deterministic MLP maps i.i.d. source draws through a constraint layer
bound to the channel's input constraints, so every emitted batch is
feasible by construction.  With a discrete m-atom source the learned
input distribution has support of at most m points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from . import autodiff as ad
from .channels import ConstraintSpec, project_constraints, project_constraints_array
from .nn import Activation, Mlp
from .rng import RngStream

SOURCE_KINDS = ("gaussian_std", "discrete_uniform")


@dataclass(frozen=True)
class SourceSpec:
    """Known sampling distribution feeding the transformer.

    ``gaussian_std`` draws standard normals; ``discrete_uniform`` draws
    uniformly from the m atoms {0, 1, ..., m-1}.
    """

    kind: str = "gaussian_std"
    m: int = 2
    dim: int = 1

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "discrete_uniform" and self.m < 2:
            raise ValueError(f"discrete source needs at least 2 atoms, got {self.m}")
        if self.dim < 1:
            raise ValueError(f"source dim must be >= 1, got {self.dim}")

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        if self.kind == "gaussian_std":
            return rng.normal((n, self.dim))
        atoms = rng.integers(0, self.m, (n, self.dim))
        return atoms.astype(np.float64)


class NdtNet:
    """MLP generator with a constraint layer bound to a ConstraintSpec.

    For purely average-power channels the pre-projection output carries a
    fixed sqrt(P) gain, matching the support scale of the target input so
    training adjusts shape rather than magnitude.  Peak-limited channels
    get their scale from the bounded activation inside the projection.
    """

    def __init__(
        self,
        constraint: ConstraintSpec,
        rng: RngStream,
        in_dim: int = 1,
        out_dim: int = 1,
        width: int = 128,
        depth: int = 2,
        name: str = "ndt",
        skip_center: float | None = None,
        skip_gain: float | None = None,
    ):
        dims = [in_dim] + [width] * depth + [out_dim]
        self.mlp = Mlp(dims, rng, Activation.RELU, Activation.IDENTITY, name=name)
        self.constraint = constraint
        self.output_gain = 1.0
        if constraint.peak is None and constraint.avg_power is not None:
            self.output_gain = float(np.sqrt(constraint.avg_power))
        elif (constraint.peak is None and constraint.nonneg
              and constraint.mean_budget is not None):
            # Start the softplus output near the mean budget so training
            # adjusts shape rather than scale.
            target = min(constraint.mean_budget, 700.0)
            _, bias = self.mlp.layers[-1]
            bias.data = bias.data + float(np.log(np.expm1(max(target, 1e-3))))
        # Discrete sources start from a learnable affine passthrough so the
        # initial atoms spread over the support instead of coinciding.
        self.skip_center = skip_center if skip_center is not None else 0.0
        self.skip: Tensor | None = None
        if skip_gain is not None:
            self.skip = Tensor(np.full((in_dim, out_dim), float(skip_gain)),
                               name=f"{name}.skip")

    @property
    def params(self) -> list[Tensor]:
        out = list(self.mlp.params)
        if self.skip is not None:
            out.append(self.skip)
        return out

    def __call__(self, s: Tensor) -> Tensor:
        raw = self.mlp(s)
        if self.output_gain != 1.0:
            raw = ad.mul(raw, self.output_gain)
        if self.skip is not None:
            raw = ad.add(raw, ad.matmul(ad.sub(s, self.skip_center), self.skip))
        return project_constraints(raw, self.constraint)

    def forward_array(self, s: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Tape-free forward pass; the constraint projection still couples
        the whole batch, so only the MLP part is chunked."""
        s = np.asarray(s, dtype=np.float64)
        raw = np.empty((s.shape[0], self.mlp.layers[-1][0].data.shape[1]))
        for start in range(0, s.shape[0], chunk):
            raw[start : start + chunk] = self.mlp.forward_array(s[start : start + chunk])
        if self.output_gain != 1.0:
            raw = raw * self.output_gain
        if self.skip is not None:
            raw = raw + (s - self.skip_center) @ self.skip.data
        return project_constraints_array(raw, self.constraint)

    def snapshot(self):
        return [p.data.copy() for p in self.params]

    def restore(self, saved):
        for p, kept in zip(self.params, saved):
            p.data = kept.copy()


def ndt_sample(net: NdtNet, source: SourceSpec, n: int, rng: RngStream) -> Tensor:
    """n feasible channel-input samples, differentiable w.r.t. the net."""
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    s = source.sample(int(n), rng)
    return net(Tensor(s))


def ndt_sample_array(net: NdtNet, source: SourceSpec, n: int, rng: RngStream) -> np.ndarray:
    """Like :func:`ndt_sample` but off-tape, for evaluation-size batches."""
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    return net.forward_array(source.sample(int(n), rng))


def histogram(samples, bins: int = 100) -> list[tuple[float, float, int]]:
    """Equal-width histogram over [min, max] as (left, right, count) rows."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    data = samples.data if isinstance(samples, Tensor) else np.asarray(samples)
    data = np.ravel(np.asarray(data, dtype=np.float64))
    if data.size == 0:
        raise ValueError("cannot histogram an empty sample set")
    counts, edges = np.histogram(data, bins=bins)
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i]))
        for i in range(len(counts))
    ]
