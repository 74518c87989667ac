"""Benchmark channel simulators and exact input-constraint enforcement.

Supported channels: average-power AWGN, optical-intensity (nonnegative
input with mean and optional peak budgets), peak-power-constrained AWGN,
Poisson with dark current, and two-user additive MACs.  Constraints are
enforced by hard projection on every emitted batch, never by penalties,
so every reported input distribution is feasible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import RngStream

CHANNEL_KINDS = ("awgn", "oi", "ppc_awgn", "poisson", "awgn_mac", "oi_mac")
MAC_KINDS = ("awgn_mac", "oi_mac")


class ConstraintError(ValueError):
    """Raised for contradictory or empty constraint sets."""


@dataclass(frozen=True)
class ConstraintSpec:
    """Input constraints for one transmitter.

    avg_power bounds the batch mean square, peak bounds amplitudes almost
    surely, nonneg restricts to [0, inf), and mean_budget bounds the batch
    mean.  At least one must be present.
    """

    avg_power: float | None = None
    peak: float | None = None
    nonneg: bool = False
    mean_budget: float | None = None

    def __post_init__(self):
        if (
            self.avg_power is None
            and self.peak is None
            and not self.nonneg
            and self.mean_budget is None
        ):
            raise ConstraintError("at least one constraint must be present")
        if self.avg_power is not None and self.avg_power < 0:
            raise ConstraintError(f"avg_power must be >= 0, got {self.avg_power}")
        if self.peak is not None and self.peak <= 0:
            raise ConstraintError(f"peak must be > 0, got {self.peak}")
        if self.mean_budget is not None and self.mean_budget < 0:
            raise ConstraintError(
                f"mean_budget must be >= 0, got {self.mean_budget}"
            )
        alpha = self.alpha
        if alpha is not None and not (0.0 < alpha <= 1.0):
            raise ConstraintError(
                f"mean_budget/peak ratio must lie in (0, 1], got {alpha:.4g}"
            )

    @property
    def alpha(self) -> float | None:
        """Mean-to-peak ratio when both budgets are present."""
        if self.peak is not None and self.mean_budget is not None:
            return self.mean_budget / self.peak
        return None


@dataclass(frozen=True)
class ChannelSpec:
    """A channel law plus the constraint set of each transmitter."""

    kind: str
    constraints: tuple[ConstraintSpec, ...]
    noise_sigma: float = 1.0
    dark_current: float = 0.0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ConstraintError(f"unknown channel kind {self.kind!r}")
        n_users = 2 if self.kind in MAC_KINDS else 1
        if len(self.constraints) != n_users:
            raise ConstraintError(
                f"{self.kind} takes exactly {n_users} constraint spec(s), "
                f"got {len(self.constraints)}"
            )
        if self.noise_sigma < 0:
            raise ConstraintError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if self.kind == "poisson":
            if self.dark_current < 0:
                raise ConstraintError(
                    f"dark current must be >= 0, got {self.dark_current}"
                )
            if not self.constraints[0].nonneg:
                raise ConstraintError("poisson channel requires nonneg inputs")
        if self.kind == "oi_mac" and not all(c.nonneg for c in self.constraints):
            raise ConstraintError("oi_mac requires nonneg inputs for both users")

    @property
    def is_mac(self) -> bool:
        return self.kind in MAC_KINDS


def awgn_forward(x: Tensor, sigma: float, rng: RngStream) -> Tensor:
    """y = x + z with z i.i.d. Normal(0, sigma^2); differentiable in x."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    noise = rng.normal(x.data.shape, std=1.0) * sigma
    return ad.add(x, Tensor(noise))


def poisson_forward(x: Tensor, dark_current: float, rng: RngStream) -> Tensor:
    """y_n ~ Poisson(x_n + dark), independent across n.

    The output is a constant tensor: discrete sampling breaks the pathwise
    derivative, so gradients reach the input distribution only through the
    critic's direct dependence on x.
    """
    if dark_current < 0:
        raise ValueError(f"dark current must be >= 0, got {dark_current}")
    if np.any(x.data < 0):
        raise ValueError("poisson channel inputs must be nonnegative")
    draws = rng.poisson(x.data + dark_current).astype(np.float64)
    return Tensor(draws)


def mac_forward(x1: Tensor, x2: Tensor, sigma: float, rng: RngStream) -> Tensor:
    """y = x1 + x2 + z for the two-user additive channel."""
    if x1.data.shape != x2.data.shape:
        raise ValueError(
            f"MAC inputs must share a shape, got {x1.data.shape} vs {x2.data.shape}"
        )
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    noise = rng.normal(x1.data.shape, std=1.0) * sigma
    return ad.add(ad.add(x1, x2), Tensor(noise))


def project_constraints(raw: Tensor, c: ConstraintSpec) -> Tensor:
    """Map a raw batch onto the feasible set of ``c``, exactly and on-tape.

    Peak plus nonneg uses peak*sigmoid, a symmetric peak uses peak*tanh,
    and bare nonnegativity uses softplus.  A mean budget rescales the batch
    by min(1, budget/mean); an average-power budget rescales so the batch
    mean square equals the budget whenever it exceeds it.
    """
    x = raw
    if c.peak is not None and c.nonneg:
        x = ad.mul(ad.sigmoid(x), c.peak)
    elif c.peak is not None:
        x = ad.mul(ad.tanh(x), c.peak)
    elif c.nonneg:
        x = ad.softplus(x)
    if c.mean_budget is not None:
        batch_mean = ad.tmean(x)
        scale = ad.clip(ad.div(c.mean_budget, batch_mean), None, 1.0)
        x = ad.mul(x, scale)
    if c.avg_power is not None:
        mean_square = ad.tmean(ad.mul(x, x))
        if float(mean_square.data) > c.avg_power:
            x = ad.mul(x, ad.sqrt(ad.div(c.avg_power, mean_square)))
    return x


def project_constraints_array(raw: np.ndarray, c: ConstraintSpec) -> np.ndarray:
    """Tape-free twin of :func:`project_constraints` for large batches."""
    x = np.asarray(raw, dtype=np.float64)
    if c.peak is not None and c.nonneg:
        x = c.peak * np.where(
            x >= 0,
            1.0 / (1.0 + np.exp(-np.abs(x))),
            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
        )
    elif c.peak is not None:
        x = c.peak * np.tanh(x)
    elif c.nonneg:
        x = np.logaddexp(0.0, x)
    if c.mean_budget is not None:
        x = x * min(1.0, c.mean_budget / x.mean())
    if c.avg_power is not None:
        mean_square = np.mean(x * x)
        if mean_square > c.avg_power:
            x = x * np.sqrt(c.avg_power / mean_square)
    return x


def check_feasible(x: np.ndarray, c: ConstraintSpec, rel_slack: float = 1e-9) -> None:
    """Assert a batch satisfies ``c``; used by the trainer's debug mode."""
    if c.nonneg and np.any(x < -rel_slack):
        raise ConstraintError("batch violates nonnegativity")
    if c.peak is not None and np.max(np.abs(x)) > c.peak * (1.0 + rel_slack):
        raise ConstraintError("batch violates peak constraint")
    if c.mean_budget is not None and c.mean_budget > 0:
        if x.mean() > c.mean_budget * (1.0 + rel_slack):
            raise ConstraintError("batch violates mean budget")
    if c.avg_power is not None and c.avg_power > 0:
        if np.mean(x * x) > c.avg_power * (1.0 + rel_slack):
            raise ConstraintError("batch violates average power budget")


def channel_forward(spec: ChannelSpec, x, rng: RngStream) -> Tensor:
    """Dispatch one batch through the channel law of ``spec``.

    ``x`` is a single tensor for point-to-point kinds and an (x1, x2) pair
    for MAC kinds.
    """
    if spec.kind in ("awgn", "oi", "ppc_awgn"):
        return awgn_forward(x, spec.noise_sigma, rng)
    if spec.kind == "poisson":
        return poisson_forward(x, spec.dark_current, rng)
    x1, x2 = x
    return mac_forward(x1, x2, spec.noise_sigma, rng)


def db_to_linear(db: float) -> float:
    """Power-like dB convention: value = 10^(dB/10)."""
    return float(10.0 ** (db / 10.0))


def linear_to_db(value: float) -> float:
    return float(10.0 * np.log10(value))
