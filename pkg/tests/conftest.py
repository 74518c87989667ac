"""Shared oracles and fixtures.

The finite-difference checker and the four-outcome discrete joint pmf
below are the independent references the estimator and gradient tests
are pinned against; they never touch the code paths they verify.
"""

from __future__ import annotations

import numpy as np
import pytest

from capbench.autodiff import Tensor


# Four-outcome joint pmf on {0,1}^2 used across the estimator tests.
TOY_JOINT = {
    (0, 0): 0.45,
    (0, 1): 0.05,
    (1, 0): 0.05,
    (1, 1): 0.45,
}


def toy_marginals():
    px = {0: 0.0, 1: 0.0}
    py = {0: 0.0, 1: 0.0}
    for (x, y), p in TOY_JOINT.items():
        px[x] += p
        py[y] += p
    return px, py


def toy_mutual_information() -> float:
    """Brute-force I = sum p log(p / (px py)) over the four outcomes."""
    px, py = toy_marginals()
    return sum(
        p * np.log(p / (px[x] * py[y])) for (x, y), p in TOY_JOINT.items()
    )


def toy_outcome_arrays():
    """Outcome list with joint and product weights, in fixed order."""
    outcomes = sorted(TOY_JOINT)
    px, py = toy_marginals()
    w_joint = np.array([TOY_JOINT[o] for o in outcomes])
    w_prod = np.array([px[x] * py[y] for x, y in outcomes])
    return outcomes, w_joint, w_prod


def finite_diff_grad(loss_fn, param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a deterministic scalar loss."""
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def assert_grads_match(analytic: np.ndarray, numeric: np.ndarray,
                       rtol: float = 1e-4, atol: float = 1e-7) -> None:
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def gaussian_pair(rho: float, n: int, rng: np.random.Generator):
    """Correlated standard normal pairs with I = -0.5 ln(1 - rho^2)."""
    x = rng.normal(size=(n, 1))
    z = rng.normal(size=(n, 1))
    y = rho * x + np.sqrt(1.0 - rho * rho) * z
    return x, y


def gaussian_mi(rho: float) -> float:
    return -0.5 * np.log(1.0 - rho * rho)


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one line per acceptance criterion and prints them at the end."""
    lines: list[str] = []
    yield lines
    print("\n" + "=" * 70)
    print("ACCEPTANCE CRITERIA")
    for line in lines:
        print(line)
    print("=" * 70)
