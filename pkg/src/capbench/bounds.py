"""Analytic capacity values, literature reference tables, and a
Blahut-Arimoto oracle.

Everything is in nats.  Values that originate in external literature we
did not re-derive are shipped as versioned reference tables rather than
re-implemented formulas; each BoundValue carries its provenance string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

TWO_PI_E = 2.0 * math.pi * math.e


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class BoundValue:
    value: float
    kind: str  # exact | lower | upper | reference_table
    source: str

    def __post_init__(self):
        if self.kind not in ("exact", "lower", "upper", "reference_table"):
            raise BoundsError(f"unknown bound kind {self.kind!r}")


@dataclass(frozen=True)
class RateRegion:
    """Dominant boundary of a two-user rate region.

    ``vertices`` lists the Pareto frontier in nondecreasing R1 and
    nonincreasing R2 order; the full region is the convex hull with the
    origin.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        r1s = [v[0] for v in self.vertices]
        r2s = [v[1] for v in self.vertices]
        if any(b < a - 1e-12 for a, b in zip(r1s, r1s[1:])):
            raise BoundsError("region vertices must have nondecreasing R1")
        if any(b > a + 1e-12 for a, b in zip(r2s, r2s[1:])):
            raise BoundsError("region vertices must have nonincreasing R2")

    def contains(self, r1: float, r2: float, slack: float = 1e-12) -> bool:
        if not self.vertices:
            return False
        if r1 < -slack or r2 < -slack:
            return False
        if r1 > max(v[0] for v in self.vertices) + slack:
            return False
        best = -math.inf
        if r1 <= self.vertices[0][0] + slack:
            best = self.vertices[0][1]
        for (a1, a2), (b1, b2) in zip(self.vertices, self.vertices[1:]):
            if r1 < a1 - slack or r1 > b1 + slack:
                continue
            if abs(b1 - a1) < 1e-15:
                best = max(best, a2, b2)
                continue
            t = min(max((r1 - a1) / (b1 - a1), 0.0), 1.0)
            best = max(best, a2 + t * (b2 - a2))
        return r2 <= best + slack


def binary_entropy(p: float) -> float:
    """H2(p) in nats; zero at the endpoints, ln 2 at 1/2."""
    if not (0.0 <= p <= 1.0):
        raise BoundsError(f"probability must lie in [0,1], got {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log(p) - (1.0 - p) * math.log(1.0 - p))


def q_function(x: float) -> float:
    """Standard normal tail probability via the complementary error function."""
    return float(0.5 * special.erfc(x / math.sqrt(2.0)))


# -- point-to-point bounds --------------------------------------------------


def awgn_capacity(p: float) -> BoundValue:
    """0.5 ln(1 + P) for the average-power AWGN channel."""
    if p < 0:
        raise BoundsError(f"power must be >= 0, got {p}")
    return BoundValue(0.5 * math.log1p(p), "exact", "awgn closed form")


def oi_lower(a: float, sigma: float = 1.0) -> BoundValue:
    """0.5 ln(1 + A^2 / (2 pi e sigma^2)); valid for mean/peak ratios in [1/2, 1]."""
    if a <= 0 or sigma <= 0:
        raise BoundsError("peak and sigma must be positive")
    return BoundValue(
        0.5 * math.log1p(a * a / (TWO_PI_E * sigma * sigma)),
        "lower",
        "optical-intensity entropy lower bound",
    )


_OI_TABLE = {
    3: (0.270, 0.830),
    5: (0.420, 0.990),
    8: (0.593, 1.010),
    10: (0.830, 1.480),
    15: (1.340, 1.770),
    20: (1.780, 2.220),
}


def oi_reference_bounds(snr_db: float) -> tuple[BoundValue, BoundValue]:
    """Tabulated (lower, upper) capacity bounds for the mean-constrained
    optical-intensity channel; available at 3/5/8/10/15/20 dB."""
    key = int(snr_db)
    if key != snr_db or key not in _OI_TABLE:
        raise BoundsError(
            f"no tabulated optical-intensity bounds at {snr_db} dB; "
            f"available: {sorted(_OI_TABLE)}"
        )
    lo, hi = _OI_TABLE[key]
    return (
        BoundValue(lo, "reference_table", f"oi table {key} dB lower"),
        BoundValue(hi, "reference_table", f"oi table {key} dB upper"),
    )


def ppc_upper(p: float) -> BoundValue:
    """min{ln(1 + sqrt(2P/(pi e))), 0.5 ln(1+P)} for peak A = sqrt(P)."""
    if p < 0:
        raise BoundsError(f"power must be >= 0, got {p}")
    first = math.log1p(math.sqrt(2.0 * p / (math.pi * math.e)))
    second = 0.5 * math.log1p(p)
    return BoundValue(min(first, second), "upper", "peak-power upper bound")


def kramer_upper(p: float) -> BoundValue:
    """Refined peak-power upper bound beta(P) ln(2P/(pi e)) + H2(beta(P)).

    Only valid for P in [2, 6] dB; beta(P) = 1/2 - Q(2 sqrt(P)).
    """
    p_db = 10.0 * math.log10(p) if p > 0 else -math.inf
    if not (2.0 - 1e-9 <= p_db <= 6.0 + 1e-9):
        raise BoundsError(
            f"refined upper bound is valid only for P in [2, 6] dB, got {p_db:.3g} dB"
        )
    beta = 0.5 - q_function(2.0 * math.sqrt(p))
    value = beta * math.log(2.0 * p / (math.pi * math.e)) + binary_entropy(beta)
    return BoundValue(value, "upper", "refined peak-power upper bound")


def _uniform_mixture_entropy(points: np.ndarray, span: float, tol: float = 1e-8) -> float:
    """Differential entropy of an equal-weight unit-Gaussian mixture.

    Integrates -f log f piecewise between the mixture centers with an
    adaptive Gauss-Kronrod rule at absolute tolerance ``tol``.  A segment
    on which the rule reports non-convergence raises, carrying the error
    estimate it did achieve.
    """
    weights = np.full(len(points), 1.0 / len(points))

    def density(y):
        return np.sum(weights * np.exp(-0.5 * (y - points) ** 2)) / math.sqrt(2 * math.pi)

    def integrand(y):
        f = density(y)
        if f <= 0.0:
            return 0.0
        return -f * math.log(f)

    lo, hi = points.min() - span, points.max() + span
    cuts = [lo, *np.sort(points), hi]
    per_segment = tol / (10.0 * (len(cuts) - 1))
    value = 0.0
    for a, b in zip(cuts, cuts[1:]):
        if b <= a:
            continue
        v, abserr, info, *tail = integrate.quad(
            integrand, a, b, epsabs=per_segment, limit=200, full_output=1
        )
        if tail:  # QUADPACK appended a non-convergence message
            raise BoundsError(
                f"entropy quadrature did not converge on [{a:.3g}, {b:.3g}]: "
                f"achieved {abserr:.2e} > requested {per_segment:.2e}"
            )
        value += v
    return float(value)


def ppc_lower(p: float, max_points: int = 8) -> BoundValue:
    """Entropy lower bound from the best M-point uniform input, M <= max_points.

    With peak A = sqrt(P), the input is M equispaced points on [-A, A];
    the bound is h(X + Z) - 0.5 ln(2 pi e) with unit Gaussian Z, maximized
    over M.  M = 1 degenerates to a pure Gaussian output and a zero bound.
    """
    if p < 0:
        raise BoundsError(f"power must be >= 0, got {p}")
    if max_points < 1:
        raise BoundsError(f"need at least one mass point, got {max_points}")
    a = math.sqrt(p)
    best = -math.inf
    for m in range(1, max_points + 1):
        points = np.zeros(1) if m == 1 else np.linspace(-a, a, m)
        h = _uniform_mixture_entropy(points, span=8.0)
        best = max(best, h - 0.5 * math.log(TWO_PI_E))
    return BoundValue(best, "lower", "entropy bound for uniform mass points")


_POISSON_TABLE = {
    # (ecal_db, peak, dark_current) -> lower bound
    (5, 100, 0.0): 0.0,
    (10, 100, 0.0): 1.02,
    (15, 100, 0.0): 1.55,
    (20, 100, 0.0): 1.55,
    (5, 100, 10.0): 0.0,
    (10, 100, 10.0): 0.0,
    (15, 100, 10.0): 1.23,
    (20, 100, 10.0): 1.23,
}


def poisson_reference_bounds(ecal_db: float, peak: float, dark_current: float) -> BoundValue:
    """Tabulated capacity lower bounds for the Poisson channel at peak 100."""
    key = (int(ecal_db), int(peak), float(dark_current))
    if key[0] != ecal_db or key[1] != peak or key not in _POISSON_TABLE:
        raise BoundsError(
            f"no tabulated poisson bound for Ecal={ecal_db} dB, A={peak}, "
            f"dark={dark_current}"
        )
    return BoundValue(
        _POISSON_TABLE[key],
        "reference_table",
        f"poisson table Ecal={key[0]} dB, A={key[1]}, dark={key[2]}",
    )


# -- MAC rate regions --------------------------------------------------------


def pentagon_region(r1_max: float, r2_max: float, sum_max: float) -> RateRegion:
    """Intersection of R1 <= a, R2 <= b, R1 + R2 <= c in the first quadrant."""
    a = max(min(r1_max, sum_max), 0.0)
    b = max(min(r2_max, sum_max), 0.0)
    c = max(min(sum_max, a + b), 0.0)
    verts: list[tuple[float, float]] = [(0.0, b)]
    if c < a + b:
        verts.append((c - b, b) if c - b > 0 else (0.0, min(b, c)))
        verts.append((a, c - a) if c - a > 0 else (min(a, c), 0.0))
    else:
        verts.append((a, b))
    verts.append((a, 0.0))
    deduped = [verts[0]]
    for v in verts[1:]:
        if v != deduped[-1]:
            deduped.append(v)
    return RateRegion(tuple(deduped))


def awgn_mac_region(p1: float, p2: float) -> RateRegion:
    """Gaussian MAC pentagon: Ri <= 0.5 ln(1+Pi), sum <= 0.5 ln(1+P1+P2)."""
    if p1 < 0 or p2 < 0:
        raise BoundsError("powers must be >= 0")
    return pentagon_region(
        0.5 * math.log1p(p1),
        0.5 * math.log1p(p2),
        0.5 * math.log1p(p1 + p2),
    )


def oi_mac_region(e1: float, e2: float) -> RateRegion:
    """Mean-constrained optical MAC outer region.

    Ri <= 0.5 ln(e/(2 pi) (Ei + 2)^2) and the sum constraint with E1+E2+2.
    """
    if e1 < 0 or e2 < 0:
        raise BoundsError("mean budgets must be >= 0")
    coeff = math.e / (2.0 * math.pi)
    return pentagon_region(
        0.5 * math.log(coeff * (e1 + 2.0) ** 2),
        0.5 * math.log(coeff * (e2 + 2.0) ** 2),
        0.5 * math.log(coeff * (e1 + e2 + 2.0) ** 2),
    )


# -- Blahut-Arimoto oracle ----------------------------------------------------


def blahut_arimoto(
    w: np.ndarray,
    cost: np.ndarray | None = None,
    budget: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 20000,
) -> tuple[float, np.ndarray]:
    """Capacity (nats) and optimal input pmf of a discrete channel.

    ``w`` is the |X| x |Y| row-stochastic transition matrix.  With a cost
    vector and budget, solves the mean-cost-constrained problem via a
    Lagrange-multiplier bisection around the alternating maximization.
    The per-iteration mutual information is nondecreasing; iteration
    stops once the duality gap max_i D_i - I(p) falls below ``tol``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1:
        raise BoundsError("transition matrix must be 2-d")
    if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
        raise BoundsError("transition matrix rows must be probability vectors")
    if (cost is None) != (budget is None):
        raise BoundsError("cost vector and budget must be supplied together")

    log_w = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), 0.0)

    def solve(multiplier: float) -> tuple[float, np.ndarray, float]:
        p = np.full(w.shape[0], 1.0 / w.shape[0])
        last_obj = -np.inf
        mi = 0.0
        for _ in range(max_iter):
            q = p @ w
            with np.errstate(divide="ignore"):
                log_q = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), 0.0)
            d = np.einsum("ij,ij->i", w, log_w - log_q[None, :])
            score = d if multiplier == 0.0 else d - multiplier * cost
            mi = float(p @ d)
            objective = float(p @ score)
            if objective < last_obj - 1e-12:
                raise BoundsError("objective decreased during iteration")
            last_obj = objective
            gap = float(np.max(score) - objective)
            if gap <= tol:
                break
            p = p * np.exp(score - score.max())
            p = p / p.sum()
        mean_cost = float(p @ cost) if cost is not None else 0.0
        return mi, p, mean_cost

    if cost is None:
        mi, p, _ = solve(0.0)
        return mi, p

    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (w.shape[0],):
        raise BoundsError("cost vector must have one entry per input letter")
    mi, p, mean_cost = solve(0.0)
    if mean_cost <= budget + 1e-12:
        return mi, p
    lo, hi = 0.0, 1.0
    best = solve(hi)
    while best[2] > budget:
        hi *= 2.0
        if hi > 1e6:
            raise BoundsError("could not bracket the cost multiplier")
        best = solve(hi)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        mi, p, mean_cost = solve(mid)
        if mean_cost > budget:
            lo = mid
        else:
            hi = mid
            best = (mi, p, mean_cost)
        if abs(mean_cost - budget) <= 1e-9 * max(1.0, budget):
            break
    return best[0], best[1]


def poisson_channel_matrix(
    peak: float,
    dark_current: float = 0.0,
    n_grid: int = 200,
    tail_mass: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Discretized Poisson channel: input grid on [0, A] and its W matrix.

    The output alphabet is truncated where the worst-case tail mass drops
    below ``tail_mass``; rows are renormalized to sum to one exactly.
    """
    if peak <= 0:
        raise BoundsError(f"peak must be positive, got {peak}")
    grid = np.linspace(0.0, peak, n_grid)
    max_rate = peak + dark_current
    y_max = int(stats.poisson.ppf(1.0 - tail_mass, max(max_rate, 1e-12))) + 2
    ys = np.arange(y_max + 1)
    rates = grid + dark_current
    w = stats.poisson.pmf(ys[None, :], np.maximum(rates, 1e-300)[:, None])
    w = w / w.sum(axis=1, keepdims=True)
    return w, grid
