"""Variational mutual-information estimators.

Each estimator exposes a differentiable batch loss for training its
critic(s), an input-side loss for training the generator, and a pure
evaluation-mode estimate.  Product-of-marginals samples come from a
random cyclic shift of the y column, which pairs every x with an
independent y without fixed points.

The weighted value helpers at the top are the computational core; tests
evaluate them on exact finite pmfs to pin down each bound at its optimal
critic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Activation, Mlp
from .rng import RngStream

ESTIMATOR_KINDS = ("mine", "smile", "nwj", "tuba", "infonce", "dine", "chi2")
CHI2_FORMS = ("paper", "standard")

CRITIC_CLAMP = 50.0


class EstimatorError(ValueError):
    pass


class Chi2FormError(EstimatorError):
    """The printed variational form needs a positive second moment."""


@dataclass
class EstimatorConfig:
    """Hyperparameters shared by the estimator family."""

    kind: str = "mine"
    tau: float = 0.2
    alpha: float = 1.0
    ema_rate: float = 0.99
    chi2_form: str = "paper"

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise EstimatorError(f"unknown estimator kind {self.kind!r}")
        if self.tau <= 0:
            raise EstimatorError(f"tau must be > 0, got {self.tau}")
        if self.alpha <= 0:
            raise EstimatorError(f"alpha must be > 0, got {self.alpha}")
        if not (0.0 < self.ema_rate < 1.0):
            raise EstimatorError(f"ema_rate must lie in (0,1), got {self.ema_rate}")
        if self.chi2_form not in CHI2_FORMS:
            raise EstimatorError(f"unknown chi2 form {self.chi2_form!r}")


@dataclass
class MIEstimate:
    """An MI estimate in nats with provenance."""

    value: float
    n_samples: int
    kind: str
    is_lower_bound: bool = True

    def __post_init__(self):
        if self.n_samples <= 0:
            raise EstimatorError("an estimate needs at least one sample")


@dataclass
class Diagnostics:
    """Counters for numerically notable events during a trial."""

    clamp_events: int = 0
    chi2_clamps: int = 0
    dine_reference_fallbacks: int = 0

    def merge(self, other: "Diagnostics") -> None:
        self.clamp_events += other.clamp_events
        self.chi2_clamps += other.chi2_clamps
        self.dine_reference_fallbacks += other.dine_reference_fallbacks

    def as_dict(self) -> dict:
        return {
            "clamp_events": self.clamp_events,
            "chi2_clamps": self.chi2_clamps,
            "dine_reference_fallbacks": self.dine_reference_fallbacks,
        }


# -- critic network -------------------------------------------------------


def batch_stats(cols: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature location/scale of a batch, for input whitening."""
    z = np.concatenate([np.asarray(c, dtype=np.float64) for c in cols], axis=1)
    mu = z.mean(axis=0)
    sd = np.maximum(z.std(axis=0), 1e-6)
    return mu, sd


def tape_stats(cols: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Differentiable location/scale of a batch; shared across critic calls
    inside one loss so the critic stays a single well-defined function."""
    z = ad.concat(cols, axis=1) if len(cols) > 1 else cols[0]
    mu = ad.tmean(z, axis=0)
    centered = ad.sub(z, mu)
    sd = ad.clip(ad.sqrt(ad.tmean(ad.mul(centered, centered), axis=0)), 1e-6, None)
    return mu, sd


class CriticNet:
    """Scalar test-function network T with whitened inputs.

    Inputs are standardized with batch statistics computed once per loss
    (on the tape, so gradients account for them), and outputs are clamped
    to +-50 before any exponential so that high-SNR batches cannot
    overflow; clamp events are counted.
    """

    def __init__(
        self,
        input_dim: int,
        rng: RngStream,
        width: int = 128,
        depth: int = 2,
        name: str = "critic",
        diagnostics: Diagnostics | None = None,
    ):
        dims = [input_dim] + [width] * depth + [1]
        self.mlp = Mlp(dims, rng, Activation.RELU, Activation.IDENTITY, name=name)
        self.input_dim = input_dim
        self.diagnostics = diagnostics if diagnostics is not None else Diagnostics()

    @property
    def params(self) -> list[Tensor]:
        return self.mlp.params

    def forward(self, cols: list[Tensor], stats: tuple[Tensor, Tensor]) -> Tensor:
        z = ad.concat(cols, axis=1) if len(cols) > 1 else cols[0]
        mu, sd = stats
        z = ad.div(ad.sub(z, mu), sd)
        t_raw = self.mlp(z)
        self.diagnostics.clamp_events += int(np.sum(np.abs(t_raw.data) > CRITIC_CLAMP))
        return ad.clip(t_raw, -CRITIC_CLAMP, CRITIC_CLAMP)

    def eval_batch(self, cols: list[np.ndarray], stats, chunk: int = 8192) -> np.ndarray:
        """Tape-free clamped critic values, chunked for large batches."""
        z = np.concatenate([np.asarray(c, np.float64) for c in cols], axis=1)
        mu, sd = stats
        z = (z - mu) / sd
        out = np.empty(z.shape[0])
        for start in range(0, z.shape[0], chunk):
            t = self.mlp.forward_array(z[start : start + chunk])[:, 0]
            self.diagnostics.clamp_events += int(np.sum(np.abs(t) > CRITIC_CLAMP))
            out[start : start + chunk] = np.clip(t, -CRITIC_CLAMP, CRITIC_CLAMP)
        return out

    def snapshot(self):
        return self.mlp.snapshot()

    def restore(self, saved):
        self.mlp.restore(saved)


# -- weighted value functions ---------------------------------------------


def _wmean(values: np.ndarray, weights) -> float:
    values = np.asarray(values, dtype=np.float64)
    if weights is None:
        return float(values.mean())
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.sum(values * weights) / np.sum(weights))


def dv_value(t_p, t_q, w_p=None, w_q=None) -> float:
    """Donsker-Varadhan lower bound: E_P[T] - log E_Q[e^T]."""
    return _wmean(t_p, w_p) - float(np.log(_wmean(np.exp(np.asarray(t_q)), w_q)))


def smile_value(t_p, t_q, tau: float, w_p=None, w_q=None) -> float:
    """DV with e^T clipped to [e^-tau, e^tau] inside the Q expectation."""
    with np.errstate(over="ignore", under="ignore"):
        lo, hi = np.exp(-tau), np.exp(tau)
        clipped = np.clip(np.exp(np.asarray(t_q, dtype=np.float64)), lo, hi)
    return _wmean(t_p, w_p) - float(np.log(_wmean(clipped, w_q)))


def nwj_value(t_p, t_q, w_p=None, w_q=None) -> float:
    """Legendre-Fenchel variant: E_P[T] - E_Q[e^T - 1]."""
    return _wmean(t_p, w_p) - (_wmean(np.exp(np.asarray(t_q)), w_q) - 1.0)


def tuba_value(t_p, t_q, alpha: float, w_p=None, w_q=None) -> float:
    """Unnormalized bound with free constant: E_P[T] - (E_Q[e^T]/a + log a - 1)."""
    if alpha <= 0:
        raise EstimatorError(f"alpha must be > 0, got {alpha}")
    m_q = _wmean(np.exp(np.asarray(t_q)), w_q)
    return _wmean(t_p, w_p) - (m_q / alpha + float(np.log(alpha)) - 1.0)


def infonce_value(t_mat: np.ndarray) -> float:
    """Contrastive bound from a K x K critic matrix with t[i, j] = T(x_j, y_i)."""
    t_mat = np.asarray(t_mat, dtype=np.float64)
    k = t_mat.shape[0]
    if t_mat.shape != (k, k) or k < 2:
        raise EstimatorError(f"expected a square critic matrix, got {t_mat.shape}")
    log_mix = np.log(np.mean(np.exp(t_mat), axis=1))
    return float(np.mean(np.diag(t_mat) - log_mix))


def chi2_variational_value(t_p, t_q, form: str, w_p=None, w_q=None) -> float:
    """Variational chi-square divergence estimate for a fixed critic.

    ``paper`` evaluates E_P[T] - log E_Q[T^2] - 1 exactly as printed;
    ``standard`` evaluates the classical 2 E_P[T] - E_Q[T^2] - 1 whose
    optimum T* = dP/dQ attains the true chi-square value.
    """
    t_q = np.asarray(t_q, dtype=np.float64)
    second = _wmean(t_q * t_q, w_q)
    if form == "paper":
        if second <= 0:
            raise Chi2FormError(
                "printed variational form needs E_Q[T^2] > 0"
            )
        return _wmean(t_p, w_p) - float(np.log(second)) - 1.0
    if form == "standard":
        return 2.0 * _wmean(t_p, w_p) - second - 1.0
    raise EstimatorError(f"unknown chi2 form {form!r}")


def chi2_upper_kl(chi_pq: float, chi_qp: float) -> float:
    """KL upper bound from forward/reverse chi-square divergences (nats).

    log(1 + x) - 1.5 x^2 / ((1 + y)(1 + x)^2 - 1) with x = chi2(P||Q) and
    y = chi2(Q||P).  Both divergences vanish only when P = Q, where the
    bound is exactly zero.
    """
    if chi_pq < 0 or chi_qp < 0:
        raise EstimatorError("chi-square divergences must be nonnegative")
    if chi_pq == 0.0 and chi_qp == 0.0:
        return 0.0
    denom = (1.0 + chi_qp) * (1.0 + chi_pq) ** 2 - 1.0
    if denom <= 0:
        raise EstimatorError(
            f"degenerate chi-square pair ({chi_pq:.4g}, {chi_qp:.4g})"
        )
    return float(np.log1p(chi_pq) - 1.5 * chi_pq**2 / denom)


def chi2_variational(batch_p, batch_q, critic, form: str = "paper") -> float:
    """Chi-square estimate between two sample batches for a given critic.

    ``critic`` is either a CriticNet or any callable mapping an (n, d)
    array to n scalar values.
    """
    batch_p = np.atleast_2d(np.asarray(batch_p, dtype=np.float64))
    batch_q = np.atleast_2d(np.asarray(batch_q, dtype=np.float64))
    if batch_p.shape[0] == 0 or batch_q.shape[0] == 0:
        raise EstimatorError("both batches must be nonempty")
    if isinstance(critic, CriticNet):
        stats = batch_stats([np.concatenate([batch_p, batch_q], axis=0)])
        t_p = critic.eval_batch([batch_p], stats)
        t_q = critic.eval_batch([batch_q], stats)
    else:
        t_p = np.asarray(critic(batch_p), dtype=np.float64).reshape(-1)
        t_q = np.asarray(critic(batch_q), dtype=np.float64).reshape(-1)
    return chi2_variational_value(t_p, t_q, form)


# -- shared tape helpers ----------------------------------------------------


def _shifted_rows(t: Tensor, shift: int) -> Tensor:
    n = t.data.shape[0]
    idx = (np.arange(n) + shift) % n
    return ad.take_rows(t, idx)


def _dv_objective(t_p: Tensor, t_q: Tensor) -> Tensor:
    return ad.sub(ad.tmean(t_p), ad.log(ad.tmean(ad.exp(t_q))))


def _matched_reference(data: np.ndarray, rng: RngStream,
                       diagnostics: Diagnostics) -> np.ndarray:
    """I.i.d. Gaussian draws moment-matched to a batch, columnwise.

    Degenerate columns (zero spread) fall back to unit scale, flagged.
    """
    mu = data.mean(axis=0)
    sd = data.std(axis=0)
    if np.any(sd < 1e-9):
        diagnostics.dine_reference_fallbacks += 1
        sd = sd + (sd < 1e-9) * 1.0
    return mu + sd * rng.normal(data.shape)


def _matched_reference_tape(col: Tensor, rng: RngStream,
                            diagnostics: Diagnostics) -> Tensor:
    """On-tape twin of :func:`_matched_reference`; the reference draws are
    reparameterized so gradients see the moment matching."""
    noise = rng.normal(col.data.shape)
    mu = ad.tmean(col, axis=0)
    centered = ad.sub(col, mu)
    sd = ad.sqrt(ad.tmean(ad.mul(centered, centered), axis=0))
    if np.any(sd.data < 1e-9):
        diagnostics.dine_reference_fallbacks += 1
        sd = ad.add(sd, Tensor((sd.data < 1e-9) * 1.0))
    return ad.add(mu, ad.mul(sd, Tensor(noise)))


# -- estimators -------------------------------------------------------------


class MIEstimatorBase:
    """Common interface: critics, training losses, evaluation estimate."""

    kind: str = ""
    is_lower_bound: bool = True
    n_critics: int = 1

    def __init__(self, cfg: EstimatorConfig):
        self.cfg = cfg
        self.diagnostics = Diagnostics()
        self.last_batch_value: float | None = None

    def critic_input_dims(self, dx: int, dy: int) -> list[int]:
        return [dx + dy]

    def make_critics(self, dx: int, dy: int, rng: RngStream,
                     width: int = 128, depth: int = 2) -> list[CriticNet]:
        dims = self.critic_input_dims(dx, dy)
        return [
            CriticNet(d, rng, width, depth, name=f"{self.kind}_critic{i}",
                      diagnostics=self.diagnostics)
            for i, d in enumerate(dims)
        ]

    def loss(self, x: Tensor, y: Tensor, critics, rng: RngStream,
             update_state: bool = True) -> Tensor:
        raise NotImplementedError

    def input_loss(self, x: Tensor, y: Tensor, critics, rng: RngStream) -> Tensor:
        return self.loss(x, y, critics, rng, update_state=False)

    def estimate(self, x: np.ndarray, y: np.ndarray, critics,
                 rng: RngStream) -> MIEstimate:
        raise NotImplementedError

    def _make_estimate(self, value: float, n: int) -> MIEstimate:
        return MIEstimate(value=float(value), n_samples=int(n), kind=self.kind,
                          is_lower_bound=self.is_lower_bound)


class _DvFamily(MIEstimatorBase):
    """Single-critic estimators built on joint vs shifted-product samples."""

    def _tape_terms(self, x, y, critics, rng):
        # One stacked critic pass covers the joint rows and the product rows.
        (critic,) = critics
        b = x.data.shape[0]
        stats = tape_stats([x, y])
        shift = rng.derangement_shift(b)
        x2 = ad.concat([x, x], axis=0)
        y2 = ad.concat([y, _shifted_rows(y, shift)], axis=0)
        t_all = critic.forward([x2, y2], stats)
        t_p = ad.take_rows(t_all, np.arange(b))
        t_q = ad.take_rows(t_all, np.arange(b, 2 * b))
        return t_p, t_q

    def _eval_terms(self, x, y, critics, rng):
        (critic,) = critics
        x = np.asarray(x, np.float64)
        y = np.asarray(y, np.float64)
        stats = batch_stats([x, y])
        shift = rng.derangement_shift(x.shape[0])
        idx = (np.arange(x.shape[0]) + shift) % x.shape[0]
        t_p = critic.eval_batch([x, y], stats)
        t_q = critic.eval_batch([x, y[idx]], stats)
        return t_p, t_q


class MineEstimator(_DvFamily):
    """DV bound with an exponential-moving-average gradient correction.

    The plain batch gradient of log E_Q[e^T] is biased; replacing the
    denominator with an EMA of E_Q[e^T] across minibatches removes most
    of that bias.  Estimates always use the uncorrected DV value.
    """

    kind = "mine"

    def __init__(self, cfg: EstimatorConfig):
        super().__init__(cfg)
        self._ema: float | None = None

    def loss(self, x, y, critics, rng, update_state=True):
        t_p, t_q = self._tape_terms(x, y, critics, rng)
        self.last_batch_value = dv_value(t_p.data[:, 0], t_q.data[:, 0])
        m_q = ad.tmean(ad.exp(t_q))
        if update_state:
            batch_val = float(m_q.data)
            if self._ema is None:
                self._ema = batch_val
            else:
                r = self.cfg.ema_rate
                self._ema = r * self._ema + (1.0 - r) * batch_val
        denom = self._ema if self._ema is not None else float(m_q.data)
        objective = ad.sub(ad.tmean(t_p), ad.div(m_q, denom))
        return ad.neg(objective)

    def estimate(self, x, y, critics, rng):
        t_p, t_q = self._eval_terms(x, y, critics, rng)
        return self._make_estimate(dv_value(t_p, t_q), len(t_p))


class SmileEstimator(_DvFamily):
    """DV with the Q-side exponential clipped to [e^-tau, e^tau]."""

    kind = "smile"

    def loss(self, x, y, critics, rng, update_state=True):
        t_p, t_q = self._tape_terms(x, y, critics, rng)
        with np.errstate(over="ignore", under="ignore"):
            lo, hi = float(np.exp(-self.cfg.tau)), float(np.exp(self.cfg.tau))
        clipped = ad.clip(ad.exp(t_q), lo, hi)
        objective = ad.sub(ad.tmean(t_p), ad.log(ad.tmean(clipped)))
        self.last_batch_value = float(objective.data)
        return ad.neg(objective)

    def estimate(self, x, y, critics, rng):
        t_p, t_q = self._eval_terms(x, y, critics, rng)
        return self._make_estimate(smile_value(t_p, t_q, self.cfg.tau), len(t_p))


class NwjEstimator(_DvFamily):
    """Legendre-Fenchel variant of DV; tight at T* = log dP/dQ."""

    kind = "nwj"

    def loss(self, x, y, critics, rng, update_state=True):
        t_p, t_q = self._tape_terms(x, y, critics, rng)
        objective = ad.sub(
            ad.tmean(t_p), ad.sub(ad.tmean(ad.exp(t_q)), 1.0)
        )
        self.last_batch_value = float(objective.data)
        return ad.neg(objective)

    def estimate(self, x, y, critics, rng):
        t_p, t_q = self._eval_terms(x, y, critics, rng)
        return self._make_estimate(nwj_value(t_p, t_q), len(t_p))


class TubaEstimator(_DvFamily):
    """Unnormalized lower bound with a free positive constant alpha."""

    kind = "tuba"

    def loss(self, x, y, critics, rng, update_state=True):
        alpha = self.cfg.alpha
        t_p, t_q = self._tape_terms(x, y, critics, rng)
        penalty = ad.add(
            ad.div(ad.tmean(ad.exp(t_q)), alpha), float(np.log(alpha)) - 1.0
        )
        objective = ad.sub(ad.tmean(t_p), penalty)
        self.last_batch_value = float(objective.data)
        return ad.neg(objective)

    def estimate(self, x, y, critics, rng):
        t_p, t_q = self._eval_terms(x, y, critics, rng)
        return self._make_estimate(tuba_value(t_p, t_q, self.cfg.alpha), len(t_p))


class InfonceEstimator(MIEstimatorBase):
    """Contrastive bound over all in-batch pairings; capped at log K."""

    kind = "infonce"

    def loss(self, x, y, critics, rng, update_state=True):
        (critic,) = critics
        k = x.data.shape[0]
        if k < 2:
            raise EstimatorError("infonce needs a batch of at least 2")
        stats = tape_stats([x, y])
        idx_x = np.tile(np.arange(k), k)
        idx_y = np.repeat(np.arange(k), k)
        t_flat = critic.forward([ad.take_rows(x, idx_x), ad.take_rows(y, idx_y)],
                                stats)
        t_diag = ad.take_rows(t_flat, np.arange(k) * k + np.arange(k))
        t_mat = ad.reshape(t_flat, (k, k))
        log_mix = ad.log(ad.tmean(ad.exp(t_mat), axis=1))
        objective = ad.tmean(ad.sub(ad.reshape(t_diag, (k,)), log_mix))
        self.last_batch_value = float(objective.data)
        return ad.neg(objective)

    def estimate(self, x, y, critics, rng, batch_size: int = 256):
        (critic,) = critics
        x = np.asarray(x, np.float64)
        y = np.asarray(y, np.float64)
        n = x.shape[0]
        stats = batch_stats([x, y])
        values = []
        for start in range(0, n - 1, batch_size):
            xb = x[start : start + batch_size]
            yb = y[start : start + batch_size]
            k = xb.shape[0]
            if k < 2:
                break
            big_x = xb[np.tile(np.arange(k), k)]
            big_y = yb[np.repeat(np.arange(k), k)]
            t_mat = critic.eval_batch([big_x, big_y], stats).reshape(k, k)
            values.append(infonce_value(t_mat))
        return self._make_estimate(float(np.mean(values)), n)


class DineEstimator(MIEstimatorBase):
    """Entropy-decomposition estimator against a Gaussian reference.

    I(X;Y) = D(P_XY || P_X Q_Y') - D(P_Y || Q_Y') for any reference Q_Y';
    both KL terms are estimated with the DV bound using shared reference
    draws moment-matched to the batch.  The difference of two maximized
    terms is neither a lower nor an upper bound.
    """

    kind = "dine"
    is_lower_bound = False
    n_critics = 2

    def critic_input_dims(self, dx, dy):
        return [dx + dy, dy]

    def _tape_terms(self, x, y, critics, rng):
        joint, marginal = critics
        b = x.data.shape[0]
        y_ref = _matched_reference_tape(y, rng, self.diagnostics)
        idx_p, idx_q = np.arange(b), np.arange(b, 2 * b)
        x2 = ad.concat([x, x], axis=0)
        y2 = ad.concat([y, y_ref], axis=0)
        t_joint = joint.forward([x2, y2], tape_stats([x, y]))
        d_joint = _dv_objective(
            ad.take_rows(t_joint, idx_p), ad.take_rows(t_joint, idx_q)
        )
        t_marg = marginal.forward([y2], tape_stats([y]))
        d_marg = _dv_objective(
            ad.take_rows(t_marg, idx_p), ad.take_rows(t_marg, idx_q)
        )
        self.last_batch_value = float(d_joint.data - d_marg.data)
        return d_joint, d_marg

    def loss(self, x, y, critics, rng, update_state=True):
        d_joint, d_marg = self._tape_terms(x, y, critics, rng)
        return ad.neg(ad.add(d_joint, d_marg))

    def input_loss(self, x, y, critics, rng):
        d_joint, d_marg = self._tape_terms(x, y, critics, rng)
        return ad.neg(ad.sub(d_joint, d_marg))

    def estimate(self, x, y, critics, rng):
        joint, marginal = critics
        x = np.asarray(x, np.float64)
        y = np.asarray(y, np.float64)
        y_ref = _matched_reference(y, rng, self.diagnostics)
        stats_joint = batch_stats([x, y])
        stats_marg = batch_stats([y])
        d_joint = dv_value(
            joint.eval_batch([x, y], stats_joint),
            joint.eval_batch([x, y_ref], stats_joint),
        )
        d_marg = dv_value(
            marginal.eval_batch([y], stats_marg),
            marginal.eval_batch([y_ref], stats_marg),
        )
        return self._make_estimate(d_joint - d_marg, x.shape[0])


class Chi2BoundEstimator(MIEstimatorBase):
    """MI lower bound combining a DV-style term against product references
    with chi-square penalties for the reference mismatch.

    value = [E_P T(x,y) - log E e^{T(x',y')}] - KLUP(X||X') - KLUP(Y||Y')
    where each KLUP comes from variational chi-square estimates in both
    directions.  Negative chi-square estimates (possible away from the
    optimum) are clamped to zero and counted.
    """

    kind = "chi2"
    n_critics = 3

    def critic_input_dims(self, dx, dy):
        return [dx + dy, dx, dy]

    def _chi2_from_terms(self, t_p: Tensor, t_q: Tensor) -> Tensor:
        second = ad.tmean(ad.mul(t_q, t_q))
        if self.cfg.chi2_form == "paper":
            if float(second.data) <= 0:
                raise Chi2FormError("printed variational form needs E_Q[T^2] > 0")
            return ad.sub(ad.sub(ad.tmean(t_p), ad.log(second)), 1.0)
        return ad.sub(ad.sub(ad.mul(ad.tmean(t_p), 2.0), second), 1.0)

    def _chi2_both_directions(self, critic, p: Tensor, q: Tensor, stats):
        # One stacked pass; the two directions reuse the same critic values.
        b = p.data.shape[0]
        t_all = critic.forward([ad.concat([p, q], axis=0)], stats)
        t_p = ad.take_rows(t_all, np.arange(b))
        t_q = ad.take_rows(t_all, np.arange(b, b + q.data.shape[0]))
        return self._chi2_from_terms(t_p, t_q), self._chi2_from_terms(t_q, t_p)

    def _penalty_tape(self, c_fwd: Tensor, c_rev: Tensor) -> Tensor:
        if float(c_fwd.data) < 0 or float(c_rev.data) < 0:
            self.diagnostics.chi2_clamps += 1
        x = ad.clip(c_fwd, 0.0, None)
        yv = ad.clip(c_rev, 0.0, None)
        if float(x.data) == 0.0 and float(yv.data) == 0.0:
            return ad.mul(x, 0.0)
        one_px = ad.add(x, 1.0)
        denom = ad.sub(ad.mul(ad.add(yv, 1.0), ad.mul(one_px, one_px)), 1.0)
        return ad.sub(ad.log(one_px),
                      ad.div(ad.mul(ad.mul(x, x), 1.5), denom))

    def _tape_pieces(self, x, y, critics, rng):
        joint, crit_x, crit_y = critics
        b = x.data.shape[0]
        x_ref = _matched_reference_tape(x, rng, self.diagnostics)
        y_ref = _matched_reference_tape(y, rng, self.diagnostics)
        t_joint = joint.forward(
            [ad.concat([x, x_ref], axis=0), ad.concat([y, y_ref], axis=0)],
            tape_stats([x, y]),
        )
        j_term = _dv_objective(
            ad.take_rows(t_joint, np.arange(b)),
            ad.take_rows(t_joint, np.arange(b, 2 * b)),
        )
        cx_fwd, cx_rev = self._chi2_both_directions(crit_x, x, x_ref, tape_stats([x]))
        cy_fwd, cy_rev = self._chi2_both_directions(crit_y, y, y_ref, tape_stats([y]))
        return j_term, cx_fwd, cx_rev, cy_fwd, cy_rev

    def _tracked_value(self, pieces) -> float:
        j_term, cx_fwd, cx_rev, cy_fwd, cy_rev = pieces
        pen_x = self._penalty_tape(cx_fwd, cx_rev)
        pen_y = self._penalty_tape(cy_fwd, cy_rev)
        return float(j_term.data - pen_x.data - pen_y.data)

    def loss(self, x, y, critics, rng, update_state=True):
        pieces = self._tape_pieces(x, y, critics, rng)
        self.last_batch_value = self._tracked_value(pieces)
        j_term, cx_fwd, cx_rev, cy_fwd, cy_rev = pieces
        total = ad.add(j_term, ad.add(ad.add(cx_fwd, cx_rev), ad.add(cy_fwd, cy_rev)))
        return ad.neg(total)

    def input_loss(self, x, y, critics, rng):
        pieces = self._tape_pieces(x, y, critics, rng)
        j_term, cx_fwd, cx_rev, cy_fwd, cy_rev = pieces
        value = ad.sub(
            ad.sub(j_term, self._penalty_tape(cx_fwd, cx_rev)),
            self._penalty_tape(cy_fwd, cy_rev),
        )
        self.last_batch_value = float(value.data)
        return ad.neg(value)

    def _chi2_pair_eval(self, critic, p, q, stats) -> float:
        t_p = critic.eval_batch([p], stats)
        t_q = critic.eval_batch([q], stats)
        return chi2_variational_value(t_p, t_q, self.cfg.chi2_form)

    def estimate(self, x, y, critics, rng):
        joint, crit_x, crit_y = critics
        x = np.atleast_2d(np.asarray(x, np.float64))
        y = np.atleast_2d(np.asarray(y, np.float64))
        x_ref = _matched_reference(x, rng, self.diagnostics)
        y_ref = _matched_reference(y, rng, self.diagnostics)
        stats_joint = batch_stats([x, y])
        stats_x = batch_stats([x])
        stats_y = batch_stats([y])
        j_term = dv_value(
            joint.eval_batch([x, y], stats_joint),
            joint.eval_batch([x_ref, y_ref], stats_joint),
        )
        penalties = 0.0
        for critic, p, q, stats in (
            (crit_x, x, x_ref, stats_x),
            (crit_y, y, y_ref, stats_y),
        ):
            c_fwd = self._chi2_pair_eval(critic, p, q, stats)
            c_rev = self._chi2_pair_eval(critic, q, p, stats)
            if c_fwd < 0 or c_rev < 0:
                self.diagnostics.chi2_clamps += 1
            penalties += chi2_upper_kl(max(c_fwd, 0.0), max(c_rev, 0.0))
        return self._make_estimate(j_term - penalties, x.shape[0])


_ESTIMATOR_CLASSES = {
    "mine": MineEstimator,
    "smile": SmileEstimator,
    "nwj": NwjEstimator,
    "tuba": TubaEstimator,
    "infonce": InfonceEstimator,
    "dine": DineEstimator,
    "chi2": Chi2BoundEstimator,
}


def build_estimator(cfg: EstimatorConfig) -> MIEstimatorBase:
    return _ESTIMATOR_CLASSES[cfg.kind](cfg)
