"""Two-user MAC rate-region estimation.

Two physically separate generators guarantee the product-form input
P_X1 P_X2; one joint critic estimates the sum rate I(X1,X2;Y) while two
marginal critics estimate I(X1;Y) and I(X2;Y).  Corner rates come from
the chain-rule decomposition I(X1;Y|X2) = I(X1,X2;Y) - I(X2;Y), so the
identity I1 + I(X2;Y) == Isum holds exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .bounds import RateRegion, pentagon_region
from .channels import ChannelSpec, mac_forward
from .estimators import (
    Diagnostics,
    EstimatorConfig,
    MIEstimatorBase,
    batch_stats,
    build_estimator,
    dv_value,
    CriticNet,
)
from .ndt import NdtNet, SourceSpec, ndt_sample, ndt_sample_array
from .nn import Adam, GradientError
from .rng import RngStream
from .trainer import TrainConfig, RunFailedError, TrialDiverged, _PlateauDetector


@dataclass
class MacEstimate:
    """Sum rate, single-user rates, and the derived corner rates (nats)."""

    i_sum: float
    i_y1: float
    i_y2: float
    n_samples: int
    estimator_kind: str

    @property
    def i1(self) -> float:
        """I(X1;Y|X2) via the difference decomposition; exact by construction."""
        return self.i_sum - self.i_y2

    @property
    def i2(self) -> float:
        return self.i_sum - self.i_y1

    def pentagon(self) -> RateRegion:
        return pentagon_region(max(self.i1, 0.0), max(self.i2, 0.0),
                               max(self.i_sum, 0.0))


@dataclass
class MacRunResult:
    per_trial: list[MacEstimate]
    mean: MacEstimate
    failed_trials: int
    diagnostics: dict
    hist_samples: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class FittedMacTrial:
    """Both trained generators plus the three estimators and their critics."""

    ndt1: NdtNet
    ndt2: NdtNet
    est_sum: MIEstimatorBase
    est_u1: MIEstimatorBase
    est_u2: MIEstimatorBase
    crit_sum: list
    crit_u1: list
    crit_u2: list
    rng: RngStream
    source: SourceSpec
    converged_iter: int


def fit_mac_trial(channel: ChannelSpec, est_cfg: EstimatorConfig,
                  train: TrainConfig, trial: int = 0) -> FittedMacTrial:
    rng = RngStream(train.seed + trial)
    source = SourceSpec(kind="gaussian_std", dim=1)
    est_sum = build_estimator(est_cfg)
    est_u1 = build_estimator(est_cfg)
    est_u2 = build_estimator(est_cfg)
    ndt1 = NdtNet(channel.constraints[0], rng, width=train.hidden_width,
                  depth=train.hidden_depth, name=f"ndt1_t{trial}")
    ndt2 = NdtNet(channel.constraints[1], rng, width=train.hidden_width,
                  depth=train.hidden_depth, name=f"ndt2_t{trial}")
    crit_sum = est_sum.make_critics(2, 1, rng, train.hidden_width, train.hidden_depth)
    crit_u1 = est_u1.make_critics(1, 1, rng, train.hidden_width, train.hidden_depth)
    crit_u2 = est_u2.make_critics(1, 1, rng, train.hidden_width, train.hidden_depth)
    opt_gen = Adam([*ndt1.params, *ndt2.params], lr=train.lr)
    opt_crit = Adam(
        [p for c in (*crit_sum, *crit_u1, *crit_u2) for p in c.params], lr=train.lr
    )
    detector = _PlateauDetector(train.plateau_window, train.plateau_rtol,
                                train.plateau_patience)

    def sample_pair(n: int, on_tape: bool):
        if on_tape:
            x1 = ndt_sample(ndt1, source, n, rng)
            x2 = ndt_sample(ndt2, source, n, rng)
        else:
            x1 = Tensor(ndt_sample_array(ndt1, source, n, rng))
            x2 = Tensor(ndt_sample_array(ndt2, source, n, rng))
        y = mac_forward(x1, x2, channel.noise_sigma, rng)
        return x1, x2, y

    try:
        for it in range(1, train.max_iter + 1):
            # Phase 1: all critics on their own losses.
            x1, x2, y = sample_pair(train.batch, on_tape=False)
            x12 = ad.concat([x1, x2], axis=1)
            loss = ad.add(
                est_sum.loss(x12, y, crit_sum, rng, update_state=True),
                ad.add(
                    est_u1.loss(x1, y, crit_u1, rng, update_state=True),
                    est_u2.loss(x2, y, crit_u2, rng, update_state=True),
                ),
            )
            if not np.isfinite(loss.data):
                raise FloatingPointError("non-finite critic loss")
            opt_crit.zero_grad()
            backward(loss)
            opt_crit.step()

            # Phase 2: both generators maximize the sum rate.
            x1, x2, y = sample_pair(train.batch, on_tape=True)
            x12 = ad.concat([x1, x2], axis=1)
            loss2 = est_sum.input_loss(x12, y, crit_sum, rng)
            if not np.isfinite(loss2.data):
                raise FloatingPointError("non-finite generator loss")
            opt_gen.zero_grad()
            backward(loss2)
            opt_gen.step()

            track = est_sum.last_batch_value
            if detector.update(track):
                break
    except (FloatingPointError, GradientError) as exc:
        raise TrialDiverged(str(exc)) from exc

    return FittedMacTrial(
        ndt1=ndt1, ndt2=ndt2, est_sum=est_sum, est_u1=est_u1, est_u2=est_u2,
        crit_sum=crit_sum, crit_u1=crit_u1, crit_u2=crit_u2, rng=rng,
        source=source, converged_iter=detector.plateau_at or train.max_iter,
    )


def sample_mac_inputs(fitted: FittedMacTrial, channel: ChannelSpec, n: int,
                      rng: RngStream):
    """Frozen-parameter draws of (x1, x2, y) from a fitted MAC trial."""
    x1 = ndt_sample_array(fitted.ndt1, fitted.source, n, rng)
    x2 = ndt_sample_array(fitted.ndt2, fitted.source, n, rng)
    y = mac_forward(Tensor(x1), Tensor(x2), channel.noise_sigma, rng).data
    return x1, x2, y


def evaluate_mac_trial(fitted: FittedMacTrial, channel: ChannelSpec,
                       n: int) -> MacEstimate:
    """Large-sample sum and single-user estimates with frozen parameters."""
    rng = fitted.rng
    x1v, x2v, yv = sample_mac_inputs(fitted, channel, n, rng)
    x12v = np.concatenate([x1v, x2v], axis=1)
    i_sum = fitted.est_sum.estimate(x12v, yv, fitted.crit_sum, rng).value
    i_y1 = fitted.est_u1.estimate(x1v, yv, fitted.crit_u1, rng).value
    i_y2 = fitted.est_u2.estimate(x2v, yv, fitted.crit_u2, rng).value
    return MacEstimate(i_sum=i_sum, i_y1=i_y1, i_y2=i_y2, n_samples=n,
                       estimator_kind=fitted.est_sum.kind)


def _mac_trial(channel: ChannelSpec, est_cfg: EstimatorConfig,
               train: TrainConfig, trial: int):
    try:
        fitted = fit_mac_trial(channel, est_cfg, train, trial)
    except TrialDiverged:
        return None
    est = evaluate_mac_trial(fitted, channel, train.eval_size)
    for other in (fitted.est_u1, fitted.est_u2):
        fitted.est_sum.diagnostics.merge(other.diagnostics)
    hist_x1, hist_x2, _ = sample_mac_inputs(fitted, channel, 64000, fitted.rng)
    return est, fitted.est_sum.diagnostics, (hist_x1[:, 0], hist_x2[:, 0])


def run_mac_nce(channel: ChannelSpec, est_cfg: EstimatorConfig,
                train: TrainConfig) -> MacRunResult:
    """Estimate the two-user rate pentagon over independent trials."""
    if not channel.is_mac:
        raise ValueError("run_mac_nce needs a MAC channel spec")
    results: list[MacEstimate] = []
    failed = 0
    diag = Diagnostics()
    hist = None
    for trial in range(train.trials):
        outcome = _mac_trial(channel, est_cfg, train, trial)
        if outcome is None:
            failed += 1
            continue
        est, trial_diag, trial_hist = outcome
        results.append(est)
        diag.merge(trial_diag)
        hist = trial_hist
    if failed > train.trials // 2 or not results:
        raise RunFailedError(f"{failed} of {train.trials} MAC trials diverged")
    mean = MacEstimate(
        i_sum=float(np.mean([r.i_sum for r in results])),
        i_y1=float(np.mean([r.i_y1 for r in results])),
        i_y2=float(np.mean([r.i_y2 for r in results])),
        n_samples=results[0].n_samples,
        estimator_kind=est_cfg.kind,
    )
    return MacRunResult(per_trial=results, mean=mean, failed_trials=failed,
                        diagnostics=diag.as_dict(), hist_samples=hist)


def cmi_entropy_based(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    batch_z: np.ndarray,
    critics: list[CriticNet],
    rng: RngStream,
    references: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> float:
    """I(X;Z|Y) from four divergence terms against independent references.

    I(X;Z|Y) = D(P_XYZ||Q) + D(P_Y||Q_Y') - D(P_XY||Q_X'Y') - D(P_YZ||Q_Y'Z')
    with mutually independent references X', Y', Z'; every term uses the
    DV bound.  ``critics`` supplies the four test functions in the order
    (xyz, y, xy, yz).
    """
    x = np.atleast_2d(np.asarray(batch_x, np.float64))
    y = np.atleast_2d(np.asarray(batch_y, np.float64))
    z = np.atleast_2d(np.asarray(batch_z, np.float64))
    if references is None:
        refs = []
        for col in (x, y, z):
            mu, sd = col.mean(axis=0), np.maximum(col.std(axis=0), 1e-9)
            refs.append(mu + sd * rng.normal(col.shape))
        x_ref, y_ref, z_ref = refs
    else:
        x_ref, y_ref, z_ref = [np.atleast_2d(np.asarray(r, np.float64))
                               for r in references]
    c_xyz, c_y, c_xy, c_yz = critics

    def term(critic, p_cols, q_cols):
        stats = batch_stats(p_cols)
        return dv_value(critic.eval_batch(p_cols, stats),
                        critic.eval_batch(q_cols, stats))

    d_xyz = term(c_xyz, [x, y, z], [x_ref, y_ref, z_ref])
    d_y = term(c_y, [y], [y_ref])
    d_xy = term(c_xy, [x, y], [x_ref, y_ref])
    d_yz = term(c_yz, [y, z], [y_ref, z_ref])
    return d_xyz + d_y - d_xy - d_yz


def train_cmi_critics(
    batches: tuple[np.ndarray, np.ndarray, np.ndarray],
    rng: RngStream,
    width: int = 64,
    depth: int = 2,
    iters: int = 2000,
    batch_size: int = 256,
    lr: float = 1e-4,
) -> list[CriticNet]:
    """Fit the four divergence critics on frozen (x, y, z) samples."""
    x, y, z = [np.atleast_2d(np.asarray(b, np.float64)) for b in batches]
    diag = Diagnostics()
    dims = [x.shape[1] + y.shape[1] + z.shape[1], y.shape[1],
            x.shape[1] + y.shape[1], y.shape[1] + z.shape[1]]
    critics = [CriticNet(d, rng, width, depth, name=f"cmi_critic{i}",
                         diagnostics=diag) for i, d in enumerate(dims)]
    groups = [
        (critics[0], lambda b: [x[b], y[b], z[b]]),
        (critics[1], lambda b: [y[b]]),
        (critics[2], lambda b: [x[b], y[b]]),
        (critics[3], lambda b: [y[b], z[b]]),
    ]
    opt = Adam([p for c in critics for p in c.params], lr=lr)
    n = x.shape[0]
    for _ in range(iters):
        idx = rng.integers(0, n, (batch_size,))
        total = None
        for critic, cols_of in groups:
            cols = cols_of(idx)
            stats = batch_stats(cols)
            refs = []
            for col in cols:
                mu, sd = col.mean(axis=0), np.maximum(col.std(axis=0), 1e-9)
                refs.append(Tensor(mu + sd * rng.normal(col.shape)))
            t_p = critic.forward([Tensor(c) for c in cols], stats)
            t_q = critic.forward(refs, stats)
            obj = ad.sub(ad.tmean(t_p), ad.log(ad.tmean(ad.exp(t_q))))
            total = obj if total is None else ad.add(total, obj)
        loss = ad.neg(total)
        opt.zero_grad()
        backward(loss)
        opt.step()
    return critics
