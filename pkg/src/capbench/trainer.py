"""Alternating two-phase capacity training and the multi-trial protocol.

Each iteration trains the estimator critics on a fresh batch (phase 1)
and then the input generator on another fresh batch (phase 2); only the
active network's parameters change in each phase.  A run repeats this
over independent trials seeded seed_base + trial, evaluates each trained
pair on a large fresh sample, and aggregates mean/std over trials.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .autodiff import backward
from .channels import ChannelSpec, channel_forward, check_feasible
from .estimators import (
    Diagnostics,
    EstimatorConfig,
    MIEstimate,
    MIEstimatorBase,
    build_estimator,
)
from .autodiff import Tensor
from .ndt import NdtNet, SourceSpec, ndt_sample, ndt_sample_array, histogram
from .nn import Adam, GradientError
from .rng import RngStream

HISTOGRAM_SAMPLES = 64000


class RunFailedError(RuntimeError):
    """More than half of the trials diverged."""


@dataclass
class TrainConfig:
    """Knobs of the alternating optimization and the trial protocol."""

    batch: int = 256
    max_iter: int = 20000
    plateau_window: int = 500
    plateau_rtol: float = 1e-3
    eval_size: int = 512000
    checkpoint_every: int = 100
    checkpoint_size: int = 4096
    checkpoint_window: int = 10
    plateau_patience: int = 3
    trials: int = 10
    seed: int = 0
    lr: float = 1e-4
    hidden_width: int = 128
    hidden_depth: int = 2
    histogram_bins: int = 100
    debug_checks: bool = False

    def __post_init__(self):
        if self.eval_size < self.batch:
            raise ValueError("eval_size must be at least the batch size")
        if self.batch < 2:
            raise ValueError("batch must be at least 2")
        if self.trials < 1:
            raise ValueError("need at least one trial")


@dataclass
class TrialResult:
    trial: int
    estimate: float | None
    converged_iter: int
    plateau_iter: int | None
    diagnostics: Diagnostics
    hist_samples: np.ndarray | None
    failed: bool = False


@dataclass
class CapacityRunResult:
    """Per-trial estimates plus aggregate statistics and provenance."""

    estimates: list[float]
    mean: float
    std: float | None
    trials: list[TrialResult]
    histogram: list[tuple[float, float, int]]
    diagnostics: dict
    estimator_kind: str
    seed_base: int
    selection: str = "max-trailing-checkpoint"
    chosen_m: int | None = None
    search_trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def failed_trials(self) -> int:
        return sum(1 for t in self.trials if t.failed)


def default_source(channel: ChannelSpec) -> SourceSpec:
    return SourceSpec(kind="gaussian_std", dim=1)


class _PlateauDetector:
    """Stops once the windowed average of the MI value stops improving.

    Averages are taken over non-overlapping windows; training halts after
    ``patience`` consecutive windows fail to beat the best average by the
    relative tolerance.  rtol <= 0 disables detection entirely.
    """

    def __init__(self, window: int, rtol: float, patience: int = 3):
        self.window = window
        self.rtol = rtol
        self.patience = patience
        self._buffer: list[float] = []
        self._best = -np.inf
        self._stalled = 0
        self.iteration = 0
        self.plateau_at: int | None = None

    def update(self, value: float) -> bool:
        self.iteration += 1
        if self.rtol <= 0:
            return False
        self._buffer.append(value)
        if len(self._buffer) < self.window:
            return False
        average = float(np.mean(self._buffer))
        self._buffer.clear()
        if not np.isfinite(self._best):
            self._best = average
            return False
        threshold = self.rtol * max(abs(self._best), 1e-2)
        if average > self._best + threshold:
            self._best = average
            self._stalled = 0
            return False
        self._stalled += 1
        if self._stalled >= self.patience:
            self.plateau_at = self.iteration
            return True
        return False


@dataclass
class FittedTrial:
    """A trained generator/critic pair with its training provenance."""

    ndt: NdtNet
    critics: list
    estimator: MIEstimatorBase
    rng: RngStream
    source: SourceSpec
    converged_iter: int
    plateau_iter: int | None
    trial: int


class TrialDiverged(RuntimeError):
    pass


def fit_trial(
    channel: ChannelSpec,
    est_cfg: EstimatorConfig,
    train: TrainConfig,
    source: SourceSpec | None = None,
    trial: int = 0,
) -> FittedTrial:
    """Run the alternating optimization once and return the trained nets.

    Raises TrialDiverged if a non-finite loss or gradient shows up.
    """
    source = source if source is not None else default_source(channel)
    rng = RngStream(train.seed + trial)
    estimator = build_estimator(est_cfg)
    skip_kwargs = {}
    if source.kind == "discrete_uniform":
        skip_kwargs = dict(skip_center=(source.m - 1) / 2.0,
                           skip_gain=12.0 / max(source.m - 1, 1))
    ndt = NdtNet(
        channel.constraints[0],
        rng,
        in_dim=source.dim,
        width=train.hidden_width,
        depth=train.hidden_depth,
        name=f"ndt_t{trial}",
        **skip_kwargs,
    )
    critics = estimator.make_critics(
        source.dim, 1, rng, width=train.hidden_width, depth=train.hidden_depth
    )
    opt_ndt = Adam(ndt.params, lr=train.lr)
    critic_params = [p for c in critics for p in c.params]
    opt_critic = Adam(critic_params, lr=train.lr)

    detector = _PlateauDetector(train.plateau_window, train.plateau_rtol,
                                train.plateau_patience)
    checkpoints: deque[tuple[float, list, list]] = deque(maxlen=train.checkpoint_window)
    converged_iter = train.max_iter

    try:
        for it in range(1, train.max_iter + 1):
            # Phase 1: critics only; the generator output enters as data.
            x = Tensor(ndt_sample_array(ndt, source, train.batch, rng))
            y = channel_forward(channel, x, rng)
            if train.debug_checks:
                check_feasible(x.data, channel.constraints[0])
            loss = estimator.loss(x, y, critics, rng, update_state=True)
            if not np.isfinite(loss.data):
                raise FloatingPointError("non-finite critic loss")
            opt_critic.zero_grad()
            backward(loss)
            opt_critic.step()

            # Phase 2: generator only, fresh batch, critics frozen.
            x2 = ndt_sample(ndt, source, train.batch, rng)
            y2 = channel_forward(channel, x2, rng)
            loss2 = estimator.input_loss(x2, y2, critics, rng)
            if not np.isfinite(loss2.data):
                raise FloatingPointError("non-finite generator loss")
            opt_ndt.zero_grad()
            backward(loss2)
            opt_ndt.step()

            track = estimator.last_batch_value
            if it % train.checkpoint_every == 0:
                xs = ndt_sample_array(ndt, source, train.checkpoint_size, rng)
                ys = channel_forward(channel, Tensor(xs), rng)
                val = estimator.estimate(xs, ys.data, critics, rng).value
                checkpoints.append(
                    (val, ndt.snapshot(), [c.snapshot() for c in critics])
                )
            if detector.update(track):
                converged_iter = it
                break
        else:
            converged_iter = train.max_iter
    except (FloatingPointError, GradientError) as exc:
        raise TrialDiverged(str(exc)) from exc

    if checkpoints:
        best = max(range(len(checkpoints)), key=lambda i: checkpoints[i][0])
        _, ndt_snap, critic_snaps = checkpoints[best]
        ndt.restore(ndt_snap)
        for critic, snap in zip(critics, critic_snaps):
            critic.restore(snap)

    return FittedTrial(
        ndt=ndt,
        critics=critics,
        estimator=estimator,
        rng=rng,
        source=source,
        converged_iter=converged_iter,
        plateau_iter=detector.plateau_at,
        trial=trial,
    )


def _train_trial(
    channel: ChannelSpec,
    est_cfg: EstimatorConfig,
    train: TrainConfig,
    source: SourceSpec,
    trial: int,
) -> TrialResult:
    try:
        fitted = fit_trial(channel, est_cfg, train, source, trial)
    except TrialDiverged:
        return TrialResult(
            trial=trial,
            estimate=None,
            converged_iter=0,
            plateau_iter=None,
            diagnostics=Diagnostics(),
            hist_samples=None,
            failed=True,
        )
    rng = fitted.rng
    final = eval_final(fitted.ndt, fitted.critics, fitted.estimator, channel,
                       train.eval_size, rng, source=source)
    hist_x = ndt_sample_array(fitted.ndt, source, HISTOGRAM_SAMPLES, rng)
    return TrialResult(
        trial=trial,
        estimate=final.value,
        converged_iter=fitted.converged_iter,
        plateau_iter=fitted.plateau_iter,
        diagnostics=fitted.estimator.diagnostics,
        hist_samples=hist_x[:, 0],
    )


def eval_final(
    ndt: NdtNet,
    critics,
    estimator: MIEstimatorBase,
    channel: ChannelSpec,
    n: int,
    rng: RngStream,
    source: SourceSpec | None = None,
) -> MIEstimate:
    """Single large-sample estimate with frozen parameters."""
    source = source if source is not None else SourceSpec(dim=1)
    x = ndt_sample_array(ndt, source, n, rng)
    y = channel_forward(channel, Tensor(x), rng)
    return estimator.estimate(x, y.data, critics, rng)


def _worker_count(trials: int) -> int:
    cap = os.environ.get("CAPBENCH_THREADS")
    cpu = os.cpu_count() or 1
    limit = int(cap) if cap else cpu
    return max(1, min(trials, cpu, limit))


def run_nce(
    channel: ChannelSpec,
    est_cfg: EstimatorConfig,
    train: TrainConfig,
    source: SourceSpec | None = None,
) -> CapacityRunResult:
    """Full multi-trial capacity estimation for one channel configuration.

    Trials are independent (seed_base + trial) and may run in parallel;
    results are merged by trial index so the report never depends on
    scheduling.  A trial that produces a non-finite loss is recorded as
    failed; the run errors out if more than half fail.
    """
    if channel.is_mac:
        raise ValueError("MAC channels are handled by mac.run_mac_nce")
    source = source if source is not None else default_source(channel)
    workers = _worker_count(train.trials)
    args = [(channel, est_cfg, train, source, t) for t in range(train.trials)]
    if workers == 1:
        trials = [_train_trial(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(lambda a: _train_trial(*a), args))
    trials.sort(key=lambda t: t.trial)

    ok = [t for t in trials if not t.failed]
    if len(ok) < (train.trials + 1) // 2 or not ok:
        raise RunFailedError(
            f"{train.trials - len(ok)} of {train.trials} trials diverged"
        )
    estimates = [t.estimate for t in ok]
    mean = float(np.mean(estimates))
    std = float(np.std(estimates, ddof=1)) if len(estimates) >= 2 else None
    best = max(ok, key=lambda t: t.estimate)
    hist = histogram(best.hist_samples, bins=train.histogram_bins)
    diag = Diagnostics()
    for t in trials:
        diag.merge(t.diagnostics)
    return CapacityRunResult(
        estimates=estimates,
        mean=mean,
        std=std,
        trials=trials,
        histogram=hist,
        diagnostics=diag.as_dict(),
        estimator_kind=est_cfg.kind,
        seed_base=train.seed,
    )


def run_discrete_search(
    channel: ChannelSpec,
    est_cfg: EstimatorConfig,
    train: TrainConfig,
    max_mass_points: int = 12,
) -> CapacityRunResult:
    """Grow the discrete source support until the estimate stops improving.

    Starts from two uniform atoms, re-runs the full estimation per atom
    count, and returns the last configuration before the estimate dropped,
    together with its input distribution.
    """
    trace: list[tuple[int, float]] = []
    best_result: CapacityRunResult | None = None
    best_value = -np.inf
    m = 2
    while m <= max_mass_points:
        source = SourceSpec(kind="discrete_uniform", m=m, dim=1)
        result = run_nce(channel, est_cfg, train, source=source)
        trace.append((m, result.mean))
        if result.mean > best_value:
            best_value = result.mean
            best_result = result
            best_result.chosen_m = m
            m += 1
        else:
            break
    assert best_result is not None
    best_result.search_trace = trace
    return best_result
