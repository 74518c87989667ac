"""Batch experiment harness.

Subcommands: ``run`` (capacity estimation), ``bounds`` (analytic and
tabulated reference values), ``mac`` (two-user region estimation).
Configuration comes from an INI-style file of [section] key=value lines,
from command-line flags, or both; flags override file values.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .channels import ChannelSpec, ConstraintSpec, db_to_linear, linear_to_db
from .estimators import EstimatorConfig, ESTIMATOR_KINDS
from .mac import run_mac_nce
from .trainer import (
    CapacityRunResult,
    RunFailedError,
    TrainConfig,
    run_discrete_search,
    run_nce,
)
from . import report


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, serializable to key=value lines."""

    channel: str = "awgn"
    snr_db: list[float] = field(default_factory=list)
    peak: list[float] = field(default_factory=list)
    avg: list[float] = field(default_factory=list)
    dark_current: float = 0.0
    sigma: float = 1.0
    estimator: str = "mine"
    tau: float = 0.2
    alpha: float = 1.0
    ema_rate: float = 0.99
    chi2_form: str = "paper"
    batch: int = 256
    max_iter: int = 20000
    trials: int = 10
    eval_size: int = 512000
    seed: int = 0
    discrete_search: bool = False
    out_dir: str = "."

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["channel"] = {
            "kind": self.channel,
            "snr_db": ",".join(repr(v) for v in self.snr_db),
            "peak": ",".join(repr(v) for v in self.peak),
            "avg": ",".join(repr(v) for v in self.avg),
            "dark_current": repr(self.dark_current),
            "sigma": repr(self.sigma),
        }
        cp["estimator"] = {
            "kind": self.estimator,
            "tau": repr(self.tau),
            "alpha": repr(self.alpha),
            "ema_rate": repr(self.ema_rate),
            "chi2_form": self.chi2_form,
        }
        cp["train"] = {
            "batch": str(self.batch),
            "max_iter": str(self.max_iter),
            "trials": str(self.trials),
            "eval_size": str(self.eval_size),
            "seed": str(self.seed),
            "discrete_search": str(self.discrete_search).lower(),
        }
        cp["output"] = {"out_dir": self.out_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not cp.sections():
            raise ConfigError("config file has no sections")
        cfg = cls()

        def floats(section, key, current):
            raw = cp.get(section, key, fallback=None)
            if raw is None:
                return current
            raw = raw.strip()
            return [float(v) for v in raw.split(",") if v.strip()] if raw else []

        if cp.has_section("channel"):
            cfg.channel = cp.get("channel", "kind", fallback=cfg.channel)
            cfg.snr_db = floats("channel", "snr_db", cfg.snr_db)
            cfg.peak = floats("channel", "peak", cfg.peak)
            cfg.avg = floats("channel", "avg", cfg.avg)
            cfg.dark_current = cp.getfloat("channel", "dark_current",
                                           fallback=cfg.dark_current)
            cfg.sigma = cp.getfloat("channel", "sigma", fallback=cfg.sigma)
        if cp.has_section("estimator"):
            cfg.estimator = cp.get("estimator", "kind", fallback=cfg.estimator)
            cfg.tau = cp.getfloat("estimator", "tau", fallback=cfg.tau)
            cfg.alpha = cp.getfloat("estimator", "alpha", fallback=cfg.alpha)
            cfg.ema_rate = cp.getfloat("estimator", "ema_rate", fallback=cfg.ema_rate)
            cfg.chi2_form = cp.get("estimator", "chi2_form", fallback=cfg.chi2_form)
        if cp.has_section("train"):
            cfg.batch = cp.getint("train", "batch", fallback=cfg.batch)
            cfg.max_iter = cp.getint("train", "max_iter", fallback=cfg.max_iter)
            cfg.trials = cp.getint("train", "trials", fallback=cfg.trials)
            cfg.eval_size = cp.getint("train", "eval_size", fallback=cfg.eval_size)
            cfg.seed = cp.getint("train", "seed", fallback=cfg.seed)
            cfg.discrete_search = cp.getboolean("train", "discrete_search",
                                                fallback=cfg.discrete_search)
        if cp.has_section("output"):
            cfg.out_dir = cp.get("output", "out_dir", fallback=cfg.out_dir)
        return cfg


def _estimator_config(cfg: ExperimentConfig) -> EstimatorConfig:
    return EstimatorConfig(kind=cfg.estimator, tau=cfg.tau, alpha=cfg.alpha,
                           ema_rate=cfg.ema_rate, chi2_form=cfg.chi2_form)


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(batch=cfg.batch, max_iter=cfg.max_iter, trials=cfg.trials,
                       eval_size=cfg.eval_size, seed=cfg.seed)


def _single_user_channel(cfg: ExperimentConfig, snr_db: float | None) -> tuple[ChannelSpec, float]:
    """Build the ChannelSpec for one configuration point.

    dB values map to linear budgets as 10^(dB/10) for power-like
    quantities (P, Ecal); for the peak-power channel the amplitude is
    A = sqrt(P).  Returns the spec and the dB label used in reports.
    """
    kind = cfg.channel
    peak = cfg.peak[0] if cfg.peak else None
    avg = cfg.avg[0] if cfg.avg else None
    if kind == "awgn":
        p = avg if avg is not None else db_to_linear(_need(snr_db, "awgn needs --snr-db or --avg"))
        spec = ChannelSpec("awgn", (ConstraintSpec(avg_power=p),), noise_sigma=cfg.sigma)
        return spec, snr_db if snr_db is not None else linear_to_db(p)
    if kind == "oi":
        ecal = avg if avg is not None else db_to_linear(_need(snr_db, "oi needs --snr-db or --avg"))
        spec = ChannelSpec(
            "oi",
            (ConstraintSpec(nonneg=True, mean_budget=ecal, peak=peak),),
            noise_sigma=cfg.sigma,
        )
        return spec, snr_db if snr_db is not None else linear_to_db(ecal)
    if kind == "ppc_awgn":
        p = avg if avg is not None else db_to_linear(_need(snr_db, "ppc_awgn needs --snr-db or --avg"))
        a = peak if peak is not None else float(np.sqrt(p))
        spec = ChannelSpec("ppc_awgn", (ConstraintSpec(avg_power=p, peak=a),),
                           noise_sigma=cfg.sigma)
        return spec, snr_db if snr_db is not None else linear_to_db(p)
    if kind == "poisson":
        ecal = avg if avg is not None else (
            db_to_linear(snr_db) if snr_db is not None else None
        )
        if peak is None and ecal is None:
            raise ConfigError("poisson needs --peak and/or --avg (or --snr-db)")
        spec = ChannelSpec(
            "poisson",
            (ConstraintSpec(nonneg=True, peak=peak, mean_budget=ecal),),
            dark_current=cfg.dark_current,
        )
        label = snr_db if snr_db is not None else linear_to_db(ecal if ecal is not None else peak)
        return spec, label
    raise ConfigError(f"unsupported channel for run: {kind!r}")


def _need(value, message):
    if value is None:
        raise ConfigError(message)
    return value


def _mac_channel(cfg: ExperimentConfig) -> tuple[ChannelSpec, tuple[float, float]]:
    kind = cfg.channel
    if kind == "awgn_mac":
        if len(cfg.avg) == 2:
            p1, p2 = cfg.avg
        elif len(cfg.snr_db) == 2:
            p1, p2 = (db_to_linear(v) for v in cfg.snr_db)
        else:
            raise ConfigError("awgn_mac needs two --snr-db or two --avg values")
        spec = ChannelSpec(
            "awgn_mac",
            (ConstraintSpec(avg_power=p1), ConstraintSpec(avg_power=p2)),
            noise_sigma=cfg.sigma,
        )
        return spec, (p1, p2)
    if kind == "oi_mac":
        if len(cfg.peak) != 2:
            raise ConfigError("oi_mac needs two --peak values")
        if len(cfg.avg) == 2:
            e1, e2 = cfg.avg
        elif len(cfg.snr_db) == 2:
            e1, e2 = (db_to_linear(v) for v in cfg.snr_db)
        else:
            raise ConfigError("oi_mac needs two --avg or two --snr-db values")
        spec = ChannelSpec(
            "oi_mac",
            (
                ConstraintSpec(nonneg=True, peak=cfg.peak[0], mean_budget=e1),
                ConstraintSpec(nonneg=True, peak=cfg.peak[1], mean_budget=e2),
            ),
            noise_sigma=cfg.sigma,
        )
        return spec, (e1, e2)
    raise ConfigError(f"unsupported channel for mac: {kind!r}")


def _bound_comparisons(cfg: ExperimentConfig, spec: ChannelSpec,
                       snr_db: float) -> dict:
    out: dict = {}
    c = spec.constraints[0]
    if spec.kind == "awgn":
        out["true_capacity"] = bnd.awgn_capacity(c.avg_power).value
    elif spec.kind == "ppc_awgn":
        out["upper"] = bnd.ppc_upper(c.avg_power).value
        out["lower"] = bnd.ppc_lower(c.avg_power).value
    elif spec.kind == "oi":
        out["db_convention"] = "power-like: linear = 10^(dB/10)"
        try:
            lo, hi = bnd.oi_reference_bounds(snr_db)
            out["lower"] = lo.value
            out["upper"] = hi.value
        except bnd.BoundsError:
            pass
        if c.peak is not None:
            out["entropy_lower_formula"] = bnd.oi_lower(c.peak, spec.noise_sigma).value
    elif spec.kind == "poisson":
        try:
            ref = bnd.poisson_reference_bounds(
                linear_to_db(c.mean_budget), c.peak, spec.dark_current
            )
            out["lower"] = ref.value
        except (bnd.BoundsError, TypeError):
            pass
    return out


def cmd_run(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg.out_dir)
    est_cfg = _estimator_config(cfg)
    train = _train_config(cfg)
    snrs: list[float | None] = list(cfg.snr_db) if cfg.snr_db else [None]
    runs: list[tuple[float, CapacityRunResult, dict]] = []
    for snr in snrs:
        spec, label = _single_user_channel(cfg, snr)
        if cfg.discrete_search:
            result = run_discrete_search(spec, est_cfg, train)
        else:
            result = run_nce(spec, est_cfg, train)
        runs.append((label, result, _bound_comparisons(cfg, spec, label)))

    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_results_csv(
        out_dir / "results.csv", cfg.channel, 0.0,
        [(label, result) for label, result, _ in runs],
    )
    summary = {
        "channel": cfg.channel,
        "estimator": cfg.estimator,
        "seed": cfg.seed,
        "runs": [],
    }
    for i, (label, result, comparisons) in enumerate(runs):
        name = "hist.csv" if len(runs) == 1 else f"hist_{label:g}db.csv"
        report.write_hist_csv(out_dir / name, result.histogram)
        report.save_histogram_figure(
            out_dir / name.replace(".csv", ".png"), result.histogram,
            f"{cfg.channel} {label:g} dB, {cfg.estimator} learned input",
        )
        entry = {
            "snr_db": label,
            "mean": result.mean,
            "std": result.std,
            "trials_ok": len(result.estimates),
            "trials_failed": result.failed_trials,
            "converged_iters": [t.converged_iter for t in result.trials if not t.failed],
            "bounds": comparisons,
            "diagnostics": result.diagnostics,
            "selection": result.selection,
            "histogram_file": name,
        }
        if result.chosen_m is not None:
            entry["chosen_m"] = result.chosen_m
            entry["search_trace"] = result.search_trace
        summary["runs"].append(entry)
    report.write_summary_json(out_dir / "summary.json", summary)
    return 0


def cmd_bounds(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg.out_dir)
    rows: list[list] = []
    snrs = cfg.snr_db if cfg.snr_db else []
    kind = cfg.channel
    if not snrs:
        raise ConfigError("bounds needs at least one --snr-db value")
    for snr in snrs:
        if kind == "awgn":
            b = bnd.awgn_capacity(db_to_linear(snr))
            rows.append(["awgn", snr, b.kind, b.value, b.source])
        elif kind == "ppc_awgn":
            up = bnd.ppc_upper(db_to_linear(snr))
            rows.append(["ppc_awgn", snr, up.kind, up.value, up.source])
            lo = bnd.ppc_lower(db_to_linear(snr))
            rows.append(["ppc_awgn", snr, lo.kind, lo.value, lo.source])
            if 2.0 <= snr <= 6.0:
                kr = bnd.kramer_upper(db_to_linear(snr))
                rows.append(["ppc_awgn", snr, kr.kind, kr.value, kr.source])
        elif kind == "oi":
            try:
                lo, hi = bnd.oi_reference_bounds(snr)
                rows.append(["oi", snr, lo.kind, lo.value, lo.source])
                rows.append(["oi", snr, hi.kind, hi.value, hi.source])
            except bnd.BoundsError as exc:
                rows.append(["oi", snr, "error", "", str(exc)])
            if cfg.peak:
                fo = bnd.oi_lower(cfg.peak[0], cfg.sigma)
                rows.append(["oi", snr, fo.kind, fo.value, fo.source])
        elif kind == "poisson":
            peak = cfg.peak[0] if cfg.peak else 100.0
            try:
                ref = bnd.poisson_reference_bounds(snr, peak, cfg.dark_current)
                rows.append(["poisson", snr, ref.kind, ref.value, ref.source])
            except bnd.BoundsError as exc:
                rows.append(["poisson", snr, "error", "", str(exc)])
        else:
            raise ConfigError(f"unsupported channel for bounds: {kind!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_bounds_csv(out_dir / "bounds.csv", rows)
    report.save_bounds_figure(out_dir / "bounds.png", rows, f"{kind} capacity bounds")
    return 0


def cmd_mac(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg.out_dir)
    spec, (b1, b2) = _mac_channel(cfg)
    if spec.kind == "awgn_mac":
        analytic = bnd.awgn_mac_region(b1, b2)
    else:
        analytic = bnd.oi_mac_region(b1, b2)
    est_cfg = _estimator_config(cfg)
    train = _train_config(cfg)
    result = run_mac_nce(spec, est_cfg, train)
    estimated = result.mean.pentagon()
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_region_csv(out_dir / "region.csv", estimated, analytic)
    report.save_region_figure(out_dir / "region.png", estimated, analytic,
                              f"{cfg.channel} rate region")
    summary = {
        "channel": cfg.channel,
        "estimator": cfg.estimator,
        "i_sum": result.mean.i_sum,
        "i1": result.mean.i1,
        "i2": result.mean.i2,
        "i_y1": result.mean.i_y1,
        "i_y2": result.mean.i_y2,
        "trials_failed": result.failed_trials,
        "diagnostics": result.diagnostics,
    }
    report.write_summary_json(out_dir / "summary.json", summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capbench",
        description="Neural channel-capacity estimation benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "bounds", "mac"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="INI config file; flags override its values")
        p.add_argument("--channel", type=str, default=None)
        p.add_argument("--snr-db", type=float, action="append", default=None)
        p.add_argument("--peak", type=float, action="append", default=None)
        p.add_argument("--avg", type=float, action="append", default=None)
        p.add_argument("--dark-current", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--estimator", type=str, default=None,
                       choices=list(ESTIMATOR_KINDS))
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--chi2-form", type=str, default=None,
                       choices=["paper", "standard"])
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--eval-size", type=int, default=None)
        p.add_argument("--discrete-search", action="store_true", default=None)
        p.add_argument("--out-dir", type=str, default=None)
    return parser


_FLAG_FIELDS = {
    "channel": "channel",
    "snr_db": "snr_db",
    "peak": "peak",
    "avg": "avg",
    "dark_current": "dark_current",
    "sigma": "sigma",
    "estimator": "estimator",
    "tau": "tau",
    "alpha": "alpha",
    "chi2_form": "chi2_form",
    "batch": "batch",
    "max_iter": "max_iter",
    "trials": "trials",
    "seed": "seed",
    "eval_size": "eval_size",
    "discrete_search": "discrete_search",
    "out_dir": "out_dir",
}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        if not text.strip():
            raise ConfigError(f"config file is empty: {path}")
        cfg = ExperimentConfig.from_ini(text)
    else:
        cfg = ExperimentConfig()
    for flag, field_name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, field_name, value)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "bounds":
            return cmd_bounds(cfg)
        return cmd_mac(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RunFailedError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
