"""Batch experiment runner: config -> controller driven over a stream -> artifacts."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import losses as L
from .controllers import Controller, LarcController, controller_from_snapshot, make_controller
from .invariants import MODES, InvariantMonitor
from .kernels import KernelSpec
from .metrics import RunRecord, WeightingFn, cumulative_risk, holdout_report, probe_grid
from .stream import (
    CALIBRATION,
    HOLDOUT,
    StreamData,
    StreamError,
    SyntheticSpec,
    adversarial_stream,
    csv_timeseries,
    read_events,
    synthetic_stream,
    write_events,
)
from .threshold_model import ConfigError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("arc", "mondrian", "larc")


@dataclass
class RunConfig:
    method: str
    stream: dict
    alpha: float = 0.1
    eta1: float = 1.0
    lam: float = 1e-4
    kernel: KernelSpec = field(default_factory=KernelSpec)
    loss: str = "miscoverage"
    max_coefficients: Optional[int] = None
    mondrian_cells: list = field(default_factory=list)
    seed: int = 0
    output_dir: Optional[str] = None
    invariant_mode: str = "enforce"
    domain_radius: Optional[float] = None
    weightings: list = field(default_factory=list)
    n_probes: int = 25
    label: Optional[str] = None
    base_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.invariant_mode not in MODES:
            raise ConfigError(f"invariant_mode must be one of {MODES}, got {self.invariant_mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.eta1 > 0:
            raise ConfigError("eta1 must be positive")
        if self.method == "larc" and not self.eta1 * self.lam < 1.0:
            raise ConfigError(f"eta1 * lambda = {self.eta1 * self.lam} must be < 1")
        L.LossSpec(self.loss)
        if "kind" not in self.stream:
            raise ConfigError("stream config needs a 'kind'")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Optional[str] = None) -> "RunConfig":
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"config 'schema' must be {SCHEMA_VERSION}, got {d.get('schema')!r}")
        known = {"schema", "method", "stream", "alpha", "eta1", "lambda", "kernel", "loss",
                 "max_coefficients", "mondrian_cells", "seed", "output_dir", "invariant_mode",
                 "domain_radius", "weightings", "n_probes", "label"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            m = d.get("max_coefficients")
            r = d.get("domain_radius")
            return cls(
                method=d["method"],
                stream=dict(d["stream"]),
                alpha=float(d.get("alpha", 0.1)),
                eta1=float(d.get("eta1", 1.0)),
                lam=float(d.get("lambda", 1e-4)),
                kernel=KernelSpec.from_config(d.get("kernel", {})),
                loss=d.get("loss", "miscoverage"),
                max_coefficients=None if m is None else int(m),
                mondrian_cells=list(d.get("mondrian_cells", [])),
                seed=int(d.get("seed", 0)),
                output_dir=d.get("output_dir"),
                invariant_mode=d.get("invariant_mode", "enforce"),
                domain_radius=None if r is None else float(r),
                weightings=list(d.get("weightings", [])),
                n_probes=int(d.get("n_probes", 25)),
                label=d.get("label"),
                base_dir=base_dir,
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, base_dir=str(path.parent))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "method": self.method,
            "stream": self.stream,
            "alpha": self.alpha,
            "eta1": self.eta1,
            "lambda": self.lam,
            "kernel": self.kernel.to_config(),
            "loss": self.loss,
            "max_coefficients": self.max_coefficients,
            "mondrian_cells": self.mondrian_cells,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "invariant_mode": self.invariant_mode,
            "domain_radius": self.domain_radius,
            "weightings": self.weightings,
            "n_probes": self.n_probes,
            "label": self.label,
        }

    @property
    def display_label(self) -> str:
        if self.label:
            return self.label
        if self.method == "larc":
            k = self.kernel
            tag = f"larc[{k.family},k={k.amplitude:g},l={k.length_scale:g},lam={self.lam:g}"
            if self.max_coefficients:
                tag += f",M={self.max_coefficients}"
            return tag + "]"
        return self.method


def build_stream(cfg: Mapping[str, Any], base_dir: Optional[str] = None) -> StreamData:
    """Materialize the calibration and hold-out events described by a stream config."""
    kind = cfg.get("kind")
    if kind == "synthetic":
        spec = SyntheticSpec.from_config(cfg)
        cal = synthetic_stream(spec, CALIBRATION)
        n_hold = int(cfg.get("holdout", 0))
        hold = []
        if n_hold:
            hseed = int(cfg.get("holdout_seed", spec.seed + 1))
            if hseed == spec.seed:
                raise StreamError("holdout_seed must differ from the stream seed")
            hold = synthetic_stream(SyntheticSpec.from_config(cfg, horizon=n_hold, seed=hseed), HOLDOUT)
        return StreamData(cal, hold, spec.score_bound)
    if kind == "adversarial":
        variant = cfg.get("variant", "shifting_quantile")
        seed = int(cfg.get("seed", 0))
        dim = int(cfg.get("dim", 2))
        smax = float(cfg.get("score_bound", 1.0))
        cal = adversarial_stream(variant, int(cfg["horizon"]), seed, dim, smax, CALIBRATION)
        n_hold = int(cfg.get("holdout", 0))
        hold = adversarial_stream(variant, n_hold, int(cfg.get("holdout_seed", seed + 1)), dim, smax,
                                  HOLDOUT) if n_hold else []
        return StreamData(cal, hold, smax)
    if kind == "csv":
        path = Path(cfg["path"])
        if not path.is_absolute() and base_dir:
            path = Path(base_dir) / path
        events = csv_timeseries(path, int(cfg.get("window_short", 24)), int(cfg.get("window_long", 48)),
                                int(cfg.get("daily_feature_days", 7)), int(cfg.get("start_weekday", 0)))
        cal = [e for e in events if e.split == CALIBRATION]
        hold = [e for e in events if e.split == HOLDOUT]
        if cfg.get("max_calibration") is not None:
            cal = cal[: int(cfg["max_calibration"])]
        if cfg.get("max_holdout") is not None:
            hold = hold[: int(cfg["max_holdout"])]
        return StreamData(cal, hold, 1.0)
    if kind == "events":
        path = Path(cfg["path"])
        if not path.is_absolute() and base_dir:
            path = Path(base_dir) / path
        events = read_events(path)
        return StreamData([e for e in events if e.split == CALIBRATION],
                          [e for e in events if e.split == HOLDOUT], float(cfg.get("score_bound", 1.0)))
    raise StreamError(f"unknown stream kind {kind!r}")


@dataclass
class RunResult:
    config: RunConfig
    record: RunRecord
    controller: Controller
    monitor: InvariantMonitor
    stream: StreamData
    domain_radius: float
    cum_risk: np.ndarray
    bounds: np.ndarray
    holdout_thresholds: np.ndarray
    holdout_eval: dict
    summary: dict
    output_dir: Optional[Path] = None


def _weightings(config: RunConfig) -> list:
    return [WeightingFn.from_config(w, config.kernel) for w in config.weightings]


def trajectory_csv(result_record: RunRecord, cum: np.ndarray, bounds: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "eta", "threshold_at_x", "loss", "cum_risk", "t2_bound", "group"])
    rec = result_record
    for i in range(len(rec)):
        w.writerow([rec.t[i], repr(rec.eta[i]), repr(rec.threshold[i]), repr(rec.loss[i]),
                    repr(float(cum[i])), repr(float(bounds[i])), rec.group[i]])
    return buf.getvalue()


def run(config: RunConfig, stream: Optional[StreamData] = None, write: bool = True) -> RunResult:
    """Drive the configured controller over the calibration events and evaluate the hold-out."""
    stream = stream if stream is not None else build_stream(config.stream, config.base_dir)
    if not stream.calibration:
        raise StreamError("empty stream")
    loss_spec = L.LossSpec(config.loss, 1.0, stream.score_bound)
    D = config.domain_radius if config.domain_radius is not None else stream.domain_radius()
    ctrl = make_controller(
        config.method, alpha=config.alpha, eta1=config.eta1, lam=config.lam, kernel=config.kernel,
        score_bound=stream.score_bound, max_coefficients=config.max_coefficients,
        mondrian_cells=config.mondrian_cells, dim=stream.dim,
    )
    probes = probe_grid(stream.dim, D, config.n_probes, config.seed) if config.n_probes else None
    monitor = InvariantMonitor(ctrl, config.alpha, stream.score_bound, D, config.invariant_mode, probes)
    record = RunRecord(config=config.to_dict())

    for step, ev in enumerate(stream.calibration, start=1):
        x = np.asarray(ev.x, dtype=np.float64)
        thr = ctrl.threshold_at(x)
        out = L.evaluate(loss_spec, thr, ev.scores, ev.truth, ev.values)
        eta = ctrl.observe(x, out.loss)
        record.append(step, thr, out.loss, eta, ev.group, len(out.kept))
        monitor.check_step(step, thr, out.loss)

    cum = cumulative_risk(record)
    bounds = np.asarray(monitor.bound(np.arange(1, len(record) + 1)), dtype=np.float64)
    weightings = _weightings(config)
    if stream.holdout:
        hold_thr = ctrl.averaged_thresholds(np.array([e.x for e in stream.holdout]))
    else:
        hold_thr = np.empty(0)
    hold_eval = holdout_report(stream.holdout, hold_thr, loss_spec, weightings, config.alpha)
    summary = {
        "label": config.display_label,
        "method": config.method,
        "steps": len(record),
        "final_risk": float(cum[-1]),
        "final_bound": float(bounds[-1]),
        "domain_radius": D,
        "per_group": hold_eval.get("per_group", {}),
        "holdout_risk": hold_eval.get("risk"),
        "mean_set_size": hold_eval.get("mean_set_size"),
        "calibration_mean_set_size": float(np.mean(record.set_size)),
        "localized": [
            {k: e[k] for k in ("w_id", "risk", "alpha_plus_gap")} for e in hold_eval.get("localized", [])
        ],
        "invariants": {"mode": config.invariant_mode, "checks": monitor.checks,
                       "violations": [str(v) for v in monitor.violations]},
    }
    if isinstance(ctrl, LarcController):
        summary["support_size"] = len(ctrl.state)
        summary["rkhs_norm"] = float(np.sqrt(ctrl.state.sq_norm))

    result = RunResult(config, record, ctrl, monitor, stream, D, cum, bounds, hold_thr, hold_eval, summary)
    if write and config.output_dir:
        out = Path(config.output_dir)
        if not out.is_absolute() and config.base_dir:
            out = Path(config.base_dir) / out
        write_artifacts(result, out)
    return result


def state_document(result: RunResult) -> dict:
    doc = {"schema": SCHEMA_VERSION, "loss": result.config.loss, "alpha": result.config.alpha,
           "score_bound": result.stream.score_bound, "weightings": result.config.weightings,
           "weighting_kernel": result.config.kernel.to_config()}
    doc.update(result.controller.snapshot())
    return doc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_artifacts(result: RunResult, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.csv").write_text(trajectory_csv(result.record, result.cum_risk, result.bounds))
    (out / "summary.json").write_text(_dump(result.summary))
    (out / "state.json").write_text(json.dumps(state_document(result)) + "\n")
    (out / "holdout_eval.json").write_text(_dump(result.holdout_eval))
    write_events(out / "holdout.jsonl", result.stream.holdout)
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "cum_risk", "bound"])
        for i in range(len(result.cum_risk)):
            w.writerow([i + 1, repr(float(result.cum_risk[i])), repr(float(result.bounds[i]))])
    result.output_dir = out
    log.info("wrote artifacts to %s", out)
    return out


def replay(state_path, holdout_path) -> dict:
    """Re-evaluate a saved state on a hold-out event dump."""
    doc = json.loads(Path(state_path).read_text())
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"{state_path}: unsupported state schema {doc.get('schema')!r}")
    ctrl = controller_from_snapshot(doc)
    holdout = read_events(holdout_path)
    loss_spec = L.LossSpec(doc["loss"], 1.0, float(doc.get("score_bound", 1.0)))
    kernel = KernelSpec.from_config(doc.get("weighting_kernel", {}))
    weightings = [WeightingFn.from_config(w, kernel) for w in doc.get("weightings", [])]
    thr = ctrl.averaged_thresholds(np.array([e.x for e in holdout])) if holdout else np.empty(0)
    return holdout_report(holdout, thr, loss_spec, weightings, float(doc["alpha"]))


def _stream_key(cfg: RunConfig) -> str:
    return json.dumps(cfg.stream, sort_keys=True)


def _run_row(config: RunConfig) -> dict:
    res = run(config, write=bool(config.output_dir))
    return comparison_row(res)


def comparison_row(res: RunResult) -> dict:
    return {
        "label": res.config.display_label,
        "method": res.config.method,
        "final_risk": res.summary["final_risk"],
        "holdout_risk": res.summary["holdout_risk"],
        "per_group": res.summary["per_group"],
        "mean_set_size": res.summary["mean_set_size"],
        "mean_threshold": res.holdout_eval.get("mean_threshold"),
        "max_group_deviation": (max(abs(v - res.config.alpha) for v in res.summary["per_group"].values())
                                if res.summary["per_group"] else None),
    }


def compare(configs: Sequence[RunConfig], shared_stream_seed: Optional[int] = None,
            jobs: int = 1) -> list:
    """Run several configs on the same stream and tabulate their risks."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    configs = [copy.deepcopy(c) for c in configs]
    if shared_stream_seed is not None:
        for c in configs:
            c.stream["seed"] = int(shared_stream_seed)
    keys = {_stream_key(c) for c in configs}
    if len(keys) != 1:
        raise ConfigError("compare requires identical stream specs across configs")
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_row, configs))
    stream = build_stream(configs[0].stream, configs[0].base_dir)
    return [comparison_row(run(c, stream=stream, write=bool(c.output_dir))) for c in configs]


def comparison_table(rows: Sequence[dict]) -> str:
    groups = sorted({g for r in rows for g in r["per_group"]}, key=lambda s: int(s))
    header = ["label", "final_risk", "holdout_risk"] + [f"group_{g}" for g in groups] + ["mean_set_size", "mean_threshold"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"
        w.writerow([r["label"], fmt(r["final_risk"]), fmt(r["holdout_risk"])]
                   + [fmt(r["per_group"].get(g)) for g in groups]
                   + [fmt(r["mean_set_size"]), fmt(r["mean_threshold"])])
    return buf.getvalue()
