"""Risk accounting: cumulative risk, long-term bounds, localized and group risk."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import losses as L
from .kernels import KernelSpec, lipschitz_constant, quadratic_form
from .stream import StreamEvent
from .threshold_model import LarcConfig


class MetricsError(ValueError):
    pass


@dataclass
class RunRecord:
    """Per-step log of one calibration run."""

    t: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    group: list = field(default_factory=list)
    set_size: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def append(self, t: int, threshold: float, loss: float, eta: float, group: int = 0,
               set_size: Optional[int] = None) -> None:
        if self.t and t <= self.t[-1]:
            raise MetricsError(f"step {t} does not increase past {self.t[-1]}")
        self.t.append(t)
        self.threshold.append(threshold)
        self.loss.append(loss)
        self.eta.append(eta)
        self.group.append(group)
        self.set_size.append(set_size)

    def __len__(self) -> int:
        return len(self.t)


def cumulative_risk(record) -> np.ndarray:
    """Prefix means ``(1/T) sum_{t<=T} L_t``; accepts a RunRecord or a loss sequence."""
    losses = np.asarray(record.loss if isinstance(record, RunRecord) else record, dtype=np.float64)
    if losses.size == 0:
        raise MetricsError("empty record")
    return np.cumsum(losses) / np.arange(1, losses.size + 1)


def long_term_bound(T, *, score_bound: float, eta1: float, loss_bound: float = 1.0,
                    kappa: float = 0.0, rho: float = 0.0, domain_radius: float = 0.0,
                    lam: float = 1.0):
    """Worst-case bound on ``|mean loss - alpha|`` after ``T`` steps (vectorized in ``T``)."""
    T = np.asarray(T, dtype=np.float64)
    B = loss_bound
    rate = (score_bound / eta1
            + 4.0 * B * math.sqrt(rho * kappa * domain_radius) / (eta1 * lam)
            + 2.0 * B * (2.0 * kappa + 1.0))
    out = rate / np.sqrt(T) + kappa * B
    return float(out) if out.ndim == 0 else out


def theorem2_bound(config: LarcConfig, domain_radius: float, T):
    """L-ARC long-term risk bound for threshold functions in the kernel's RKHS."""
    return long_term_bound(
        T, score_bound=config.score_bound, eta1=config.eta1, loss_bound=config.loss_bound,
        kappa=config.kernel.amplitude, rho=lipschitz_constant(config.kernel),
        domain_radius=domain_radius, lam=config.lam,
    )


def arc_bound(T, *, score_bound: float, eta1: float, loss_bound: float = 1.0):
    """Scalar ARC bound ``(S_max + eta1 B) / (eta1 sqrt(T))``.

    Coincides with the textbook ``(S_max + eta1 B) / sqrt(T)`` at ``eta1 = 1``;
    the ``1/eta1`` factor is needed for smaller step-size scales.
    """
    T = np.asarray(T, dtype=np.float64)
    out = (score_bound + eta1 * loss_bound) / (eta1 * np.sqrt(T))
    return float(out) if out.ndim == 0 else out


# -- weighting functions -----------------------------------------------------

@dataclass(frozen=True)
class WeightingFn:
    """``w(x) = sum_i beta_i k(center_i, x) + constant``."""

    centers: tuple = ()
    betas: tuple = ()
    constant: float = 0.0
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self) -> None:
        if len(self.centers) != len(self.betas):
            raise MetricsError("centers and betas differ in length")
        if self.constant < 0:
            raise MetricsError("constant part of a weighting function must be non-negative")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any], kernel: KernelSpec) -> "WeightingFn":
        bumps = cfg.get("bumps", [])
        k = KernelSpec.from_config(cfg["kernel"]) if "kernel" in cfg else kernel
        return cls(tuple(tuple(float(v) for v in b["center"]) for b in bumps),
                   tuple(float(b["beta"]) for b in bumps), float(cfg.get("constant", 0.0)), k)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], self.constant)
        if self.centers:
            out += self.kernel.matrix(X, np.asarray(self.centers)) @ np.asarray(self.betas)
        return out

    def rkhs_norm(self) -> float:
        """``||f_w||_H`` of the kernel part."""
        if not self.centers:
            return 0.0
        return math.sqrt(max(quadratic_form(self.kernel, self.centers, self.betas), 0.0))


def _losses_at(holdout: Sequence[StreamEvent], thresholds: np.ndarray, spec: L.LossSpec):
    losses = np.empty(len(holdout))
    sizes = np.empty(len(holdout))
    for i, (ev, thr) in enumerate(zip(holdout, thresholds)):
        out = L.evaluate(spec, float(thr), ev.scores, ev.truth, ev.values)
        losses[i] = out.loss
        sizes[i] = len(out.kept)
    return losses, sizes


def _thresholds(holdout: Sequence[StreamEvent], predictor) -> np.ndarray:
    """``predictor`` is a callable x -> threshold or a precomputed array."""
    if callable(predictor):
        return np.array([predictor(np.asarray(ev.x)) for ev in holdout], dtype=np.float64)
    arr = np.asarray(predictor, dtype=np.float64)
    if arr.shape != (len(holdout),):
        raise MetricsError("precomputed thresholds do not match the hold-out length")
    return arr


def localized_risk(holdout: Sequence[StreamEvent], predictor, loss: L.LossSpec, w: WeightingFn) -> float:
    """Empirical ``E[w(X) L] / E[w(X)]`` over the hold-out."""
    if not holdout:
        raise MetricsError("empty hold-out")
    weights = w(np.array([ev.x for ev in holdout]))
    if np.any(weights < -1e-12):
        raise MetricsError(f"weighting function is negative on the hold-out (min {weights.min():.3e})")
    total = weights.sum()
    if not total > 0:
        raise MetricsError("total hold-out weight is zero")
    losses, _ = _losses_at(holdout, _thresholds(holdout, predictor), loss)
    return float(weights @ losses / total)


def theorem1_gap(w: WeightingFn, holdout: Sequence[StreamEvent], B: float = 1.0) -> float:
    """Localization gap ``kappa B ||f_w||_H / mean(w)`` on the hold-out."""
    norm = w.rkhs_norm()
    mean_w = float(w(np.array([ev.x for ev in holdout])).mean()) if holdout else 0.0
    if not mean_w > 0:
        raise MetricsError(f"weighting function has non-positive hold-out mean {mean_w}")
    return w.kernel.amplitude * B * norm / mean_w


def group_conditional_risk(holdout: Sequence[StreamEvent], predictor, loss: L.LossSpec,
                           groups: Optional[Iterable[int]] = None) -> dict:
    """Mean loss per subpopulation tag; requested groups with no events are skipped with a warning."""
    losses, _ = _losses_at(holdout, _thresholds(holdout, predictor), loss)
    tags = np.array([ev.group for ev in holdout], dtype=np.int64)
    wanted = sorted(set(groups)) if groups is not None else sorted(set(tags.tolist()))
    out = {}
    for g in wanted:
        m = tags == g
        if not m.any():
            warnings.warn(f"group {g} has no hold-out events; omitted", RuntimeWarning, stacklevel=2)
            continue
        out[int(g)] = float(losses[m].mean())
    return out


def holdout_report(holdout: Sequence[StreamEvent], thresholds: np.ndarray, loss: L.LossSpec,
                   weightings: Sequence[WeightingFn] = (), alpha: Optional[float] = None) -> dict:
    """Marginal, per-group and localized hold-out risks for precomputed thresholds."""
    if not holdout:
        return {"n": 0}
    thresholds = np.asarray(thresholds, dtype=np.float64)
    losses, sizes = _losses_at(holdout, thresholds, loss)
    tags = np.array([ev.group for ev in holdout])
    multi = any(len(ev.scores) > 1 for ev in holdout)
    report = {
        "n": len(holdout),
        "risk": float(losses.mean()),
        "per_group": {str(int(g)): float(losses[tags == g].mean()) for g in sorted(set(tags.tolist()))},
        "mean_threshold": float(thresholds.mean()),
        "mean_set_size": float(sizes.mean()) if multi else None,
    }
    loc = []
    for i, w in enumerate(weightings):
        gap = theorem1_gap(w, holdout, loss.bound)  # raises on a non-positive mean weight
        wx = w(np.array([ev.x for ev in holdout]))
        entry = {"w_id": i, "risk": float(wx @ losses / wx.sum()), "gap": gap,
                 "weight_sum": float(wx.sum())}
        if alpha is not None:
            entry["alpha_plus_gap"] = alpha + entry["gap"]
        loc.append(entry)
    report["localized"] = loc
    return report


def probe_grid(dim: int, radius: float, n: int = 25, seed: int = 0) -> np.ndarray:
    """``n`` deterministic probe points inside the ball of ``radius`` (origin first)."""
    from .stream import rng_from_seed

    rng = rng_from_seed(seed)
    dirs = rng.standard_normal((n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = radius * rng.uniform(size=n) ** (1.0 / dim)
    pts = dirs * r[:, None]
    pts[0] = 0.0
    return pts
