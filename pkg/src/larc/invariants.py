"""Online checks of the risk-control bounds during a calibration run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import threshold_model as tm
from .controllers import ArcController, Controller, LarcController, MondrianController
from .metrics import long_term_bound, theorem2_bound

MODES = ("enforce", "record", "off")
TOL = 1e-9


@dataclass(frozen=True)
class Violation:
    step: int
    name: str
    value: float
    bound: float

    def __str__(self) -> str:
        return f"step {self.step}: {self.name} = {self.value!r} violates bound {self.bound!r}"


class InvariantViolation(RuntimeError):
    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


@dataclass
class InvariantMonitor:
    """Checks every step of a run against the applicable bounds.

    L-ARC: long-term risk bound, RKHS-norm bound, sup-norm and spread of
    ``f_t`` on the probe grid, and the ``[G_min, G_max]`` range of ``g_t``
    on the probes and at the observed input. ARC/Mondrian: the zero-kernel
    long-term bound (scaled by ``sqrt(n_cells)`` for Mondrian) and the
    scalar threshold range.
    """

    controller: Controller
    alpha: float
    score_bound: float
    domain_radius: float
    mode: str = "enforce"
    probes: Optional[np.ndarray] = None
    violations: list = field(default_factory=list)
    checks: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"invariant mode must be one of {MODES}, got {self.mode!r}")
        self._loss_sum = 0.0
        ctrl = self.controller
        if isinstance(ctrl, LarcController):
            cfg = ctrl.config
            self.B = cfg.loss_bound
            self.g_min, self.g_max = tm.bound_box(cfg, self.domain_radius)
            self.norm_bound = tm.rkhs_norm_bound(cfg)
            self.sup_bound = tm.sup_norm_bound(cfg)
            self.spread_bound = tm.lipschitz_gap(cfg, self.domain_radius)
            if self.probes is not None and self.mode != "off":
                ctrl.state.attach_probes(self.probes)
        else:
            if isinstance(ctrl, ArcController):
                eta1, B, cells = ctrl.state.eta1, ctrl.state.loss_bound, 1
            elif isinstance(ctrl, MondrianController):
                first = ctrl.state.cells[0]
                eta1, B, cells = first.eta1, first.loss_bound, ctrl.state.n_cells
            else:
                raise TypeError(f"unsupported controller {type(ctrl).__name__}")
            self.B = B
            self._cells = cells
            self._eta1 = eta1
            self.g_min = -eta1 * B
            self.g_max = self.score_bound + eta1 * B

    def bound(self, T):
        """Long-term risk bound applicable to this controller after ``T`` steps."""
        ctrl = self.controller
        if isinstance(ctrl, LarcController):
            return theorem2_bound(ctrl.config, self.domain_radius, T)
        b = long_term_bound(T, score_bound=self.score_bound, eta1=self._eta1, loss_bound=self.B)
        return math.sqrt(self._cells) * b

    def _fail(self, step: int, name: str, value: float, bound: float) -> None:
        v = Violation(step, name, float(value), float(bound))
        self.violations.append(v)
        if self.mode == "enforce":
            raise InvariantViolation(v)

    def check_step(self, step: int, threshold_used: float, loss: float) -> None:
        """Call after ``controller.observe`` for step ``step``."""
        if self.mode == "off":
            return
        self.checks += 1
        self._loss_sum += loss
        dev = abs(self._loss_sum / step - self.alpha)
        b = self.bound(step)
        if dev > b + 1e-12:
            self._fail(step, "long_term_risk_deviation", dev, b)
        if not self.g_min - TOL <= threshold_used <= self.g_max + TOL:
            self._fail(step, "threshold_range", threshold_used, self.g_max if threshold_used > self.g_max else self.g_min)
        ctrl = self.controller
        if isinstance(ctrl, LarcController):
            state = ctrl.state
            norm = math.sqrt(state.sq_norm)
            if norm > self.norm_bound + TOL:
                self._fail(step, "rkhs_norm", norm, self.norm_bound)
            if state.probe_f is not None:
                f = state.probe_f
                fmax = float(np.abs(f).max())
                if fmax > self.sup_bound + TOL:
                    self._fail(step, "sup_norm_f", fmax, self.sup_bound)
                spread = float(f.max() - f.min())
                if spread > self.spread_bound + TOL:
                    self._fail(step, "f_spread", spread, self.spread_bound)
                g = f + state.constant
                if g.max() > self.g_max + TOL:
                    self._fail(step, "g_max", float(g.max()), self.g_max)
                if g.min() < self.g_min - TOL:
                    self._fail(step, "g_min", float(g.min()), self.g_min)
        else:
            thr = ctrl.state.threshold if isinstance(ctrl, ArcController) else None
            if thr is not None and not self.g_min - TOL <= thr <= self.g_max + TOL:
                self._fail(step, "threshold_range", thr, self.g_max)
