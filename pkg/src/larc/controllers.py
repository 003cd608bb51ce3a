"""Threshold controllers: scalar ARC, Mondrian ARC and L-ARC behind one interface.

Every controller exposes

    threshold_at(x)            threshold used to build the set at x
    averaged_threshold_at(x)   time-averaged threshold (hold-out evaluation)
    observe(x, loss)           feed back the loss of the set just built

and is a single-writer sequential state machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from . import threshold_model as tm
from .kernels import KernelSpec


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ArcState:
    """Scalar ARC threshold ``lambda_t`` with its running sum for averaging."""

    alpha: float
    eta1: float
    threshold: float = 0.0
    step: int = 0
    threshold_sum: float = 0.0
    loss_bound: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ControllerError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.eta1 > 0:
            raise ControllerError(f"eta1 must be positive, got {self.eta1}")

    def eta_next(self) -> float:
        return self.eta1 / math.sqrt(self.step + 1)

    @property
    def averaged_threshold(self) -> float:
        if self.step == 0:
            raise ControllerError("time-averaged threshold is undefined before the first update")
        return self.threshold_sum / self.step


def arc_update(state: ArcState, loss: float) -> ArcState:
    """``lambda_{t+1} = lambda_t + eta_t (loss - alpha)``."""
    if not math.isfinite(loss) or loss < 0.0 or loss > state.loss_bound:
        raise ControllerError(f"loss {loss} outside [0, {state.loss_bound}]")
    eta = state.eta_next()
    return replace(
        state,
        threshold=state.threshold + eta * (loss - state.alpha),
        step=state.step + 1,
        threshold_sum=state.threshold_sum + state.threshold,
    )


# -- partitions --------------------------------------------------------------

class Partition:
    """Maps a covariate to a cell index in ``range(n_cells)``.

    Built from a list of region specs; a covariate goes to the first region
    containing it, otherwise to a trailing remainder cell. An empty list
    is the single-cell partition.

    Region specs are ``{"low": [...], "high": [...]}`` (closed box) or
    ``{"center": [...], "radius": r}`` (closed ball, e.g. near/far from a
    transmitter).
    """

    def __init__(self, regions: Sequence[Mapping[str, Any]] = ()):
        self.regions = [dict(r) for r in regions]
        for r in self.regions:
            if "radius" in r:
                if float(r["radius"]) < 0:
                    raise ControllerError("ball radius must be non-negative")
            elif not ("low" in r and "high" in r):
                raise ControllerError(f"region needs low/high or center/radius: {r!r}")
        self._compiled = [
            ("ball", np.asarray(r["center"], float), float(r["radius"])) if "radius" in r
            else ("box", np.asarray(r["low"], float), np.asarray(r["high"], float))
            for r in self.regions
        ]

    @property
    def n_cells(self) -> int:
        return len(self.regions) + 1 if self.regions else 1

    def __call__(self, x) -> int:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        for i, (kind, p, q) in enumerate(self._compiled):
            if kind == "ball":
                if np.linalg.norm(x - p) <= q:
                    return i
            elif np.all(x >= p) and np.all(x <= q):
                return i
        return len(self._compiled) if self._compiled else 0


@dataclass
class MondrianState:
    partition: Callable[[Any], int]
    cells: list

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_of(self, x) -> int:
        idx = self.partition(x)
        if not isinstance(idx, (int, np.integer)) or not 0 <= idx < len(self.cells):
            raise ControllerError(f"partition returned cell {idx!r}, expected 0..{len(self.cells) - 1}")
        return int(idx)


def mondrian_init(partition: Callable[[Any], int], n_cells: int, alpha: float, eta1: float,
                  loss_bound: float = 1.0) -> MondrianState:
    return MondrianState(partition, [ArcState(alpha, eta1, loss_bound=loss_bound) for _ in range(n_cells)])


def mondrian_observe(state: MondrianState, x, loss: float) -> MondrianState:
    """Update only the ARC instance of the cell containing ``x``."""
    i = state.cell_of(x)
    cells = list(state.cells)
    cells[i] = arc_update(cells[i], loss)
    return MondrianState(state.partition, cells)


# -- uniform controller interface -------------------------------------------

class Controller:
    method: str = ""

    def threshold_at(self, x) -> float:
        raise NotImplementedError

    def averaged_threshold_at(self, x) -> float:
        raise NotImplementedError

    def averaged_thresholds(self, X) -> np.ndarray:
        return np.array([self.averaged_threshold_at(x) for x in X])

    def observe(self, x, loss: float) -> float:
        """Feed back ``loss`` for the set built at ``x``; returns the step size used."""
        raise NotImplementedError

    @property
    def step(self) -> int:
        raise NotImplementedError

    def snapshot(self) -> dict:
        raise NotImplementedError


class ArcController(Controller):
    method = "arc"

    def __init__(self, alpha: float, eta1: float, loss_bound: float = 1.0, state: Optional[ArcState] = None):
        self.state = state or ArcState(alpha, eta1, loss_bound=loss_bound)

    def threshold_at(self, x=None) -> float:
        return self.state.threshold

    def averaged_threshold_at(self, x=None) -> float:
        return self.state.averaged_threshold

    def averaged_thresholds(self, X) -> np.ndarray:
        return np.full(len(X), self.state.averaged_threshold)

    def observe(self, x, loss: float) -> float:
        eta = self.state.eta_next()
        self.state = arc_update(self.state, loss)
        return eta

    @property
    def step(self) -> int:
        return self.state.step

    def snapshot(self) -> dict:
        s = self.state
        return {"method": "arc", "alpha": s.alpha, "eta1": s.eta1, "loss_bound": s.loss_bound,
                "step": s.step, "threshold": s.threshold, "threshold_sum": s.threshold_sum}

    @classmethod
    def from_snapshot(cls, snap: Mapping[str, Any]) -> "ArcController":
        st = ArcState(float(snap["alpha"]), float(snap["eta1"]), float(snap["threshold"]),
                      int(snap["step"]), float(snap["threshold_sum"]), float(snap.get("loss_bound", 1.0)))
        return cls(st.alpha, st.eta1, state=st)


class MondrianController(Controller):
    method = "mondrian"

    def __init__(self, regions: Sequence[Mapping[str, Any]], alpha: float, eta1: float,
                 loss_bound: float = 1.0, partition: Optional[Callable[[Any], int]] = None,
                 n_cells: Optional[int] = None):
        self.regions = list(regions)
        if partition is None:
            part = Partition(self.regions)
            partition, n_cells = part, part.n_cells
        elif n_cells is None:
            raise ControllerError("a custom partition needs n_cells")
        self.state = mondrian_init(partition, n_cells, alpha, eta1, loss_bound)

    def threshold_at(self, x) -> float:
        return self.state.cells[self.state.cell_of(x)].threshold

    def averaged_threshold_at(self, x) -> float:
        return self.state.cells[self.state.cell_of(x)].averaged_threshold

    def observe(self, x, loss: float) -> float:
        cell = self.state.cells[self.state.cell_of(x)]
        eta = cell.eta_next()
        self.state = mondrian_observe(self.state, x, loss)
        return eta

    @property
    def step(self) -> int:
        return sum(c.step for c in self.state.cells)

    def snapshot(self) -> dict:
        return {
            "method": "mondrian",
            "regions": self.regions,
            "cells": [{"alpha": c.alpha, "eta1": c.eta1, "loss_bound": c.loss_bound, "step": c.step,
                       "threshold": c.threshold, "threshold_sum": c.threshold_sum}
                      for c in self.state.cells],
        }

    @classmethod
    def from_snapshot(cls, snap: Mapping[str, Any]) -> "MondrianController":
        cells = [ArcState(float(c["alpha"]), float(c["eta1"]), float(c["threshold"]), int(c["step"]),
                          float(c["threshold_sum"]), float(c.get("loss_bound", 1.0)))
                 for c in snap["cells"]]
        ctrl = cls(snap.get("regions", []), cells[0].alpha, cells[0].eta1, cells[0].loss_bound)
        if len(cells) != ctrl.state.n_cells:
            raise ControllerError("snapshot cell count does not match its regions")
        ctrl.state = MondrianState(ctrl.state.partition, cells)
        return ctrl


class LarcController(Controller):
    method = "larc"

    def __init__(self, config: tm.LarcConfig, dim: Optional[int] = None, state: Optional[tm.LarcState] = None):
        self.config = config
        self.state = state if state is not None else tm.init(config, dim)

    def threshold_at(self, x) -> float:
        return tm.predict_threshold(self.state, x)

    def averaged_threshold_at(self, x) -> float:
        return tm.averaged_threshold(self.state, x)

    def averaged_thresholds(self, X) -> np.ndarray:
        return self.state.averaged_many(np.asarray(X, dtype=np.float64))

    def observe(self, x, loss: float) -> float:
        eta = self.config.eta(self.state.step + 1)
        tm.update(self.state, x, loss)
        return eta

    @property
    def step(self) -> int:
        return self.state.step

    def snapshot(self) -> dict:
        snap = {"method": "larc", "config": self.config.to_config(), "dim": self.state.dim}
        snap.update(self.state.to_snapshot())
        return snap

    @classmethod
    def from_snapshot(cls, snap: Mapping[str, Any]) -> "LarcController":
        config = tm.LarcConfig.from_config(snap["config"])
        return cls(config, state=tm.LarcState.from_snapshot(config, snap))


def threshold_at(controller: Controller, x) -> float:
    return controller.threshold_at(x)


def controller_from_snapshot(snap: Mapping[str, Any]) -> Controller:
    method = snap.get("method")
    if method == "arc":
        return ArcController.from_snapshot(snap)
    if method == "mondrian":
        return MondrianController.from_snapshot(snap)
    if method == "larc":
        return LarcController.from_snapshot(snap)
    raise ControllerError(f"unknown method in snapshot: {method!r}")


def make_controller(method: str, *, alpha: float, eta1: float, lam: float = 1e-4,
                    kernel: Optional[KernelSpec] = None, loss_bound: float = 1.0,
                    score_bound: float = 1.0, max_coefficients: Optional[int] = None,
                    mondrian_cells: Sequence[Mapping[str, Any]] = (), dim: Optional[int] = None) -> Controller:
    if method == "arc":
        return ArcController(alpha, eta1, loss_bound)
    if method == "mondrian":
        return MondrianController(mondrian_cells, alpha, eta1, loss_bound)
    if method == "larc":
        cfg = tm.LarcConfig(alpha=alpha, eta1=eta1, lam=lam, kernel=kernel or KernelSpec(),
                            loss_bound=loss_bound, score_bound=score_bound,
                            max_coefficients=max_coefficients)
        return LarcController(cfg, dim)
    raise ControllerError(f"unknown method {method!r}; expected arc, mondrian or larc")
