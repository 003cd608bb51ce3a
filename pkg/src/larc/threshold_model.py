"""L-ARC threshold function ``g_t = f_t + c_t`` kept as kernel coefficients.

``f_t`` is a kernel expansion over the inputs seen so far and ``c_t`` is a
scalar offset. One call to :func:`update` performs

    c      <- c - eta_t * (alpha - loss)
    a_i    <- (1 - eta_t * lambda) * a_i           for stored points
    a_new  <- -eta_t * (alpha - loss)              at the new input x_t

with ``eta_t = eta1 / sqrt(t)``. The state also keeps running sums of the
coefficients and offsets so that the time-averaged threshold can be
evaluated without storing every intermediate function.

The state object is mutated in place by :func:`update` (and returned for
convenience). Use :meth:`LarcState.copy` to keep a snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .kernels import KernelSpec, lipschitz_constant, quadratic_form


class ConfigError(ValueError):
    """Invalid run or model configuration."""


class ModelError(ValueError):
    """Invalid input to the threshold model."""


@dataclass(frozen=True)
class LarcConfig:
    alpha: float
    eta1: float
    lam: float
    kernel: KernelSpec = field(default_factory=KernelSpec)
    loss_bound: float = 1.0
    score_bound: float = 1.0
    max_coefficients: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.eta1 > 0:
            raise ConfigError(f"eta1 must be positive, got {self.eta1}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        # eta_t is largest at t = 1, so eta1 * lambda < 1 covers every step
        if self.eta1 * self.lam >= 1.0:
            raise ConfigError(
                f"eta1 * lambda = {self.eta1 * self.lam} must be < 1 (learning rate below 1/lambda)"
            )
        if not self.loss_bound >= self.alpha:
            raise ConfigError(f"loss_bound {self.loss_bound} must be >= alpha {self.alpha}")
        if not self.score_bound > 0:
            raise ConfigError(f"score_bound must be positive, got {self.score_bound}")
        if self.max_coefficients is not None and int(self.max_coefficients) < 1:
            raise ConfigError(f"max_coefficients must be a positive integer, got {self.max_coefficients}")

    def eta(self, t: int) -> float:
        return self.eta1 / math.sqrt(t)

    def to_config(self) -> dict:
        return {
            "alpha": self.alpha,
            "eta1": self.eta1,
            "lambda": self.lam,
            "kernel": self.kernel.to_config(),
            "loss_bound": self.loss_bound,
            "score_bound": self.score_bound,
            "max_coefficients": self.max_coefficients,
        }

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "LarcConfig":
        m = cfg.get("max_coefficients")
        return cls(
            alpha=float(cfg["alpha"]),
            eta1=float(cfg["eta1"]),
            lam=float(cfg["lambda"]),
            kernel=KernelSpec.from_config(cfg.get("kernel", {})),
            loss_bound=float(cfg.get("loss_bound", 1.0)),
            score_bound=float(cfg.get("score_bound", 1.0)),
            max_coefficients=None if m is None else int(m),
        )


class LarcState:
    """Support points, coefficients and running sums of an L-ARC threshold.

    Storage is a growable buffer; ``support``/``coeffs``/``avg_coeff_sums``
    expose views of the live window, oldest point first.
    """

    def __init__(self, config: LarcConfig, dim: Optional[int] = None):
        self.config = config
        self.constant = 0.0
        self.avg_constant_sum = 0.0
        self.step = 0
        # squared RKHS norm of f, tracked incrementally
        self.sq_norm = 0.0
        self._dim = dim
        self._cap = 0
        self._lo = 0
        self._hi = 0
        self._X = np.empty((0, dim or 0))
        self._a = np.empty(0)
        self._abar = np.empty(0)
        self._sqn = np.empty(0)
        self._cache_key: Optional[tuple] = None
        self._cache_f = 0.0
        self.probes: Optional[np.ndarray] = None
        self.probe_f: Optional[np.ndarray] = None

    # -- views -------------------------------------------------------------
    @property
    def dim(self) -> Optional[int]:
        return self._dim

    @property
    def support(self) -> np.ndarray:
        return self._X[self._lo:self._hi]

    @property
    def coeffs(self) -> np.ndarray:
        return self._a[self._lo:self._hi]

    @property
    def avg_coeff_sums(self) -> np.ndarray:
        return self._abar[self._lo:self._hi]

    def __len__(self) -> int:
        return self._hi - self._lo

    def copy(self) -> "LarcState":
        new = LarcState(self.config, self._dim)
        new.constant = self.constant
        new.avg_constant_sum = self.avg_constant_sum
        new.step = self.step
        new.sq_norm = self.sq_norm
        n = len(self)
        if self._dim is not None:
            new._set_rows(n, self.support, self.coeffs, self.avg_coeff_sums)
        return new

    def attach_probes(self, probes) -> None:
        """Track ``f_t`` at fixed probe points; :func:`update` keeps the values current."""
        P = np.atleast_2d(np.asarray(probes, dtype=np.float64))
        self.probes = P
        self.probe_f = self._expand_many(P, self.coeffs) if len(self) else np.zeros(P.shape[0])

    # -- buffer management -------------------------------------------------
    def _alloc(self, cap: int) -> None:
        n = len(self)
        X = np.empty((cap, self._dim))
        a = np.zeros(cap)
        abar = np.zeros(cap)
        sqn = np.zeros(cap)
        X[:n] = self.support
        a[:n] = self.coeffs
        abar[:n] = self.avg_coeff_sums
        sqn[:n] = self._sqn[self._lo:self._hi] if self._sqn.shape[0] else 0.0
        self._X, self._a, self._abar, self._sqn = X, a, abar, sqn
        self._cap, self._lo, self._hi = cap, 0, n

    def _set_rows(self, n: int, support: np.ndarray, coeffs: np.ndarray, sums: np.ndarray) -> None:
        self._alloc(max(n, 16))
        self._X[:n] = support
        self._a[:n] = coeffs
        self._abar[:n] = sums
        self._sqn[:n] = np.einsum("ij,ij->i", support, support)
        self._hi = n

    def kernel_column(self, x: np.ndarray) -> np.ndarray:
        """``[k(X_i, x)]`` over the live support, via cached squared norms."""
        lo, hi = self._lo, self._hi
        sq = self._sqn[lo:hi] - 2.0 * (self._X[lo:hi] @ x) + float(x @ x)
        np.maximum(sq, 0.0, out=sq)
        return self.config.kernel.profile_sq(sq)

    def _reserve_one(self) -> None:
        """Guarantee room to append one point at ``_hi``."""
        if self._hi < self._cap:
            return
        n = len(self)
        if self._cap and n + 1 <= self._cap // 2:
            self._alloc(self._cap)  # compact after truncation drops
        else:
            self._alloc(max(16, 2 * self._cap, n + 1))

    def _check_x(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ModelError("covariate contains non-finite values")
        if self._dim is not None and arr.shape[0] != self._dim:
            raise ModelError(f"dimension mismatch: state has d={self._dim}, got {arr.shape[0]}")
        return arr

    def f_value(self, x) -> float:
        """Value of the kernel component ``f_t(x)``."""
        arr = self._check_x(x)
        if len(self) == 0:
            return 0.0
        key = (self.step, arr.tobytes())
        if key == self._cache_key:
            return self._cache_f
        val = float(self.coeffs @ self.kernel_column(arr))
        self._cache_key, self._cache_f = key, val
        return val

    # -- vectorized evaluation ---------------------------------------------
    def _expand_many(self, X, weights: np.ndarray, chunk: int = 1024) -> np.ndarray:
        pts = np.asarray(X, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        out = np.zeros(pts.shape[0])
        if len(self) == 0:
            return out
        if pts.shape[1] != self._dim:
            raise ModelError(f"dimension mismatch: state has d={self._dim}, got {pts.shape[1]}")
        for start in range(0, pts.shape[0], chunk):
            K = self.config.kernel.matrix(pts[start:start + chunk], self.support)
            out[start:start + chunk] = K @ weights
        return out

    def predict_many(self, X) -> np.ndarray:
        return self._expand_many(X, self.coeffs) + self.constant

    def averaged_many(self, X) -> np.ndarray:
        if self.step == 0:
            raise ModelError("time-averaged threshold is undefined before the first update")
        return (self._expand_many(X, self.avg_coeff_sums) + self.avg_constant_sum) / self.step

    # -- serialization -----------------------------------------------------
    def to_snapshot(self) -> dict:
        return {
            "step": self.step,
            "dim": self._dim,
            "constant": self.constant,
            "support": self.support.tolist(),
            "coeffs": self.coeffs.tolist(),
            "avg_coeff_sums": self.avg_coeff_sums.tolist(),
            "avg_constant_sum": self.avg_constant_sum,
        }

    @classmethod
    def from_snapshot(cls, config: LarcConfig, snap: Mapping[str, Any]) -> "LarcState":
        support = np.asarray(snap["support"], dtype=np.float64)
        coeffs = np.asarray(snap["coeffs"], dtype=np.float64)
        sums = np.asarray(snap["avg_coeff_sums"], dtype=np.float64)
        if not (len(support) == len(coeffs) == len(sums)):
            raise ModelError("snapshot arrays differ in length")
        dim = int(support.shape[1]) if support.ndim == 2 and len(support) else snap.get("dim")
        state = cls(config, dim)
        state.step = int(snap["step"])
        state.constant = float(snap["constant"])
        state.avg_constant_sum = float(snap["avg_constant_sum"])
        n = len(coeffs)
        if n:
            state._set_rows(n, support, coeffs, sums)
            state.sq_norm = quadratic_form(config.kernel, support, coeffs)
        return state


def init(config: LarcConfig, dim: Optional[int] = None) -> LarcState:
    """Fresh state with ``f_1 = 0`` and ``c_1 = 0``."""
    return LarcState(config, dim)


def predict_threshold(state: LarcState, x) -> float:
    """``g_t(x) = sum_i a_i k(X_i, x) + c``."""
    return state.f_value(x) + state.constant


def update(state: LarcState, x_t, loss: float) -> LarcState:
    """Apply one L-ARC step for input ``x_t`` with observed ``loss``."""
    cfg = state.config
    if not math.isfinite(loss):
        raise ModelError(f"loss must be finite, got {loss}")
    if loss < 0.0 or loss > cfg.loss_bound:
        raise ModelError(f"loss {loss} outside [0, {cfg.loss_bound}]")
    x = state._check_x(x_t)
    if state._dim is None:
        state._dim = x.shape[0]
        state._X = np.empty((0, state._dim))
    kernel = cfg.kernel
    kappa = kernel.amplitude

    f_x = state.f_value(x)

    # fold g_t (the function used at time t) into the running averages
    lo, hi = state._lo, state._hi
    state._abar[lo:hi] += state._a[lo:hi]
    state.avg_constant_sum += state.constant

    t = state.step + 1
    eta = cfg.eta(t)
    err = cfg.alpha - loss
    scale = 1.0 - eta * cfg.lam
    a_new = -eta * err

    state._a[lo:hi] *= scale
    sq = scale * scale * state.sq_norm
    f_x *= scale

    m = cfg.max_coefficients
    if m is not None and hi - lo >= m:
        # drop the oldest point before appending
        x_old = state._X[lo]
        a_old = state._a[lo]
        f_old = float(state._a[lo:hi] @ state.kernel_column(x_old))
        sq += -2.0 * a_old * f_old + a_old * a_old * kappa
        d = x_old - x
        f_x -= a_old * float(kernel.profile_sq(np.array([d @ d]))[0])
        if state.probes is not None:
            state.probe_f *= scale
            state.probe_f -= a_old * kernel.cross(state.probes, x_old)
        state._a[lo] = 0.0
        state._abar[lo] = 0.0
        state._lo += 1
    elif state.probes is not None:
        state.probe_f *= scale

    sq += 2.0 * a_new * f_x + a_new * a_new * kappa
    state.sq_norm = max(sq, 0.0)
    if state.probes is not None:
        state.probe_f += a_new * kernel.cross(state.probes, x)

    state._reserve_one()
    state._X[state._hi] = x
    state._sqn[state._hi] = float(x @ x)
    state._a[state._hi] = a_new
    state._abar[state._hi] = 0.0
    state._hi += 1

    state.constant = state.constant - eta * err
    state.step = t
    state._cache_key = None
    return state


def averaged_threshold(state: LarcState, x) -> float:
    """Time-averaged threshold ``(1/T) sum_{t<=T} g_t(x)`` after ``T`` updates."""
    if state.step == 0:
        raise ModelError("time-averaged threshold is undefined before the first update")
    arr = state._check_x(x)
    total = state.avg_constant_sum
    if len(state):
        total += float(state.avg_coeff_sums @ state.kernel_column(arr))
    return total / state.step


def rkhs_norm(state: LarcState, kernel: Optional[KernelSpec] = None, tol: float = 1e-9) -> float:
    """Exact ``||f_t||_H = sqrt(a^T K a)`` from the Gram matrix of the support."""
    kernel = kernel or state.config.kernel
    if len(state) == 0:
        return 0.0
    q = quadratic_form(kernel, state.support, state.coeffs)
    if q < 0:
        scale = max(1.0, float(np.abs(state.coeffs).sum()) ** 2 * kernel.amplitude)
        if q < -tol * scale:
            raise ModelError(
                f"Gram quadratic form is negative ({q:.3e}); kernel matrix is numerically indefinite"
            )
        q = 0.0
    return math.sqrt(q)


def rkhs_norm_bound(config: LarcConfig) -> float:
    """``B sqrt(kappa) / lambda``."""
    return config.loss_bound * math.sqrt(config.kernel.amplitude) / config.lam


def sup_norm_bound(config: LarcConfig) -> float:
    """``kappa B / lambda``."""
    return config.kernel.amplitude * config.loss_bound / config.lam


def lipschitz_gap(config: LarcConfig, domain_radius: float) -> float:
    """``2 B sqrt(rho kappa D) / lambda``: max spread of ``f_t`` over the domain ball."""
    rho = lipschitz_constant(config.kernel)
    return 2.0 * config.loss_bound * math.sqrt(rho * config.kernel.amplitude * domain_radius) / config.lam


def bound_box(config: LarcConfig, domain_radius: float) -> tuple[float, float]:
    """Uniform range ``(G_min, G_max)`` of every threshold function."""
    B, kappa = config.loss_bound, config.kernel.amplitude
    spread = lipschitz_gap(config, domain_radius)
    step_term = config.eta1 * B * (2.0 * kappa + 1.0)
    return -spread - step_term, config.score_bound + spread + step_term
