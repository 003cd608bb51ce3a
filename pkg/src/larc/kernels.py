"""Stationary kernels and the constants that parameterize the L-ARC bounds.

A kernel here is ``k(x, x') = amplitude * profile(||x - x'||)`` with the
profile equal to 1 at zero distance. Three families are supported:

    rbf         exp(-z**2 / l)
    cauchy      1 / (1 + z**2 / l)
    triangular  max(0, 1 - z / l)

Note the RBF length scale divides the *squared* distance with no factor 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

FAMILIES = ("rbf", "cauchy", "triangular")


class KernelError(ValueError):
    """Invalid kernel configuration or kernel input."""


@dataclass(frozen=True)
class KernelSpec:
    """Immutable stationary kernel.

    Parameters
    ----------
    family : str
        One of ``"rbf"``, ``"cauchy"``, ``"triangular"``.
    amplitude : float
        Value of the kernel at zero distance (kappa). ``0`` gives the
        degenerate zero kernel, under which L-ARC reduces to scalar ARC.
    length_scale : float
        Localization parameter ``l``.
    """

    family: str = "rbf"
    amplitude: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self) -> None:
        family = str(self.family).lower()
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not math.isfinite(self.amplitude) or self.amplitude < 0:
            raise KernelError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        if not math.isfinite(self.length_scale) or self.length_scale <= 0:
            raise KernelError(f"length_scale must be finite and > 0, got {self.length_scale}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "KernelSpec":
        try:
            return cls(
                family=cfg.get("family", "rbf"),
                amplitude=float(cfg.get("amplitude", 1.0)),
                length_scale=float(cfg.get("length_scale", 1.0)),
            )
        except (TypeError, AttributeError) as exc:
            raise KernelError(f"malformed kernel config: {cfg!r}") from exc

    def to_config(self) -> dict:
        return {"family": self.family, "amplitude": self.amplitude, "length_scale": self.length_scale}

    @property
    def kappa(self) -> float:
        return self.amplitude

    def profile_sq(self, sq_dist: np.ndarray) -> np.ndarray:
        """Kernel value as a function of squared distance (vectorized)."""
        l = self.length_scale
        if self.family == "rbf":
            out = np.exp(-sq_dist / l)
        elif self.family == "cauchy":
            out = 1.0 / (1.0 + sq_dist / l)
        else:
            out = np.maximum(0.0, 1.0 - np.sqrt(sq_dist) / l)
        return self.amplitude * out

    def radial(self, z):
        """Radial profile ``k~(z)`` at distance ``z >= 0`` (amplitude included)."""
        z = np.asarray(z, dtype=np.float64)
        return self.profile_sq(z * z)

    def cross(self, points: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Vector ``[k(p, x) for p in points]`` for a (n, d) array of points."""
        diff = points - x
        return self.profile_sq(np.einsum("ij,ij->i", diff, diff))

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Cross-kernel matrix ``K[i, j] = k(a_i, b_j)``."""
        sq = (
            np.einsum("ij,ij->i", a, a)[:, None]
            + np.einsum("ij,ij->i", b, b)[None, :]
            - 2.0 * (a @ b.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return self.profile_sq(sq)


def _as_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise KernelError(f"{name} contains non-finite values")
    return arr


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise KernelError(f"points must be a list of vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise KernelError("points contain non-finite values")
    return arr


def eval(kernel: KernelSpec, x, x2) -> float:  # noqa: A001 - mirrors the public operation name
    """Evaluate ``k(x, x2)``."""
    a = _as_vector(x, "x")
    b = _as_vector(x2, "x2")
    if a.shape != b.shape:
        raise KernelError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    d = a - b
    return float(kernel.profile_sq(np.array([d @ d]))[0])


def lipschitz_constant(kernel: KernelSpec) -> float:
    """Tight Lipschitz constant ``rho = sup_z |k~'(z)|`` of the radial profile."""
    kappa, l = kernel.amplitude, kernel.length_scale
    if kernel.family == "rbf":
        # |d/dz exp(-z^2/l)| = (2z/l) exp(-z^2/l), maximal at z = sqrt(l/2)
        return kappa * math.sqrt(2.0 / (l * math.e))
    if kernel.family == "cauchy":
        # maximal at z = sqrt(l/3)
        return (3.0 * math.sqrt(3.0) / 8.0) * kappa / math.sqrt(l)
    return kappa / l


def gram(kernel: KernelSpec, points) -> np.ndarray:
    """Symmetric Gram matrix of ``points``; the diagonal is exactly kappa."""
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise KernelError("gram needs at least one point")
    K = kernel.matrix(pts, pts)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, kernel.amplitude)
    return K


def quadratic_form(kernel: KernelSpec, points, coeffs, chunk: int = 2048) -> float:
    """``a^T K a`` without materializing ``K`` for large supports."""
    pts = _as_points(points)
    a = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if pts.shape[0] != a.shape[0]:
        raise KernelError("points and coefficients differ in length")
    total = 0.0
    for start in range(0, a.shape[0], chunk):
        block = kernel.matrix(pts[start:start + chunk], pts)
        total += float(a[start:start + chunk] @ (block @ a))
    return total
