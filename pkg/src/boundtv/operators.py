"""Finite-difference operators, shrinkage and box projection on regular grids.

Models are plain :class:`numpy.ndarray` objects shaped like the grid.
Gradient fields carry one leading axis per spatial dimension, so a 1-D
model of length ``n`` has a gradient of shape ``(1, n)`` and a 2-D model of
shape ``(nx, ny)`` has a gradient of shape ``(2, nx, ny)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Grid",
    "Bounds",
    "grad_forward",
    "grad_adjoint",
    "phi",
    "tv_norm",
    "shrink",
    "project",
]

Spacing = Union[float, Sequence[float]]

TV_MODES = ("anisotropic", "isotropic")
SHRINK_MODES = ("componentwise", "grouped")


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid with one or two axes.

    Parameters
    ----------
    shape : tuple of int
        Number of cells along each axis (at least 2 per axis).
    spacing : tuple of float
        Physical cell size along each axis.
    """

    shape: tuple
    spacing: tuple = 1.0

    def __post_init__(self):
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        spacing = np.broadcast_to(
            np.asarray(self.spacing, dtype=float), (len(shape),)
        )
        if len(shape) not in (1, 2):
            raise ValueError(f"grid must be 1-D or 2-D, got {len(shape)} axes")
        if any(s < 2 for s in shape):
            raise ValueError(f"every axis needs at least 2 cells, got {shape}")
        if not np.all(np.isfinite(spacing)) or np.any(spacing <= 0):
            raise ValueError(f"spacing must be positive, got {tuple(spacing)}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", tuple(float(h) for h in spacing))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def grad_shape(self) -> tuple:
        return (self.ndim,) + self.shape

    def centers(self, axis: int = 0) -> np.ndarray:
        """Cell-center coordinates along ``axis``, starting at ``h/2``."""
        h = self.spacing[axis]
        return (np.arange(self.shape[axis]) + 0.5) * h

    def check(self, m: np.ndarray, name: str = "model") -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if m.shape != self.shape:
            raise ValueError(f"{name} has shape {m.shape}, grid expects {self.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError(f"{name} contains non-finite values")
        return m


@dataclass(frozen=True)
class Bounds:
    """Component-wise box ``lower <= m <= upper``.

    Infinite entries are allowed and mean the side is unconstrained.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        lower, upper = np.broadcast_arrays(lower, upper)
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("bounds contain NaN")
        if np.any(lower > upper):
            i = np.flatnonzero((lower > upper).ravel())[0]
            raise ValueError(
                f"lower bound exceeds upper bound at index {i}: "
                f"{lower.ravel()[i]} > {upper.ravel()[i]}"
            )
        object.__setattr__(self, "lower", np.array(lower))
        object.__setattr__(self, "upper", np.array(upper))

    @classmethod
    def uniform(cls, lower: float, upper: float, shape) -> "Bounds":
        return cls(np.full(shape, float(lower)), np.full(shape, float(upper)))

    @classmethod
    def unbounded(cls, shape) -> "Bounds":
        return cls.uniform(-np.inf, np.inf, shape)

    @property
    def shape(self) -> tuple:
        return self.lower.shape

    def check(self, m: np.ndarray) -> None:
        if np.shape(m) != self.shape:
            raise ValueError(
                f"bounds have shape {self.shape}, model has shape {np.shape(m)}"
            )

    def violation(self, m: np.ndarray) -> float:
        """Largest distance of any component of ``m`` outside the box."""
        below = np.max(self.lower - m, initial=0.0)
        above = np.max(m - self.upper, initial=0.0)
        return float(max(below, above, 0.0))


def _spacing(spacing: Spacing, ndim: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(spacing, dtype=float), (ndim,))


def grad_forward(m: np.ndarray, spacing: Spacing = 1.0) -> np.ndarray:
    """Forward-difference gradient with a zero in the last cell of each axis.

    Parameters
    ----------
    m : numpy.ndarray
        Model on a 1-D or 2-D grid.
    spacing : float or sequence of float
        Cell size per axis.

    Returns
    -------
    numpy.ndarray
        Gradient of shape ``(m.ndim,) + m.shape``.
    """
    m = np.asarray(m, dtype=float)
    h = _spacing(spacing, m.ndim)
    g = np.zeros((m.ndim,) + m.shape)
    for axis in range(m.ndim):
        d = np.diff(m, axis=axis) / h[axis]
        idx = [slice(None)] * m.ndim
        idx[axis] = slice(0, -1)
        g[(axis,) + tuple(idx)] = d
    return g


def grad_adjoint(g: np.ndarray, spacing: Spacing = 1.0) -> np.ndarray:
    """Transpose of :func:`grad_forward` (a negative discrete divergence)."""
    g = np.asarray(g, dtype=float)
    ndim = g.shape[0]
    if g.ndim != ndim + 1:
        raise ValueError(f"gradient field with {ndim} components has shape {g.shape}")
    h = _spacing(spacing, ndim)
    out = np.zeros(g.shape[1:])
    for axis in range(ndim):
        comp = np.moveaxis(g[axis], axis, 0)
        acc = np.moveaxis(out, axis, 0)
        # column j of D^T picks up -g[j] and +g[j-1]; last row of g is unused
        acc[:-1] -= comp[:-1] / h[axis]
        acc[1:] += comp[:-1] / h[axis]
    return out


def phi(m: np.ndarray, mode: str = "anisotropic", spacing: Spacing = 1.0) -> np.ndarray:
    """Gradient map used by the total-variation term.

    ``anisotropic`` returns the stacked per-axis gradients. ``isotropic``
    returns the per-cell gradient magnitude, shaped like the model. In 1-D
    the two agree up to sign.
    """
    g = grad_forward(m, spacing)
    if mode == "anisotropic":
        return g
    if mode == "isotropic":
        return np.sqrt(np.sum(g * g, axis=0))
    raise ValueError(f"unknown TV mode {mode!r}; expected one of {TV_MODES}")


def tv_norm(m: np.ndarray, mode: str = "anisotropic", spacing: Spacing = 1.0) -> float:
    """Total variation ``|| |grad m| ||_1`` in the chosen mode."""
    return float(np.sum(np.abs(phi(m, mode, spacing))))


def shrink(v: np.ndarray, gamma: float, mode: str = "componentwise") -> np.ndarray:
    """Soft thresholding, the proximal map of ``gamma * ||.||_1``.

    Parameters
    ----------
    v : numpy.ndarray
        Gradient field; axis 0 indexes the gradient components.
    gamma : float
        Threshold, must be positive.
    mode : {"componentwise", "grouped"}
        ``componentwise`` thresholds every entry on its own (anisotropic TV).
        ``grouped`` shrinks the per-cell vector along axis 0 by its Euclidean
        length (isotropic TV); zero-length vectors map to zero.
    """
    if not gamma > 0:
        raise ValueError(f"shrinkage threshold must be positive, got {gamma}")
    v = np.asarray(v, dtype=float)
    if mode == "componentwise":
        return np.sign(v) * np.maximum(np.abs(v) - gamma, 0.0)
    if mode == "grouped":
        mag = np.sqrt(np.sum(v * v, axis=0))
        scale = np.zeros_like(mag)
        nz = mag > gamma
        scale[nz] = (mag[nz] - gamma) / mag[nz]
        return v * scale
    raise ValueError(f"unknown shrink mode {mode!r}; expected one of {SHRINK_MODES}")


def shrink_mode_for(tv_mode: str) -> str:
    if tv_mode == "anisotropic":
        return "componentwise"
    if tv_mode == "isotropic":
        return "grouped"
    raise ValueError(f"unknown TV mode {tv_mode!r}; expected one of {TV_MODES}")


def project(m: np.ndarray, bounds: Bounds) -> np.ndarray:
    """Clamp ``m`` into the box, ``max(min(m, upper), lower)``."""
    return np.maximum(np.minimum(m, bounds.upper), bounds.lower)
