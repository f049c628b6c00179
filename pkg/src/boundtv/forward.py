"""Linear forward operators and synthetic data for the uplift experiment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .operators import Grid

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "IdentityOperator",
    "UpliftGeometry",
    "UpliftOperator",
    "uplift_kernel",
    "uplift_apply",
    "uplift_adjoint",
    "make_blocky_model",
    "add_noise",
]


class LinearOperator:
    """Minimal linear map interface used by the solvers.

    Subclasses implement :meth:`_apply` and :meth:`_adjoint` on flat
    vectors; the public methods check sizes.
    """

    def __init__(self, domain_size: int, range_size: int):
        self.domain_size = int(domain_size)
        self.range_size = int(range_size)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.range_size, self.domain_size)

    def apply(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if m.size != self.domain_size:
            raise ValueError(
                f"operator expects a model of size {self.domain_size}, got {m.size}"
            )
        return self._apply(m.ravel())

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.size != self.range_size:
            raise ValueError(
                f"operator expects data of size {self.range_size}, got {u.size}"
            )
        return self._adjoint(u.ravel())

    def _apply(self, m):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError

    def __matmul__(self, m):
        return self.apply(m)

    def todense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.domain_size)])


class MatrixOperator(LinearOperator):
    """Operator backed by an explicit dense matrix."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {matrix.shape}")
        super().__init__(matrix.shape[1], matrix.shape[0])
        self.matrix = matrix

    def _apply(self, m):
        return self.matrix @ m

    def _adjoint(self, u):
        return self.matrix.T @ u

    def todense(self):
        return self.matrix.copy()


class IdentityOperator(LinearOperator):
    def __init__(self, n: int):
        super().__init__(n, n)

    def _apply(self, m):
        return m.copy()

    def _adjoint(self, u):
        return u.copy()


@dataclass(frozen=True)
class UpliftGeometry:
    """Line reservoir at constant depth under a collinear surface profile.

    Parameters
    ----------
    depth : float
        Reservoir depth ``D`` in meters.
    aperture : float
        Length ``A`` of both the reservoir segment and the surface profile.
    n_model : int
        Number of model cells on ``[0, A]``.
    n_data : int
        Number of surface observation points on ``[0, A]``.
    """

    depth: float = 100.0
    aperture: float = 2000.0
    n_model: int = 200
    n_data: int = 200

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list:
        errors = []
        if not (np.isfinite(self.depth) and self.depth > 0):
            errors.append(f"depth must be > 0, got {self.depth}")
        if not (np.isfinite(self.aperture) and self.aperture > 0):
            errors.append(f"aperture must be > 0, got {self.aperture}")
        if int(self.n_model) < 2:
            errors.append(f"n_model must be >= 2, got {self.n_model}")
        if int(self.n_data) < 2:
            errors.append(f"n_data must be >= 2, got {self.n_data}")
        return errors

    @property
    def model_grid(self) -> Grid:
        return Grid((self.n_model,), (self.aperture / self.n_model,))

    @property
    def data_grid(self) -> Grid:
        return Grid((self.n_data,), (self.aperture / self.n_data,))

    @property
    def source_positions(self) -> np.ndarray:
        return self.model_grid.centers()

    @property
    def observation_positions(self) -> np.ndarray:
        return self.data_grid.centers()


def uplift_kernel(x: np.ndarray, xi: np.ndarray, depth: float) -> np.ndarray:
    """Uplift at surface points ``x`` per unit source at ``xi`` (no weights)."""
    t = np.subtract.outer(np.asarray(x, float), np.asarray(xi, float))
    return depth**3 / (depth**2 + t * t) ** 1.5


class UpliftOperator(MatrixOperator):
    """Midpoint-rule discretization of the vertical-uplift integral.

    ``u(x_i) = scale * sum_j w * D^3 m_j / (D^2 + (x_i - xi_j)^2)^(3/2)``
    with ``w = A / n_model`` and cell-centered ``x_i``, ``xi_j``. ``scale``
    stands in for the poroelastic proportionality constant.
    """

    def __init__(self, geometry: UpliftGeometry, scale: float = 1.0):
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be > 0, got {scale}")
        self.geometry = geometry
        self.scale = float(scale)
        w = self.scale * geometry.aperture / geometry.n_model
        K = w * uplift_kernel(
            geometry.observation_positions, geometry.source_positions, geometry.depth
        )
        super().__init__(K)


_OPERATOR_CACHE: dict = {}


def _uplift_operator(geom: UpliftGeometry, scale: float) -> UpliftOperator:
    key = (geom, float(scale))
    op = _OPERATOR_CACHE.get(key)
    if op is None:
        op = _OPERATOR_CACHE.setdefault(key, UpliftOperator(geom, scale))
    return op


def uplift_apply(m: np.ndarray, geom: UpliftGeometry, scale: float = 1.0) -> np.ndarray:
    """Surface uplift produced by pressure-change model ``m``."""
    m = np.asarray(m, dtype=float)
    if m.shape != (geom.n_model,):
        raise ValueError(f"model has shape {m.shape}, geometry expects ({geom.n_model},)")
    return _uplift_operator(geom, scale).apply(m)


def uplift_adjoint(u: np.ndarray, geom: UpliftGeometry, scale: float = 1.0) -> np.ndarray:
    """Transpose of :func:`uplift_apply`."""
    u = np.asarray(u, dtype=float)
    if u.shape != (geom.n_data,):
        raise ValueError(f"data has shape {u.shape}, geometry expects ({geom.n_data},)")
    return _uplift_operator(geom, scale).adjoint(u)


def make_blocky_model(
    blocks: Iterable[Sequence[float]], grid: Grid
) -> np.ndarray:
    """Piecewise-constant 1-D model from ``(start, end, value)`` intervals.

    A cell belongs to an interval when its center lies in ``[start, end)``
    (the last cell also accepts ``end == A``). Later intervals overwrite
    earlier ones; cells outside every interval are zero.
    """
    if grid.ndim != 1:
        raise ValueError("blocky models are defined on 1-D grids")
    extent = grid.shape[0] * grid.spacing[0]
    xc = grid.centers()
    m = np.zeros(grid.shape)
    for block in blocks:
        start, end, value = (float(v) for v in block)
        if not (0.0 <= start < end <= extent):
            raise ValueError(
                f"interval [{start}, {end}) is outside the domain [0, {extent}]"
            )
        if not np.isfinite(value):
            raise ValueError(f"interval [{start}, {end}) has non-finite value")
        m[(xc >= start) & (xc < end)] = value
    return m


def add_noise(d: np.ndarray, sigma_frac: float, seed: int) -> np.ndarray:
    """Add i.i.d. Gaussian noise with std ``sigma_frac * max|d|``."""
    if sigma_frac < 0:
        raise ValueError(f"sigma_frac must be >= 0, got {sigma_frac}")
    d = np.asarray(d, dtype=float)
    if sigma_frac == 0:
        return d.copy()
    rng = np.random.default_rng(seed)
    sigma = sigma_frac * np.max(np.abs(d))
    return d + sigma * rng.standard_normal(d.shape)
