"""Quality metrics for inverted models and a first-order optimality residual."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .operators import Bounds, grad_adjoint, grad_forward, project, tv_norm

__all__ = [
    "MetricsReport",
    "data_misfit",
    "objective",
    "evaluate",
    "stationarity_check",
]


def data_misfit(m, F, d) -> float:
    """``0.5 * ||F m - d||^2``."""
    r = F.apply(m) - np.ravel(d)
    return 0.5 * float(r @ r)


def objective(m, F, d, alpha: float, tv_mode: str = "anisotropic", spacing=1.0) -> float:
    """Bound-free part of the problem: ``TV(m) + alpha/2 ||F m - d||^2``."""
    return tv_norm(m, tv_mode, spacing) + alpha * data_misfit(m, F, d)


@dataclass(frozen=True)
class MetricsReport:
    rmse_vs_truth: float
    max_bound_violation: float
    data_misfit: float
    tv_value: float
    objective: float
    stationarity_residual: float

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(f.name for f in fields(cls))

    def to_csv_row(self) -> str:
        return ",".join(f"{v:.17g}" for v in asdict(self).values())


def evaluate(m, truth, F, d, bounds: Bounds, cfg, tol_grad: float = 1e-5) -> MetricsReport:
    """Compare ``m`` with the truth model and score it on the full problem.

    ``cfg`` supplies ``alpha``, ``tv_mode`` and ``spacing``.
    """
    m = np.asarray(m, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if m.shape != truth.shape:
        raise ValueError(f"model shape {m.shape} differs from truth shape {truth.shape}")
    bounds.check(m)
    if F.domain_size != m.size or F.range_size != np.size(d):
        raise ValueError(
            f"operator shape {F.shape} does not match model {m.size} / data {np.size(d)}"
        )
    misfit = data_misfit(m, F, d)
    tv = tv_norm(m, cfg.tv_mode, cfg.spacing)
    return MetricsReport(
        rmse_vs_truth=float(np.linalg.norm(m - truth) / np.sqrt(m.size)),
        max_bound_violation=bounds.violation(m),
        data_misfit=misfit,
        tv_value=tv,
        objective=tv + cfg.alpha * misfit,
        stationarity_residual=stationarity_check(m, F, d, bounds, cfg, tol_grad=tol_grad),
    )


def stationarity_check(
    m,
    F,
    d,
    bounds: Bounds,
    cfg,
    tol_grad: float = 1e-5,
    tv_weight: float = 1.0,
    n_iter: int = 2000,
) -> float:
    """Natural residual ``||m - P(m - g)||_inf`` of the box-constrained problem.

    ``g`` is the smooth gradient ``alpha F^T (F m - d)`` plus a TV
    subgradient ``tv_weight * D^T s``. Where ``|grad m| > tol_grad`` the
    subgradient entries ``s`` are fixed to the gradient direction. The
    remaining entries are free in the unit ball (an interval in the
    anisotropic case, a disk per cell in the isotropic case) and are chosen
    to make the residual small: we minimize the squared distance of ``-g``
    to the normal cone of the box by accelerated projected gradient. A model
    outside the box is projected first.
    """
    m = project(np.asarray(m, dtype=float), bounds)
    h = cfg.spacing
    g0 = cfg.alpha * F.adjoint(F.apply(m) - np.ravel(d)).reshape(m.shape)

    grad = grad_forward(m, h)
    # the last cell along each axis is structurally zero and has no dual entry
    valid = np.zeros(grad.shape, dtype=bool)
    for axis in range(m.ndim):
        idx = [slice(None)] * m.ndim
        idx[axis] = slice(0, -1)
        valid[(axis,) + tuple(idx)] = True

    if cfg.tv_mode == "isotropic":
        mag = np.sqrt(np.sum(grad * grad, axis=0))
        fixed_cell = mag > tol_grad
        s_fixed = np.where(fixed_cell, grad / np.where(fixed_cell, mag, 1.0), 0.0)
        free = ~fixed_cell[None] & valid
    else:
        fixed = np.abs(grad) > tol_grad
        s_fixed = np.where(fixed, np.sign(grad), 0.0)
        free = ~fixed & valid

    span = bounds.upper - bounds.lower
    scale = np.maximum(1.0, np.abs(m))
    at_lower = (m - bounds.lower) <= 1e-12 * scale
    at_upper = (bounds.upper - m) <= 1e-12 * scale
    at_upper &= ~(at_lower & (span > 0))

    def cone_excess(g):
        # component of g not absorbed by the normal cone of the box at m
        e = g.copy()
        e[at_lower] = np.minimum(g[at_lower], 0.0)
        e[at_upper] = np.maximum(g[at_upper], 0.0)
        e[at_lower & at_upper] = 0.0
        return e

    def ball_project(s):
        s = np.where(free, s, 0.0)
        if cfg.tv_mode == "isotropic":
            mag = np.sqrt(np.sum(s * s, axis=0))
            s = s / np.maximum(mag, 1.0)
        else:
            s = np.clip(s, -1.0, 1.0)
        return s

    def total_gradient(s_free):
        return g0 + tv_weight * grad_adjoint(s_fixed + s_free, h)

    s_free = np.zeros(grad.shape)
    if tv_weight != 0 and np.any(free):
        lip = (tv_weight**2) * 4.0 * sum(1.0 / hh**2 for hh in np.broadcast_to(h, (m.ndim,)))
        step = 1.0 / lip
        z = s_free.copy()
        t = 1.0
        for _ in range(n_iter):
            e = cone_excess(total_gradient(z))
            s_next = ball_project(z - step * tv_weight * grad_forward(e, h))
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = s_next + ((t - 1.0) / t_next) * (s_next - s_free)
            s_free, t = s_next, t_next

    g = total_gradient(s_free)
    return float(np.max(np.abs(m - project(m - g, bounds))))
