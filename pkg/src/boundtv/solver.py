"""ADMM solver for bound-constrained total-variation least squares.

The problem is::

    minimize    || |grad m| ||_1 + alpha/2 ||F m - d||^2
    subject to  lower <= m <= upper

It is split three ways: an auxiliary gradient variable ``x`` (thresholded
by shrinkage), the model ``m`` (a quadratic subproblem solved by a few
conjugate-gradient steps) and its box projection ``y``. ``b`` and ``c`` are
the scaled multipliers of the constraints ``x = grad m`` and ``m = y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .diagnostics import data_misfit, objective
from .forward import LinearOperator
from .operators import (
    TV_MODES,
    Bounds,
    grad_adjoint,
    grad_forward,
    project,
    shrink,
    shrink_mode_for,
    tv_norm,
)

__all__ = [
    "VARIANTS",
    "SolverConfig",
    "SolverState",
    "IterationRecord",
    "SolveResult",
    "SolverDivergence",
    "CGInfo",
    "conjugate_gradient",
    "init_state",
    "solve_m_subproblem",
    "inner_cycle",
    "admm_step",
    "run",
    "tikhonov_solve",
    "match_tikhonov_beta",
    "naive_projected_solve",
    "split_objective",
]

logger = logging.getLogger(__name__)

VARIANTS = ("bound_constrained", "unconstrained_tv", "naive_projection", "tikhonov")
PROJECTIONS = ("shifted", "plain")


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of one solve.

    ``delta=None`` resolves to ``lam``. ``target_accuracy=None`` disables the
    relative-change stopping test so exactly ``n_outer`` iterations run.
    ``spacing`` is the cell size used by the finite-difference gradient.
    """

    alpha: float = 1.0
    lam: float = 2.0
    delta: Optional[float] = None
    n_inner: int = 2
    n_outer: int = 1000
    cg_steps: int = 10
    target_accuracy: Optional[float] = None
    tv_mode: str = "anisotropic"
    variant: str = "bound_constrained"
    tikhonov_beta: float = 1.0
    spacing: float = 1.0
    cg_rtol: float = 1e-12
    divergence_factor: float = 1e6
    projection: str = "shifted"

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", self.lam)
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> List[str]:
        errors = []

        def positive(name):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                errors.append(f"{name} must be > 0, got {v}")

        positive("alpha")
        positive("lam")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            errors.append(f"delta must be >= 0, got {self.delta}")
        if int(self.n_inner) < 1:
            errors.append(f"n_inner must be >= 1, got {self.n_inner}")
        if int(self.n_outer) < 1:
            errors.append(f"n_outer must be >= 1, got {self.n_outer}")
        if int(self.cg_steps) < 1:
            errors.append(f"cg_steps must be >= 1, got {self.cg_steps}")
        if self.target_accuracy is not None and not self.target_accuracy > 0:
            errors.append(f"target_accuracy must be > 0, got {self.target_accuracy}")
        if self.tv_mode not in TV_MODES:
            errors.append(f"tv_mode must be one of {TV_MODES}, got {self.tv_mode!r}")
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        positive("tikhonov_beta")
        positive("spacing")
        if not self.cg_rtol >= 0:
            errors.append(f"cg_rtol must be >= 0, got {self.cg_rtol}")
        positive("divergence_factor")
        if self.projection not in PROJECTIONS:
            errors.append(
                f"projection must be one of {PROJECTIONS}, got {self.projection!r}"
            )
        return errors

    @property
    def couples_bounds(self) -> bool:
        return self.variant == "bound_constrained" and self.delta > 0


@dataclass(frozen=True)
class IterationRecord:
    k: int
    rel_model_change: float
    split_residual: float
    proj_residual: float
    data_misfit: float
    tv_value: float
    objective: float
    cg_breakdown: bool = False

    CSV_COLUMNS = (
        "k",
        "rel_model_change",
        "split_residual",
        "proj_residual",
        "data_misfit",
        "tv_value",
        "objective",
    )


@dataclass
class SolverState:
    m: np.ndarray
    x: np.ndarray
    y: np.ndarray
    b: np.ndarray
    c: np.ndarray
    k: int = 0
    history: List[IterationRecord] = field(default_factory=list)
    cg_breakdown: bool = False


@dataclass
class SolveResult:
    m: np.ndarray
    y: np.ndarray
    iterations: int
    stop_reason: str
    history: List[IterationRecord]
    state: Optional[SolverState] = None
    snapshots: list = field(default_factory=list)


class SolverDivergence(RuntimeError):
    """Raised when the iteration produces non-finite or exploding values.

    ``result`` holds the iterates and diagnostics collected so far.
    """

    def __init__(self, message: str, result: SolveResult):
        super().__init__(message)
        self.result = result


class CGInfo(NamedTuple):
    iterations: int
    residual_norm: float
    breakdown: bool


def conjugate_gradient(
    apply_A: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: np.ndarray,
    maxiter: int,
    rtol: float = 0.0,
):
    """Conjugate gradients for a symmetric positive (semi)definite system.

    Runs at most ``maxiter`` iterations from ``x0`` and stops early once
    ``||r|| <= rtol * ||rhs||``. A direction with non-positive curvature ends
    the iteration with ``breakdown=True`` and the current iterate.

    Returns
    -------
    x : numpy.ndarray
    info : CGInfo
    """
    x = np.array(x0, dtype=float, copy=True)
    r = rhs - apply_A(x)
    rr = float(np.vdot(r, r))
    tol2 = (rtol * float(np.linalg.norm(rhs))) ** 2
    p = r.copy()
    it = 0
    breakdown = False
    while it < maxiter and rr > tol2 and rr > 0.0:
        Ap = apply_A(p)
        pAp = float(np.vdot(p, Ap))
        if not pAp > 0.0:
            breakdown = True
            break
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    return x, CGInfo(it, float(np.sqrt(rr)), breakdown)


def _check_problem(F: LinearOperator, d, m0, bounds: Optional[Bounds] = None):
    m0 = np.asarray(m0, dtype=float)
    if F.domain_size != m0.size:
        raise ValueError(f"operator domain size {F.domain_size} != model size {m0.size}")
    if F.range_size != np.size(d):
        raise ValueError(f"operator range size {F.range_size} != data size {np.size(d)}")
    if bounds is not None:
        bounds.check(m0)
    if not np.all(np.isfinite(m0)):
        raise ValueError("starting model contains non-finite values")
    if not np.all(np.isfinite(d)):
        raise ValueError("data contain non-finite values")


def init_state(m0: np.ndarray, bounds: Bounds) -> SolverState:
    """Starting iterate: ``x = b = c = 0`` and ``y`` the projection of ``m0``."""
    m0 = np.array(m0, dtype=float)
    bounds.check(m0)
    zeros_grad = np.zeros((m0.ndim,) + m0.shape)
    return SolverState(
        m=m0,
        x=zeros_grad,
        y=project(m0, bounds),
        b=zeros_grad.copy(),
        c=np.zeros_like(m0),
    )


def _normal_operator(cfg: SolverConfig, F: LinearOperator, shape, delta: float):
    h = cfg.spacing

    def apply_A(v):
        out = cfg.lam * grad_adjoint(grad_forward(v, h), h)
        out += cfg.alpha * F.adjoint(F.apply(v)).reshape(shape)
        if delta:
            out += delta * v
        return out

    return apply_A


def _effective_delta(cfg: SolverConfig) -> float:
    return cfg.delta if cfg.couples_bounds else 0.0


def solve_m_subproblem(state: SolverState, cfg: SolverConfig, F: LinearOperator, d):
    """Approximate model update with the other split variables held fixed.

    Minimizes ``lam/2 ||x - grad m - b||^2 + alpha/2 ||F m - d||^2 +
    delta/2 ||m - y - c||^2`` with at most ``cfg.cg_steps`` CG iterations on
    its normal equations, warm-started at ``state.m``.

    Returns
    -------
    m : numpy.ndarray
    info : CGInfo
    """
    shape = state.m.shape
    delta = _effective_delta(cfg)
    h = cfg.spacing
    rhs = cfg.lam * grad_adjoint(state.x - state.b, h)
    rhs += cfg.alpha * F.adjoint(d).reshape(shape)
    if delta:
        rhs += delta * (state.y + state.c)
    apply_A = _normal_operator(cfg, F, shape, delta)
    m, info = conjugate_gradient(apply_A, rhs, state.m, cfg.cg_steps, cfg.cg_rtol)
    if info.breakdown:
        logger.warning("CG breakdown after %d iterations at outer step %d", info.iterations, state.k)
    return m, info


def inner_cycle(state: SolverState, cfg: SolverConfig, F: LinearOperator, d) -> SolverState:
    """``n_inner`` rounds of model update followed by gradient shrinkage."""
    mode = shrink_mode_for(cfg.tv_mode)
    m, x = state.m, state.x
    breakdown = False
    for _ in range(cfg.n_inner):
        m, info = solve_m_subproblem(replace(state, m=m, x=x), cfg, F, d)
        breakdown |= info.breakdown
        x = shrink(grad_forward(m, cfg.spacing) + state.b, 1.0 / cfg.lam, mode)
    return replace(state, m=m, x=x, cg_breakdown=breakdown)


def split_objective(state: SolverState, cfg: SolverConfig, F: LinearOperator, d) -> float:
    """Inner-loop objective with ``b``, ``c`` and ``y`` frozen."""
    delta = _effective_delta(cfg)
    r_split = state.x - grad_forward(state.m, cfg.spacing) - state.b
    r_proj = state.m - state.y - state.c
    return (
        float(np.sum(np.abs(state.x)))
        if cfg.tv_mode == "anisotropic"
        else float(np.sum(np.sqrt(np.sum(state.x**2, axis=0))))
    ) + cfg.alpha * data_misfit(state.m, F, d) + 0.5 * cfg.lam * float(
        np.sum(r_split**2)
    ) + 0.5 * delta * float(np.sum(r_proj**2))


def _record(state: SolverState, m_prev, cfg: SolverConfig, F, d) -> IterationRecord:
    m = state.m
    misfit = data_misfit(m, F, d)
    tv = tv_norm(m, cfg.tv_mode, cfg.spacing)
    denom = max(float(np.linalg.norm(m_prev)), np.finfo(float).eps)
    return IterationRecord(
        k=state.k,
        rel_model_change=float(np.linalg.norm(m - m_prev)) / denom,
        split_residual=float(np.linalg.norm(grad_forward(m, cfg.spacing) - state.x)),
        proj_residual=float(np.linalg.norm(m - state.y)),
        data_misfit=misfit,
        tv_value=tv,
        objective=tv + cfg.alpha * misfit,
        cg_breakdown=state.cg_breakdown,
    )


def admm_step(
    state: SolverState, cfg: SolverConfig, F: LinearOperator, d, bounds: Bounds
) -> SolverState:
    """One outer iteration: inner cycle, multiplier updates, projection."""
    new = inner_cycle(state, cfg, F, d)
    m = new.m
    b = state.b + grad_forward(m, cfg.spacing) - new.x
    if cfg.couples_bounds:
        # c uses the previous projection; y is refreshed afterwards
        c = state.c + state.y - m
        y = project(m - c, bounds) if cfg.projection == "shifted" else project(m, bounds)
    else:
        c = state.c
        y = project(m, bounds)
    new = replace(new, b=b, c=c, y=y, k=state.k + 1, history=list(state.history))
    new.history.append(_record(new, state.m, cfg, F, d))
    return new


def _stopped(record: IterationRecord, cfg: SolverConfig) -> bool:
    return cfg.target_accuracy is not None and record.rel_model_change <= cfg.target_accuracy


def _iterate(step, state, cfg, F, d, snapshot_stride):
    """Drive ``step`` until the stopping test or the iteration cap."""
    f0 = objective(state.m, F, d, cfg.alpha, cfg.tv_mode, cfg.spacing)
    limit = cfg.divergence_factor * max(f0, np.finfo(float).tiny)
    snapshots = [(0, state.m.copy())] if snapshot_stride else []
    stop_reason = "iteration_cap"
    for _ in range(cfg.n_outer):
        state = step(state)
        rec = state.history[-1]
        if snapshot_stride and state.k % snapshot_stride == 0:
            snapshots.append((state.k, state.m.copy()))
        finite = all(
            np.all(np.isfinite(a)) for a in (state.m, state.x, state.b, state.c)
        ) and np.isfinite(rec.objective)
        if not finite or rec.objective > limit:
            reason = "non-finite iterate" if not finite else "objective blow-up"
            result = SolveResult(
                state.m, state.y, state.k, "diverged", state.history, state, snapshots
            )
            raise SolverDivergence(
                f"{reason} at outer iteration {state.k} "
                f"(objective {rec.objective:.6g}, initial {f0:.6g})",
                result,
            )
        if _stopped(rec, cfg):
            stop_reason = "target_reached"
            break
    if snapshot_stride and (not snapshots or snapshots[-1][0] != state.k):
        snapshots.append((state.k, state.m.copy()))
    return SolveResult(
        state.m, state.y, state.k, stop_reason, state.history, state, snapshots
    )


def run(
    cfg: SolverConfig,
    F: LinearOperator,
    d,
    bounds: Bounds,
    m0=None,
    snapshot_stride: int = 0,
) -> SolveResult:
    """Solve with the variant selected in ``cfg``.

    Parameters
    ----------
    cfg : SolverConfig
    F : LinearOperator
        Forward operator on flattened models.
    d : numpy.ndarray
        Observed data.
    bounds : Bounds
        Box constraints; their shape fixes the model shape.
    m0 : numpy.ndarray, optional
        Starting model, zero by default.
    snapshot_stride : int, optional
        Keep a copy of ``m`` every ``snapshot_stride`` outer iterations
        (plus the start and the final iterate). ``0`` keeps none.

    Raises
    ------
    SolverDivergence
        If an iterate turns non-finite or the objective grows by more than
        ``cfg.divergence_factor`` over its starting value.
    """
    if m0 is None:
        m0 = np.zeros(bounds.shape)
    d = np.asarray(d, dtype=float)
    _check_problem(F, d, m0, bounds)

    if cfg.variant == "naive_projection":
        return naive_projected_solve(cfg, F, d, bounds, m0, snapshot_stride=snapshot_stride)
    if cfg.variant == "tikhonov":
        m = tikhonov_solve(
            F, d, cfg.tikhonov_beta, cfg.cg_steps, spacing=cfg.spacing,
            m0=m0, rtol=cfg.cg_rtol,
        )
        rec = IterationRecord(
            k=1,
            rel_model_change=float(np.linalg.norm(m - m0))
            / max(float(np.linalg.norm(m0)), np.finfo(float).eps),
            split_residual=0.0,
            proj_residual=float(np.linalg.norm(m - project(m, bounds))),
            data_misfit=data_misfit(m, F, d),
            tv_value=tv_norm(m, cfg.tv_mode, cfg.spacing),
            objective=tv_norm(m, cfg.tv_mode, cfg.spacing) + cfg.alpha * data_misfit(m, F, d),
        )
        snaps = [(0, np.array(m0, dtype=float)), (1, m)] if snapshot_stride else []
        return SolveResult(m, project(m, bounds), 1, "iteration_cap", [rec], None, snaps)
    if cfg.variant == "unconstrained_tv":
        cfg = replace(cfg, delta=0.0)

    state = init_state(m0, bounds)
    return _iterate(
        lambda s: admm_step(s, cfg, F, d, bounds), state, cfg, F, d, snapshot_stride
    )


def naive_projected_solve(
    cfg: SolverConfig,
    F: LinearOperator,
    d,
    bounds: Bounds,
    m0=None,
    once: bool = False,
    snapshot_stride: int = 0,
) -> SolveResult:
    """Unconstrained TV iteration with the bounds imposed by clamping.

    With ``once=False`` the model is clamped at the end of every outer
    iteration; with ``once=True`` the unconstrained solve runs to the end
    and only its result is clamped. No projection variable or multiplier
    enters the objective, so the result generally misses the first-order
    optimality conditions on the active set. Kept as a negative baseline.
    """
    if m0 is None:
        m0 = np.zeros(bounds.shape)
    d = np.asarray(d, dtype=float)
    _check_problem(F, d, m0, bounds)
    ucfg = replace(cfg, variant="unconstrained_tv", delta=0.0)
    if once:
        res = run(ucfg, F, d, bounds, m0, snapshot_stride=snapshot_stride)
        m = project(res.m, bounds)
        res.state.m = m
        res.state.y = m
        return replace(res, m=m, y=m)

    def step(state):
        new = admm_step(state, ucfg, F, d, bounds)
        m = project(new.m, bounds)
        new.m, new.y = m, m
        new.history[-1] = _record(new, state.m, ucfg, F, d)
        return new

    state = init_state(project(np.asarray(m0, float), bounds), bounds)
    return _iterate(step, state, ucfg, F, d, snapshot_stride)


def tikhonov_solve(
    F: LinearOperator,
    d,
    beta: float,
    cg_steps: int,
    spacing: float = 1.0,
    m0=None,
    rtol: float = 1e-12,
    shape=None,
) -> np.ndarray:
    """Minimize ``1/2 ||F m - d||^2 + beta/2 ||grad m||^2`` by CG.

    The model shape defaults to ``m0.shape``, else ``(F.domain_size,)``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if shape is None:
        shape = np.shape(m0) if m0 is not None else (F.domain_size,)
    x0 = np.zeros(shape) if m0 is None else np.asarray(m0, dtype=float)
    d = np.asarray(d, dtype=float)

    def apply_A(v):
        return F.adjoint(F.apply(v)).reshape(shape) + beta * grad_adjoint(
            grad_forward(v, spacing), spacing
        )

    rhs = F.adjoint(d).reshape(shape)
    m, info = conjugate_gradient(apply_A, rhs, x0, cg_steps, rtol)
    if info.breakdown:
        logger.warning("CG breakdown in Tikhonov solve after %d iterations", info.iterations)
    return m


def match_tikhonov_beta(
    F: LinearOperator,
    d,
    target_misfit: float,
    cg_steps: int,
    spacing: float = 1.0,
    shape=None,
    beta_range=(1e-8, 1e8),
    n_bisect: int = 60,
) -> float:
    """Tikhonov weight whose solution has data misfit ``target_misfit``.

    The misfit ``1/2 ||F m_beta - d||^2`` grows with ``beta``, so a
    bisection in ``log(beta)`` suffices. The result is clipped to
    ``beta_range`` when the target is out of reach.
    """
    lo, hi = np.log(beta_range[0]), np.log(beta_range[1])

    def misfit(logb):
        m = tikhonov_solve(F, d, float(np.exp(logb)), cg_steps, spacing, shape=shape)
        return data_misfit(m, F, d)

    if misfit(lo) >= target_misfit:
        return float(np.exp(lo))
    if misfit(hi) <= target_misfit:
        return float(np.exp(hi))
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if misfit(mid) < target_misfit:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))
