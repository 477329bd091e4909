"""Stochastic shape-gradient loop.

Each iteration draws one scenario, solves state and adjoint, assembles the
restricted derivative, turns it into a deformation field through the
elasticity metric and moves the mesh nodes by ``x <- x - t V``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import fem
from .deformation import DeformationSolver, LameField
from .fem import SolverOptions
from .mesh import TriMesh, deform_mesh, triangle_quality, validate_mesh
from .shape_calculus import (
    ShapeDerivativeLoad,
    TargetMeasurement,
    assemble_shape_derivative,
    objective_value,
    solve_adjoint,
    solve_state,
    state_stiffness,
    transfer_target,
)
from .stochastics import Scenario, ScenarioDistribution, stream

logger = logging.getLogger(__name__)

GUARD_HALVINGS = 30


# step rules --------------------------------------------------------------


def _check_armijo(rho: float, c: float, max_backtracks: int) -> None:
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not 0 < c < 1:
        raise ValueError(f"c must lie in (0, 1), got {c}")
    if max_backtracks < 0:
        raise ValueError("max_backtracks must be non-negative")


@dataclass(frozen=True)
class RobbinsMonro:
    alpha: float
    exponent: float = 0.85

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.5 < self.exponent <= 1:
            raise ValueError(f"exponent must lie in (0.5, 1], got {self.exponent}")


@dataclass(frozen=True)
class Armijo:
    alpha: float
    rho: float = 0.5
    c: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        _check_armijo(self.rho, self.c, self.max_backtracks)


@dataclass(frozen=True)
class DampedArmijo:
    alpha: float
    rho: float = 0.5
    c: float = 1e-4
    damping: float = 0.9
    period: int = 20
    alpha_min: float = 0.0
    max_backtracks: int = 30

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.period < 1:
            raise ValueError("period must be at least 1")
        _check_armijo(self.rho, self.c, self.max_backtracks)


StepRule = RobbinsMonro | Armijo | DampedArmijo


def propose_step(rule: StepRule, n: int) -> float:
    """Base step of iteration ``n`` (counted from 1)."""
    if n < 1:
        raise ValueError(f"iterations are counted from 1, got {n}")
    if isinstance(rule, RobbinsMonro):
        return rule.alpha * n ** (-rule.exponent)
    if isinstance(rule, DampedArmijo):
        return max(rule.alpha * rule.damping ** (n // rule.period), rule.alpha_min)
    return rule.alpha


# per-mesh evaluation -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeshContext:
    """Scenario-independent data of one mesh: transferred measurement and metric."""

    mesh: TriMesh
    ybar: np.ndarray
    ybar_grad: np.ndarray
    deformation: DeformationSolver | None = None
    # set once PCG has failed on this mesh; later solves go straight to sparse LU
    _prefer_direct: list = field(default_factory=lambda: [False], repr=False)

    @classmethod
    def build(cls, mesh, target: TargetMeasurement, mu_bounds=None, options: SolverOptions = SolverOptions(), parent=None):
        """``parent``: context of the mesh this one was moved from; its solver preference carries over."""
        prefer = [bool(parent is not None and parent._prefer_direct[0])]
        if prefer[0]:
            options = replace(options, backend="direct")
        ybar, grad = transfer_target(target, mesh, with_gradient=True)
        deformation = None
        if mu_bounds is not None:
            deformation = DeformationSolver.for_mesh(mesh, *mu_bounds, options=options)
        return cls(mesh, ybar, grad, deformation, prefer)

    @property
    def lame(self) -> LameField:
        return self.deformation.lame

    def solver_options(self, options: SolverOptions) -> SolverOptions:
        return replace(options, backend="direct") if self._prefer_direct[0] else options

    def remember(self, *solvers) -> None:
        if any(s.uses_lu for s in solvers if s is not None):
            self._prefer_direct[0] = True

    def objective(self, scenario: Scenario, options: SolverOptions = SolverOptions()) -> float:
        solver = fem.NeumannSolver(state_stiffness(self.mesh, scenario), self.solver_options(options))
        y = solve_state(self.mesh, scenario, options, solver)
        self.remember(solver)
        return objective_value(self.mesh, y, self.ybar)


@dataclass(eq=False)
class GradientSample:
    scenario: Scenario
    y: np.ndarray
    p: np.ndarray
    J: float
    load: ShapeDerivativeLoad
    V: np.ndarray
    grad_norm_sq: float
    V_l2: float


def evaluate_gradient(ctx: MeshContext, scenario: Scenario, options: SolverOptions = SolverOptions()) -> GradientSample:
    """State, adjoint, restricted derivative and deformation for one scenario."""
    mesh = ctx.mesh
    options = ctx.solver_options(options)
    solver = fem.NeumannSolver(state_stiffness(mesh, scenario), options)
    y = solve_state(mesh, scenario, options, solver)
    p = solve_adjoint(mesh, scenario, y, ctx.ybar, options, solver)
    J = objective_value(mesh, y, ctx.ybar)
    load = assemble_shape_derivative(mesh, scenario, y, p, ctx.ybar, ybar_grad=ctx.ybar_grad)
    V = ctx.deformation.solve(load)
    ctx.remember(solver, ctx.deformation)
    gns = load.apply(V)
    return GradientSample(scenario, y, p, J, load, V, gns, fem.l2_norm(mesh, V))


def estimate_expectation(
    ctx: MeshContext,
    dist: ScenarioDistribution,
    m: int,
    seed: int,
    n: int,
    options: SolverOptions = SolverOptions(),
) -> tuple[float, float]:
    """Sample means of ``J`` and ``||V||_L2`` over ``m`` scenarios from the ``("estimate", n, l)`` streams."""
    if m < 1:
        raise ValueError("sample count must be at least 1")
    J = np.empty(m)
    v = np.empty(m)
    for l in range(m):
        scenario = dist.sample(stream(seed, "estimate", n, l))
        g = evaluate_gradient(ctx, scenario, options)
        J[l], v[l] = g.J, g.V_l2
    return float(J.mean()), float(v.mean())


@dataclass
class LineSearchResult:
    t: float
    backtracks: int
    trial_J: list[float]
    mesh: TriMesh | None  # accepted trial mesh
    accepted: bool


def armijo_backtrack(
    ctx: MeshContext,
    target: TargetMeasurement,
    scenario: Scenario,
    V: np.ndarray,
    alpha: float,
    rho: float,
    c: float,
    grad_norm_sq: float,
    J0: float,
    max_backtracks: int = 30,
    options: SolverOptions = SolverOptions(),
) -> LineSearchResult:
    """Largest ``t = alpha rho^k`` giving a valid mesh and sufficient decrease of ``J`` for the same scenario."""
    trial_J: list[float] = []
    t = alpha
    for k in range(max_backtracks + 1):
        trial = deform_mesh(ctx.mesh, V, t)
        if not validate_mesh(trial):
            J = MeshContext.build(trial, target, parent=ctx).objective(scenario, options)
            trial_J.append(J)
            if J <= J0 - t * c * grad_norm_sq:
                return LineSearchResult(t, k, trial_J, trial, True)
        else:
            trial_J.append(math.nan)
        t *= rho
    return LineSearchResult(0.0, max_backtracks + 1, trial_J, None, False)


# run ---------------------------------------------------------------------


@dataclass
class RunConfig:
    mesh: TriMesh
    target: TargetMeasurement
    distribution: ScenarioDistribution
    rule: StepRule
    iterations: int
    seed: int = 0
    estimate_m: int = 0  # 0 disables estimation
    estimate_every: int = 0  # 0: only at the start and the end
    mu_min: float = 10.0
    mu_max: float = 25.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    guard: bool = True
    grad_tol: float | None = None  # optional stop on a small gradient norm

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration count must be at least 1")
        if self.estimate_m < 0 or self.estimate_every < 0:
            raise ValueError("estimate settings must be non-negative")
        if not 0 < self.mu_min <= self.mu_max:
            raise ValueError(f"need 0 < mu_min <= mu_max, got {self.mu_min}, {self.mu_max}")


@dataclass
class IterationRecord:
    n: int
    step: float
    J_sample: float
    grad_norm_sq: float
    V_l2: float
    backtracks: int
    min_quality: float
    accepted: bool
    j_hat: float | None = None
    v_hat: float | None = None
    J_trial: float | None = None  # objective on the accepted mesh, same scenario (line-search rules)

    CSV_FIELDS = ("iter", "step", "J_sample", "grad_norm_sq", "V_l2", "backtracks", "min_quality", "accepted", "j_hat", "v_hat")

    def csv_row(self) -> list[str]:
        def num(v):
            return "" if v is None else repr(float(v))

        return [
            str(self.n),
            num(self.step),
            num(self.J_sample),
            num(self.grad_norm_sq),
            num(self.V_l2),
            str(self.backtracks),
            num(self.min_quality),
            "1" if self.accepted else "0",
            num(self.j_hat),
            num(self.v_hat),
        ]


@dataclass(eq=False)
class IterationState:
    """Fields of one iteration, handed to observers (e.g. snapshot writers)."""

    n: int
    mesh: TriMesh  # mesh the iteration started from
    sample: GradientSample
    lame: LameField
    new_mesh: TriMesh


@dataclass(eq=False)
class RunResult:
    mesh: TriMesh
    history: list[IterationRecord]
    status: str  # completed | converged | mesh_destroyed | guard_exhausted
    initial_estimate: tuple[float, float] | None = None
    final_estimate: tuple[float, float] | None = None
    message: str = ""


def _guarded_step(mesh: TriMesh, V: np.ndarray, t: float):
    """Halve ``t`` until the moved mesh is valid; returns (t, halvings, mesh or None)."""
    for k in range(GUARD_HALVINGS + 1):
        trial = deform_mesh(mesh, V, t)
        if not validate_mesh(trial):
            return t, k, trial
        t *= 0.5
    return 0.0, GUARD_HALVINGS + 1, None


def run_optimization(config: RunConfig, observer: Callable[[IterationRecord, IterationState], None] | None = None) -> RunResult:
    """Run the configured number of iterations; deterministic given the master seed."""
    cfg = config
    opts = cfg.solver
    mu = (cfg.mu_min, cfg.mu_max)
    problems = validate_mesh(cfg.mesh)
    if problems:
        raise ValueError("initial mesh is invalid: " + "; ".join(problems[:3]))
    ctx = MeshContext.build(cfg.mesh, cfg.target, mu, opts)
    history: list[IterationRecord] = []
    estimating = cfg.estimate_m > 0
    initial = estimate_expectation(ctx, cfg.distribution, cfg.estimate_m, cfg.seed, 0, opts) if estimating else None
    if initial:
        logger.info("initial estimate j=%.6g v=%.6g", *initial)
    status, message = "completed", ""

    for n in range(1, cfg.iterations + 1):
        scenario = cfg.distribution.sample(stream(cfg.seed, "step", n))
        g = evaluate_gradient(ctx, scenario, opts)
        base = propose_step(cfg.rule, n)
        J_trial = None
        if isinstance(cfg.rule, RobbinsMonro):
            if cfg.guard:
                t, backtracks, new_mesh = _guarded_step(ctx.mesh, g.V, base)
                if backtracks:
                    logger.info("iteration %d: guard halved the step %d times", n, backtracks)
                accepted = new_mesh is not None
                if not accepted:
                    status, message = "guard_exhausted", f"no valid step after {GUARD_HALVINGS} halvings"
            else:
                t, backtracks = base, 0
                new_mesh = deform_mesh(ctx.mesh, g.V, t)
                problems = validate_mesh(new_mesh)
                accepted = not problems
                if problems:
                    status, message = "mesh_destroyed", problems[0]
        else:
            ls = armijo_backtrack(
                ctx, cfg.target, scenario, g.V, base, cfg.rule.rho, cfg.rule.c, g.grad_norm_sq, g.J,
                cfg.rule.max_backtracks, opts,
            )
            t, backtracks, new_mesh, accepted = ls.t, ls.backtracks, ls.mesh, ls.accepted
            if accepted:
                J_trial = ls.trial_J[-1]
            else:
                logger.info("iteration %d: line search failed after %d backtracks", n, backtracks)

        old_ctx = ctx
        if accepted:
            ctx = MeshContext.build(new_mesh, cfg.target, mu, opts, parent=ctx)
        elif status == "mesh_destroyed":
            ctx = MeshContext(new_mesh, ctx.ybar, ctx.ybar_grad)
        record = IterationRecord(
            n, t, g.J, g.grad_norm_sq, g.V_l2, backtracks, triangle_quality(ctx.mesh).min_quality, accepted, J_trial=J_trial
        )
        if estimating and cfg.estimate_every and n % cfg.estimate_every == 0 and status == "completed":
            record.j_hat, record.v_hat = estimate_expectation(ctx, cfg.distribution, cfg.estimate_m, cfg.seed, n, opts)
        history.append(record)
        logger.debug("iteration %d: t=%.4g J=%.6g |V|=%.4g accepted=%s", n, t, g.J, g.V_l2, accepted)
        if observer is not None:
            observer(record, IterationState(n, old_ctx.mesh, g, old_ctx.lame, ctx.mesh))
        if status != "completed":
            logger.warning("iteration %d: run stopped (%s): %s", n, status, message)
            break
        if cfg.grad_tol is not None and g.grad_norm_sq <= cfg.grad_tol:
            status, message = "converged", f"gradient norm squared {g.grad_norm_sq:.3e} below {cfg.grad_tol:.3e}"
            break

    final = None
    if estimating and status in ("completed", "converged"):
        last = history[-1]
        if last.j_hat is not None:
            final = (last.j_hat, last.v_hat)
        else:
            final = estimate_expectation(ctx, cfg.distribution, cfg.estimate_m, cfg.seed, last.n, opts)
    return RunResult(ctx.mesh, history, status, initial, final, message)
