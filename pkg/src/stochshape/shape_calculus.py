"""State and adjoint solves, the tracking objective and its shape derivative.

Conventions (fixed by finite-difference checks in the test suite):

* the adjoint solves ``a(p, v) = int (ybar - y) v`` on zero-mean functions;
* the derivative load holds ``dJ[phi_a e_k]`` for every vertex ``a`` and
  direction ``k``; moving nodes by ``x + eps U`` changes ``J`` by
  ``eps * load . U`` to first order.

The measured field is re-interpolated at the nodes after every move, so its
contribution uses the measured gradient at the nodes rather than the gradient
of its interpolant.

The pure-Neumann state problem with ``f = 0`` and ``g != 0`` is incompatible;
the mean-constraint multiplier ``lam`` acts as an extra constant source
``-lam`` and contributes ``lam * int p div U`` to the derivative.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fem
from .fem import SolverOptions
from .mesh import TriMesh, locate_points, read_mesh, write_mesh
from .stochastics import Scenario

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True, eq=False)
class TargetMeasurement:
    mesh: TriMesh
    values: np.ndarray
    scenario: Scenario


@dataclass(frozen=True, eq=False)
class PdeSolution:
    mesh: TriMesh
    scenario: Scenario
    y: np.ndarray
    p: np.ndarray


@dataclass(eq=False)
class ShapeDerivativeLoad:
    values: np.ndarray  # (n, 2)
    active: np.ndarray  # (n,) bool

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def apply(self, U: np.ndarray) -> float:
        """``dJ[U]`` for a nodal vector field ``U``."""
        return float(np.einsum("ik,ik->", self.values, np.asarray(U, dtype=float).reshape(self.values.shape)))


def state_stiffness(mesh: TriMesh, scenario: Scenario) -> fem.SparseSystem:
    kappa = scenario.kappa_per_label(mesh.n_regions)
    return fem.assemble_stiffness(mesh, fem.region_coefficients(mesh, kappa))


def source_multiplier(mesh: TriMesh, scenario: Scenario) -> float:
    """Mean-constraint multiplier of the state equation, ``(int f + int g ds) / |D|``."""
    load = fem.assemble_load(mesh, scenario.f, scenario.g)
    return float(load.sum() / fem.nodal_weights(mesh).sum())


def _neumann(mesh, scenario, options, solver):
    if solver is None:
        solver = fem.NeumannSolver(state_stiffness(mesh, scenario), options)
    return solver


def solve_state(mesh: TriMesh, scenario: Scenario, options: SolverOptions = SolverOptions(), solver=None) -> np.ndarray:
    """State with zero mean; ``solver`` is an optional prepared :class:`~stochshape.fem.NeumannSolver`."""
    y, _ = _neumann(mesh, scenario, options, solver).solve(fem.assemble_load(mesh, scenario.f, scenario.g))
    return y


def solve_adjoint(
    mesh: TriMesh,
    scenario: Scenario,
    y: np.ndarray,
    ybar: np.ndarray,
    options: SolverOptions = SolverOptions(),
    solver=None,
) -> np.ndarray:
    rhs = fem.mass_matrix(mesh) @ (np.asarray(ybar, dtype=float) - y)
    p, _ = _neumann(mesh, scenario, options, solver).solve(rhs)
    return p


def objective_value(mesh: TriMesh, y: np.ndarray, ybar: np.ndarray) -> float:
    e = np.asarray(y, dtype=float) - ybar
    return 0.5 * float(e @ (fem.mass_matrix(mesh) @ e))


def generate_target(target_mesh: TriMesh, scenario: Scenario, options: SolverOptions = SolverOptions()) -> TargetMeasurement:
    return TargetMeasurement(target_mesh, solve_state(target_mesh, scenario, options), scenario)


def transfer_target(target: TargetMeasurement, mesh: TriMesh, with_gradient: bool = False):
    """Interpolate ``ybar`` at the nodes of ``mesh`` and shift it to zero mean there.

    With ``with_gradient`` also returns the gradient of the measured field at
    each node, shape ``(n, 2)``: this is how the transferred values move when
    the nodes move.  On the measurement mesh itself the gradient is the
    area-weighted average over the incident triangles.
    """
    x = mesh.vertices
    if x.min() < -1e-9 or x.max() > 1.0 + 1e-9:
        raise ValueError("mesh nodes leave the unit square")
    tm = target.mesh
    tgrad = fem.field_gradients(tm, target.values) if with_gradient else None
    if mesh is tm:
        vals = np.array(target.values, dtype=float)
        if with_gradient:
            area = fem.triangle_areas(tm)
            grad = np.zeros((tm.n_vertices, 2))
            np.add.at(grad, tm.triangles.ravel(), np.repeat(area[:, None] * tgrad, 3, axis=0))
            grad /= (3.0 * fem.nodal_weights(tm))[:, None]
    else:
        tri, bary, _ = locate_points(tm, x)
        vals = np.einsum("ij,ij->i", bary, target.values[tm.triangles[tri]])
        if with_gradient:
            grad = tgrad[tri]
    w = fem.nodal_weights(mesh)
    vals = vals - (w @ vals) / w.sum()
    return (vals, grad) if with_gradient else vals


def active_vertices(mesh: TriMesh) -> np.ndarray:
    """Vertices whose hat function support touches an interface vertex."""
    touch = mesh.interface_vertices[mesh.triangles].any(axis=1)
    active = np.zeros(mesh.n_vertices, dtype=bool)
    active[mesh.triangles[touch].ravel()] = True
    active &= ~mesh.boundary_vertices
    return active


def assemble_shape_derivative(
    mesh: TriMesh,
    scenario: Scenario,
    y: np.ndarray,
    p: np.ndarray,
    ybar: np.ndarray,
    restrict: bool = True,
    ybar_grad: np.ndarray | None = None,
) -> ShapeDerivativeLoad:
    """Volume-form shape derivative tested with every nodal hat vector field.

    ``ybar_grad`` holds the gradient of the measured field at the nodes (see
    :func:`transfer_target`); the derivative is then exact for the discrete
    objective with the measurement re-interpolated after every move.  Without
    it the piecewise-constant gradient of ``ybar`` on ``mesh`` is used.
    """
    tri = mesh.triangles
    area, G = fem._geometry(mesh)
    kappa = fem.region_coefficients(mesh, scenario.kappa_per_label(mesh.n_regions))
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    ybar = np.asarray(ybar, dtype=float)
    e = y - ybar
    yT, pT, eT = y[tri], p[tri], e[tri]

    gy = np.einsum("tik,ti->tk", G, yT)
    gp = np.einsum("tik,ti->tk", G, pT)
    gyb = np.einsum("tik,ti->tk", G, ybar[tri]) if ybar_grad is None else None
    Me = area[:, None] * (eT @ _MASS_REF)  # int e phi_a
    Mp = area[:, None] * (pT @ _MASS_REF)  # int p phi_a

    f = np.asarray(scenario.f, dtype=float)
    lam = source_multiplier(mesh, scenario)
    w = fem.nodal_weights(mesh)
    eta = float(w @ (ybar - y)) / w.sum()  # adjoint multiplier, zero when ybar is mean-matched
    int_p = area * pT.sum(axis=1) / 3.0
    int_y = area * yT.sum(axis=1) / 3.0
    if f.ndim == 0:
        int_fp = float(f) * int_p
        gf = np.zeros_like(gy)
    else:
        fT = f[tri]
        int_fp = np.einsum("ti,ti->t", fT, Mp)
        gf = np.einsum("tik,ti->tk", G, fT)

    kgygp = kappa * np.einsum("tk,tk->t", gy, gp)
    scalar = 0.5 * np.einsum("ti,ti->t", eT, Me) + area * kgygp - int_fp + lam * int_p + eta * int_y

    Ga_gp = np.einsum("tik,tk->ti", G, gp)
    Ga_gy = np.einsum("tik,tk->ti", G, gy)
    local = (
        -(kappa * area)[:, None, None] * (gy[:, None, :] * Ga_gp[:, :, None] + Ga_gy[:, :, None] * gp[:, None, :])
        - Mp[:, :, None] * gf[:, None, :]
        + G * scalar[:, None, None]
    )
    if ybar_grad is None:
        local -= Me[:, :, None] * gyb[:, None, :]
    load = np.zeros((mesh.n_vertices, 2))
    np.add.at(load, tri.ravel(), local.reshape(-1, 2))
    if ybar_grad is not None:
        load -= (fem.mass_matrix(mesh) @ e)[:, None] * np.asarray(ybar_grad, dtype=float)
    if restrict:
        active = active_vertices(mesh)
    else:
        active = ~mesh.boundary_vertices
    load[~active] = 0.0
    return ShapeDerivativeLoad(load, active)


def solve_pde(mesh: TriMesh, scenario: Scenario, ybar: np.ndarray, options: SolverOptions = SolverOptions()) -> PdeSolution:
    solver = fem.NeumannSolver(state_stiffness(mesh, scenario), options)
    y = solve_state(mesh, scenario, options, solver)
    p = solve_adjoint(mesh, scenario, y, ybar, options, solver)
    return PdeSolution(mesh, scenario, y, p)


# serialization -----------------------------------------------------------


def write_target(target: TargetMeasurement, prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    mesh_path = prefix.with_suffix(".mesh")
    vals_path = prefix.with_suffix(".values")
    write_mesh(target.mesh, mesh_path)
    s = target.scenario
    lines = [f"# kappa={','.join(f'{k:.17g}' for k in s.kappa)} g={s.g:.17g} f={s.f:.17g}"]
    lines += [f"{v:.17g}" for v in target.values]
    vals_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return mesh_path, vals_path


def read_target(prefix) -> TargetMeasurement:
    prefix = Path(prefix)
    mesh = read_mesh(prefix.with_suffix(".mesh"))
    values = []
    scenario = None
    for lineno, raw in enumerate(prefix.with_suffix(".values").read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
            if "kappa" in fields:
                scenario = Scenario(
                    tuple(float(k) for k in fields["kappa"].split(",")), float(fields.get("g", 0)), float(fields.get("f", 0))
                )
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{prefix.with_suffix('.values')}: line {lineno}: not a number: {line!r}") from None
    if len(values) != mesh.n_vertices:
        raise ValueError(f"target has {len(values)} values for {mesh.n_vertices} vertices")
    if scenario is None:
        scenario = Scenario((1.5, 4.0), 10.0, 0.0)
    return TargetMeasurement(mesh, np.array(values), scenario)
