"""Incompressible flow solvers on the fixed reference domain.

Two entry points:

* ``solve_stokes``: the stationary Stokes benchmark on the half-lens
  domain under a horizontal stretch, with a stream-potential
  manufactured solution (unit viscosity, do-nothing on the cut line,
  homogeneous Dirichlet on the arc).

* ``navier_stokes_step``: one backward-Euler step of the moving-domain
  Navier-Stokes system solved by damped Newton.  The reduced stress
  rho*nu*grad(v) - p*I makes the do-nothing condition on the duct end a
  purely natural one: no flow boundary integrals are ever assembled.

The convective term transports with (v - domain velocity); all geometry
factors are evaluated at the new time level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import mesh as mesh_mod
from .fem_core import (CellQuadCache, DofLayout, constrain_rows,
                       default_cell_rule, flow_layout, scatter_coo,
                       scatter_vector)
from .linalg import NumericallySingular, SparseFactor, factor_solve
from .stabilization import StabConfig, assemble_pressure_stab


@dataclass(frozen=True)
class PhysParams:
    """Physical and numerical constants (lengths mm, times s, mass ug)."""

    rho: float = 1.21          # air density [ug/mm^3]
    nu: float = 14.711         # kinematic viscosity [mm^2/s]
    diffusivity: float = 17.0  # CO2 diffusivity [mm^2/s]
    c_bl: float = 0.06         # CO2 fraction in the blood
    c_ext: float = 0.04302     # CO2 fraction in the airways
    gamma0: float = 10.0       # Nitsche penalty scale
    dt: float = 0.05           # time step [s]
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-12
    newton_maxit: int = 25
    damping_min: float = 2.0 ** -10

    def __post_init__(self):
        if min(self.rho, self.nu, self.diffusivity, self.gamma0, self.dt) <= 0:
            raise ValueError("physical constants must be positive")
        for c in (self.c_bl, self.c_ext):
            if not 0.0 <= c <= 1.0:
                raise ValueError("concentrations must lie in [0, 1]")


def reynolds_number(velocity: float, radius: float, nu: float) -> float:
    return velocity * radius / nu


@dataclass
class FlowState:
    """Nodal velocity/pressure at one time level."""

    v: np.ndarray          # (nv, 2) [mm/s]
    p: np.ndarray          # (nv,)
    t: float

    @classmethod
    def zero(cls, mesh, t: float = 0.0):
        return cls(np.zeros((mesh.n_vertices, 2)), np.zeros(mesh.n_vertices), t)

    def as_vector(self) -> np.ndarray:
        u = np.empty(3 * len(self.p))
        u[0::3] = self.v[:, 0]
        u[1::3] = self.v[:, 1]
        u[2::3] = self.p
        return u

    @classmethod
    def from_vector(cls, u: np.ndarray, t: float):
        return cls(np.column_stack([u[0::3], u[1::3]]), u[2::3].copy(), t)


# ----------------------------------------------------------------------
# manufactured Stokes solution
# ----------------------------------------------------------------------

class ManufacturedStokes:
    """Divergence-free benchmark fields on the stretched half-lens.

    Built from the stream potential psi = k^2 * sin^3(x1/a) with
    k = (x1/a - 1/2)^2 + x2^2 - 1: the velocity is the rotated gradient
    of psi (hence exactly divergence free), the pressure its mixed second
    derivative.  k vanishes on the circular arc, which kills the velocity
    and its tangential variation there; on the line x1 = 0 the normal
    stress of the reduced tensor vanishes, matching a do-nothing
    boundary.  The forcing is -laplace(v) + grad(p) for unit viscosity.
    """

    def __init__(self, a: float):
        if a <= 0:
            raise ValueError("stretch must be positive")
        self.a = float(a)

    def _pieces(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        b = 1.0 / self.a
        t = b * x[:, 0]
        u = t - 0.5
        y = x[:, 1]
        k = u * u + y * y - 1.0
        return b, u, y, k, np.sin(t), np.cos(t)

    def velocity(self, x) -> np.ndarray:
        b, u, y, k, s, c = self._pieces(x)
        v1 = 4.0 * y * k * s ** 3
        v2 = -b * s * s * (4.0 * u * k * s + 3.0 * k * k * c)
        return np.column_stack([v1, v2])

    def pressure(self, x) -> np.ndarray:
        b, u, y, k, s, c = self._pieces(x)
        return 4.0 * b * y * s * s * (2.0 * u * s + 3.0 * k * c)

    def grad_velocity(self, x) -> np.ndarray:
        """(n, 2, 2) array of d v_i / d x_j."""
        b, u, y, k, s, c = self._pieces(x)
        d11 = 4.0 * b * y * s * s * (2.0 * u * s + 3.0 * k * c)
        d12 = 4.0 * s ** 3 * (k + 2.0 * y * y)
        d21 = -b * b * s * (24.0 * u * k * c * s + 6.0 * k * k * c * c
                            - 3.0 * k * k * s * s + 4.0 * k * s * s
                            + 8.0 * u * u * s * s)
        out = np.empty((len(y), 2, 2))
        out[:, 0, 0] = d11
        out[:, 0, 1] = d12
        out[:, 1, 0] = d21
        out[:, 1, 1] = -d11
        return out

    def forcing(self, x) -> np.ndarray:
        b, u, y, k, s, c = self._pieces(x)
        f1 = -24.0 * s ** 3 * y
        f2 = b * (48.0 * c * s * s * y * y + 24.0 * c * k * s * s
                  + 16.0 * u * s ** 3) \
            + b ** 3 * (36.0 * c * s * s * (y * y - 1.0 + 3.0 * u * u)
                        + 3.0 * c * k * k * (2.0 * c * c - 7.0 * s * s)
                        + 24.0 * u * s ** 3
                        - 36.0 * u * s * k * (s * s - 2.0 * c * c))
        return np.column_stack([f1, f2])

    def evaluate(self, x) -> dict:
        return {"v": self.velocity(x), "p": self.pressure(x),
                "grad_v": self.grad_velocity(x), "f": self.forcing(x)}


def manufactured_eval(a: float, x) -> dict:
    return ManufacturedStokes(a).evaluate(x)


# ----------------------------------------------------------------------
# quadrature-level ALE data
# ----------------------------------------------------------------------

class AleQuadData:
    """ALE factors at all cell quadrature points, reshaped (nc, nq, ...)."""

    def __init__(self, cache: CellQuadCache, ale_map, t: float):
        vals = ale_map.evaluate(cache.points.reshape(-1, 2), t)
        shape = (cache.n_cells, cache.n_quad)
        self.x = vals.x.reshape(shape + (2,))
        self.F = vals.F.reshape(shape + (2, 2))
        self.J = vals.J.reshape(shape)
        self.Finv = vals.Finv.reshape(shape + (2, 2))
        self.FinvT = vals.FinvT.reshape(shape + (2, 2))
        self.v_dom = vals.v_dom.reshape(shape + (2,))
        # Finv Finv^T, the metric of the pulled-back gradient
        self.C = np.einsum("cqik,cqjk->cqij", self.Finv, self.Finv)


def _flow_dof_map(mesh) -> np.ndarray:
    base = 3 * mesh.cells                      # (nc, 4)
    dof = np.empty((mesh.n_cells, 12), dtype=np.int64)
    for i in range(3):
        dof[:, i::3] = base + i
    return dof


def lift_pressure_matrix(S: sp.spmatrix, n_vertices: int) -> sp.csr_matrix:
    """Vertex-dof matrix -> contribution on the pressure components."""
    S = S.tocoo()
    return sp.coo_matrix((S.data, (3 * S.row + 2, 3 * S.col + 2)),
                         shape=(3 * n_vertices, 3 * n_vertices)).tocsr()


# ----------------------------------------------------------------------
# stationary Stokes benchmark
# ----------------------------------------------------------------------

@dataclass
class StokesReport:
    cells: int
    j_div: float
    err_p: float
    err_grad_v: float
    err_v: float
    solver_residual: float


def assemble_stokes(cache: CellQuadCache, aleq: AleQuadData,
                    forcing: np.ndarray):
    """Matrix (viscous + pressure coupling + divergence) and load vector.

    Unit viscosity; ``forcing`` holds the current-domain forcing at the
    quadrature points, (nc, nq, 2).
    """
    mesh = cache.mesh
    w, N, grad = cache.weights, cache.N, cache.grad
    wJ = w * aleq.J
    Cg = np.einsum("cqkl,cqbl->cqbk", aleq.C, grad)
    visc = np.einsum("cq,cqak,cqbk->cab", wJ, grad, Cg)
    FtgN = np.einsum("cqij,cqaj->cqai", aleq.FinvT, grad)
    Bblk = -np.einsum("cq,qb,cqai->cabi", wJ, N, FtgN)
    Dblk = np.einsum("cq,qa,cqbj->cabj", wJ, N, FtgN)

    nc = cache.n_cells
    local = np.zeros((nc, 12, 12))
    for i in range(2):
        local[:, i::3, i::3] = visc
        local[:, i::3, 2::3] = Bblk[..., i]
        local[:, 2::3, i::3] = Dblk[..., i]
    dof = _flow_dof_map(mesh)
    A = scatter_coo(local, dof, 3 * mesh.n_vertices)

    rloc = np.zeros((nc, 12))
    load = np.einsum("cq,cqi,qa->cai", wJ, forcing, N)
    for i in range(2):
        rloc[:, i::3] = load[..., i]
    b = scatter_vector(rloc, dof, 3 * mesh.n_vertices)
    return A, b


def solve_stokes(a: float, mesh, stab: StabConfig, rule=None):
    """Stokes benchmark on the half-lens under the stretch x1 -> a*x1.

    Returns (FlowState, StokesReport).  A numerically singular system
    raises NumericallySingular annotated with the run configuration.
    """
    from .ale import AxisScaleMap
    from .analysis import eval_errors, eval_functional

    cache = CellQuadCache(mesh, rule or default_cell_rule())
    ale_map = AxisScaleMap(a=a)
    aleq = AleQuadData(cache, ale_map, 0.0)
    exact = ManufacturedStokes(a)
    f_hat = exact.forcing(aleq.x.reshape(-1, 2)).reshape(aleq.x.shape)

    A, b = assemble_stokes(cache, aleq, f_hat)
    S = assemble_pressure_stab(stab, cache, ale_map, 0.0, nu=1.0)
    A = A + lift_pressure_matrix(S, mesh.n_vertices)

    layout = flow_layout(mesh, ale_map, (mesh_mod.WALL, mesh_mod.BLOOD))
    fixed = np.nonzero(layout.dirichlet)[0]
    A = constrain_rows(A, fixed)
    b[fixed] = 0.0

    try:
        u, rep = factor_solve(A, b)
    except NumericallySingular as exc:
        raise NumericallySingular(
            f"stokes a={a} cells={mesh.n_cells} stab={stab.kind}/{stab.mode}: "
            f"{exc}", pivot=exc.pivot) from exc
    state = FlowState.from_vector(u, 0.0)
    errs = eval_errors(state, exact, mesh, ale_map, cache=cache)
    j_div = eval_functional("j_div", mesh, ale_map, 0.0, flow=state,
                            cache=cache)
    report = StokesReport(mesh.n_cells, j_div, errs["p"], errs["grad_v"],
                          errs["v"], rep.residual)
    return state, report


# ----------------------------------------------------------------------
# one backward-Euler Navier-Stokes step
# ----------------------------------------------------------------------

class NewtonError(Exception):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass
class StepInfo:
    iterations: int
    residuals: list = field(default_factory=list)


class NavierStokesAssembler:
    """Residual and Jacobian of one implicit step, at fixed (mesh, t)."""

    def __init__(self, cache: CellQuadCache, aleq: AleQuadData,
                 params: PhysParams, v_old: np.ndarray,
                 S_pp: sp.spmatrix):
        self.cache = cache
        self.aleq = aleq
        self.params = params
        self.mesh = cache.mesh
        self.dof = _flow_dof_map(self.mesh)
        self.n = 3 * self.mesh.n_vertices
        self.S_lift = lift_pressure_matrix(S_pp, self.mesh.n_vertices)
        # previous velocity at quadrature points
        vloc = v_old[self.mesh.cells]                    # (nc, 4, 2)
        self.v_old_q = np.einsum("qa,cai->cqi", cache.N, vloc)

    def _fields(self, u: np.ndarray):
        loc = u[self.dof].reshape(-1, 4, 3)
        vloc = loc[:, :, 0:2]
        ploc = loc[:, :, 2]
        vq = np.einsum("qa,cai->cqi", self.cache.N, vloc)
        gradv = np.einsum("cqak,cai->cqik", self.cache.grad, vloc)
        pq = np.einsum("qa,ca->cq", self.cache.N, ploc)
        return vq, gradv, pq, ploc

    def residual(self, u: np.ndarray) -> np.ndarray:
        prm, aleq, cache = self.params, self.aleq, self.cache
        w, N, grad = cache.weights, cache.N, cache.grad
        vq, gradv, pq, _ = self._fields(u)
        Gv = np.einsum("cqik,cqkj->cqij", gradv, aleq.Finv)
        acc = (vq - self.v_old_q) / prm.dt \
            + np.einsum("cqij,cqj->cqi", Gv, vq - aleq.v_dom)
        acc *= (prm.rho * aleq.J)[..., None]
        # J * (rho nu grad(v) F^-1 - p I) F^-T
        M = prm.rho * prm.nu * np.einsum("cqik,cqjk->cqij", Gv, aleq.Finv)
        M -= pq[..., None, None] * aleq.FinvT
        M *= aleq.J[..., None, None]
        rv = np.einsum("cq,cqi,qa->cai", w, acc, N) \
            + np.einsum("cq,cqij,cqaj->cai", w, M, grad)
        div = aleq.J * np.einsum("cqii->cq", Gv)
        rp = np.einsum("cq,cq,qa->ca", w, div, N)
        rloc = np.empty((cache.n_cells, 12))
        rloc[:, 0::3] = rv[..., 0]
        rloc[:, 1::3] = rv[..., 1]
        rloc[:, 2::3] = rp
        r = scatter_vector(rloc, self.dof, self.n)
        r += self.S_lift @ u
        return r

    def jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        prm, aleq, cache = self.params, self.aleq, self.cache
        w, N, grad = cache.weights, cache.N, cache.grad
        vq, gradv, pq, _ = self._fields(u)
        Gv = np.einsum("cqik,cqkj->cqij", gradv, aleq.Finv)
        wJ = w * aleq.J
        wrJ = prm.rho * wJ
        # F^-1 (v - v_dom)
        fv = np.einsum("cqkj,cqj->cqk", aleq.Finv, vq - aleq.v_dom)
        conv1 = np.einsum("cq,qa,cqbk,cqk->cab", wrJ, N, grad, fv)
        mass = np.einsum("cq,qa,qb->cab", wrJ / prm.dt, N, N)
        Cg = np.einsum("cqkl,cqbl->cqbk", aleq.C, grad)
        visc = prm.rho * prm.nu * np.einsum("cq,cqak,cqbk->cab", wJ, grad, Cg)
        gvblk = np.einsum("cq,qa,qb,cqij->cabij", wrJ, N, N, Gv)
        FtgN = np.einsum("cqij,cqaj->cqai", aleq.FinvT, grad)
        Bblk = -np.einsum("cq,qb,cqai->cabi", wJ, N, FtgN)
        Dblk = np.einsum("cq,qa,cqbj->cabj", wJ, N, FtgN)

        diag = mass + conv1 + visc
        local = np.zeros((cache.n_cells, 12, 12))
        for i in range(2):
            local[:, i::3, i::3] = diag + gvblk[..., i, i]
            local[:, i::3, (1 - i)::3] = gvblk[..., i, 1 - i]
            local[:, i::3, 2::3] = Bblk[..., i]
            local[:, 2::3, i::3] = Dblk[..., i]
        J = scatter_coo(local, self.dof, self.n)
        return (J + self.S_lift).tocsr()


def navier_stokes_step(prev: FlowState, t_new: float, mesh, ale_map,
                       params: PhysParams, stab: StabConfig,
                       dirichlet_map=None, cache: CellQuadCache | None = None,
                       layout: DofLayout | None = None):
    """Advance the flow by one implicit step via damped Newton.

    ``dirichlet_map`` supplies the wall velocity data when it differs
    from the domain map (fixed-domain comparison runs).  Returns
    (FlowState, StepInfo); raises NewtonError when the iteration stalls.
    """
    if cache is None:
        cache = CellQuadCache(mesh, default_cell_rule())
    aleq = AleQuadData(cache, ale_map, t_new)
    S = assemble_pressure_stab(stab, cache, ale_map, t_new, nu=params.nu)
    asm = NavierStokesAssembler(cache, aleq, params, prev.v, S)
    if layout is None:
        layout = flow_layout(mesh, dirichlet_map or ale_map,
                             (mesh_mod.WALL, mesh_mod.BLOOD))
    fixed = np.nonzero(layout.dirichlet)[0]
    g = layout.dirichlet_values(t_new)

    u = prev.as_vector()
    u[fixed] = g[fixed]

    def full_residual(u):
        r = asm.residual(u)
        r[fixed] = u[fixed] - g[fixed]
        return r

    r = full_residual(u)
    rn = np.linalg.norm(r)
    history = [rn]
    tol = max(params.newton_rtol * rn, params.newton_atol)
    iterations = 0
    while rn > tol:
        if iterations >= params.newton_maxit:
            raise NewtonError(
                f"Newton did not converge in {params.newton_maxit} "
                f"iterations at t={t_new}", history)
        J = constrain_rows(asm.jacobian(u), fixed)
        delta = SparseFactor(J).solve(-r)[0]
        lam = 1.0
        while True:
            r_trial = full_residual(u + lam * delta)
            rn_trial = np.linalg.norm(r_trial)
            if rn_trial < rn or lam <= params.damping_min:
                break
            lam *= 0.5
        u = u + lam * delta
        r, rn = r_trial, rn_trial
        history.append(rn)
        iterations += 1
    return FlowState.from_vector(u, t_new), StepInfo(iterations, history)
