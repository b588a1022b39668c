"""Output functionals, error norms and convergence fits.

All integrals are evaluated on the reference domain with the map
factors supplied pointwise, e.g. the divergence defect
int J (div v)^2 and the domain integral of the concentration
int J c over the sac part x >= 0.  The membrane stress uses the reduced
stress tensor, the current-configuration normal and the exact edge
element (tangent stretch of the map).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mesh as mesh_mod
from .fem_core import CellQuadCache, EdgeQuadCache, default_cell_rule
from .flow import AleQuadData, FlowState, PhysParams
from .mesh import gamma0_edges, sac_cells
from .transport import TransportState

FUNCTIONALS = ("j_div", "j_vort", "p_l2", "j_gamma0", "j_omega", "j_sigma_bl")


def _current_gradients(cache, aleq, v_nodal):
    vloc = v_nodal[cache.mesh.cells]
    gradv = np.einsum("cqak,cai->cqik", cache.grad, vloc)
    return np.einsum("cqik,cqkj->cqij", gradv, aleq.Finv)


def eval_functional(kind: str, mesh, ale_map, t: float, *,
                    flow: FlowState | None = None,
                    transport: TransportState | None = None,
                    params: PhysParams | None = None,
                    cache: CellQuadCache | None = None) -> float:
    """Evaluate one of the reported output functionals at time t."""
    if kind not in FUNCTIONALS:
        raise ValueError(f"unknown functional {kind!r}")
    if cache is None:
        cache = CellQuadCache(mesh, default_cell_rule())
    aleq = AleQuadData(cache, ale_map, t)
    w = cache.weights

    if kind == "j_div":
        Gv = _current_gradients(cache, aleq, flow.v)
        div = np.einsum("cqii->cq", Gv)
        return float(np.sum(w * aleq.J * div ** 2))

    if kind == "j_vort":
        Gv = _current_gradients(cache, aleq, flow.v)
        vort = Gv[..., 0, 1] - Gv[..., 1, 0]
        return float(np.sum(w * aleq.J * vort ** 2))

    if kind == "p_l2":
        cells = sac_cells(mesh)
        pq = cache.interpolate(flow.p)
        val = np.sum((w * aleq.J * pq ** 2)[cells])
        return float(np.sqrt(val))

    if kind == "j_omega":
        cells = sac_cells(mesh)
        cq = cache.interpolate(transport.c)
        return float(np.sum((w * aleq.J * cq)[cells]))

    if kind == "j_gamma0":
        edges = gamma0_edges(mesh)
        if len(edges) == 0:
            raise ValueError("mesh does not resolve the interface line x=0")
        ecache = EdgeQuadCache(mesh, edges, cache.rule)
        cq = ecache.interpolate(transport.c)
        total = float(np.sum(ecache.weights * cq))
        return total / float(ecache.lengths.sum())

    if kind == "j_sigma_bl":
        if params is None:
            params = PhysParams()
        ecache = EdgeQuadCache(mesh, mesh.boundary_edges(mesh_mod.BLOOD),
                               cache.rule)
        if ecache.n_edges == 0:
            raise ValueError("mesh carries no blood boundary")
        vals = ale_map.evaluate(ecache.points.reshape(-1, 2), t)
        shp = (ecache.n_edges, ecache.n_quad)
        J = vals.J.reshape(shp)
        FinvT = vals.FinvT.reshape(shp + (2, 2))
        Finv = vals.Finv.reshape(shp + (2, 2))
        conn = mesh.cells[ecache.cells]
        gradv = np.einsum("eqak,eaj->eqjk", ecache.grad, flow.v[conn])
        Gv = np.einsum("eqik,eqkj->eqij", gradv, Finv)
        pq = np.einsum("eqa,ea->eq", ecache.N, flow.p[conn])
        nF = np.einsum("eqij,ej->eqi", FinvT, ecache.normals)
        nF_norm = np.linalg.norm(nF, axis=-1)
        n_cur = nF / nF_norm[..., None]
        tract1 = params.rho * params.nu * np.einsum(
            "eqj,eqj->eq", Gv[..., 0, :], n_cur) - pq * n_cur[..., 0]
        edge_elem = J * nF_norm          # tangent stretch of the map
        return float(np.sum(ecache.weights * tract1 * edge_elem))

    raise AssertionError(kind)


def eval_errors(state: FlowState, exact, mesh, ale_map,
                cache: CellQuadCache | None = None) -> dict:
    """Velocity H1-seminorm / L2 and pressure L2 errors vs. a manufactured
    solution, via the pulled-back integrals on the reference domain."""
    if cache is None:
        cache = CellQuadCache(mesh, default_cell_rule())
    aleq = AleQuadData(cache, ale_map, state.t)
    w = cache.weights
    xq = aleq.x.reshape(-1, 2)
    shp = (cache.n_cells, cache.n_quad)

    v_ex = exact.velocity(xq).reshape(shp + (2,))
    g_ex = exact.grad_velocity(xq).reshape(shp + (2, 2))
    p_ex = exact.pressure(xq).reshape(shp)

    vloc = state.v[mesh.cells]
    vq = np.einsum("qa,cai->cqi", cache.N, vloc)
    Gv = _current_gradients(cache, aleq, state.v)
    pq = cache.interpolate(state.p)

    wJ = w * aleq.J
    err_grad = np.sqrt(np.sum(wJ * ((g_ex - Gv) ** 2).sum(axis=(-1, -2))))
    err_v = np.sqrt(np.sum(wJ * ((v_ex - vq) ** 2).sum(axis=-1)))
    err_p = np.sqrt(np.sum(wJ * (p_ex - pq) ** 2))
    return {"grad_v": float(err_grad), "v": float(err_v), "p": float(err_p)}


# ----------------------------------------------------------------------
# convergence fits
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceFit:
    """Fitted functional-vs-meshsize model f(h) = j_e + c h^alpha
    (``j_e = 0`` for the plain power model)."""

    j_e: float
    c: float
    alpha: float
    model: str
    residual: float
    monotone: bool


def fit_convergence(h_values, f_values, model: str = "power") -> ConvergenceFit:
    """Least-squares convergence fit.

    ``power`` fits log|f| linearly in log h (needs >= 2 points);
    ``offset_power`` searches the order by golden section with the
    offset and amplitude solved linearly at each candidate (needs >= 3
    points).  Non-monotone series are fitted anyway and flagged.
    """
    h = np.asarray(h_values, dtype=float)
    f = np.asarray(f_values, dtype=float)
    if h.shape != f.shape or h.ndim != 1:
        raise ValueError("h and f must be 1d arrays of equal length")
    order = np.argsort(h)[::-1]            # coarse to fine
    h, f = h[order], f[order]
    monotone = bool(np.all(np.diff(f) > 0) or np.all(np.diff(f) < 0))

    if model == "power":
        if len(h) < 2:
            raise ValueError("power fit needs at least 2 points")
        A = np.column_stack([np.ones_like(h), np.log(h)])
        sol, res, *_ = np.linalg.lstsq(A, np.log(np.abs(f)), rcond=None)
        residual = float(np.sum((A @ sol - np.log(np.abs(f))) ** 2))
        return ConvergenceFit(0.0, float(np.exp(sol[0])), float(sol[1]),
                              model, residual, monotone)

    if model == "offset_power":
        if len(h) < 3:
            raise ValueError("offset_power fit needs at least 3 points")

        def ssr(alpha):
            A = np.column_stack([np.ones_like(h), h ** alpha])
            sol, *_ = np.linalg.lstsq(A, f, rcond=None)
            return float(np.sum((A @ sol - f) ** 2)), sol

        lo, hi = 0.05, 10.0
        gr = (np.sqrt(5.0) - 1.0) / 2.0
        x1 = hi - gr * (hi - lo)
        x2 = lo + gr * (hi - lo)
        f1, f2 = ssr(x1)[0], ssr(x2)[0]
        for _ in range(200):
            if f1 < f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - gr * (hi - lo)
                f1 = ssr(x1)[0]
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + gr * (hi - lo)
                f2 = ssr(x2)[0]
            if hi - lo < 1e-12:
                break
        alpha = 0.5 * (lo + hi)
        residual, sol = ssr(alpha)
        return ConvergenceFit(float(sol[0]), float(sol[1]), float(alpha),
                              model, residual, monotone)

    raise ValueError(f"unknown fit model {model!r}")
