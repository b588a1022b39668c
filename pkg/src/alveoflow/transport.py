"""Backward-Euler steps of the CO2 convection-diffusion equation.

Given the flow at the new time level the equation is linear in the
concentration (the coupling is one-way), so one step is one sparse
solve.  Two treatments of the duct end are available:

* ``classical_nitsche``: Dirichlet towards the exterior concentration
  during inflow, imposed weakly by a penalty gamma0/h_n plus the primal
  consistency flux (non-symmetric, exactly as the switch
  H(-v.n) (gamma (c - c_ext) - D dc/dn) suggests); homogeneous Neumann
  during outflow.

* ``artificial``: an absorbing approximation of the transparent
  condition, dc/dt + D dc/dn + max(-v.n, 0) (c - c_ext) = 0, active on
  the whole duct end at all times.  Its time derivative is discretised
  with the same backward difference as the interior term.

No convection stabilisation is applied: the Peclet numbers of the
application are tiny, the problem is diffusion dominated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import mesh as mesh_mod
from .fem_core import (CellQuadCache, EdgeQuadCache, apply_dirichlet,
                       default_cell_rule, scatter_coo, scatter_vector,
                       transport_layout)
from .flow import AleQuadData, FlowState, PhysParams
from .linalg import factor_solve

BC_MODES = ("classical_nitsche", "artificial")


def peclet_number(velocity: float, radius: float, diffusivity: float) -> float:
    return velocity * radius / diffusivity


@dataclass
class TransportState:
    """Nodal concentration (dimensionless fraction) at one time level."""

    c: np.ndarray
    t: float

    @classmethod
    def constant(cls, mesh, value: float, t: float = 0.0):
        return cls(np.full(mesh.n_vertices, float(value)), t)


def _edge_normal_extent(mesh, ecache: EdgeQuadCache) -> np.ndarray:
    """Owning-cell extent normal to each boundary edge (the h in gamma0/h)."""
    verts = mesh.vertices[mesh.cells[ecache.cells]]       # (ne, 4, 2)
    proj = np.einsum("eak,ek->ea", verts, ecache.normals)
    return proj.max(axis=1) - proj.min(axis=1)


def assemble_io_boundary(mode: str, ecache: EdgeQuadCache, v_nodal: np.ndarray,
                         c_old: np.ndarray, params: PhysParams, mesh):
    """Boundary matrix and rhs on the duct end (reference = current there).

    Returns (matrix on vertex dofs, rhs).  The Heaviside switch and the
    positive part act pointwise on v.n at the edge quadrature points.
    """
    nv = mesh.n_vertices
    if ecache.n_edges == 0:
        return sp.csr_matrix((nv, nv)), np.zeros(nv)
    conn = mesh.cells[ecache.cells]                       # (ne, 4)
    vq = np.einsum("eqa,eai->eqi", ecache.N, v_nodal[conn])
    vn = np.einsum("eqi,ei->eq", vq, ecache.normals)
    w = ecache.weights
    if mode == "classical_nitsche":
        H = (-vn > 0.0).astype(float)
        gamma = params.gamma0 / _edge_normal_extent(mesh, ecache)
        wH = w * H
        pen = np.einsum("eq,e,eqa,eqb->eab", wH, gamma, ecache.N, ecache.N)
        dn = np.einsum("eqak,ek->eqa", ecache.grad, ecache.normals)
        flux = -params.diffusivity * np.einsum("eq,eqa,eqb->eab",
                                               wH, ecache.N, dn)
        local = pen + flux
        rhs_loc = params.c_ext * np.einsum("eq,e,eqa->ea", wH, gamma, ecache.N)
    elif mode == "artificial":
        upwind = np.maximum(-vn, 0.0)
        coeff = 1.0 / params.dt + upwind
        local = np.einsum("eq,eq,eqa,eqb->eab", w, coeff, ecache.N, ecache.N)
        c_old_q = np.einsum("eqa,ea->eq", ecache.N, c_old[conn])
        rhs_q = c_old_q / params.dt + upwind * params.c_ext
        rhs_loc = np.einsum("eq,eq,eqa->ea", w, rhs_q, ecache.N)
    else:
        raise ValueError(f"unknown boundary mode {mode!r}")
    A = scatter_coo(local, conn, nv)
    b = scatter_vector(rhs_loc, conn, nv)
    return A, b


def transport_step(prev: TransportState, flow: FlowState, mesh, ale_map,
                   params: PhysParams, mode: str = "classical_nitsche", *,
                   blood_dirichlet: bool = True,
                   cache: CellQuadCache | None = None,
                   io_cache: EdgeQuadCache | None = None,
                   layout=None) -> TransportState:
    """One implicit step of the transport equation given the new flow.

    Set ``blood_dirichlet=False`` to drop the membrane Dirichlet rows
    (conservation experiments).  Concentrations leaving [0, 1] by more
    than 1e-6 trigger a warning but are never clipped.
    """
    if mode not in BC_MODES:
        raise ValueError(f"unknown boundary mode {mode!r}")
    t_new = flow.t
    if cache is None:
        cache = CellQuadCache(mesh, default_cell_rule())
    if io_cache is None:
        io_cache = EdgeQuadCache(mesh, mesh.boundary_edges(mesh_mod.IO),
                                 cache.rule)
    aleq = AleQuadData(cache, ale_map, t_new)
    w, N, grad = cache.weights, cache.N, cache.grad
    wJ = w * aleq.J

    vloc = flow.v[mesh.cells]
    vq = np.einsum("qa,cai->cqi", N, vloc)
    # (v - domain velocity) . F^-T grad c
    rel = vq - aleq.v_dom
    conv_dir = np.einsum("cqij,cqaj->cqai", aleq.FinvT, grad)
    conv = np.einsum("cq,qa,cqi,cqbi->cab", wJ, N, rel, conv_dir)
    mass = np.einsum("cq,qa,qb->cab", wJ / params.dt, N, N)
    Cg = np.einsum("cqkl,cqbl->cqbk", aleq.C, grad)
    diff = params.diffusivity * np.einsum("cq,cqak,cqbk->cab", wJ, grad, Cg)

    nv = mesh.n_vertices
    A = scatter_coo(mass + conv + diff, mesh.cells, nv)
    c_old_q = np.einsum("qa,ca->cq", N, prev.c[mesh.cells])
    rhs_loc = np.einsum("cq,cq,qa->ca", wJ / params.dt, c_old_q, N)
    b = scatter_vector(rhs_loc, mesh.cells, nv)

    A_io, b_io = assemble_io_boundary(mode, io_cache, flow.v, prev.c,
                                      params, mesh)
    A = (A + A_io).tocsr()
    b = b + b_io

    if blood_dirichlet:
        if layout is None:
            layout = transport_layout(mesh, params.c_bl)
        A, b = apply_dirichlet(A, b, layout, t_new)

    c, _ = factor_solve(A, b)
    overshoot = max(float(-(c.min())), float(c.max() - 1.0))
    if overshoot > 1e-6:
        warnings.warn(f"concentration leaves [0,1] by {overshoot:.2e} "
                      f"at t={t_new}", stacklevel=2)
    return TransportState(c, t_new)
