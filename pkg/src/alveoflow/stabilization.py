"""Pressure stabilisation forms for equal-order Q1 elements, in moving-
domain (reference) formulation.

The divergence equation is augmented by one of four symmetric positive
semidefinite forms S(p, xi) on the pressure:

* anisotropic local projection (``lps_aniso``):
      alpha * sum_P sum_i (J h_i^2 d_i kappa p, d_i kappa xi)_P
  with reference-direction derivatives d_i, per-cell reference extents
  h_i, the map determinant J and the patch fluctuation kappa,

* anisotropic interior penalty (``ip_aniso``):
      alpha * sum_e int_e J h_n^3 [d_n p] [d_n xi] do
  over interior patch edges only, with the reference edge normal and the
  cell extent h_n normal to the edge,

* isotropic local projection variants (``lps_iso``/``lps_simple``): the
  plain pressure Laplacian weighted by J Finv^T ... (iso) or unweighted
  (simple).  In ``as_printed`` mode the forms carry no fluctuation and no
  mesh-size factor; the default ``scaled_fluctuation`` mode applies kappa
  and an isotropic patch-size factor h_P^2, which is the standard
  isotropic stabilisation the anisotropic variants generalise.

All assemblers return a matrix on scalar vertex dofs; the flow solver
lifts it onto the pressure component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem_core import (CellQuadCache, basis_eval, default_cell_rule,
                       fluctuation_matrix, scatter_coo, _EDGE_PARAM)
from .mesh import QuadMesh, cell_extents, interior_patch_edges, _EDGE_VERTS

KINDS = ("lps_aniso", "ip_aniso", "lps_iso", "lps_simple")
MODES = ("scaled_fluctuation", "as_printed")


@dataclass(frozen=True)
class StabConfig:
    """Selected stabilisation; ``alpha=None`` picks the viscosity-scaled
    default (1/nu, or 1/(60 nu) for the interior penalty)."""

    kind: str = "lps_aniso"
    alpha: float | None = None
    mode: str = "scaled_fluctuation"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown stabilisation kind {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown stabilisation mode {self.mode!r}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def alpha_for(self, nu: float) -> float:
        if self.alpha is not None:
            return self.alpha
        return 1.0 / (60.0 * nu) if self.kind == "ip_aniso" else 1.0 / nu


def patch_diameters(mesh: QuadMesh) -> np.ndarray:
    """Per-cell diameter of the owning patch (max corner distance)."""
    corners = mesh.vertices[mesh.patch_nodes[:, :4]]    # (np, 4, 2)
    diff = corners[:, :, None, :] - corners[:, None, :, :]
    diam = np.sqrt((diff ** 2).sum(-1)).max(axis=(1, 2))
    if np.any(mesh.patch_of_cell < 0):
        raise ValueError("mesh has no patch hierarchy")
    return diam[mesh.patch_of_cell]


def assemble_lps_aniso(cache: CellQuadCache, ale_map, t: float,
                       alpha: float) -> sp.csr_matrix:
    """Anisotropic local projection form on scalar vertex dofs."""
    mesh = cache.mesh
    J = ale_map.evaluate(cache.points.reshape(-1, 2), t).J.reshape(
        cache.n_cells, cache.n_quad)
    h = cell_extents(mesh)                               # (nc, 2)
    w = cache.weights * J
    gx = cache.grad[..., 0]                              # (nc, nq, 4)
    gy = cache.grad[..., 1]
    local = (np.einsum("cq,c,cqa,cqb->cab", w, h[:, 0] ** 2, gx, gx)
             + np.einsum("cq,c,cqa,cqb->cab", w, h[:, 1] ** 2, gy, gy))
    G = scatter_coo(local, mesh.cells, mesh.n_vertices)
    K = fluctuation_matrix(mesh)
    return (alpha * (K.T @ G @ K)).tocsr()


def assemble_lps_iso(cache: CellQuadCache, ale_map, t: float, alpha: float,
                     variant: str = "iso",
                     mode: str = "scaled_fluctuation") -> sp.csr_matrix:
    """Isotropic pressure-gradient forms.

    ``variant='iso'`` weights the gradient with J Finv^T (the current
    domain gradient); ``variant='simple'`` uses the plain reference
    gradient.  ``as_printed`` assembles the forms without fluctuation or
    mesh-size scaling.
    """
    if variant not in ("iso", "simple"):
        raise ValueError(f"unknown isotropic variant {variant!r}")
    if mode not in MODES:
        raise ValueError(f"unknown stabilisation mode {mode!r}")
    mesh = cache.mesh
    vals = ale_map.evaluate(cache.points.reshape(-1, 2), t)
    shape = (cache.n_cells, cache.n_quad)
    if variant == "iso":
        FinvT = vals.FinvT.reshape(shape + (2, 2))
        J = vals.J.reshape(shape)
        g = np.einsum("cqij,cqaj->cqai", FinvT, cache.grad)
        w = cache.weights * J
    else:
        g = cache.grad
        w = cache.weights
    if mode == "scaled_fluctuation":
        hP2 = patch_diameters(mesh) ** 2
        w = w * hP2[:, None]
    local = np.einsum("cq,cqai,cqbi->cab", w, g, g)
    G = scatter_coo(local, mesh.cells, mesh.n_vertices)
    if mode == "scaled_fluctuation":
        K = fluctuation_matrix(mesh)
        G = K.T @ G @ K
    return (alpha * G).tocsr()


def assemble_ip_aniso(mesh: QuadMesh, ale_map, t: float, alpha: float,
                      rule=None) -> sp.csr_matrix:
    """Interior penalty form on interior patch edges.

    The jump of the reference normal derivative is evaluated at shared
    edge quadrature points from both adjacent cells' own bilinear
    geometry; the map enters only through J on the edge.
    """
    if rule is None:
        rule = default_cell_rule()
    edges = interior_patch_edges(mesh)
    va, vb = edges[:, 0], edges[:, 1]
    ne = len(edges)
    nqe = len(rule.edge_points)
    s = rule.edge_points

    pa = mesh.vertices[va]
    pb = mesh.vertices[vb]
    tang = pb - pa
    lengths = np.linalg.norm(tang, axis=1)
    normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]

    # quadrature positions in reference coordinates (same for both sides)
    pts = pa[:, None, :] + s[None, :, None] * tang[:, None, :]
    J = ale_map.evaluate(pts.reshape(-1, 2), t).J.reshape(ne, nqe)

    # normal derivative of each side's shape functions at the edge points
    dn = np.zeros((ne, nqe, 8))
    dofs = np.zeros((ne, 8), dtype=np.int64)
    for side, sign in ((2, 1.0), (3, -1.0)):
        cells = edges[:, side]
        conn = mesh.cells[cells]                        # (ne, 4)
        loc = _edge_local_points(mesh, conn, va, vb, s)  # (ne, nqe, 2)
        _, dN = basis_eval(loc)                          # (ne, nqe, 4, 2)
        X = mesh.vertices[conn]
        G = np.einsum("eak,eqad->eqkd", X, dN)
        det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
        Ginv = np.empty_like(G)
        Ginv[..., 0, 0] = G[..., 1, 1]
        Ginv[..., 0, 1] = -G[..., 0, 1]
        Ginv[..., 1, 0] = -G[..., 1, 0]
        Ginv[..., 1, 1] = G[..., 0, 0]
        Ginv /= det[..., None, None]
        grad = np.einsum("eqkd,eqad->eqak", Ginv.transpose(0, 1, 3, 2), dN)
        block = slice(0, 4) if side == 2 else slice(4, 8)
        dn[:, :, block] = sign * np.einsum("eqak,ek->eqa", grad, normals)
        dofs[:, block] = conn

    # h_n: mean of the two adjacent cells' extents along the edge normal
    hn = np.zeros(ne)
    for side in (2, 3):
        proj = np.einsum("eak,ek->ea", mesh.vertices[mesh.cells[edges[:, side]]],
                         normals)
        hn += 0.5 * (proj.max(axis=1) - proj.min(axis=1))

    w = (rule.edge_weights[None, :] * lengths[:, None]) * J * hn[:, None] ** 3
    local = np.einsum("eq,eqa,eqb->eab", w, dn, dn)
    return (alpha * scatter_coo(local, dofs, mesh.n_vertices)).tocsr()


def _edge_local_points(mesh, conn, va, vb, s):
    """Local coordinates of edge points va + s*(vb - va) in each cell.

    ``conn`` holds the cells' vertex indices; the shared edge must be one
    of the cells' local edges (in either orientation).
    """
    ne = len(conn)
    loc = np.zeros((ne, len(s), 2))
    found = np.zeros(ne, dtype=bool)
    for le in range(4):
        a = conn[:, _EDGE_VERTS[le, 0]]
        b = conn[:, _EDGE_VERTS[le, 1]]
        origin, direction = _EDGE_PARAM[le]
        fwd = (a == va) & (b == vb) & ~found
        rev = (a == vb) & (b == va) & ~found
        if fwd.any():
            loc[fwd] = origin[None, None, :] + s[None, :, None] * direction
            found |= fwd
        if rev.any():
            loc[rev] = origin[None, None, :] + (1.0 - s)[None, :, None] * direction
            found |= rev
    if not found.all():
        raise ValueError("non-conforming edge pairing in patch edges")
    return loc


def assemble_pressure_stab(config: StabConfig, cache: CellQuadCache,
                           ale_map, t: float, nu: float) -> sp.csr_matrix:
    """Dispatch on the configured kind; returns a vertex-dof matrix."""
    alpha = config.alpha_for(nu)
    if config.kind == "lps_aniso":
        return assemble_lps_aniso(cache, ale_map, t, alpha)
    if config.kind == "ip_aniso":
        return assemble_ip_aniso(cache.mesh, ale_map, t, alpha,
                                 rule=cache.rule)
    variant = "iso" if config.kind == "lps_iso" else "simple"
    return assemble_lps_iso(cache, ale_map, t, alpha, variant=variant,
                            mode=config.mode)
