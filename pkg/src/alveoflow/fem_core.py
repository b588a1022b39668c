"""Q1 equal-order finite elements on quadrilaterals.

Bilinear shape functions on the unit cell [0,1]^2, tensor Gauss
quadrature, cached per-cell geometry for vectorised assembly, degree of
freedom layouts with strong Dirichlet handling, and the patch
fluctuation operator (identity minus interpolation to the patch grid).

Assembly convention: element loops produce local blocks (12x12 for the
flow system with per-vertex unknowns (v1, v2, p), 4x4 for transport)
scattered into COO triplets; duplicate entries accumulate.  Serial
execution is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_EDGE_VERTS = np.array([(0, 1), (1, 2), (2, 3), (3, 0)])


def basis_eval(points):
    """Values and reference gradients of the 4 bilinear shape functions.

    ``points``: (..., 2) local coordinates in [0,1]^2.  Returns
    (values (..., 4), gradients (..., 4, 2)).
    """
    points = np.asarray(points, dtype=float)
    xi = points[..., 0]
    eta = points[..., 1]
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta,
                  (1 - xi) * eta], axis=-1)
    dN = np.stack([
        np.stack([-(1 - eta), -(1 - xi)], axis=-1),
        np.stack([(1 - eta), -xi], axis=-1),
        np.stack([eta, xi], axis=-1),
        np.stack([-eta, (1 - xi)], axis=-1),
    ], axis=-2)
    return N, dN


def gauss_1d(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor rule on the reference cell plus a rule on reference edges."""

    cell_points: np.ndarray   # (nq, 2)
    cell_weights: np.ndarray  # (nq,)
    edge_points: np.ndarray   # (nqe,) parameter in [0,1]
    edge_weights: np.ndarray  # (nqe,)


def tensor_rule(n_cell: int, n_edge: int) -> QuadratureRule:
    x, w = gauss_1d(n_cell)
    XI, ETA = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w).ravel()
    ex, ew = gauss_1d(n_edge)
    return QuadratureRule(np.column_stack([XI.ravel(), ETA.ravel()]), W, ex, ew)


def default_cell_rule() -> QuadratureRule:
    # 3x3 Gauss in cells, 3 points on edges: enough for the trigonometric
    # forcing and the rational ALE factors at the reported accuracy.
    return tensor_rule(3, 3)


class CellQuadCache:
    """Per-cell quadrature geometry for one mesh.

    Attributes (nc cells, nq points per cell):
      points   (nc, nq, 2):  reference coordinates of quadrature points
      weights  (nc, nq):     gauss weight times geometry Jacobian
      N        (nq, 4):      shape function values
      grad     (nc, nq, 4, 2): shape function gradients in reference coords
    """

    def __init__(self, mesh, rule: QuadratureRule | None = None):
        if rule is None:
            rule = default_cell_rule()
        self.mesh = mesh
        self.rule = rule
        X = mesh.vertices[mesh.cells]                 # (nc, 4, 2)
        N, dN = basis_eval(rule.cell_points)          # (nq,4), (nq,4,2)
        self.N = N
        G = np.einsum("cak,qad->cqkd", X, dN)         # d x / d xi
        det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
        Ginv = np.empty_like(G)
        Ginv[..., 0, 0] = G[..., 1, 1]
        Ginv[..., 0, 1] = -G[..., 0, 1]
        Ginv[..., 1, 0] = -G[..., 1, 0]
        Ginv[..., 1, 1] = G[..., 0, 0]
        Ginv /= det[..., None, None]
        self.points = np.einsum("qa,cak->cqk", N, X)
        self.weights = rule.cell_weights[None, :] * det
        self.grad = np.einsum("cqkd,qad->cqak", Ginv.transpose(0, 1, 3, 2), dN)
        # grad[c,q,a,:] = Ginv^T @ dN[q,a,:]
        self.n_cells = len(mesh.cells)
        self.n_quad = len(rule.cell_weights)

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal scalar field -> values at all quadrature points (nc, nq)."""
        return np.einsum("qa,ca->cq", self.N, nodal[self.mesh.cells])

    def interpolate_grad(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal scalar field -> reference gradients (nc, nq, 2)."""
        return np.einsum("cqak,ca->cqk", self.grad, nodal[self.mesh.cells])

    def integrate(self, values: np.ndarray) -> float:
        """Integrate per-quadrature-point values (nc, nq) over the mesh."""
        return float(np.sum(self.weights * values))


_EDGE_PARAM = {
    # local edge -> (origin, direction) in local coordinates
    0: (np.array([0.0, 0.0]), np.array([1.0, 0.0])),
    1: (np.array([1.0, 0.0]), np.array([0.0, 1.0])),
    2: (np.array([1.0, 1.0]), np.array([-1.0, 0.0])),
    3: (np.array([0.0, 1.0]), np.array([0.0, -1.0])),
}


class EdgeQuadCache:
    """Quadrature data on a set of (cell, local_edge) pairs.

    Edges of bilinear cells are straight segments; the outward unit
    normal and the length are constant per edge.  Shape gradients come
    from the owning cell's geometry evaluated on the edge.
    """

    def __init__(self, mesh, edges, rule: QuadratureRule | None = None):
        if rule is None:
            rule = default_cell_rule()
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.mesh = mesh
        self.cells = edges[:, 0]
        self.local = edges[:, 1]
        ne = len(edges)
        nq = len(rule.edge_points)
        self.n_edges, self.n_quad = ne, nq

        self.N = np.zeros((ne, nq, 4))
        self.grad = np.zeros((ne, nq, 4, 2))
        self.points = np.zeros((ne, nq, 2))
        self.normals = np.zeros((ne, 2))
        self.lengths = np.zeros(ne)
        self.weights = np.zeros((ne, nq))

        for i in range(ne):
            c, le = int(self.cells[i]), int(self.local[i])
            origin, direction = _EDGE_PARAM[le]
            loc = origin[None, :] + rule.edge_points[:, None] * direction[None, :]
            N, dN = basis_eval(loc)
            X = mesh.vertices[mesh.cells[c]]
            G = np.einsum("ak,qad->qkd", X, dN)
            det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
            Ginv = np.empty_like(G)
            Ginv[:, 0, 0] = G[:, 1, 1]
            Ginv[:, 0, 1] = -G[:, 0, 1]
            Ginv[:, 1, 0] = -G[:, 1, 0]
            Ginv[:, 1, 1] = G[:, 0, 0]
            Ginv /= det[:, None, None]
            self.N[i] = N
            self.grad[i] = np.einsum("qkd,qad->qak", Ginv.transpose(0, 2, 1), dN)
            self.points[i] = np.einsum("qa,ak->qk", N, X)
            a, b = mesh.edge_vertices(c, le)
            tang = mesh.vertices[b] - mesh.vertices[a]
            L = np.linalg.norm(tang)
            tang = tang / L
            self.normals[i] = (tang[1], -tang[0])   # outward for CCW cells
            self.lengths[i] = L
            self.weights[i] = rule.edge_weights * L

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        return np.einsum("eqa,ea->eq", self.N, nodal[self.mesh.cells[self.cells]])


# ----------------------------------------------------------------------
# degrees of freedom
# ----------------------------------------------------------------------

@dataclass
class DofLayout:
    """Global numbering plus the Dirichlet mask and value function.

    Flow: per-vertex unknowns ordered (v1, v2, p), so vertex k owns dofs
    (3k, 3k+1, 3k+2).  Transport: one dof per vertex.  ``dirichlet`` is a
    boolean mask; ``value_fn(t) -> full-length array`` supplies the
    prescribed values (zero where unconstrained).
    """

    n_dofs: int
    dirichlet: np.ndarray
    value_fn: object

    def dirichlet_values(self, t: float) -> np.ndarray:
        return np.asarray(self.value_fn(t), dtype=float)

    def apply_initial(self, u: np.ndarray, t: float) -> np.ndarray:
        g = self.dirichlet_values(t)
        out = u.copy()
        out[self.dirichlet] = g[self.dirichlet]
        return out


def flow_layout(mesh, ale_map, dirichlet_markers) -> DofLayout:
    """Velocity Dirichlet (v = domain velocity) on the given markers.

    Pressure dofs are never constrained (the do-nothing boundary fixes
    the pressure level).
    """
    nv = mesh.n_vertices
    mask = np.zeros(3 * nv, dtype=bool)
    idx = mesh.boundary_vertex_indices(dirichlet_markers)
    mask[3 * idx] = True
    mask[3 * idx + 1] = True

    def value_fn(t):
        g = np.zeros(3 * nv)
        if len(idx):
            vals = ale_map.evaluate(mesh.vertices[idx], t).v_dom
            g[3 * idx] = vals[:, 0]
            g[3 * idx + 1] = vals[:, 1]
        return g

    return DofLayout(3 * nv, mask, value_fn)


def transport_layout(mesh, c_bl: float, dirichlet_markers=None) -> DofLayout:
    """Concentration pinned to the blood value on the membrane windows."""
    from . import mesh as mesh_mod

    if dirichlet_markers is None:
        dirichlet_markers = (mesh_mod.BLOOD,)
    nv = mesh.n_vertices
    mask = np.zeros(nv, dtype=bool)
    idx = mesh.boundary_vertex_indices(dirichlet_markers)
    mask[idx] = True

    def value_fn(t):
        g = np.zeros(nv)
        g[idx] = c_bl
        return g

    return DofLayout(nv, mask, value_fn)


def apply_dirichlet(matrix: sp.spmatrix, rhs: np.ndarray, layout: DofLayout,
                    t: float):
    """Pin Dirichlet rows: identity row, prescribed value on the rhs."""
    g = layout.dirichlet_values(t)
    fixed = np.nonzero(layout.dirichlet)[0]
    b = rhs.copy()
    b[fixed] = g[fixed]
    return constrain_rows(matrix.tocsr(), fixed), b


def constrain_rows(matrix: sp.csr_matrix, fixed: np.ndarray) -> sp.csr_matrix:
    """Replace the given rows by identity rows (in place on a CSR copy)."""
    A = matrix.tocsr(copy=True)
    for row in fixed:
        A.data[A.indptr[row]:A.indptr[row + 1]] = 0.0
    diag = sp.coo_matrix((np.ones(len(fixed)), (fixed, fixed)), shape=A.shape)
    return (A + diag.tocsr()).tocsr()


# ----------------------------------------------------------------------
# patch fluctuation operator
# ----------------------------------------------------------------------

def fluctuation_matrix(mesh) -> sp.csr_matrix:
    """Sparse operator for the fluctuation id - i_2h on nodal fields.

    i_2h interpolates the 4 patch-corner values bilinearly to all 9 patch
    nodes; the weights are algebraic (1/2 on edge midpoints, 1/4 in the
    centre), so the operator is a projection: corners map to themselves
    and applying it twice changes nothing.
    """
    if not mesh.has_patches:
        raise ValueError("mesh has no patch hierarchy")
    nv = mesh.n_vertices
    rows, cols, vals = [], [], []
    seen = np.zeros(nv, dtype=bool)

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for p in range(len(mesh.patches)):
        n = mesh.patch_nodes[p]
        corners = n[:4]
        mids = n[4:8]
        centre = n[8]
        for c in corners:
            if not seen[c]:
                put(c, c, 1.0)
                seen[c] = True
        for k, m in enumerate(mids):
            if not seen[m]:
                put(m, corners[k], 0.5)
                put(m, corners[(k + 1) % 4], 0.5)
                seen[m] = True
        if not seen[centre]:
            for c in corners:
                put(centre, c, 0.25)
            seen[centre] = True
    P = sp.coo_matrix((vals, (rows, cols)), shape=(nv, nv)).tocsr()
    return (sp.identity(nv, format="csr") - P).tocsr()


def apply_fluctuation(field: np.ndarray, mesh) -> np.ndarray:
    """Fluctuation of one nodal scalar field (vanishes at patch corners)."""
    return fluctuation_matrix(mesh) @ np.asarray(field, dtype=float)


def scatter_coo(local: np.ndarray, dof_map: np.ndarray, n: int) -> sp.csr_matrix:
    """Accumulate per-cell local blocks into a global CSR matrix.

    ``local``: (nc, k, k) blocks; ``dof_map``: (nc, k) global indices.
    """
    nc, k, _ = local.shape
    rows = np.repeat(dof_map, k, axis=1).ravel()
    cols = np.tile(dof_map, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def scatter_vector(local: np.ndarray, dof_map: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    np.add.at(out, dof_map.ravel(), local.ravel())
    return out
