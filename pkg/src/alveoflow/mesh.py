"""Patch-hierarchical quadrilateral meshes of the reference domains.

Two geometries are provided: a half-lens (a unit disk centred at (0.5, 0)
cut by the line x = 0) used for the stationary benchmark, and a
parametric alveolar-sac domain (rectangular duct opening into a fan of
semicircular-ish alveoli with short membrane windows to the blood).

Meshes are built once on a coarse block decomposition and refined
uniformly.  Every refinement records the 4 children of each parent cell
as a "patch" together with its 9 nodes; the patch structure drives the
coarse-grid interpolation used by the pressure stabilisations.

Meshes are immutable after construction (arrays are frozen) and safe to
share read-only between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

# Boundary marker codes.
IO = 1      # in-/outflow end of the duct (or the cut line of the half-lens)
WALL = 2    # impermeable wall
BLOOD = 3   # membrane windows towards the blood vessels

MARKER_NAMES = {IO: "io", WALL: "wall", BLOOD: "blood"}

# Local edge e of a cell (v0,v1,v2,v3) joins local vertices e and (e+1)%4.
_EDGE_VERTS = np.array([(0, 1), (1, 2), (2, 3), (3, 0)])


class MeshConstructionError(Exception):
    """Raised when a generator or refinement produces a degenerate cell."""


@dataclass(frozen=True)
class CellMetrics:
    """Reference-cell extents used by the anisotropic stabilisations.

    ``h1_hat``/``h2_hat`` are the axis-aligned extents of the cell in the
    reference domain.  For cells that are not axis-aligned rectangles the
    extents degrade to bounding-box widths and ``non_rectangular`` is set.
    """

    h1_hat: float
    h2_hat: float
    non_rectangular: bool
    _verts: np.ndarray = field(repr=False, compare=False, default=None)

    def hn_hat(self, local_edge: int) -> float:
        """Cell extent normal to the given local edge.

        Coincides with h1_hat for vertical and h2_hat for horizontal
        edges; for skewed cells it is the width of the vertex projections
        onto the edge normal.
        """
        a, b = _EDGE_VERTS[local_edge]
        t = self._verts[b] - self._verts[a]
        n = np.array([t[1], -t[0]])
        n /= np.linalg.norm(n)
        proj = self._verts @ n
        return float(proj.max() - proj.min())


class QuadMesh:
    """Conforming bilinear quadrilateral mesh with boundary markers.

    Attributes
    ----------
    vertices : (nv, 2) float array of reference coordinates [mm]
    cells : (nc, 4) int array, counterclockwise vertex indices
    boundary_cell, boundary_edge, boundary_marker : (nbe,) int arrays
        boundary edges as (cell, local edge, marker code) triples
    patches : (np, 4) int array of sibling cells (empty on a coarsest mesh)
    patch_nodes : (np, 9) int array, per patch the 4 corner vertices, the
        4 outer edge midpoints and the centre vertex
    patch_of_cell : (nc,) int array, -1 where no patch hierarchy exists
    """

    def __init__(self, vertices, cells, boundary, patches=None,
                 patch_nodes=None, projector=None, check: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        boundary = np.ascontiguousarray(boundary, dtype=np.int64).reshape(-1, 3)
        self.boundary_cell = boundary[:, 0].copy()
        self.boundary_edge = boundary[:, 1].copy()
        self.boundary_marker = boundary[:, 2].copy()
        n_patches = 0 if patches is None else len(patches)
        self.patches = (np.zeros((0, 4), np.int64) if patches is None
                        else np.ascontiguousarray(patches, dtype=np.int64))
        self.patch_nodes = (np.zeros((0, 9), np.int64) if patch_nodes is None
                            else np.ascontiguousarray(patch_nodes, dtype=np.int64))
        self.patch_of_cell = np.full(len(self.cells), -1, dtype=np.int64)
        for p in range(n_patches):
            self.patch_of_cell[self.patches[p]] = p
        self.projector = projector
        if check:
            self._check_jacobians()
        for arr in (self.vertices, self.cells, self.boundary_cell,
                    self.boundary_edge, self.boundary_marker, self.patches,
                    self.patch_nodes, self.patch_of_cell):
            arr.flags.writeable = False

    # -- basic queries -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def has_patches(self) -> bool:
        return len(self.patches) > 0

    def boundary_edges(self, marker: int | None = None):
        """(cell, local_edge) pairs, optionally restricted to one marker."""
        if marker is None:
            sel = slice(None)
        else:
            sel = self.boundary_marker == marker
        return np.column_stack([self.boundary_cell[sel], self.boundary_edge[sel]])

    def edge_vertices(self, cell: int, local_edge: int) -> tuple[int, int]:
        a, b = _EDGE_VERTS[local_edge]
        return int(self.cells[cell, a]), int(self.cells[cell, b])

    def boundary_vertex_indices(self, markers) -> np.ndarray:
        """Sorted vertex indices touching any boundary edge with the markers."""
        verts = set()
        for c, e, m in zip(self.boundary_cell, self.boundary_edge,
                           self.boundary_marker):
            if m in markers:
                verts.update(self.edge_vertices(c, e))
        return np.array(sorted(verts), dtype=np.int64)

    def cell_centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    # -- validity ------------------------------------------------------

    def _check_jacobians(self):
        bad = _cells_with_nonpositive_jacobian(self.vertices, self.cells)
        if bad.size:
            raise MeshConstructionError(
                f"bilinear map has non-positive Jacobian in cell(s) {bad[:10].tolist()}"
            )


def _cells_with_nonpositive_jacobian(vertices, cells) -> np.ndarray:
    # 3x3 Gauss points, matching the assembly quadrature.
    g = 0.5 * np.sqrt(3.0 / 5.0)
    pts1 = np.array([0.5 - g, 0.5, 0.5 + g])
    xi, eta = np.meshgrid(pts1, pts1, indexing="ij")
    xi, eta = xi.ravel(), eta.ravel()
    X = vertices[cells]                             # (nc, 4, 2)
    dxi = np.stack([-(1 - eta), (1 - eta), eta, -eta], axis=1)    # (nq, 4)
    deta = np.stack([-(1 - xi), -xi, xi, (1 - xi)], axis=1)
    gx = np.einsum("cak,qa->cqk", X, dxi)           # d x / d xi
    ge = np.einsum("cak,qa->cqk", X, deta)
    det = gx[..., 0] * ge[..., 1] - gx[..., 1] * ge[..., 0]
    return np.unique(np.nonzero(det.min(axis=1) <= 0.0)[0])


def cell_metrics(mesh: QuadMesh, cell: int, tol: float = 1e-10) -> CellMetrics:
    """Axis-aligned reference extents of one cell.

    Cells that are not axis-aligned rectangles (curved-boundary cells and
    the block-decomposition kites) fall back to bounding-box extents with
    ``non_rectangular`` flagged.
    """
    verts = mesh.vertices[mesh.cells[cell]]
    h1 = float(verts[:, 0].max() - verts[:, 0].min())
    h2 = float(verts[:, 1].max() - verts[:, 1].min())
    scale = max(h1, h2)
    # A rectangle has every edge parallel to a coordinate axis.
    rect = True
    for a, b in _EDGE_VERTS:
        d = verts[b] - verts[a]
        if min(abs(d[0]), abs(d[1])) > tol * scale:
            rect = False
            break
    return CellMetrics(h1, h2, not rect, verts.copy())


def cell_extents(mesh: QuadMesh) -> np.ndarray:
    """(nc, 2) array of the per-cell bounding-box extents (h1_hat, h2_hat)."""
    V = mesh.vertices[mesh.cells]
    return V.max(axis=1) - V.min(axis=1)


# ----------------------------------------------------------------------
# uniform refinement
# ----------------------------------------------------------------------

def uniform_refine(mesh: QuadMesh) -> QuadMesh:
    """Split every cell into 4; children of one cell form a patch.

    Midpoints of curved boundary edges are projected back onto the
    analytic boundary via the mesh's projector; markers are inherited by
    the two child edges of every boundary edge.
    """
    verts = mesh.vertices
    cells = mesh.cells
    nv, nc = len(verts), len(cells)

    # unique undirected edges -> new midpoint vertex index
    pairs = {}
    for c in range(nc):
        for e in range(4):
            a, b = cells[c, _EDGE_VERTS[e, 0]], cells[c, _EDGE_VERTS[e, 1]]
            pairs.setdefault((min(a, b), max(a, b)), len(pairs))
    edge_mid = {k: nv + i for k, i in pairs.items()}
    mid_coords = np.zeros((len(pairs), 2))
    for (a, b), i in pairs.items():
        mid_coords[i] = 0.5 * (verts[a] + verts[b])

    # project boundary midpoints onto the analytic boundary
    if mesh.projector is not None:
        for c, e, m in zip(mesh.boundary_cell, mesh.boundary_edge,
                           mesh.boundary_marker):
            a, b = mesh.edge_vertices(c, e)
            i = edge_mid[(min(a, b), max(a, b))] - nv
            mid_coords[i] = mesh.projector(int(m), mid_coords[i])

    def mid(a, b):
        return edge_mid[(min(a, b), max(a, b))]

    # cell centres from the (projected) edge midpoints; for straight cells
    # this equals the bilinear image of the cell centre
    centres = np.zeros((nc, 2))
    for c in range(nc):
        p = cells[c]
        m_ids = [mid(p[0], p[1]), mid(p[1], p[2]), mid(p[2], p[3]), mid(p[3], p[0])]
        centres[c] = mid_coords[[i - nv for i in m_ids]].mean(axis=0)
    centre_idx = nv + len(pairs) + np.arange(nc)

    new_verts = np.vstack([verts, mid_coords, centres])

    new_cells = np.zeros((4 * nc, 4), dtype=np.int64)
    patches = np.zeros((nc, 4), dtype=np.int64)
    patch_nodes = np.zeros((nc, 9), dtype=np.int64)
    for c in range(nc):
        p0, p1, p2, p3 = cells[c]
        e01, e12, e23, e30 = mid(p0, p1), mid(p1, p2), mid(p2, p3), mid(p3, p0)
        cc = centre_idx[c]
        new_cells[4 * c + 0] = (p0, e01, cc, e30)
        new_cells[4 * c + 1] = (e01, p1, e12, cc)
        new_cells[4 * c + 2] = (cc, e12, p2, e23)
        new_cells[4 * c + 3] = (e30, cc, e23, p3)
        patches[c] = (4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3)
        patch_nodes[c] = (p0, p1, p2, p3, e01, e12, e23, e30, cc)

    # children adjacent to parent edge e, with the sub-edge's local id
    child_of_edge = {0: (0, 1), 1: (1, 2), 2: (2, 3), 3: (3, 0)}
    new_boundary = []
    for c, e, m in zip(mesh.boundary_cell, mesh.boundary_edge,
                       mesh.boundary_marker):
        for child in child_of_edge[int(e)]:
            new_boundary.append((4 * c + child, int(e), int(m)))

    return QuadMesh(new_verts, new_cells, np.array(new_boundary),
                    patches, patch_nodes, projector=mesh.projector)


def interior_patch_edges(mesh: QuadMesh) -> np.ndarray:
    """The 4 interior edges of every patch.

    Returns an (ne, 4) int array of rows (vertex_a, vertex_b, cell_plus,
    cell_minus); vertex_a is always the patch centre node.
    """
    if not mesh.has_patches:
        raise ValueError("mesh has no patch hierarchy")
    rows = []
    for p in range(len(mesh.patches)):
        c0, c1, c2, c3 = mesh.patches[p]
        nodes = mesh.patch_nodes[p]
        e01, e12, e23, e30, cc = nodes[4], nodes[5], nodes[6], nodes[7], nodes[8]
        rows += [(cc, e01, c0, c1), (cc, e12, c1, c2),
                 (cc, e23, c2, c3), (cc, e30, c3, c0)]
    return np.array(rows, dtype=np.int64)


# ----------------------------------------------------------------------
# half-lens domain  {x1 > 0, (x1 - 0.5)^2 + x2^2 < 1}
# ----------------------------------------------------------------------

_LENS_CENTRE = np.array([0.5, 0.0])


def _lens_projector(marker: int, point: np.ndarray) -> np.ndarray:
    if marker == WALL:
        d = point - _LENS_CENTRE
        return _LENS_CENTRE + d / np.linalg.norm(d)
    if marker == IO:
        return np.array([0.0, point[1]])
    return point


def generate_half_lens_mesh(levels: int) -> QuadMesh:
    """Boundary-fitted quad mesh of the cut disk, 5 * 4**levels cells.

    The coarse decomposition splits the domain (a pentagon with four arc
    edges and one chord edge) into 5 quads around the disk centre; the
    chord x1 = 0 is marked io and the circular arc wall.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1 so a patch hierarchy exists")
    s = np.sqrt(3.0) / 2.0
    c30 = np.sqrt(3.0) / 2.0
    verts = np.array([
        (0.0, -s), (1.0, -s), (1.5, 0.0), (1.0, s), (0.0, s),   # pentagon corners
        (0.5, 0.0),                                             # disk centre
        (0.5, -1.0), (0.5 + c30, -0.5), (0.5 + c30, 0.5), (0.5, 1.0),  # arc midpoints
        (0.0, 0.0),                                             # chord midpoint
    ])
    cells = np.array([
        (0, 6, 5, 10),
        (1, 7, 5, 6),
        (2, 8, 5, 7),
        (3, 9, 5, 8),
        (4, 10, 5, 9),
    ])
    boundary = np.array([
        (0, 0, WALL), (0, 3, IO),
        (1, 0, WALL), (1, 3, WALL),
        (2, 0, WALL), (2, 3, WALL),
        (3, 0, WALL), (3, 3, WALL),
        (4, 0, IO), (4, 3, WALL),
    ])
    mesh = QuadMesh(verts, cells, boundary, projector=_lens_projector)
    for _ in range(levels):
        mesh = uniform_refine(mesh)
    return mesh


# ----------------------------------------------------------------------
# alveolar sac with duct
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SacGeometry:
    """Parametric alveolar-sac outline; all lengths in mm.

    The sac occupies x >= 0: a fan of ``n_alveoli`` bumps on a base
    half-circle of radius ``sac_radius / (1 + bump_ratio)``, separated by
    ``n_blood_channels`` short membrane windows of width ``blood_width``
    marked blood.  A rectangular duct of length ``duct_length`` attaches
    along the full mouth x = 0; the mouth line is resolved by mesh edges.
    """

    n_alveoli: int = 5
    n_blood_channels: int = 6
    duct_length: float = 0.6
    sac_radius: float = 0.1125          # total radial extent incl. bumps
    bump_ratio: float = 0.5             # bump height / base radius
    blood_width: float = 0.02
    hub_radius_frac: float = 0.55       # inner fan circle / base radius
    core_frac: float = 0.5              # hub rectangle half-size / hub radius
    twist_blend: float = 0.5            # hub-arc angle blend rect <-> rim
    duct_base_cells: int | None = None  # None: ~0.6 mm long base duct cells

    @property
    def base_radius(self) -> float:
        return self.sac_radius / (1.0 + self.bump_ratio)

    def validate(self):
        if self.n_alveoli < 2:
            raise MeshConstructionError("need at least 2 alveoli")
        if self.n_blood_channels != self.n_alveoli + 1:
            raise MeshConstructionError(
                "blood channels sit between/beside the alveoli: "
                f"need n_alveoli + 1 = {self.n_alveoli + 1} channels, "
                f"got {self.n_blood_channels}")
        if self.duct_length <= 0:
            raise MeshConstructionError("duct_length must be positive")
        half_window = self.blood_width / (2.0 * self.base_radius)
        if 2.0 * half_window >= np.pi / self.n_alveoli:
            raise MeshConstructionError(
                "blood channels not placeable: blood_width too large for "
                "the alveolus spacing")


def _sac_rim_breakpoints(geo: SacGeometry):
    """Angles bounding the alternating blood/alveolus windows.

    Returns (angles, markers): 2*(n+1) breakpoints from -pi/2 to pi/2 and
    the 2n+1 per-window markers (BLOOD at every junction, WALL on lobes).
    """
    n = geo.n_alveoli
    delta = geo.blood_width / (2.0 * geo.base_radius)
    phi = -0.5 * np.pi + np.arange(n + 1) * np.pi / n
    angles = [phi[0], phi[0] + 2.0 * delta]
    for k in range(1, n):
        angles += [phi[k] - delta, phi[k] + delta]
    angles += [phi[n] - 2.0 * delta, phi[n]]
    markers = []
    for w in range(2 * n + 1):
        markers.append(BLOOD if w % 2 == 0 else WALL)
    return np.array(angles), np.array(markers)


def _sac_rim_radius(geo: SacGeometry, theta):
    """Rim radius r(theta); C^1 across window boundaries (sin^2 bumps)."""
    angles, markers = _sac_rim_breakpoints(geo)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    r = np.full(theta.shape, geo.base_radius)
    for w in range(len(markers)):
        if markers[w] != WALL:
            continue
        a, b = angles[w], angles[w + 1]
        inside = (theta >= a - 1e-14) & (theta <= b + 1e-14)
        tau = (theta[inside] - a) / (b - a)
        r[inside] = geo.base_radius * (
            1.0 + geo.bump_ratio * np.sin(np.pi * tau) ** 2)
    return r


def generate_alveolar_sac_mesh(geo: SacGeometry = SacGeometry(),
                               level: int = 0) -> QuadMesh:
    """Alveolar-sac mesh; the default geometry gives 656 cells at level 0.

    The coarse decomposition has 7*(n_alveoli + duct columns) - 1 quads:
    a hub rectangle, a shell ring, a fan ring out to the rim and a
    tensor-product duct.  Two uniform refinements are always applied (so
    level 0 already carries a patch hierarchy); ``level`` adds more.
    """
    geo.validate()
    n = geo.n_alveoli
    R0 = geo.base_radius
    r_hub = geo.hub_radius_frac * R0
    b = geo.core_frac * r_hub
    duct_cols = geo.duct_base_cells
    if duct_cols is None:
        duct_cols = max(1, round(geo.duct_length / 0.6))

    rim_angles, _ = _sac_rim_breakpoints(geo)
    rim_pts = np.column_stack([R0 * np.cos(rim_angles), R0 * np.sin(rim_angles)])

    # hub rectangle [0,b] x [-b,b]: (n-1) x 3 cells so that its outer
    # boundary (bottom + right + top) has 2n+1 edges, matching the rim
    px, py = n - 1, 3
    xs = np.linspace(0.0, b, px + 1)
    ys = np.linspace(-b, b, py + 1)

    # rect outer-boundary point sequence, counterclockwise bottom->right->top
    rect_pts = []
    rect_pts += [(x, -b) for x in xs]                       # bottom, left->right
    rect_pts += [(b, y) for y in ys[1:]]                    # right, up
    rect_pts += [(x, b) for x in xs[::-1][1:]]              # top, right->left
    rect_pts = np.array(rect_pts)                           # 2n+2 points

    rect_ang = np.arctan2(rect_pts[:, 1], rect_pts[:, 0])
    hub_ang = (1.0 - geo.twist_blend) * rect_ang + geo.twist_blend * rim_angles
    hub_pts = np.column_stack([r_hub * np.cos(hub_ang), r_hub * np.sin(hub_ang)])

    # global vertex table, dedup by rounded coordinates
    vmap: dict[tuple, int] = {}
    coords: list = []

    def vid(p) -> int:
        key = (round(float(p[0]), 12), round(float(p[1]), 12))
        if key not in vmap:
            vmap[key] = len(coords)
            coords.append((float(p[0]), float(p[1])))
        return vmap[key]

    cells = []

    # hub rectangle cells
    for i in range(px):
        for j in range(py):
            cells.append((vid((xs[i], ys[j])), vid((xs[i + 1], ys[j])),
                          vid((xs[i + 1], ys[j + 1])), vid((xs[i], ys[j + 1]))))
    # shell ring rect boundary -> hub arc
    for i in range(2 * n + 1):
        cells.append((vid(rect_pts[i]), vid(hub_pts[i]),
                      vid(hub_pts[i + 1]), vid(rect_pts[i + 1])))
    # fan ring hub arc -> rim
    for i in range(2 * n + 1):
        cells.append((vid(hub_pts[i]), vid(rim_pts[i]),
                      vid(rim_pts[i + 1]), vid(hub_pts[i + 1])))
    # duct [-l, 0] x [-R0, R0]; its column of right edges must match the
    # mouth vertices laid down by the sac blocks
    mouth_y = np.array([-R0, -r_hub, -b, ys[1], ys[2], b, r_hub, R0])
    duct_x = np.linspace(-geo.duct_length, 0.0, duct_cols + 1)
    for i in range(duct_cols):
        for j in range(len(mouth_y) - 1):
            cells.append((vid((duct_x[i], mouth_y[j])),
                          vid((duct_x[i + 1], mouth_y[j])),
                          vid((duct_x[i + 1], mouth_y[j + 1])),
                          vid((duct_x[i], mouth_y[j + 1]))))

    vertices = np.array(coords)
    cells = np.array(cells, dtype=np.int64)

    boundary = _classify_sac_boundary(vertices, cells, geo)
    projector = _make_sac_projector(geo)
    mesh = QuadMesh(vertices, cells, boundary, projector=projector)
    for _ in range(2 + level):
        mesh = uniform_refine(mesh)
    return mesh


def _classify_sac_boundary(vertices, cells, geo: SacGeometry) -> np.ndarray:
    """Find boundary edges by adjacency and assign markers geometrically."""
    count: dict[tuple, list] = {}
    for c in range(len(cells)):
        for e in range(4):
            a = cells[c, _EDGE_VERTS[e, 0]]
            bb = cells[c, _EDGE_VERTS[e, 1]]
            count.setdefault((min(a, bb), max(a, bb)), []).append((c, e))
    angles, markers = _sac_rim_breakpoints(geo)
    tol = 1e-9 * geo.sac_radius
    rows = []
    for (a, bb), owners in count.items():
        if len(owners) != 1:
            continue
        c, e = owners[0]
        mid = 0.5 * (vertices[a] + vertices[bb])
        if abs(mid[0] + geo.duct_length) < tol:
            m = IO
        elif mid[0] < -tol:
            m = WALL                               # duct top/bottom wall
        else:
            theta = np.arctan2(mid[1], mid[0])
            w = int(np.searchsorted(angles, theta) - 1)
            w = min(max(w, 0), len(markers) - 1)
            m = int(markers[w])
        rows.append((c, e, m))
    return np.array(rows, dtype=np.int64)


def _make_sac_projector(geo: SacGeometry) -> Callable:
    tol = 1e-9 * geo.sac_radius

    def project(marker: int, point: np.ndarray) -> np.ndarray:
        if marker in (WALL, BLOOD) and point[0] > tol:
            theta = np.arctan2(point[1], point[0])
            r = _sac_rim_radius(geo, theta)[0]
            return np.array([r * np.cos(theta), r * np.sin(theta)])
        return point

    return project


def gamma0_edges(mesh: QuadMesh, tol: float = 1e-12) -> np.ndarray:
    """Internal edges resolving the duct/sac interface line x = 0.

    Returns (cell, local_edge) pairs taken from the sac-side cell of each
    edge; every edge on the line appears exactly once.
    """
    on_line = np.abs(mesh.vertices[:, 0]) < tol
    rows = []
    centroids = mesh.cell_centroids()
    for c in range(mesh.n_cells):
        if centroids[c][0] <= 0.0:
            continue
        for e in range(4):
            a, b = mesh.edge_vertices(c, e)
            if on_line[a] and on_line[b]:
                rows.append((c, e))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def sac_cells(mesh: QuadMesh) -> np.ndarray:
    """Indices of cells in the sac region x >= 0."""
    return np.nonzero(mesh.cell_centroids()[:, 0] > 0.0)[0]


# ----------------------------------------------------------------------
# simple rectangle mesh (tests, toy problems)
# ----------------------------------------------------------------------

def rectangle_mesh(x0: float, x1: float, y0: float, y1: float,
                   nx: int, ny: int, refinements: int = 0,
                   marker_fn=None) -> QuadMesh:
    """Tensor-product mesh of [x0,x1] x [y0,y1].

    ``marker_fn(midpoint) -> code`` assigns boundary markers (default all
    WALL).  ``refinements`` uniform refinements build a patch hierarchy.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    idx = lambda i, j: i * (ny + 1) + j
    verts = np.array([(x, y) for x in xs for y in ys])
    cells = []
    for i in range(nx):
        for j in range(ny):
            cells.append((idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)))
    cells = np.array(cells, dtype=np.int64)
    boundary = []
    for c in range(len(cells)):
        for e in range(4):
            a, b = cells[c, _EDGE_VERTS[e, 0]], cells[c, _EDGE_VERTS[e, 1]]
            pa, pb = verts[a], verts[b]
            on = (np.isclose(pa[0], pb[0]) and (np.isclose(pa[0], x0) or np.isclose(pa[0], x1))) or \
                 (np.isclose(pa[1], pb[1]) and (np.isclose(pa[1], y0) or np.isclose(pa[1], y1)))
            if on:
                mid = 0.5 * (pa + pb)
                m = WALL if marker_fn is None else marker_fn(mid)
                boundary.append((c, e, m))
    mesh = QuadMesh(verts, cells, np.array(boundary))
    for _ in range(refinements):
        mesh = uniform_refine(mesh)
    return mesh


# ----------------------------------------------------------------------
# legacy VTK export
# ----------------------------------------------------------------------

def write_vtk(path, points, quads, *, lines=None, point_data=None,
              cell_data=None, title="alveoflow"):
    """Legacy ASCII VTK unstructured grid with QUAD (and optional LINE) cells.

    ``point_data``/``cell_data`` map array names to per-point / per-cell
    values; vector point arrays must have 3 components.  Cell data covers
    quads first, then lines.
    """
    points = np.asarray(points, dtype=float)
    quads = np.asarray(quads, dtype=np.int64)
    lines = np.zeros((0, 2), np.int64) if lines is None else np.asarray(lines)
    ncell = len(quads) + len(lines)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            f.write(f"{p[0]:.10e} {p[1]:.10e} 0.0\n")
        size = 5 * len(quads) + 3 * len(lines)
        f.write(f"CELLS {ncell} {size}\n")
        for q in quads:
            f.write(f"4 {q[0]} {q[1]} {q[2]} {q[3]}\n")
        for l in lines:
            f.write(f"2 {l[0]} {l[1]}\n")
        f.write(f"CELL_TYPES {ncell}\n")
        f.write("".join(["9\n"] * len(quads)))
        f.write("".join(["3\n"] * len(lines)))
        if cell_data:
            f.write(f"CELL_DATA {ncell}\n")
            for name, vals in cell_data.items():
                vals = np.asarray(vals)
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in vals:
                    f.write(f"{float(v):.10e}\n")
        if point_data:
            f.write(f"POINT_DATA {len(points)}\n")
            for name, vals in point_data.items():
                vals = np.asarray(vals, dtype=float)
                if vals.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in vals:
                        f.write(f"{v:.10e}\n")
                else:
                    f.write(f"VECTORS {name} double\n")
                    for v in vals:
                        f.write(f"{v[0]:.10e} {v[1]:.10e} {v[2]:.10e}\n")


def export_mesh_vtk(mesh: QuadMesh, path):
    """Dump a mesh for inspection: quads with a region tag, boundary lines
    with their marker codes."""
    region = (mesh.cell_centroids()[:, 0] > 0.0).astype(float)
    lines = []
    line_marker = []
    for c, e, m in zip(mesh.boundary_cell, mesh.boundary_edge,
                       mesh.boundary_marker):
        lines.append(mesh.edge_vertices(c, e))
        line_marker.append(float(m))
    marker = np.concatenate([region * 0.0, np.array(line_marker)]) \
        if lines else region * 0.0
    write_vtk(path, mesh.vertices, mesh.cells,
              lines=np.array(lines, dtype=np.int64).reshape(-1, 2),
              cell_data={"marker": marker})
