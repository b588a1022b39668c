"""Time-dependent maps from the reference domain to the current domain.

Every map provides, at arbitrary reference points and times, the mapped
position, the deformation gradient F, its determinant J, the inverse
transpose and the domain velocity (the time derivative of the map).  All
three kinds used in the simulations are diagonal stretches, but the
evaluation interface is pointwise so composed maps stay possible.

Maps are pure functions of (x_hat, t): stateless and reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AleValues:
    """Map data at a batch of points: arrays over the leading point axis."""

    x: np.ndarray        # (n, 2) mapped positions
    F: np.ndarray        # (n, 2, 2) gradient of the map
    J: np.ndarray        # (n,) determinant of F
    Finv: np.ndarray     # (n, 2, 2)
    FinvT: np.ndarray    # (n, 2, 2)
    v_dom: np.ndarray    # (n, 2) domain velocity


class DegenerateMapError(Exception):
    """The map determinant is non-positive somewhere."""


def _diagonal_values(points, sx, sy, dsx_dt, check=True):
    """Assemble AleValues for x -> (sx*x1, sy*x2) with pointwise factors."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    sx = np.broadcast_to(np.asarray(sx, dtype=float), (n,))
    sy = np.broadcast_to(np.asarray(sy, dtype=float), (n,))
    dsx = np.broadcast_to(np.asarray(dsx_dt, dtype=float), (n,))
    J = sx * sy
    if check and np.any(J <= 0.0):
        i = int(np.argmin(J))
        raise DegenerateMapError(
            f"J = {J[i]:.3e} <= 0 at reference point {points[i]}")
    x = np.column_stack([sx * points[:, 0], sy * points[:, 1]])
    F = np.zeros((n, 2, 2))
    F[:, 0, 0] = sx
    F[:, 1, 1] = sy
    Finv = np.zeros_like(F)
    Finv[:, 0, 0] = 1.0 / sx
    Finv[:, 1, 1] = 1.0 / sy
    v_dom = np.column_stack([dsx * points[:, 0], np.zeros(n)])
    return AleValues(x, F, J, Finv, Finv.transpose(0, 2, 1), v_dom)


@dataclass(frozen=True)
class IdentityMap:
    """Fixed domain: F = I, J = 1, zero domain velocity."""

    def evaluate(self, points, t: float) -> AleValues:
        points = np.asarray(points, dtype=float)
        n = len(points)
        return _diagonal_values(points, np.ones(n), np.ones(n), np.zeros(n))


@dataclass(frozen=True)
class AxisScaleMap:
    """Stationary horizontal stretch x -> (a*x1, x2) with a > 0."""

    a: float

    def evaluate(self, points, t: float) -> AleValues:
        points = np.asarray(points, dtype=float)
        n = len(points)
        return _diagonal_values(points, np.full(n, self.a), np.ones(n),
                                np.zeros(n))


@dataclass(frozen=True)
class AlveolarSinMap:
    """Breathing motion of the sac: x1 -> x1 * (1 - a*cos(omega*t)) on
    x1 >= 0, identity on the duct x1 <= 0.

    With the default amplitude the sac is smallest at t = 0 and largest
    half a period later, so inspiration occupies the first half period.
    The gradient jumps across x1 = 0; evaluation is intended at cell
    interior points of meshes resolving that line.
    """

    a: float = 0.09
    omega: float = 0.4 * np.pi

    def evaluate(self, points, t: float) -> AleValues:
        points = np.asarray(points, dtype=float)
        n = len(points)
        s = 1.0 - self.a * np.cos(self.omega * t)
        ds = self.a * self.omega * np.sin(self.omega * t)
        sac = points[:, 0] > 0.0
        sx = np.where(sac, s, 1.0)
        dsx = np.where(sac, ds, 0.0)
        return _diagonal_values(points, sx, np.ones(n), dsx)


@dataclass(frozen=True)
class ComposedMap:
    """Composition hook: applies ``outer`` after ``inner``.

    Only sensible for maps whose composition is again diagonal (all the
    built-in kinds); kept for experiments with modified motions.
    """

    outer: object
    inner: object

    def evaluate(self, points, t: float) -> AleValues:
        vi = self.inner.evaluate(points, t)
        vo = self.outer.evaluate(vi.x, t)
        F = np.einsum("nij,njk->nik", vo.F, vi.F)
        Finv = np.einsum("nij,njk->nik", vi.Finv, vo.Finv)
        # chain rule for the velocity: d/dt outer(inner(x,t),t)
        v = vo.v_dom + np.einsum("nij,nj->ni", vo.F, vi.v_dom)
        return AleValues(vo.x, F, vo.J * vi.J, Finv,
                         Finv.transpose(0, 2, 1), v)


def map_from_config(kind: str, **kw):
    kind = kind.strip().lower()
    if kind == "identity":
        return IdentityMap()
    if kind == "axis_scale":
        return AxisScaleMap(a=float(kw["a"]))
    if kind == "alveolar_sin":
        return AlveolarSinMap(a=float(kw.get("a", 0.09)),
                              omega=float(kw.get("omega", 0.4 * np.pi)))
    raise ValueError(f"unknown ALE map kind {kind!r}")


@dataclass(frozen=True)
class MapReport:
    min_j: float
    max_j: float
    worst_cell: int
    worst_time: float


def validate_map(ale_map, mesh, t_samples) -> MapReport:
    """Check J > 0 at every cell quadrature point for all sampled times."""
    from .fem_core import CellQuadCache, default_cell_rule

    cache = CellQuadCache(mesh, default_cell_rule())
    pts = cache.points.reshape(-1, 2)
    min_j, max_j = np.inf, -np.inf
    worst_cell, worst_time = -1, float("nan")
    for t in np.atleast_1d(t_samples):
        vals = ale_map.evaluate(pts, float(t))
        J = vals.J.reshape(cache.n_cells, -1)
        jmin = J.min(axis=1)
        c = int(np.argmin(jmin))
        if jmin[c] < min_j:
            min_j, worst_cell, worst_time = float(jmin[c]), c, float(t)
        max_j = max(max_j, float(J.max()))
    if min_j <= 0.0:
        raise DegenerateMapError(
            f"J = {min_j:.3e} <= 0 in cell {worst_cell} at t = {worst_time}")
    return MapReport(min_j, max_j, worst_cell, worst_time)
