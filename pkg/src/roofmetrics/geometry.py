"""Point clouds, triangle meshes, spatial queries, sampling and subsampling.

All coordinates are metres. Arrays stored on the dataclasses are made
read-only on construction so the objects can be shared between threads.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, EmptySurfaceError, GeometryError


def _frozen(a, dtype, shape_tail=None, name="array"):
    arr = np.array(a, dtype=dtype, copy=True)
    if shape_tail is not None:
        if arr.size == 0:
            arr = arr.reshape((0,) + shape_tail)
        if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
            raise GeometryError(f"{name} must have shape (n, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    scalars: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _frozen(self.points, np.float64, (3,), "points")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.colors is not None:
            cols = np.asarray(self.colors)
            if cols.size and (cols.min() < 0 or cols.max() > 255):
                raise GeometryError("colors must be 8-bit per channel")
            cols = _frozen(cols, np.uint8, (3,), "colors")
            if len(cols) != n:
                raise GeometryError(f"{len(cols)} colors for {n} points")
            object.__setattr__(self, "colors", cols)
        if self.scalars is not None:
            sc = _frozen(self.scalars, np.float64, None, "scalars").reshape(-1)
            if len(sc) != n:
                raise GeometryError(f"{len(sc)} scalar values for {n} points")
            sc.setflags(write=False)
            object.__setattr__(self, "scalars", sc)

    def __len__(self):
        return len(self.points)

    def select(self, mask_or_index) -> "PointCloud":
        """Sub-cloud by boolean mask or index array, carrying attributes along."""
        idx = np.asarray(mask_or_index)
        return PointCloud(
            self.points[idx],
            None if self.colors is None else self.colors[idx],
            None if self.scalars is None else self.scalars[idx],
        )

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.colors, self.scalars)

    def with_scalars(self, scalars) -> "PointCloud":
        return PointCloud(self.points, self.colors, scalars)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        verts = _frozen(self.vertices, np.float64, (3,), "vertices")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("vertex coordinates must be finite")
        tris = _frozen(self.triangles, np.int64, (3,), "triangles")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise GeometryError("triangle index out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if self.colors is not None:
            cols = _frozen(self.colors, np.uint8, (3,), "colors")
            if len(cols) != len(verts):
                raise GeometryError(f"{len(cols)} colors for {len(verts)} vertices")
            object.__setattr__(self, "colors", cols)

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())


@dataclass(frozen=True, eq=False)
class BoundingRegion:
    """Axis-aligned box, or a convex polygon footprint in the xy-plane.

    Use :meth:`box` or :meth:`polygon` to construct. A polygon region takes
    an optional ``z_range``; otherwise it is unbounded vertically.
    """

    kind: str
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)
    vertices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("box", "polygon"):
            raise GeometryError(f"unknown region kind {self.kind!r}")
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise GeometryError("region bounds must be 3-vectors")
        if self.kind == "box" and not np.all(hi > lo):
            raise GeometryError("box region has empty interior")
        if self.kind == "polygon":
            poly = np.asarray(self.vertices, dtype=float)
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise GeometryError("polygon needs at least 3 (x, y) vertices")
            signed = _signed_area(poly)
            if abs(signed) <= 0.0:
                raise GeometryError("polygon has empty interior")
            if signed < 0:
                poly = poly[::-1].copy()
            if not _is_convex_ccw(poly):
                raise GeometryError("polygon footprint must be convex")
            if not hi[2] > lo[2]:
                raise GeometryError("polygon z range is empty")
            object.__setattr__(self, "vertices", _frozen(poly, np.float64, (2,), "vertices"))
        object.__setattr__(self, "lo", _frozen(lo, np.float64))
        object.__setattr__(self, "hi", _frozen(hi, np.float64))

    @classmethod
    def box(cls, lo, hi) -> "BoundingRegion":
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def polygon(cls, vertices, z_range=(-np.inf, np.inf)) -> "BoundingRegion":
        poly = np.asarray(vertices, dtype=float)
        lo = [poly[:, 0].min(), poly[:, 1].min(), z_range[0]] if poly.ndim == 2 and len(poly) else [0, 0, z_range[0]]
        hi = [poly[:, 0].max(), poly[:, 1].max(), z_range[1]] if poly.ndim == 2 and len(poly) else [0, 0, z_range[1]]
        return cls("polygon", lo=lo, hi=hi, vertices=poly)

    def footprint(self) -> np.ndarray:
        """Counter-clockwise xy outline of the region."""
        if self.kind == "polygon":
            return np.array(self.vertices)
        (x0, y0), (x1, y1) = self.lo[:2], self.hi[:2]
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        if self.kind == "box":
            return np.all((p >= self.lo) & (p <= self.hi), axis=1)
        inside = (p[:, 2] >= self.lo[2]) & (p[:, 2] <= self.hi[2])
        poly = self.vertices
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            cross = (b[0] - a[0]) * (p[:, 1] - a[1]) - (b[1] - a[1]) * (p[:, 0] - a[0])
            inside &= cross >= 0
        return inside

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"box": {"min": self.lo.tolist(), "max": self.hi.tolist()}}
        d = {"polygon": self.vertices.tolist()}
        if np.isfinite(self.lo[2]) or np.isfinite(self.hi[2]):
            # open ends are written as null so the dict stays valid JSON
            d["z_range"] = [float(z) if np.isfinite(z) else None for z in (self.lo[2], self.hi[2])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingRegion":
        if "box" in d:
            return cls.box(d["box"]["min"], d["box"]["max"])
        if "polygon" in d:
            z = d.get("z_range") or (None, None)
            z_range = (-np.inf if z[0] is None else z[0], np.inf if z[1] is None else z[1])
            return cls.polygon(d["polygon"], z_range)
        raise GeometryError("region needs a 'box' or 'polygon' entry")


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _is_convex_ccw(poly):
    a = poly
    b = np.roll(poly, -1, axis=0)
    c = np.roll(poly, -2, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - b[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - b[:, 0])
    return bool(np.all(cross >= -1e-12))


def point_distances(points, query) -> np.ndarray:
    """Euclidean distances from each row of ``points`` to ``query``.

    Written out per coordinate so every element is computed the same way
    no matter how the rows are batched.
    """
    d = np.asarray(points, dtype=float) - np.asarray(query, dtype=float)
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


class SpatialIndex:
    """Immutable kd-tree over a point cloud.

    Radius membership is decided with :func:`point_distances` (inclusive
    at the radius) so that results agree exactly with a brute-force scan.
    """

    def __init__(self, cloud: PointCloud, workers: int = 1):
        if len(cloud) == 0:
            raise EmptyCloudError("cannot index an empty cloud")
        self.cloud = cloud
        self.points = cloud.points
        self.workers = workers
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def nearest(self, queries, max_distance: float = np.inf):
        """Return ``(distances, indices)`` of the nearest indexed point for each query.

        Queries with nothing within ``max_distance`` get distance ``inf`` and
        index ``len(self)``.
        """
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        bound = max_distance * (1 + 1e-9) if np.isfinite(max_distance) else np.inf
        _, idx = self._tree.query(q, k=1, distance_upper_bound=bound, workers=self.workers)
        idx = np.asarray(idx, dtype=np.int64)
        found = idx < len(self.points)
        dist = np.full(len(q), np.inf)
        dist[found] = point_distances(self.points[idx[found]], q[found])
        return dist, idx

    def radius(self, query, r: float) -> np.ndarray:
        """Sorted indices of all points within distance ``r`` (inclusive) of ``query``."""
        q = np.asarray(query, dtype=float).reshape(3)
        cand = np.asarray(self._tree.query_ball_point(q, r * (1 + 1e-9) + 1e-15), dtype=np.int64)
        if len(cand) == 0:
            return cand
        cand.sort()
        return cand[point_distances(self.points[cand], q) <= r]

    def radius_many(self, queries, r: float):
        """List of sorted index arrays, one per query."""
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        lists = self._tree.query_ball_point(q, r * (1 + 1e-9) + 1e-15, workers=self.workers)
        out = []
        for qi, cand in zip(q, lists):
            cand = np.asarray(cand, dtype=np.int64)
            cand.sort()
            out.append(cand[point_distances(self.points[cand], qi) <= r] if len(cand) else cand)
        return out


def build_index(cloud: PointCloud, workers: int = 1) -> SpatialIndex:
    return SpatialIndex(cloud, workers=workers)


def sample_mesh(mesh: TriangleMesh, density: float, seed: int = 0) -> PointCloud:
    """Sample ``round(area * density)`` points uniformly over the mesh surface.

    Triangles are chosen with probability proportional to area and points
    placed by uniform barycentric sampling. Zero-area triangles are skipped
    with a warning. Vertex colors, if any, are interpolated.
    """
    if not density > 0:
        raise GeometryError("density must be positive")
    areas = mesh.triangle_areas()
    degenerate = ~(areas > 0)
    if np.any(degenerate):
        warnings.warn(f"skipping {int(degenerate.sum())} degenerate triangle(s)", stacklevel=2)
        areas = np.where(degenerate, 0.0, areas)
    total = float(areas.sum())
    if not total > 0:
        raise EmptySurfaceError("mesh has no non-degenerate triangles (empty surface)")
    count = int(round(total * density))
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=count, p=areas / total)
    u = rng.random((count, 2))
    # fold samples from the far half of the parallelogram back into the triangle
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    tri = mesh.triangles[face]
    v0 = mesh.vertices[tri[:, 0]]
    e1 = mesh.vertices[tri[:, 1]] - v0
    e2 = mesh.vertices[tri[:, 2]] - v0
    points = v0 + u[:, :1] * e1 + u[:, 1:] * e2
    colors = None
    if mesh.colors is not None:
        w = np.column_stack([1.0 - u.sum(axis=1), u])
        c = mesh.colors[tri].astype(float)
        colors = np.clip(np.rint(np.einsum("ij,ijk->ik", w, c)), 0, 255).astype(np.uint8)
    return PointCloud(points, colors)


def subsample_min_distance(cloud: PointCloud, d_min: float, seed: Optional[int] = None) -> PointCloud:
    """Greedy minimum-distance subsampling.

    Points are visited in input order (or a seeded shuffle of it when
    ``seed`` is given); a point is kept unless an already-kept point lies
    strictly closer than ``d_min``. Kept points retain their input order.
    """
    if not d_min > 0:
        raise GeometryError("d_min must be positive")
    n = len(cloud)
    if n == 0:
        return cloud
    pts = cloud.points
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    pairs = cKDTree(pts).query_pairs(d_min, output_type="ndarray").reshape(-1, 2)
    pairs = pairs[point_distances(pts[pairs[:, 0]], pts[pairs[:, 1]]) < d_min]
    # orient each conflicting pair from the earlier-visited to the later-visited point
    first = np.where(rank[pairs[:, 0]] < rank[pairs[:, 1]], pairs[:, 0], pairs[:, 1])
    second = pairs[:, 0] + pairs[:, 1] - first
    by_first = np.argsort(first, kind="stable")
    first, second = first[by_first], second[by_first]
    starts = np.searchsorted(first, np.arange(n + 1))

    removed = np.zeros(n, dtype=bool)
    for i in order:
        if removed[i]:
            continue
        removed[second[starts[i]:starts[i + 1]]] = True
    return cloud.select(np.flatnonzero(~removed))


def crop(cloud: PointCloud, region: BoundingRegion) -> PointCloud:
    """Points inside ``region``, boundary inclusive."""
    return cloud.select(region.contains(cloud.points))


def concat_clouds(clouds: Sequence[PointCloud]) -> PointCloud:
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        return PointCloud.empty()
    pts = np.concatenate([c.points for c in clouds])
    cols = None
    if all(c.colors is not None for c in clouds):
        cols = np.concatenate([c.colors for c in clouds])
    sc = None
    if all(c.scalars is not None for c in clouds):
        sc = np.concatenate([c.scalars for c in clouds])
    return PointCloud(pts, cols, sc)


def merge_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))
