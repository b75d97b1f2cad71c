"""Synthetic multi-level rooftops and controlled degradation of point clouds.

These scenes stand in for field data: every quantity a test needs (true
surface, true perturbation, which points were removed) is known exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import SceneError
from .geometry import PointCloud, TriangleMesh, merge_meshes, sample_mesh
from .registration import RigidTransform

FEATURE_KINDS = ("box", "cylinder", "dome", "wall")


@dataclass(frozen=True)
class RoofSegment:
    name: str
    origin: Tuple[float, float]
    size: Tuple[float, float]
    elevation: float

    def bounds(self):
        (x, y), (w, d) = self.origin, self.size
        return x, y, x + w, y + d


@dataclass(frozen=True)
class Feature:
    """A rooftop object standing on a segment.

    ``box``: ``center``, ``size`` = (sx, sy, height).
    ``cylinder``: ``center``, ``radius``, ``height``.
    ``dome``: ``center``, ``radius`` (hemisphere).
    ``wall``: ``start``, ``end``, ``thickness``, ``height``.
    """

    kind: str
    segment: str
    center: Tuple[float, float] = (0.0, 0.0)
    size: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    radius: float = 0.5
    height: float = 1.0
    start: Tuple[float, float] = (0.0, 0.0)
    end: Tuple[float, float] = (1.0, 0.0)
    thickness: float = 0.03

    def footprint_bounds(self):
        if self.kind == "box":
            cx, cy = self.center
            sx, sy, _ = self.size
            return cx - sx / 2, cy - sy / 2, cx + sx / 2, cy + sy / 2
        if self.kind in ("cylinder", "dome"):
            cx, cy = self.center
            return cx - self.radius, cy - self.radius, cx + self.radius, cy + self.radius
        (x0, y0), (x1, y1) = self.start, self.end
        h = self.thickness / 2
        return min(x0, x1) - h, min(y0, y1) - h, max(x0, x1) + h, max(y0, y1) + h


@dataclass
class SceneSpec:
    footprint: Tuple[float, float]
    segments: List[RoofSegment]
    features: List[Feature] = field(default_factory=list)
    seed: int = 0
    density: float = 400.0
    resolution: int = 24

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            segs = [RoofSegment(s["name"], tuple(s["origin"]), tuple(s["size"]), float(s["elevation"])) for s in d["segments"]]
            feats = []
            for f in d.get("features", []):
                f = dict(f)
                for key in ("center", "size", "start", "end"):
                    if key in f:
                        f[key] = tuple(f[key])
                feats.append(Feature(**f))
            return cls(tuple(d["footprint"]), segs, feats, int(d.get("seed", 0)), float(d.get("density", 400.0)),
                       int(d.get("resolution", 24)))
        except (KeyError, TypeError) as exc:
            raise SceneError(f"invalid scene spec: {exc}") from exc

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            base = {"kind": f.kind, "segment": f.segment}
            if f.kind == "box":
                base.update(center=list(f.center), size=list(f.size))
            elif f.kind == "cylinder":
                base.update(center=list(f.center), radius=f.radius, height=f.height)
            elif f.kind == "dome":
                base.update(center=list(f.center), radius=f.radius)
            else:
                base.update(start=list(f.start), end=list(f.end), thickness=f.thickness, height=f.height)
            feats.append(base)
        return {
            "footprint": list(self.footprint),
            "segments": [{"name": s.name, "origin": list(s.origin), "size": list(s.size), "elevation": s.elevation}
                         for s in self.segments],
            "features": feats,
            "seed": self.seed,
            "density": self.density,
            "resolution": self.resolution,
        }

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _overlap(a, b, eps=1e-12):
    return a[0] < b[2] - eps and b[0] < a[2] - eps and a[1] < b[3] - eps and b[1] < a[3] - eps


def _inside(inner, outer, eps=1e-9):
    return inner[0] >= outer[0] - eps and inner[1] >= outer[1] - eps and inner[2] <= outer[2] + eps and inner[3] <= outer[3] + eps


def validate_scene(spec: SceneSpec):
    W, D = spec.footprint
    if not (W > 0 and D > 0):
        raise SceneError("footprint must have positive dimensions")
    if not spec.segments:
        raise SceneError("scene needs at least one roof segment")
    names = [s.name for s in spec.segments]
    if len(set(names)) != len(names):
        raise SceneError("segment names must be unique")
    for s in spec.segments:
        if s.elevation < 0:
            raise SceneError(f"segment {s.name}: elevation must be >= 0")
        if not (s.size[0] > 0 and s.size[1] > 0):
            raise SceneError(f"segment {s.name}: size must be positive")
        if not _inside(s.bounds(), (0.0, 0.0, W, D)):
            raise SceneError(f"segment {s.name} extends beyond the footprint")
    for i, a in enumerate(spec.segments):
        for b in spec.segments[i + 1:]:
            if _overlap(a.bounds(), b.bounds()):
                raise SceneError(f"segments {a.name} and {b.name} overlap")
    by_name = {s.name: s for s in spec.segments}
    for k, f in enumerate(spec.features):
        if f.kind not in FEATURE_KINDS:
            raise SceneError(f"feature {k}: unknown kind {f.kind!r}")
        if f.segment not in by_name:
            raise SceneError(f"feature {k}: unknown segment {f.segment!r}")
        if f.kind == "box" and not all(v > 0 for v in f.size):
            raise SceneError(f"feature {k}: box dimensions must be positive")
        if f.kind in ("cylinder", "dome") and not f.radius > 0:
            raise SceneError(f"feature {k}: radius must be positive")
        if f.kind in ("cylinder", "wall") and not f.height > 0:
            raise SceneError(f"feature {k}: height must be positive")
        if f.kind == "wall" and (not f.thickness > 0 or f.start == f.end):
            raise SceneError(f"feature {k}: wall needs positive thickness and distinct ends")
        if not _inside(f.footprint_bounds(), by_name[f.segment].bounds()):
            raise SceneError(f"feature {k} ({f.kind}) lies outside segment {f.segment}")
    for i, a in enumerate(spec.features):
        for j in range(i + 1, len(spec.features)):
            b = spec.features[j]
            if a.segment == b.segment and _overlap(a.footprint_bounds(), b.footprint_bounds()):
                raise SceneError(f"features {i} and {j} overlap")


def _prism(outline: np.ndarray, z0: float, z1: float) -> TriangleMesh:
    """Vertical walls and a top cap over a CCW convex outline; the base is open."""
    n = len(outline)
    bottom = np.column_stack([outline, np.full(n, z0)])
    top = np.column_stack([outline, np.full(n, z1)])
    verts = np.vstack([bottom, top, [[*outline.mean(axis=0), z1]]])
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris += [(i, j, n + j), (i, n + j, n + i)]
        tris.append((n + i, n + j, 2 * n))
    return TriangleMesh(verts, tris)


def _box(cx, cy, sx, sy, z0, h):
    outline = np.array([[cx - sx / 2, cy - sy / 2], [cx + sx / 2, cy - sy / 2], [cx + sx / 2, cy + sy / 2],
                        [cx - sx / 2, cy + sy / 2]])
    return _prism(outline, z0, z0 + h)


def _circle(cx, cy, r, n):
    a = 2 * np.pi * np.arange(n) / n
    return np.column_stack([cx + r * np.cos(a), cy + r * np.sin(a)])


def _dome(cx, cy, r, z0, n):
    rings = max(n // 4, 3)
    verts = []
    for k in range(rings):
        phi = (np.pi / 2) * k / rings
        ring = _circle(cx, cy, r * np.cos(phi), n)
        verts.append(np.column_stack([ring, np.full(n, z0 + r * np.sin(phi))]))
    verts = np.vstack(verts + [[[cx, cy, z0 + r]]])
    apex = len(verts) - 1
    tris = []
    for k in range(rings - 1):
        for i in range(n):
            j = (i + 1) % n
            a, b = k * n + i, k * n + j
            tris += [(a, b, b + n), (a, b + n, a + n)]
    top = (rings - 1) * n
    for i in range(n):
        tris.append((top + i, top + (i + 1) % n, apex))
    return TriangleMesh(verts, tris)


def _wall(f: Feature, z0):
    p0, p1 = np.asarray(f.start, float), np.asarray(f.end, float)
    u = (p1 - p0) / np.linalg.norm(p1 - p0)
    nrm = np.array([-u[1], u[0]]) * f.thickness / 2
    outline = np.array([p0 - nrm, p1 - nrm, p1 + nrm, p0 + nrm])
    return _prism(outline, z0, z0 + f.height)


def scene_mesh(spec: SceneSpec) -> TriangleMesh:
    validate_scene(spec)
    parts = []
    by_name = {s.name: s for s in spec.segments}
    for s in spec.segments:
        x0, y0, x1, y1 = s.bounds()
        z = s.elevation
        parts.append(TriangleMesh([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], [(0, 1, 2), (0, 2, 3)]))
    for f in spec.features:
        z0 = by_name[f.segment].elevation
        if f.kind == "box":
            parts.append(_box(f.center[0], f.center[1], f.size[0], f.size[1], z0, f.size[2]))
        elif f.kind == "cylinder":
            parts.append(_prism(_circle(f.center[0], f.center[1], f.radius, spec.resolution), z0, z0 + f.height))
        elif f.kind == "dome":
            parts.append(_dome(f.center[0], f.center[1], f.radius, z0, spec.resolution))
        else:
            parts.append(_wall(f, z0))
    return merge_meshes(parts)


def generate_scene(spec: SceneSpec) -> Tuple[TriangleMesh, PointCloud]:
    """Mesh of the scene plus a dense ground-truth cloud sampled from it."""
    mesh = scene_mesh(spec)
    return mesh, sample_mesh(mesh, spec.density, seed=spec.seed)


def default_scene(seed: int = 0, density: float = 400.0) -> SceneSpec:
    """Five roof levels (1.71 m to 14.16 m AGL) with HVAC boxes, a dome, a vent stack and a thin wall."""
    segs = [
        RoofSegment("A", (0.0, 0.0), (8.0, 6.0), 14.16),
        RoofSegment("B", (8.0, 0.0), (6.0, 6.0), 11.3),
        RoofSegment("C", (0.0, 6.0), (7.0, 5.0), 8.4),
        RoofSegment("D", (7.0, 6.0), (7.0, 5.0), 4.9),
        RoofSegment("E", (14.0, 0.0), (4.0, 11.0), 1.71),
    ]
    feats = [
        Feature("dome", "A", center=(3.0, 3.0), radius=1.6),
        Feature("box", "A", center=(6.6, 1.2), size=(1.2, 0.9, 0.8)),
        Feature("box", "B", center=(10.5, 3.5), size=(2.0, 1.4, 1.1)),
        Feature("cylinder", "B", center=(12.6, 1.2), radius=0.35, height=1.4),
        Feature("wall", "C", start=(0.5, 10.3), end=(6.0, 10.3), thickness=0.03, height=1.0),
        Feature("box", "C", center=(2.5, 7.8), size=(1.6, 1.0, 0.6)),
        Feature("box", "D", center=(10.0, 8.5), size=(1.0, 2.2, 1.3)),
        Feature("cylinder", "E", center=(16.0, 4.0), radius=0.5, height=0.9),
        Feature("box", "E", center=(15.5, 8.5), size=(1.5, 1.2, 0.7)),
    ]
    return SceneSpec((18.0, 11.0), segs, feats, seed=seed, density=density)


@dataclass(frozen=True)
class DegradeSpec:
    noise_sigma: float = 0.0
    dropout: float = 0.0
    perturbation: Optional[RigidTransform] = None
    occluders: Tuple[Tuple[Tuple[float, float, float], float], ...] = ()

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise SceneError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "dropout": self.dropout,
            "perturbation": None if self.perturbation is None else self.perturbation.to_dict(),
            "occluders": [{"normal": list(n), "offset": o} for n, o in self.occluders],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradeSpec":
        pert = d.get("perturbation")
        return cls(
            float(d.get("noise_sigma", 0.0)),
            float(d.get("dropout", 0.0)),
            None if pert is None else RigidTransform.from_dict(pert),
            tuple((tuple(o["normal"]), float(o["offset"])) for o in d.get("occluders", [])),
        )


def degrade(cloud: PointCloud, spec: DegradeSpec, seed: int = 0) -> Tuple[PointCloud, RigidTransform]:
    """Occlude, drop, jitter and move a cloud; returns the result and the applied transform.

    Occluders are half-spaces ``normal . p > offset`` whose points are removed.
    Dropout removes exactly ``round(n * dropout)`` of the remaining points.
    """
    rng = np.random.default_rng(seed)
    keep = np.ones(len(cloud), dtype=bool)
    for normal, offset in spec.occluders:
        keep &= cloud.points @ np.asarray(normal, dtype=float) <= offset
    idx = np.flatnonzero(keep)
    n_drop = int(round(len(idx) * spec.dropout))
    if n_drop:
        idx = np.sort(rng.permutation(idx)[: len(idx) - n_drop])
    out = cloud.select(idx)
    pts = out.points
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
    transform = spec.perturbation or RigidTransform.identity()
    pts = transform.apply(pts)
    return out.with_points(pts), transform


def random_perturbation(rng: np.random.Generator, max_angle_deg: float, max_translation: float,
                        center=None) -> RigidTransform:
    """Rotation about a random axis through ``center`` plus a random shift, both bounded."""
    axis = rng.normal(size=3)
    angle = rng.uniform(-max_angle_deg, max_angle_deg)
    direction = rng.normal(size=3)
    shift = direction / np.linalg.norm(direction) * rng.uniform(0, max_translation)
    return RigidTransform.from_axis_angle(axis, angle, shift, center=center)
