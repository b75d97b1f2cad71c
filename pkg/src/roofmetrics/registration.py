"""Rigid alignment: closed-form point-pair fit and point-to-point ICP."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import NoOverlapError, RegistrationError, UnderdeterminedError
from .geometry import PointCloud, SpatialIndex


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise RegistrationError("rotation must be orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle_deg, translation=(0.0, 0.0, 0.0), center=None) -> "RigidTransform":
        """Rotation about ``axis`` through ``center`` (origin by default), then translation."""
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        th = np.radians(angle_deg)
        K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        R = np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K
        t = np.asarray(translation, dtype=float)
        if center is not None:
            c = np.asarray(center, dtype=float)
            t = t + c - R @ c
        return cls(_orthonormalize(R), t)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        R = _orthonormalize(self.rotation @ other.rotation)
        return RigidTransform(R, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RigidTransform":
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3), d["translation"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _orthonormalize(R):
    """Nearest proper rotation; keeps long chains of compositions from drifting."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class IcpOptions:
    """ICP settings.

    When ``subset_size`` is set and the source is larger, a coarse pass runs
    on that many seeded-random source points first and the full cloud then
    refines from its result.
    """

    max_iterations: int = 50
    convergence_threshold: float = 1e-6
    max_correspondence_distance: float = 1.0
    trim_fraction: float = 0.1
    subset_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise RegistrationError("max_iterations must be at least 1")
        if not self.convergence_threshold > 0 or not self.max_correspondence_distance > 0:
            raise RegistrationError("ICP thresholds must be positive")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise RegistrationError("trim_fraction must lie in [0, 1)")
        if self.subset_size is not None and self.subset_size < 3:
            raise RegistrationError("subset_size must be at least 3")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    final_rmse: float
    iterations_used: int
    converged: bool
    rmse_history: List[float] = field(default_factory=list)


def _fit(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    # flip the weakest direction if the optimum would be a reflection
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ U.T
    return R, cd - R @ cs


def rigid_from_point_pairs(pairs) -> RigidTransform:
    """Least-squares rigid transform mapping sources onto targets.

    ``pairs`` is an (n, 2, 3) array-like of (source, target) points, or a
    tuple ``(sources, targets)`` of two (n, 3) arrays.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2:
        src, dst = (np.asarray(p, dtype=float).reshape(-1, 3) for p in pairs)
    else:
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2, 3)
        src, dst = arr[:, 0], arr[:, 1]
    if len(src) != len(dst):
        raise RegistrationError("source and target counts differ")
    if len(src) < 3:
        raise UnderdeterminedError(f"need at least 3 point pairs, got {len(src)}")
    centred = src - src.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise UnderdeterminedError("source points are collinear; rotation is underdetermined")
    R, t = _fit(src, dst)
    return RigidTransform(_orthonormalize(R), t)


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    return cloud.with_points(transform.apply(cloud.points))


def _rmse(a, b):
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1)))) if len(a) else 0.0


def _icp_stage(points, target_index, current, opts, history):
    converged = False
    it = 0
    start = len(history)
    for it in range(1, opts.max_iterations + 1):
        moved = current.apply(points)
        dist, idx = target_index.nearest(moved, opts.max_correspondence_distance)
        keep = np.flatnonzero(dist <= opts.max_correspondence_distance)
        n_keep = len(keep) - int(np.floor(opts.trim_fraction * len(keep)))
        if n_keep < 3:
            last = RegistrationResult(current, history[-1] if history else float("nan"), it - 1, False, list(history))
            raise NoOverlapError(
                f"{len(keep)} correspondences within {opts.max_correspondence_distance} m at iteration {it}", last)
        if n_keep < len(keep):
            keep = keep[np.argsort(dist[keep], kind="stable")[:n_keep]]
        src = moved[keep]
        dst = target_index.points[idx[keep]]
        R, t = _fit(src, dst)
        step = RigidTransform(_orthonormalize(R), t)
        current = step.compose(current)
        history.append(_rmse(step.apply(src), dst))
        if len(history) - start > 1 and abs(history[-2] - history[-1]) < opts.convergence_threshold:
            converged = True
            break
    return current, it, converged


def icp_refine(
    source: PointCloud,
    target_index: SpatialIndex,
    init: RigidTransform = None,
    opts: IcpOptions = None,
) -> RegistrationResult:
    """Point-to-point ICP aligning ``source`` onto the indexed target.

    Each iteration takes nearest neighbours within
    ``max_correspondence_distance``, drops the ``trim_fraction`` worst of
    them and solves the closed-form rigid fit. Stops once the inlier RMSE
    changes by less than ``convergence_threshold``. ``rmse_history`` holds
    the post-solve inlier RMSE of every iteration.
    """
    current = init or RigidTransform.identity()
    opts = opts or IcpOptions()
    if len(source) == 0:
        raise RegistrationError("source cloud is empty")
    history: List[float] = []
    used = 0
    pts = source.points
    if opts.subset_size is not None and len(pts) > opts.subset_size:
        pick = np.sort(np.random.default_rng(opts.seed).choice(len(pts), opts.subset_size, replace=False))
        current, used, _ = _icp_stage(pts[pick], target_index, current, opts, history)
    current, it, converged = _icp_stage(pts, target_index, current, opts, history)
    return RegistrationResult(current, history[-1], used + it, converged, history)


def transfer_rmse(points, estimated: RigidTransform, truth: RigidTransform) -> float:
    """RMS distance between ``points`` mapped by two transforms."""
    return _rmse(estimated.apply(points), truth.apply(points))
