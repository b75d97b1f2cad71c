"""Photogrammetry survey planning: GSD, overlap, pass spacing and double-grid paths.

Units are metres, seconds and pixels throughout. ``capture_interval`` is
the time between two consecutive captures (s/capture), so that
``speed * capture_interval`` is the ground advance per image.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import FlightPlanError
from .geometry import BoundingRegion


@dataclass(frozen=True)
class CameraModel:
    focal_length: float
    pixel_pitch: float
    image_width: int
    image_height: int
    capture_interval: float
    oblique_angle: float = 45.0

    def __post_init__(self):
        if not self.focal_length > 0:
            raise FlightPlanError("focal_length must be positive")
        if not self.pixel_pitch > 0:
            raise FlightPlanError("pixel_pitch must be positive")
        if self.image_width < 1 or self.image_height < 1:
            raise FlightPlanError("image dimensions must be at least 1 pixel")
        if not self.capture_interval > 0:
            raise FlightPlanError("capture_interval must be positive")
        if not 0.0 <= self.oblique_angle < 90.0:
            raise FlightPlanError("oblique_angle must lie in [0, 90) degrees")

    @classmethod
    def from_sensor(cls, focal_length, sensor_width, image_width, image_height, capture_interval, oblique_angle=45.0):
        """Build a camera whose pixel pitch is ``sensor_width / image_width``."""
        return cls(focal_length, sensor_width / image_width, image_width, image_height, capture_interval, oblique_angle)


# 1" 20 MP sensor, 13.2 mm wide at 5472 px: 2.41 um pitch
PHANTOM4PRO = CameraModel.from_sensor(8.8e-3, 13.2e-3, 5472, 3648, 2.0)


@dataclass(frozen=True)
class MissionParams:
    target_gsd: float
    front_overlap: float
    side_overlap: float
    speed: float
    region: BoundingRegion
    surface_elevation: float = 0.0
    elevation_range: Optional[Tuple[float, float]] = None
    side_uses_height: bool = False
    turn_overhead: float = 5.0

    def __post_init__(self):
        if not self.target_gsd > 0:
            raise FlightPlanError("target_gsd must be positive")
        for name in ("front_overlap", "side_overlap"):
            ol = getattr(self, name)
            if not 0.0 <= ol < 100.0:
                raise FlightPlanError(f"{name} must lie in [0, 100)")
        if not self.speed > 0:
            raise FlightPlanError("speed must be positive")
        if self.turn_overhead < 0:
            raise FlightPlanError("turn_overhead must be non-negative")


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    z: float
    heading: float
    trigger: bool
    grid: int
    line: int


@dataclass
class FlightPlan:
    waypoints: List[Waypoint]
    pass_spacing: float
    trigger_spacing: float
    flight_altitude: float
    speed: float
    headings: Tuple[float, float]
    passes_per_grid: Tuple[int, int]
    gsd_range: Tuple[float, float] = (float("nan"), float("nan"))
    front_overlap: float = float("nan")

    def positions(self) -> np.ndarray:
        return np.array([[w.x, w.y, w.z] for w in self.waypoints]).reshape(-1, 3)

    def triggers(self) -> np.ndarray:
        return np.array([[w.x, w.y, w.z] for w in self.waypoints if w.trigger]).reshape(-1, 3)

    def path_length(self) -> float:
        p = self.positions()
        if len(p) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())

    def turn_count(self) -> int:
        """Heading changes between consecutive flight lines."""
        lines = [(w.grid, w.line) for w in self.waypoints]
        return sum(1 for a, b in zip(lines, lines[1:]) if a != b)

    def to_json(self) -> str:
        doc = {
            "frame": "local ENU, metres",
            "pass_spacing": self.pass_spacing,
            "trigger_spacing": self.trigger_spacing,
            "flight_altitude": self.flight_altitude,
            "speed": self.speed,
            "front_overlap": self.front_overlap,
            "gsd_range": list(self.gsd_range),
            "headings": list(self.headings),
            "waypoints": [
                {"x": w.x, "y": w.y, "z": w.z, "heading_deg": w.heading, "trigger": w.trigger, "grid": w.grid, "line": w.line}
                for w in self.waypoints
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "y", "z", "heading_deg", "trigger", "grid", "line"])
        for w in self.waypoints:
            writer.writerow([repr(w.x), repr(w.y), repr(w.z), repr(w.heading), int(w.trigger), w.grid, w.line])
        return buf.getvalue()


@dataclass(frozen=True)
class FlightEstimate:
    duration: float
    capture_count: int
    path_length: float


def compute_gsd(camera: CameraModel, distance: float) -> float:
    """Ground size of one pixel at ``distance`` along the optical axis."""
    if distance < 0:
        raise FlightPlanError("distance must be non-negative")
    return distance * camera.pixel_pitch / camera.focal_length


def distance_for_gsd(camera: CameraModel, gsd: float) -> float:
    if not gsd > 0:
        raise FlightPlanError("gsd must be positive")
    return gsd * camera.focal_length / camera.pixel_pitch


def front_overlap(gsd: float, camera: CameraModel, speed: float) -> float:
    """Percent forward overlap between consecutive captures.

    Negative when the advance per capture exceeds the image footprint.
    """
    if not gsd > 0:
        raise FlightPlanError("gsd must be positive")
    footprint = gsd * camera.image_width
    ol = 100.0 * (footprint - speed * camera.capture_interval) / footprint
    if ol < 0:
        warnings.warn(f"advance per capture exceeds image footprint (overlap {ol:.1f}%)", stacklevel=2)
    return ol


def speed_for_overlap(target_ol: float, gsd: float, camera: CameraModel) -> float:
    if target_ol >= 100.0:
        raise FlightPlanError("100% overlap requires zero speed")
    if target_ol < 0:
        raise FlightPlanError("target overlap must be non-negative")
    if not gsd > 0:
        raise FlightPlanError("gsd must be positive")
    return gsd * camera.image_width * (1.0 - target_ol / 100.0) / camera.capture_interval


def side_spacing(gsd: float, camera: CameraModel, side_ol: float, use_height: bool = False) -> float:
    """Distance between adjacent parallel passes for the given side overlap."""
    if not 0.0 <= side_ol < 100.0:
        raise FlightPlanError("side overlap must lie in [0, 100)")
    pixels = camera.image_height if use_height else camera.image_width
    return gsd * pixels * (1.0 - side_ol / 100.0)


def flight_altitude(camera: CameraModel, gsd: float, surface_elevation: float) -> float:
    """Altitude AGL whose slant range to the surface gives ``gsd``."""
    slant = distance_for_gsd(camera, gsd)
    return surface_elevation + slant * math.cos(math.radians(camera.oblique_angle))


def gsd_range(camera: CameraModel, altitude: float, elevations: Tuple[float, float]) -> Tuple[float, float]:
    """GSD at the highest and lowest surface under a plan flown at ``altitude``."""
    cos_t = math.cos(math.radians(camera.oblique_angle))
    lo_elev, hi_elev = min(elevations), max(elevations)
    if hi_elev > altitude:
        raise FlightPlanError("surface rises above the flight altitude")
    return (compute_gsd(camera, (altitude - hi_elev) / cos_t), compute_gsd(camera, (altitude - lo_elev) / cos_t))


def _pass_offsets(lo: float, hi: float, spacing: float) -> np.ndarray:
    extent = hi - lo
    if extent < spacing * (1 - 1e-9):
        return np.array([(lo + hi) / 2.0])
    n = int(math.ceil(extent / spacing - 1e-9)) + 1
    span = (n - 1) * spacing
    start = lo - (span - extent) / 2.0
    return start + spacing * np.arange(n)


def _chord(poly: np.ndarray, axis: int, offset: float) -> Optional[Tuple[float, float]]:
    """Extent of the convex polygon along ``1 - axis`` on the line ``coord[axis] == offset``."""
    other = 1 - axis
    hits = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        da, db = a[axis] - offset, b[axis] - offset
        if da == 0:
            hits.append(a[other])
        if da * db < 0:
            t = da / (da - db)
            hits.append(a[other] + t * (b[other] - a[other]))
    if not hits:
        return None
    return min(hits), max(hits)


def _grid(poly, axis, spacing, trigger_spacing, altitude, grid_id):
    """One boustrophedon grid; passes run along ``1 - axis`` and step along ``axis``."""
    lo, hi = poly[:, axis].min(), poly[:, axis].max()
    offsets = _pass_offsets(lo, hi, spacing)
    waypoints = []
    for k, off in enumerate(offsets):
        probe = min(max(off, lo), hi)
        chord = _chord(poly, axis, probe)
        a, b = chord
        forward = k % 2 == 0
        n_seg = max(int(math.ceil((b - a) / trigger_spacing - 1e-9)), 1) if b > a else 0
        ts = np.array([a + i * trigger_spacing for i in range(n_seg)] + [b])
        if not forward:
            ts = ts[::-1]
        # heading in degrees clockwise from +y (north); x is east
        if axis == 1:
            heading = 90.0 if forward else 270.0
        else:
            heading = 0.0 if forward else 180.0
        for t in ts:
            xy = (t, off) if axis == 1 else (off, t)
            waypoints.append(Waypoint(float(xy[0]), float(xy[1]), float(altitude), heading, True, grid_id, k))
    return waypoints, len(offsets)


def generate_double_grid(mission: MissionParams, camera: CameraModel) -> FlightPlan:
    """Two perpendicular lawnmower grids over the mission footprint.

    Flight speed is capped so that, with the camera firing every
    ``capture_interval`` seconds, front overlap reaches the target. Triggers
    are then spaced ``speed * capture_interval`` apart along every pass, with
    one extra capture at each pass end.
    """
    gsd = mission.target_gsd
    spacing = side_spacing(gsd, camera, mission.side_overlap, mission.side_uses_height)
    speed = min(mission.speed, speed_for_overlap(mission.front_overlap, gsd, camera))
    trigger_spacing = speed * camera.capture_interval
    if not spacing > 0 or not trigger_spacing > 0:
        raise FlightPlanError("derived pass or trigger spacing is not positive")
    altitude = flight_altitude(camera, gsd, mission.surface_elevation)
    poly = mission.region.footprint()
    extent = poly.max(axis=0) - poly.min(axis=0)
    if np.any(extent < spacing * (1 - 1e-9)):
        warnings.warn("region is narrower than one pass spacing; degenerate single-pass grid", stacklevel=2)

    first, n1 = _grid(poly, 1, spacing, trigger_spacing, altitude, 0)
    second, n2 = _grid(poly, 0, spacing, trigger_spacing, altitude, 1)
    elev = mission.elevation_range or (mission.surface_elevation, mission.surface_elevation)
    return FlightPlan(
        waypoints=first + second,
        pass_spacing=spacing,
        trigger_spacing=trigger_spacing,
        flight_altitude=altitude,
        speed=speed,
        headings=(90.0, 0.0),
        passes_per_grid=(n1, n2),
        gsd_range=gsd_range(camera, altitude, elev),
        front_overlap=front_overlap(gsd, camera, speed),
    )


def estimate_flight(plan: FlightPlan, mission: MissionParams) -> FlightEstimate:
    """Flight time in minutes, capture count and path length for ``plan``."""
    length = plan.path_length()
    captures = int(sum(1 for w in plan.waypoints if w.trigger))
    if length == 0.0:
        return FlightEstimate(0.0, captures if len(plan.waypoints) else 0, 0.0)
    seconds = length / plan.speed + plan.turn_count() * mission.turn_overhead
    return FlightEstimate(seconds / 60.0, captures, length)
