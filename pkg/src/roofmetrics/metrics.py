"""Cloud-to-cloud distances with a local quadric model, and P/R/F scoring.

Distances are unsigned metres. Scores are percentages. A point counts as
matched at threshold ``d`` only when its distance is strictly below ``d``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import MetricsError
from .geometry import PointCloud, SpatialIndex

QUADRIC = "quadric"
NEAREST = "nearest"


@dataclass(frozen=True)
class LocalModelOptions:
    neighbor_radius: float = 0.10
    model: str = QUADRIC
    min_neighbors: int = 6

    def __post_init__(self):
        if not self.neighbor_radius > 0:
            raise MetricsError("neighbor_radius must be positive")
        if self.model not in (QUADRIC, NEAREST):
            raise MetricsError(f"unknown local model {self.model!r}")
        if self.model == QUADRIC and self.min_neighbors < 6:
            raise MetricsError("a quadric fit needs min_neighbors >= 6")


@dataclass(frozen=True)
class QuadricPatch:
    """Height function ``z' = a + b x' + c y' + d x'^2 + e x'y' + f y'^2``.

    The local frame has origin ``center`` and axes ``frame`` (rows): the two
    dominant principal directions of the neighbourhood, then its normal.
    """

    center: np.ndarray
    frame: np.ndarray
    coeffs: np.ndarray

    def local(self, points):
        d = np.asarray(points, dtype=float).reshape(-1, 3) - self.center
        f = self.frame
        # spelled out so each row is computed identically regardless of batch size
        x = d[:, 0] * f[0, 0] + d[:, 1] * f[0, 1] + d[:, 2] * f[0, 2]
        y = d[:, 0] * f[1, 0] + d[:, 1] * f[1, 1] + d[:, 2] * f[1, 2]
        z = d[:, 0] * f[2, 0] + d[:, 1] * f[2, 1] + d[:, 2] * f[2, 2]
        return x, y, z

    def height(self, x, y):
        a, b, c, d, e, f = self.coeffs
        return a + b * x + c * y + d * x * x + e * x * y + f * y * y


def fit_quadric(neighbors: np.ndarray) -> QuadricPatch:
    """Least-squares quadric height function over a PCA-aligned neighbourhood."""
    P = np.asarray(neighbors, dtype=float)
    center = P.mean(axis=0)
    Q = P - center
    _, vecs = np.linalg.eigh(Q.T @ Q)
    # eigh sorts ascending: the smallest-variance direction becomes the normal
    frame = np.ascontiguousarray(vecs[:, ::-1].T)
    patch = QuadricPatch(center, frame, np.zeros(6))
    x, y, z = patch.local(P)
    A = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coeffs, *_ = np.linalg.lstsq(A, z, rcond=None)
    return QuadricPatch(center, frame, coeffs)


def quadric_distances(patch: QuadricPatch, anchor, queries, lateral_limit: float) -> Tuple[np.ndarray, np.ndarray]:
    """Height residual of each query above the patch.

    Returns ``(distances, ok)``. ``ok`` is False where the query projects
    farther than ``lateral_limit`` from ``anchor`` in the patch plane; the
    height function is not a usable surface model out there.
    """
    x, y, z = patch.local(queries)
    ax, ay, _ = patch.local(anchor)
    dist = np.abs(z - patch.height(x, y))
    dx, dy = x - ax, y - ay
    ok = np.sqrt(dx * dx + dy * dy) <= lateral_limit
    return dist, ok


@dataclass
class C2CResult:
    """Per-point distances in both directions.

    ``e_rg``: reconstruction to ground truth; ``e_gr``: ground truth to
    reconstruction. ``*_fallback`` flags points scored by plain nearest-point
    distance because no quadric could be used.
    """

    e_rg: np.ndarray
    e_gr: np.ndarray
    rg_fallback: np.ndarray
    gr_fallback: np.ndarray

    @property
    def fallback_fraction(self) -> Dict[str, float]:
        return {
            "rg": float(self.rg_fallback.mean()) if len(self.rg_fallback) else 0.0,
            "gr": float(self.gr_fallback.mean()) if len(self.gr_fallback) else 0.0,
        }


def c2c_distances(compared: PointCloud, reference: SpatialIndex, opts: LocalModelOptions = None):
    """Distance from every compared point to the reference surface.

    The neighbourhood is gathered around each compared point's nearest
    reference point. Returns ``(distances, fallback_mask)``.
    """
    opts = opts or LocalModelOptions()
    if reference is None or len(reference) == 0:
        raise MetricsError("reference cloud is empty")
    if len(compared) == 0:
        raise MetricsError("compared cloud is empty")
    q = compared.points
    nn_dist, nn_idx = reference.nearest(q)
    out = nn_dist.copy()
    fallback = np.ones(len(q), dtype=bool)
    if opts.model == NEAREST:
        return out, fallback

    ref = reference.points
    anchors, groups = np.unique(nn_idx, return_inverse=True)
    order = np.argsort(groups, kind="stable")
    bounds = np.searchsorted(groups[order], np.arange(len(anchors) + 1))
    hoods = reference.radius_many(ref[anchors], opts.neighbor_radius)
    for g, (anchor, hood) in enumerate(zip(anchors, hoods)):
        if len(hood) < opts.min_neighbors:
            continue
        members = order[bounds[g]:bounds[g + 1]]
        patch = fit_quadric(ref[hood])
        d, ok = quadric_distances(patch, ref[anchor], q[members], opts.neighbor_radius)
        out[members[ok]] = d[ok]
        fallback[members[ok]] = False
    return out, fallback


def compare_clouds(reconstruction: PointCloud, ground_truth: PointCloud, opts: LocalModelOptions = None,
                   workers: int = 1) -> C2CResult:
    """Distances in both directions between a reconstruction and ground truth."""
    from .geometry import build_index

    if len(reconstruction) == 0 or len(ground_truth) == 0:
        raise MetricsError("both clouds must be non-empty")
    e_rg, f_rg = c2c_distances(reconstruction, build_index(ground_truth, workers), opts)
    e_gr, f_gr = c2c_distances(ground_truth, build_index(reconstruction, workers), opts)
    return C2CResult(e_rg, e_gr, f_rg, f_gr)


def _pct_below(distances, d) -> float:
    e = np.asarray(distances, dtype=float)
    if e.size == 0:
        raise MetricsError("empty distance set")
    if d < 0:
        raise MetricsError("threshold must be non-negative")
    return 100.0 * np.count_nonzero(e < d) / e.size


def precision(e_rg, d: float) -> float:
    """Percent of reconstruction points closer than ``d`` to the ground truth."""
    return _pct_below(e_rg, d)


def recall(e_gr, d: float) -> float:
    """Percent of ground-truth points closer than ``d`` to the reconstruction."""
    return _pct_below(e_gr, d)


def fscore(p: float, r: float) -> float:
    if not (0 <= p <= 100 and 0 <= r <= 100):
        raise MetricsError("precision and recall must lie in [0, 100]")
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


@dataclass
class MetricCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    fscore: np.ndarray

    def at(self, d: float) -> Tuple[float, float, float]:
        i = int(np.flatnonzero(np.isclose(self.thresholds, d, rtol=0, atol=1e-12))[0])
        return float(self.precision[i]), float(self.recall[i]), float(self.fscore[i])

    def rows(self):
        for d, p, r, f in zip(self.thresholds, self.precision, self.recall, self.fscore):
            yield float(d), float(p), float(r), float(f)


def metric_curve(result: C2CResult, thresholds: Sequence[float]) -> MetricCurve:
    """P, R and F at every threshold (metres, ascending)."""
    th = np.asarray(thresholds, dtype=float).reshape(-1)
    if th.size == 0:
        raise MetricsError("need at least one threshold")
    if np.any(np.diff(th) < 0):
        raise MetricsError("thresholds must be ascending")
    if np.any(th < 0):
        raise MetricsError("thresholds must be non-negative")
    if len(result.e_rg) == 0 or len(result.e_gr) == 0:
        raise MetricsError("empty distance set")
    # counts of e < d via sorted search; side='left' keeps the comparison strict
    rg = np.sort(result.e_rg)
    gr = np.sort(result.e_gr)
    P = 100.0 * np.searchsorted(rg, th, side="left") / len(rg)
    R = 100.0 * np.searchsorted(gr, th, side="left") / len(gr)
    F = np.array([fscore(p, r) for p, r in zip(P, R)])
    return MetricCurve(th, P, R, F)


@dataclass
class FScoreTable:
    """F-scores indexed by (flight, section) with per-section ranks.

    ``scores`` and ``ranks`` are (n_flights, n_sections) arrays.
    """

    flights: List[str]
    sections: List[str]
    scores: np.ndarray
    ranks: np.ndarray = None
    mean_score: np.ndarray = None
    mean_rank: np.ndarray = None

    def rows(self):
        for i, fl in enumerate(self.flights):
            for j, sec in enumerate(self.sections):
                yield fl, sec, float(self.scores[i, j]), float(self.ranks[i, j])


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Rank descending (1 = largest); tied values share their mean rank."""
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_table(flights: Sequence[str], sections: Sequence[str], scores) -> FScoreTable:
    """Rank flights within each section and average over sections."""
    S = np.asarray(scores, dtype=float)
    if S.shape != (len(flights), len(sections)):
        raise MetricsError(f"score matrix shape {S.shape} does not match {len(flights)} flights x {len(sections)} sections")
    if not np.all(np.isfinite(S)):
        raise MetricsError("score matrix has missing cells")
    ranks = np.column_stack([_average_ranks(S[:, j]) for j in range(S.shape[1])]) if S.size else S.copy()
    return FScoreTable(list(flights), list(sections), S, ranks, S.mean(axis=1), ranks.mean(axis=1))
