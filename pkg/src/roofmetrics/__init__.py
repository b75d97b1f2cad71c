"""UAV rooftop survey planning and reconstruction accuracy evaluation."""
from .errors import RoofMetricsError
from .flightplan import (
    CameraModel,
    FlightEstimate,
    FlightPlan,
    MissionParams,
    compute_gsd,
    distance_for_gsd,
    estimate_flight,
    front_overlap,
    generate_double_grid,
    side_spacing,
    speed_for_overlap,
)
from .geometry import (
    BoundingRegion,
    PointCloud,
    SpatialIndex,
    TriangleMesh,
    build_index,
    crop,
    sample_mesh,
    subsample_min_distance,
)
from .metrics import (
    C2CResult,
    FScoreTable,
    LocalModelOptions,
    MetricCurve,
    c2c_distances,
    compare_clouds,
    fscore,
    metric_curve,
    precision,
    rank_table,
    recall,
)
from .registration import (
    IcpOptions,
    RegistrationResult,
    RigidTransform,
    apply_transform,
    icp_refine,
    rigid_from_point_pairs,
)

__version__ = "0.1.0"
