from divdr.clustering.schemas import (  # noqa: F401
    CenterRegistry,
    ClusterAssignment,
    DiversityReport,
)
from divdr.clustering.kmeans import (  # noqa: F401
    assign,
    center_shift,
    kmeans_fit,
    lloyd,
    nearest_center,
)
from divdr.clustering.diagnostics import (  # noqa: F401
    alignment,
    diversity_report,
    gate_variance,
    inter_cluster_distance,
    intra_cluster_distance,
)
