from divdr.loss.schemas import BatchSigma, LossBreakdown, LossWeights  # noqa: F401
from divdr.loss.terms import (  # noqa: F401
    clustering_loss,
    combine_terms,
    compute_sigma_sq,
    task_loss,
    total_loss,
)
