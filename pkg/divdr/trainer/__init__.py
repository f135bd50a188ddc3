from divdr.trainer.schemas import (  # noqa: F401
    EvalRecord,
    RefitRecord,
    RunMetrics,
    StepRecord,
    TrainConfig,
)
from divdr.trainer.optim import (  # noqa: F401
    TrainingDivergedError,
    clip_grad_norm,
    lr_schedule,
    sgd_step,
)
from divdr.trainer.evaluate import evaluate, forward_sweep, mean_iou  # noqa: F401
from divdr.trainer.loop import TrainResult, is_refit_step, train  # noqa: F401
