"""Bilevel per-sample-weighted joint training of a source and target classifier.

Every source example carries a weight in [0, 1] that is learned during
training: the representation and source head descend the weighted source
loss, while the weights themselves ascend the alignment between each
example's gradient and the target set's descent direction.  Examples whose
gradients help the target keep their influence; harmful ones (wrong labels,
irrelevant content) are driven toward weight zero.
"""

from .analysis import (
    FirstOrderDelta,
    SeparationMetrics,
    ThresholdSweep,
    first_order_delta,
    separation_metrics,
    sufficient_lambda_alpha,
    threshold_sweep,
)
from .data import (
    LabeledDataset,
    inject_label_noise,
    load_csv,
    make_synthetic_2d,
    save_csv,
)
from .errors import (
    ConfigError,
    CsvFormatError,
    LabelRangeError,
    NumericalError,
    ShapeError,
)
from .losses import (
    CrossEntropy,
    cross_entropy,
    cross_entropy_batch,
    cross_entropy_logit_grad,
    target_loss,
    weighted_source_loss,
)
from .model import (
    ArchDescriptor,
    ModelParams,
    PerExampleGradient,
    batch_grads,
    forward,
    forward_batch,
    per_example_grad,
)
from .trainer import (
    IterationStats,
    RunRecord,
    TrainerConfig,
    TrainingState,
    build_Q,
    build_R,
    exterior_step,
    interior_step,
    load_checkpoint,
    run_training,
    save_checkpoint,
    target_gradients,
    target_step,
)

__version__ = "0.1.0"
