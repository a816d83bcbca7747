"""optlab: a desk-scale numerical-optimization laboratory.

Blended RMSProp/AdamW updates with a linear transition schedule, detection
losses with verified analytic gradients, reference network-block math,
binary-classification metrics, and a deterministic benchmark harness with a
CLI front end.
"""

from .detloss import (
    BinDistribution,
    Box2D,
    LossWeights,
    bce_loss,
    ciou_loss,
    dfl_loss,
    finite_diff_grad,
    grad_check,
    iou,
    total_detection_loss,
)
from .errors import (
    DegenerateBoxError,
    EmptyInputError,
    NonFiniteInputError,
    OptlabError,
    ParameterError,
    RangeError,
    ShapeError,
)
from .harness import (
    SyntheticSpec,
    TrainHistory,
    Trajectory,
    bench_function,
    make_synthetic,
    tiny_mlp_forward_backward,
    train_toy,
)
from .metrics import (
    Confusion,
    MetricsReport,
    auc_roc,
    average_precision,
    confusion_from_labels,
    f1_accuracy,
    mcc,
    precision,
    recall,
)
from .netblocks import (
    ScalingTriple,
    batchnorm_infer,
    compound_scale,
    conv2d,
    depthwise_conv,
    fuse_bottomup,
    fuse_topdown,
    grid_search_scaling,
    head_predict,
    linear_classify,
    max_pool,
    pointwise_conv,
    silu,
    spatial_attention,
    sppf,
    tensor_from_json,
    tensor_to_json,
)
from .optim import (
    HyperParams,
    OptimState,
    adamw_delta,
    awdr_step,
    blend_coefficient,
    one_cycle_lr,
    rmsprop_delta,
)

__version__ = "0.1.0"
