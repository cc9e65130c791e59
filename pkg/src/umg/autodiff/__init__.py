from .ops import (
    activation,
    affine_channels,
    batch_l2_distance,
    channel_stats,
    clamp_probability,
    conv2d,
    cross_entropy,
    depthwise_conv2d,
    global_avg_pool,
    l2_distance,
    linear,
    log_softmax,
    pad2d,
    pool_max2,
    softmax,
    upsample_nearest2,
)
from .optim import OptimizerState, adam, optimizer_step, rmsprop
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    default_dtype,
    div,
    exp,
    get_default_dtype,
    leaky_relu,
    log,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    sqrt,
    sub,
    tensor,
    tsum,
)
