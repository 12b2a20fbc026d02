from cdsp.engine.tensor import (
    DimensionError,
    DomainError,
    GraphError,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    get_default_dtype,
    no_grad,
    ones,
    set_default_dtype,
    tensor,
    zeros,
)
from cdsp.engine import ops
from cdsp.engine.ops import (
    bce_with_logits,
    conv2d,
    elementwise,
    exp,
    global_avg_pool,
    l2_normalize,
    log,
    matmul,
    mse,
    ordered_summation,
    reduction,
    relu,
    sigmoid,
    softmax,
    upsample_nearest,
)
from cdsp.engine.optim import SGD, MissingGradError, OptimizerState, sgd_step
from cdsp.engine.serialize import TensorFormatError, load_array, load_tensor, save_tensor


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``."""
    active_tape().backward(loss)
