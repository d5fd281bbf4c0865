from .tensor import (
    ContractError,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    complex_mul,
    concat,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    square,
    sub,
    take,
    tanh,
    tsum,
    unit_normalize,
)
from .optim import AdamState, adam_step, clip_grad_norm, step_decay
from .gradcheck import GradCheckReport, grad_check
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
