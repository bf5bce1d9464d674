from .tensor import (
    ShapeError,
    Var,
    add,
    as_var,
    backward,
    concat,
    conv2d,
    gradient,
    l2_normalize,
    linear,
    matmul,
    maxpool2d,
    mul,
    no_grad,
    primitive_forward,
    relu,
    reshape,
    softmax_cross_entropy,
    sqrt,
    sub,
    take,
    transpose,
    vmax,
    vmean,
    vsum,
)
from .adam import AdamState, adam_step
from .gradcheck import grad_check
from .rng import derive_key, he_init, stream
from .weights_io import load_weights, save_weights
