"""Dense numeric kernels, parameters, optimizer and gradient checking."""
from .gradcheck import gradient_check
from .layers import NumericError, softmax, softmax_cross_entropy
from .optim import OptimizerConfig, rmsprop_step
from .params import ParameterStore, load_checkpoint, save_checkpoint

__all__ = [
    "NumericError",
    "OptimizerConfig",
    "ParameterStore",
    "gradient_check",
    "load_checkpoint",
    "rmsprop_step",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
]
