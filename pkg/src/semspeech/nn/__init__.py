from .layers import (KINDS, Layer, LayerSpec, backward, count_parameters, forward, init_fan_in_uniform,
                     make_layer)
from .optim import Adadelta, AdadeltaConfig, adadelta_step
from .checkpoint import load_checkpoint, load_module, save_checkpoint, save_module

__all__ = [
    "KINDS", "Layer", "LayerSpec", "backward", "count_parameters", "forward", "init_fan_in_uniform",
    "make_layer", "Adadelta", "AdadeltaConfig", "adadelta_step", "load_checkpoint", "load_module",
    "save_checkpoint", "save_module",
]
