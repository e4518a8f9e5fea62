from .arch import Architecture, BnParams, ParamStore, fc1024, init_params
from .losses import loss
from .network import Cache, Gradients, backward, forward
from .optim import OptSpec, OptState, TrainableSet, optimizer_step
