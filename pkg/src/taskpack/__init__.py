"""taskpack: zero-forgetting continual learning in budgeted sparse subnetworks.

A single dense fully-connected supernet hosts every task.  Each new task
trains only free (never-frozen-before) weights, prunes neurons until its
subnetwork fits a FLOP budget, prunes weights until its newly-claimed set
fits an allocation budget, and then freezes.  Committed tasks' predictions
are bit-stable forever after.
"""

from .flops import FlopReport, layer_flops, max_flops, total_flops
from .masks import (
    SupernetState,
    TaskMask,
    commit_task,
    mask_complement,
    mask_diff,
    mask_intersect,
    mask_union,
    new_supernet,
    popcount,
)
from .nn.arch import Architecture, BnParams, ParamStore, fc1024, init_params
from .nn.losses import loss
from .nn.network import backward, forward
from .nn.optim import OptSpec, OptState, TrainableSet, optimizer_step
from .pruning import (
    Budget,
    PruneConfig,
    lambda_weights,
    nnz_budget,
    penalty_grad,
    prune_neurons_to_flops,
    prune_weights,
    schedule_targets,
)

__version__ = "0.1.0"
