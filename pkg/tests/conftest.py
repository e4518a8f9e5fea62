import numpy as np
import pytest

from taskpack.nn.arch import Architecture, BnParams, ParamStore, init_params
from taskpack.rng import stream


def build_net(dims, seed=0, bn=True, activation="relu", head="shared_softmax",
              dtype=np.float32):
    arch = Architecture(
        layer_dims=tuple(dims),
        activation=activation,
        has_batchnorm=(bn,) * (len(dims) - 2),
        head_kind=head,
    )
    params = init_params(arch, seed, dtype=dtype)
    bank = BnParams.fresh(arch, dtype=dtype)
    return arch, params, bank


def random_batch(arch, n, seed=0, dtype=np.float32, classification=True):
    gen = stream(seed, 0, "test-batch")
    x = gen.standard_normal((n, arch.layer_dims[0])).astype(dtype)
    if classification:
        y = gen.integers(0, arch.layer_dims[-1], size=n)
    else:
        y = gen.standard_normal(n).astype(dtype)
    return x, y
