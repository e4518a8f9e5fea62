"""Network architecture description and parameter containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatchError
from ..rng import stream

ACTIVATIONS = ("relu", "identity", "leaky_relu")
HEAD_KINDS = ("shared_softmax", "per_task_linear_sigmoid")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class Architecture:
    """A fully-connected net: ``layer_dims[0]`` inputs, hidden widths, output dim.

    ``has_batchnorm`` holds one flag per hidden layer.  With a
    ``shared_softmax`` head every weight layer (head included) takes part in
    masking and FLOP accounting; with a ``per_task_linear_sigmoid`` head the
    final layer is a private per-task head that lives outside the mask
    economy entirely.
    """

    layer_dims: tuple[int, ...]
    activation: str = "relu"
    leaky_slope: float = 0.01
    has_batchnorm: tuple[bool, ...] = ()
    head_kind: str = "shared_softmax"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"layer_dims must have >= 2 entries, all >= 1: {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"unknown head_kind {self.head_kind!r}")
        bn = self.has_batchnorm
        if isinstance(bn, bool):
            bn = (bn,) * self.n_hidden
        bn = tuple(bool(b) for b in bn)
        if bn == ():
            bn = (False,) * self.n_hidden
        if len(bn) != self.n_hidden:
            raise ValueError(
                f"has_batchnorm has {len(bn)} entries for {self.n_hidden} hidden layers"
            )
        object.__setattr__(self, "has_batchnorm", bn)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 2

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return self.layer_dims[1:-1]

    @property
    def n_maskable(self) -> int:
        """Number of weight layers covered by masks and budget accounting."""
        if self.head_kind == "per_task_linear_sigmoid":
            return self.n_layers - 1
        return self.n_layers

    def weight_shape(self, layer: int) -> tuple[int, int]:
        """Shape of W for weight layer ``layer`` (0-based)."""
        return (self.layer_dims[layer + 1], self.layer_dims[layer])

    @property
    def total_weights(self) -> int:
        """Count of maskable scalar weights (biases excluded)."""
        return sum(
            self.layer_dims[l + 1] * self.layer_dims[l] for l in range(self.n_maskable)
        )

    def to_json(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "leaky_slope": self.leaky_slope,
            "has_batchnorm": list(self.has_batchnorm),
            "head_kind": self.head_kind,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Architecture":
        return cls(
            layer_dims=tuple(obj["layer_dims"]),
            activation=obj["activation"],
            leaky_slope=obj.get("leaky_slope", 0.01),
            has_batchnorm=tuple(obj["has_batchnorm"]),
            head_kind=obj["head_kind"],
        )


def fc1024(in_dim: int = 784, out_dim: int = 10) -> Architecture:
    """The reference two-hidden-layer net: [784, 1024, 1024, 10], relu, BN."""
    return Architecture(
        layer_dims=(in_dim, 1024, 1024, out_dim),
        activation="relu",
        has_batchnorm=(True, True),
        head_kind="shared_softmax",
    )


@dataclass
class ParamStore:
    """Dense weights and biases for every weight layer of an Architecture."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    rng_seed: int

    def check_shapes(self, arch: Architecture):
        if len(self.weights) != arch.n_layers or len(self.biases) != arch.n_layers:
            raise ShapeMismatchError(
                f"param store has {len(self.weights)} layers, arch has {arch.n_layers}"
            )
        for l in range(arch.n_layers):
            want = arch.weight_shape(l)
            if self.weights[l].shape != want:
                raise ShapeMismatchError(
                    f"layer {l}: weights {self.weights[l].shape}, expected {want}"
                )
            if self.biases[l].shape != (want[0],):
                raise ShapeMismatchError(
                    f"layer {l}: biases {self.biases[l].shape}, expected {(want[0],)}"
                )

    def copy(self) -> "ParamStore":
        return ParamStore(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.rng_seed,
        )

    @property
    def dtype(self):
        return self.weights[0].dtype


def init_params(arch: Architecture, seed: int, dtype=np.float32) -> ParamStore:
    """Symmetric fan-based init: U[-sqrt(6/(fan_in+fan_out)), +...] per layer.

    Draws come from the ``(seed, 0, "init")`` stream in layer order, so two
    calls with the same seed are bit-identical.
    """
    gen = stream(seed, 0, "init")
    weights, biases = [], []
    for l in range(arch.n_layers):
        d_out, d_in = arch.weight_shape(l)
        bound = np.sqrt(6.0 / (d_in + d_out))
        w = gen.uniform(-bound, bound, size=(d_out, d_in))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(d_out, dtype=dtype))
    return ParamStore(weights, biases, rng_seed=seed)


@dataclass
class BnParams:
    """One task's batch-norm bank: gamma/beta plus running statistics.

    Gamma doubles as the neuron saliency score the pruner reads.  One bank
    exists per (task, supernet); layers without batch norm carry empty arrays.
    """

    gamma: list[np.ndarray]
    beta: list[np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, arch: Architecture, dtype=np.float32) -> "BnParams":
        gamma, beta, mean, var = [], [], [], []
        for h, dim in enumerate(arch.hidden_dims):
            n = dim if arch.has_batchnorm[h] else 0
            gamma.append(np.ones(n, dtype=dtype))
            beta.append(np.zeros(n, dtype=dtype))
            mean.append(np.zeros(n, dtype=dtype))
            var.append(np.ones(n, dtype=dtype))
        return cls(gamma, beta, mean, var)

    def check_shapes(self, arch: Architecture):
        for h, dim in enumerate(arch.hidden_dims):
            want = dim if arch.has_batchnorm[h] else 0
            for name, bank in (
                ("gamma", self.gamma),
                ("beta", self.beta),
                ("running_mean", self.running_mean),
                ("running_var", self.running_var),
            ):
                if bank[h].shape != (want,):
                    raise ShapeMismatchError(
                        f"bn {name} hidden layer {h}: {bank[h].shape}, expected {(want,)}"
                    )

    def copy(self) -> "BnParams":
        return BnParams(
            [g.copy() for g in self.gamma],
            [b.copy() for b in self.beta],
            [m.copy() for m in self.running_mean],
            [v.copy() for v in self.running_var],
            self.momentum,
            self.eps,
        )
