from amtl.autograd import primitives as _primitives  # noqa: F401  (registers the primitive set)
from amtl.autograd.checkpoint import read_tensors, write_tensors
from amtl.autograd.gradcheck import GradCheckReport, check_gradients
from amtl.autograd.tensor import (
    Primitive,
    Tensor,
    apply_primitive,
    backward,
    graph_nodes,
    no_grad,
    primitive_names,
    zero_grads,
)

import numpy as np


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def concat(tensors, axis: int = 0) -> Tensor:
    return apply_primitive("concat", list(tensors), {"axis": axis})


def stack(tensors, axis: int = 0) -> Tensor:
    return apply_primitive("stack", list(tensors), {"axis": axis})


__all__ = [
    "GradCheckReport",
    "Primitive",
    "Tensor",
    "apply_primitive",
    "backward",
    "check_gradients",
    "concat",
    "glorot_uniform",
    "graph_nodes",
    "no_grad",
    "primitive_names",
    "read_tensors",
    "stack",
    "write_tensors",
    "zero_grads",
]
