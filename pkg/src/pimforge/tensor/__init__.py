from .core import Node, ShapeError, Tape, TapeError, Tensor, active_tape, as_tensor, backward
from .gradcheck import grad_check
from .optim import AdamState, NonFiniteGradient, adam_step
from .ops import PRIMITIVES, forward_primitives

__all__ = [
    "AdamState",
    "NonFiniteGradient",
    "Node",
    "PRIMITIVES",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "active_tape",
    "adam_step",
    "as_tensor",
    "backward",
    "forward_primitives",
    "grad_check",
]
