"""Autodiff engine, random streams and the SGD optimizer."""

from .autograd import Tape, Tensor, ShapeError, backward, forward_primitive
from .gradcheck import check_gradients, relative_error
from .optim import NumericalError, SgdState, sgd_step
from .rng import RngStream

__all__ = ["Tape", "Tensor", "ShapeError", "backward", "forward_primitive",
           "check_gradients", "relative_error", "NumericalError", "SgdState", "sgd_step",
           "RngStream"]
