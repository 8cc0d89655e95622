"""Reverse-mode differentiation engine and first-order optimizers."""
from . import core as ops
from .core import Tape, Var, grad, is_var, value_of
from .gradcheck import grad_check
from .optimizers import OptimState, step

__all__ = ["Tape", "Var", "grad", "grad_check", "is_var", "value_of", "ops", "OptimState", "step"]
