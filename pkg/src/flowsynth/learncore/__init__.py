"""Small float64 reverse-mode differentiation toolkit for the flowsheet agent."""

from .autograd import Tensor, no_grad, param
from .distributions import beta_head, categorical_head
from .layers import Dense, GraphEncoder, MLP, MessagePassingLayer, forward_graph
from .optim import Adam, adam_step

__all__ = [
    "Adam", "Dense", "GraphEncoder", "MLP", "MessagePassingLayer", "Tensor", "adam_step",
    "beta_head", "categorical_head", "forward_graph", "no_grad", "param",
]
