"""Autodiff engine, order network, optimizer and trainer.

``fpplab.nn.train`` and ``fpplab.nn.gradcheck`` depend on the
self-supervision chain and are imported on demand.
"""

from .autograd import Tensor, no_grad, record_branches
from .network import NetworkConfig, OrderNet, init_params, network_input
from .optim import OptimizerState, adam_step

__all__ = ["Tensor", "no_grad", "record_branches", "NetworkConfig", "OrderNet", "init_params",
           "network_input", "OptimizerState", "adam_step"]
