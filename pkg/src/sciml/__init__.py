"""Scientific machine learning from scratch on numpy.

Submodules: tensor, autodiff, nn, optim, pdesolve, pinn, convnet,
operatornet (fourier, deeponet, fno), dynamics, generative, cli.
"""

from . import autodiff, convnet, dynamics, generative, nn, operatornet, optim, pdesolve, pinn, tensor

__version__ = "0.1.0"

__all__ = [
    "tensor",
    "autodiff",
    "nn",
    "optim",
    "pdesolve",
    "pinn",
    "convnet",
    "operatornet",
    "dynamics",
    "generative",
]
