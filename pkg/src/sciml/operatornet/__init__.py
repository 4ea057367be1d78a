"""Operator learning: DeepONet and the Fourier neural operator."""

from .deeponet import *  # noqa: F401,F403
from .fno import *  # noqa: F401,F403
from .fourier import *  # noqa: F401,F403
