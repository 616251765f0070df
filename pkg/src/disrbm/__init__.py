"""Restricted Boltzmann machines with label-decorrelating weight constraints."""

from .rbm import RbmModel
from .units import BINARY, SPIN, UnitKind, onehot

__all__ = ["RbmModel", "UnitKind", "BINARY", "SPIN", "onehot"]
__version__ = "0.1.0"
