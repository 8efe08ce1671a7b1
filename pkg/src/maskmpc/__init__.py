"""Masked secret sharing MPC: ASTRA, ABY2.0, SWIFT and Tetrad style frameworks on a metered simulator."""
from .ring import BOOL, FixedPoint, Ring
from .runtime import run, run_split, run_tcp
from .sharing import FRAMEWORKS, MShare, get_framework, reconstruct, share

__all__ = ["BOOL", "FRAMEWORKS", "FixedPoint", "MShare", "Ring", "get_framework", "reconstruct", "run",
           "run_split", "run_tcp", "share"]
__version__ = "0.1.0"
