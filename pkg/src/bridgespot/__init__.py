"""Frozen text detector and recognizer joined by a zero-initialized bridge.

Everything runs on numpy: a small reverse-mode autodiff engine, layers, a
synthetic glyph-scene generator, toy detector/recognizer models and an
experiment harness that compares training paradigms.
"""

from .autodiff import Tensor, no_grad
from .bridge import BridgeConfig, BridgeState, bridge_forward
from .kernels import BACKEND
from .spotter import Spotter, ToyDetector, ToyRecognizer

__version__ = "0.1.0"

__all__ = ["BACKEND", "BridgeConfig", "BridgeState", "Spotter", "Tensor", "ToyDetector",
           "ToyRecognizer", "bridge_forward", "no_grad", "__version__"]
