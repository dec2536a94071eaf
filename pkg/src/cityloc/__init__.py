"""Coarse-to-fine text-to-point-cloud localization on synthetic city scenes."""

from .tensor import Tensor, backward, concat, stack
from .fourier import ComplexSpectrum, dft, highpass_mask, idft
from .nn import LSTMCell, Linear, MLP, ParameterStore, attention, attention_weights
from .optim import Adam
from .gradcheck import check_gradients

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ComplexSpectrum",
    "LSTMCell",
    "Linear",
    "MLP",
    "ParameterStore",
    "Tensor",
    "attention",
    "attention_weights",
    "backward",
    "check_gradients",
    "concat",
    "dft",
    "highpass_mask",
    "idft",
    "stack",
]
