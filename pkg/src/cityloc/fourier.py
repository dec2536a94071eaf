"""Differentiable discrete Fourier transform along the sequence axis.

The transform is expressed as two matmuls against constant cosine/sine
basis matrices, so gradients flow through the existing tensor machinery
with no dedicated backward rules. Sequence lengths here are tiny, which
makes the dense O(T^2) form both exact and fast enough; the test suite
pins correctness against an independent direct-summation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor


@dataclass
class ComplexSpectrum:
    """Real/imaginary parts of a spectrum, kept as separate tensors."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ContractViolation(
                f"spectrum parts differ in shape: {self.real.shape} vs {self.imag.shape}"
            )

    @property
    def length(self) -> int:
        return self.real.shape[0]

    def power(self) -> np.ndarray:
        """|Z|^2 per bin (detached, for diagnostics)."""
        return self.real.data**2 + self.imag.data**2


@lru_cache(maxsize=None)
def _basis(T: int) -> tuple[np.ndarray, np.ndarray]:
    # C[m, t] = cos(2*pi*m*t/T), S[m, t] = sin(2*pi*m*t/T); both symmetric.
    m = np.arange(T)
    theta = 2.0 * np.pi * np.outer(m, m) / T
    return np.cos(theta), np.sin(theta)


def dft(x: Tensor) -> ComplexSpectrum:
    """Forward transform of a real sequence along axis 0.

    Accepts shape (T,) or (T, D); columns transform independently.
    Z[m] = sum_t x[t] * exp(-2j*pi*m*t/T).
    """
    if x.size == 0 or x.shape[0] == 0:
        raise ContractViolation("dft of an empty sequence")
    vector = x.ndim == 1
    if vector:
        x = x.reshape((x.shape[0], 1))
    T = x.shape[0]
    cos_b, sin_b = _basis(T)
    real = Tensor(cos_b) @ x
    imag = Tensor(-sin_b) @ x
    if vector:
        real = real.reshape((T,))
        imag = imag.reshape((T,))
    return ComplexSpectrum(real, imag)


def idft(spectrum: ComplexSpectrum) -> Tensor:
    """Real part of the inverse transform along axis 0.

    x[t] = Re( (1/T) * sum_m Z[m] * exp(+2j*pi*m*t/T) ), which for a
    spectrum produced by :func:`dft` recovers the input exactly.
    """
    real, imag = spectrum.real, spectrum.imag
    if real.size == 0 or real.shape[0] == 0:
        raise ContractViolation("idft of an empty spectrum")
    vector = real.ndim == 1
    if vector:
        real = real.reshape((real.shape[0], 1))
        imag = imag.reshape((imag.shape[0], 1))
    T = real.shape[0]
    cos_b, sin_b = _basis(T)
    out = (Tensor(cos_b) @ real - Tensor(sin_b) @ imag) * (1.0 / T)
    if vector:
        out = out.reshape((T,))
    return out


def highpass_threshold(T: int) -> int:
    """Smallest kept bin index: ceil(0.7 * T), in exact integer arithmetic."""
    return -((-7 * T) // 10)


def highpass_mask(T: int) -> np.ndarray:
    """Binary mask keeping bins m >= 0.7*T (the top ~30% by raw index)."""
    if T < 1:
        raise ContractViolation("mask length must be >= 1")
    return (np.arange(T) >= highpass_threshold(T)).astype(np.float64)


def apply_mask(spectrum: ComplexSpectrum, mask: np.ndarray) -> ComplexSpectrum:
    m = mask if spectrum.real.ndim == 1 else mask[:, None]
    return ComplexSpectrum(spectrum.real * Tensor(m), spectrum.imag * Tensor(m))
