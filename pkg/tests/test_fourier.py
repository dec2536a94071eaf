"""Transform correctness against a direct O(T^2) summation oracle."""

import cmath

import numpy as np
import pytest

from cityloc.errors import ContractViolation
from cityloc.fourier import (
    ComplexSpectrum,
    apply_mask,
    dft,
    highpass_mask,
    highpass_threshold,
    idft,
)
from cityloc.tensor import Tensor


def dft_oracle(x: np.ndarray) -> np.ndarray:
    """Direct summation, independent of the implementation under test."""
    T = len(x)
    out = np.zeros(T, dtype=complex)
    for m in range(T):
        acc = 0j
        for t in range(T):
            acc += x[t] * cmath.exp(-2j * cmath.pi * m * t / T)
        out[m] = acc
    return out


class TestDftExamples:
    def test_constant_signal_is_pure_dc(self):
        spec = dft(Tensor([1.0, 1.0, 1.0, 1.0]))
        np.testing.assert_allclose(spec.real.data, [4, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(spec.imag.data, [0, 0, 0, 0], atol=1e-12)

    def test_unit_impulse_has_flat_spectrum(self):
        spec = dft(Tensor([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(spec.real.data, np.ones(4), atol=1e-12)
        np.testing.assert_allclose(spec.imag.data, np.zeros(4), atol=1e-12)

    def test_hand_derived_spectrum(self):
        spec = dft(Tensor([0.0, 1.0, 0.0, -1.0]))
        np.testing.assert_allclose(spec.real.data, [0, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(spec.imag.data, [0, -2, 0, 2], atol=1e-12)

    def test_empty_input_rejected(self):
        with pytest.raises(ContractViolation):
            dft(Tensor(np.zeros((0,))))


class TestIdftExamples:
    def test_roundtrip_short(self):
        x = np.array([0.3, -1.2, 7.0])
        np.testing.assert_allclose(idft(dft(Tensor(x))).data, x, atol=1e-9)

    def test_dc_only_spectrum(self):
        spec = ComplexSpectrum(Tensor([4.0, 0.0, 0.0, 0.0]), Tensor(np.zeros(4)))
        np.testing.assert_allclose(idft(spec).data, np.ones(4), atol=1e-12)

    def test_inverts_hand_derived_example(self):
        spec = ComplexSpectrum(Tensor(np.zeros(4)), Tensor([0.0, -2.0, 0.0, 2.0]))
        np.testing.assert_allclose(idft(spec).data, [0, 1, 0, -1], atol=1e-12)

    def test_mismatched_parts_rejected(self):
        with pytest.raises(ContractViolation):
            ComplexSpectrum(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestOracleAgreement:
    def test_matches_direct_summation_all_lengths(self):
        rng = np.random.default_rng(11)
        for T in range(1, 65):
            x = rng.uniform(-2, 2, T)
            spec = dft(Tensor(x))
            expected = dft_oracle(x)
            np.testing.assert_allclose(spec.real.data, expected.real, atol=1e-9)
            np.testing.assert_allclose(spec.imag.data, expected.imag, atol=1e-9)

    def test_roundtrip_all_lengths(self):
        rng = np.random.default_rng(12)
        for T in range(1, 65):
            x = rng.uniform(-2, 2, T)
            np.testing.assert_allclose(idft(dft(Tensor(x))).data, x, atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(13)
        for T in range(1, 65):
            x = rng.uniform(-2, 2, T)
            spec = dft(Tensor(x))
            time_energy = float(np.sum(x**2))
            freq_energy = float(spec.power().sum()) / T
            assert abs(time_energy - freq_energy) < 1e-9

    def test_columns_transform_independently(self):
        rng = np.random.default_rng(14)
        x = rng.uniform(-2, 2, (8, 3))
        spec = dft(Tensor(x))
        for c in range(3):
            expected = dft_oracle(x[:, c])
            np.testing.assert_allclose(spec.real.data[:, c], expected.real, atol=1e-9)
            np.testing.assert_allclose(spec.imag.data[:, c], expected.imag, atol=1e-9)


class TestDifferentiability:
    def test_gradient_through_spectrum(self):
        rng = np.random.default_rng(15)
        x0 = rng.uniform(-2, 2, 6)
        w_r = rng.normal(size=6)
        w_i = rng.normal(size=6)

        def scalar(arr):
            spec = dft(Tensor(arr))
            return float((spec.real * Tensor(w_r) + spec.imag * Tensor(w_i)).sum().data)

        x = Tensor(x0, requires_grad=True)
        spec = dft(x)
        (spec.real * Tensor(w_r) + spec.imag * Tensor(w_i)).sum().backward()

        step = 1e-6
        for i in range(6):
            bumped = x0.copy()
            bumped[i] += step
            up = scalar(bumped)
            bumped[i] -= 2 * step
            down = scalar(bumped)
            numeric = (up - down) / (2 * step)
            assert abs(x.grad[i] - numeric) <= 1e-5 * max(1.0, abs(numeric))

    def test_gradient_through_roundtrip(self):
        x = Tensor(np.array([0.5, -0.25, 1.0, 2.0]), requires_grad=True)
        y = idft(dft(x)).sum()
        y.backward()
        # d/dx of sum(idft(dft(x))) = 1 since the roundtrip is identity
        np.testing.assert_allclose(x.grad, np.ones(4), atol=1e-12)


class TestHighpassMask:
    def test_keeps_top_30_percent_of_ten(self):
        np.testing.assert_array_equal(np.nonzero(highpass_mask(10))[0], [7, 8, 9])

    def test_length_four_keeps_last_bin_only(self):
        np.testing.assert_array_equal(np.nonzero(highpass_mask(4))[0], [3])

    def test_threshold_is_exact_for_all_lengths(self):
        for T in range(1, 65):
            kept = set(np.nonzero(highpass_mask(T))[0])
            # exact rational comparison: m >= 0.7*T  <=>  10*m >= 7*T
            expected = {m for m in range(T) if 10 * m >= 7 * T}
            assert kept == expected, f"T={T}"
            assert len(kept) == T - highpass_threshold(T)

    def test_cardinality_is_exactly_30_percent_at_multiples_of_ten(self):
        for T in (10, 20, 30, 40, 50, 60):
            assert int(highpass_mask(T).sum()) == (3 * T) // 10

    def test_masked_constant_sequence_vanishes(self):
        x = Tensor(np.full(10, 3.7))
        spec = apply_mask(dft(x), highpass_mask(10))
        np.testing.assert_allclose(idft(spec).data, np.zeros(10), atol=1e-12)
