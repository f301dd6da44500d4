import numpy as np
import pytest

from spinbath.dd_sequences import (
    cpmg,
    custom,
    filter_function,
    filter_function_quadrature,
    hahn,
    modulation,
    parse_sequence,
    ramsey,
    xy,
)
from spinbath.errors import SequenceError
from spinbath.types import SequenceFamily


class TestConstruction:
    """Tests for sequence constructors and the parser."""

    def test_cpmg_positions(self):
        np.testing.assert_allclose(cpmg(4).fractions, [1 / 8, 3 / 8, 5 / 8, 7 / 8])

    def test_hahn_is_cpmg_one(self):
        assert hahn().fractions == cpmg(1).fractions

    def test_cpmg_zero_rejected(self):
        with pytest.raises(SequenceError):
            cpmg(0)

    @pytest.mark.parametrize("fractions", [[0.0, 0.5], [0.5, 0.3], [0.2, 1.0]])
    def test_invalid_fractions(self, fractions):
        with pytest.raises(SequenceError):
            custom(fractions)

    @pytest.mark.parametrize("text, name, N", [
        ("ramsey", "ramsey", 0),
        ("hahn", "hahn", 1),
        ("CPMG:16", "cpmg:16", 16),
        ("xy4", "cpmg:4", 4),
        ("xy8", "cpmg:8", 8),
        ("xy16x2", "cpmg:32", 32),
    ])
    def test_parse(self, text, name, N):
        seq = parse_sequence(text)
        assert seq.name == name
        assert seq.N == N

    def test_parse_custom(self):
        seq = parse_sequence("custom:0.25,0.75")
        assert seq.family == SequenceFamily.CUSTOM
        assert seq.fractions == (0.25, 0.75)

    @pytest.mark.parametrize("text", ["cpmg:x", "cpmg:0", "xy6", "spin-lock", "custom:0.5,a"])
    def test_parse_invalid(self, text):
        with pytest.raises(SequenceError):
            parse_sequence(text)

    def test_xy_needs_multiple_of_four(self):
        with pytest.raises(SequenceError):
            xy(6)


class TestModulation:
    """Tests for the switching function f(t)."""

    def test_hahn_flips_at_half(self):
        np.testing.assert_array_equal(modulation(hahn(), 2.0, np.array([0.0, 0.9, 1.0, 1.5])), [1, 1, -1, -1])

    def test_out_of_range(self):
        with pytest.raises(SequenceError):
            modulation(cpmg(2), 1.0, 1.5)

    def test_net_area(self):
        assert ramsey().net_area == pytest.approx(1.0)
        assert hahn().net_area == pytest.approx(0.0, abs=1e-15)
        assert cpmg(16).net_area == pytest.approx(0.0, abs=1e-14)
        assert custom([0.25]).net_area == pytest.approx(-0.5)


class TestFilterFunction:
    """Tests for F(x) = |sum_j g_j e^{i x tau_j}|^2."""

    def test_ramsey_closed_form(self):
        x = np.linspace(0.0, 40.0, 101)
        np.testing.assert_allclose(filter_function(ramsey(), x), 4 * np.sin(x / 2) ** 2, atol=1e-12)

    def test_hahn_closed_form(self):
        x = np.linspace(0.0, 40.0, 101)
        np.testing.assert_allclose(filter_function(hahn(), x), 16 * np.sin(x / 4) ** 4, atol=1e-12)

    @pytest.mark.parametrize("N", [1, 2, 3, 8, 100])
    def test_cpmg_closed_form_matches_boundary_sum(self, N):
        """Test the closed form against the generic sum, including its removable singular points."""
        seq = cpmg(N)
        generic = custom(seq.fractions)
        x = np.concatenate([np.linspace(0.0, 6 * np.pi * N, 997), np.pi * N * np.arange(1, 6)])
        expected = filter_function(generic, x)
        np.testing.assert_allclose(filter_function(seq, x), expected, rtol=1e-7, atol=1e-9 * expected.max())

    @pytest.mark.parametrize("seq", [ramsey(), hahn(), cpmg(4), custom([0.1, 0.3, 0.8])])
    def test_matches_modulation_quadrature(self, seq):
        x = np.array([0.3, 2.0, 17.0, 60.0])
        np.testing.assert_allclose(filter_function(seq, x), filter_function_quadrature(seq, x), rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("seq, power", [(hahn(), 4), (cpmg(3), 4), (cpmg(4), 6)])
    def test_echo_suppresses_low_frequencies(self, seq, power):
        """Test that F vanishes as x^4 (odd N) or x^6 (even, symmetric N) at small x."""
        small = np.array([1e-3, 2e-3])
        values = filter_function(seq, small)
        assert values[1] / values[0] == pytest.approx(2.0 ** power, rel=1e-4)

    def test_cpmg_peak_position(self):
        """Test that F(x)/x^2 of CPMG-N peaks at x = pi N."""
        N = 16
        x = np.linspace(1.0, 3 * np.pi * N, 20001)
        weight = filter_function(cpmg(N), x) / x ** 2
        assert x[np.argmax(weight)] == pytest.approx(np.pi * N, rel=1e-2)

    @pytest.mark.parametrize("seq", [ramsey(), hahn(), cpmg(4), custom([0.1, 0.3, 0.8])])
    def test_parseval(self, seq):
        """Test int_0^inf F(omega T) / omega^2 d omega = pi T."""
        T = 1e-3
        x_max = 2000 * np.pi
        x = np.linspace(0.0, x_max, 800001)[1:]
        omega = x / T
        weight = filter_function(seq, x) / omega ** 2
        # F averages to sum g_j^2 beyond x_max; small x adds |net area|^2 T^2 below the first point
        tail = np.sum(seq.boundary_weights ** 2) * T / x_max
        head = seq.net_area ** 2 * T ** 2 * omega[0]
        total = np.trapezoid(weight, omega) + tail + head
        assert total == pytest.approx(np.pi * T, rel=1e-4)

    def test_scalar_input(self):
        assert isinstance(filter_function(hahn(), 1.0), float)
