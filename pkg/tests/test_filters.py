import numpy as np
import pytest

from ipvae.data import IpDecay, SyntheticSpec, decays_to_matrix, synthesize_corpus
from ipvae.filters import (
    CUTOFF_GRID,
    FilterSpec,
    apply_filter,
    butterworth_lowpass,
    exponential_moving_average,
    moving_average,
    tune,
    tune_batch,
)


def measured_gain(cutoff, freq, n=4096):
    """Steady-state amplitude ratio of the filter on a long sinusoid,
    fitted by projection onto the quadrature pair (transient discarded)."""
    t = np.arange(n)
    x = np.sin(np.pi * freq * t)
    y = butterworth_lowpass(x, cutoff)
    keep = slice(n // 2, None)
    basis = np.stack([np.sin(np.pi * freq * t[keep]), np.cos(np.pi * freq * t[keep])], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y[keep], rcond=None)
    return float(np.hypot(*coef))


class TestMovingAverage:
    def test_order_one_is_identity(self):
        x = np.array([5.0, 1.0, 4.0, 2.0])
        assert np.array_equal(moving_average(x, 1), x)

    def test_constant_preserved(self):
        x = np.full(20, 7.5)
        assert np.allclose(moving_average(x, 5), x)

    def test_hand_computed_edge_replication(self):
        x = np.array([1.0, 2.0, 6.0, 2.0, 1.0])
        expected = np.array([4.0 / 3.0, 3.0, 10.0 / 3.0, 3.0, 4.0 / 3.0])
        assert np.allclose(moving_average(x, 3), expected, rtol=1e-12)

    @pytest.mark.parametrize("order", [0, 2, 4, 41, -3])
    def test_invalid_order(self, order):
        with pytest.raises(ValueError):
            moving_average(np.ones(20), order)


class TestExponentialMovingAverage:
    def test_alpha_one_identity(self):
        x = np.array([4.0, -1.0, 2.0, 8.0])
        assert np.array_equal(exponential_moving_average(x, 1.0), x)

    def test_alpha_zero_holds_first_value(self):
        x = np.array([4.0, -1.0, 2.0, 8.0])
        assert np.array_equal(exponential_moving_average(x, 0.0), np.full(4, 4.0))

    def test_unrolled_recursion(self):
        out = exponential_moving_average(np.array([2.0, 0.0, 0.0]), 0.5)
        assert np.allclose(out, [2.0, 1.0, 0.5], rtol=1e-12)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            exponential_moving_average(np.ones(5), 1.2)


class TestButterworth:
    def test_constant_preserved(self):
        x = np.full(20, 3.25)
        assert np.allclose(butterworth_lowpass(x, 0.3), x, rtol=1e-12)

    def test_half_power_at_cutoff(self):
        for cutoff in (0.1, 0.3, 0.6):
            gain = measured_gain(cutoff, cutoff)
            assert gain == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-6)

    def test_gain_at_three_times_cutoff(self):
        # analog prototype: G(3 w_n) = 1/sqrt(10); bilinear warping stays
        # within 1% at a small cutoff
        gain = measured_gain(0.02, 0.06)
        assert gain == pytest.approx(1.0 / np.sqrt(10.0), rel=1e-2)

    @pytest.mark.parametrize("cutoff", [0.0, 1.0, -0.2, 1.3])
    def test_invalid_cutoff(self, cutoff):
        with pytest.raises(ValueError):
            butterworth_lowpass(np.ones(20), cutoff)


class TestCommonProperties:
    @pytest.mark.parametrize("apply", [
        lambda x: moving_average(x, 5),
        lambda x: exponential_moving_average(x, 0.35),
        lambda x: butterworth_lowpass(x, 0.25),
    ])
    def test_linearity(self, apply):
        rng = np.random.default_rng(8)
        x, y = rng.normal(0, 3, 20), rng.normal(0, 3, 20)
        a, b = 1.7, -0.6
        assert np.allclose(apply(a * x + b * y), a * apply(x) + b * apply(y), atol=1e-10)

    @pytest.mark.parametrize("apply", [
        lambda x: moving_average(x, 7),
        lambda x: exponential_moving_average(x, 0.5),
        lambda x: butterworth_lowpass(x, 0.4),
    ])
    def test_length_preserved(self, apply):
        for d in (5, 20, 33):
            assert apply(np.random.default_rng(d).normal(0, 1, d)).shape == (d,)


class TestTune:
    def setup_method(self):
        truth, noisy = synthesize_corpus(SyntheticSpec(n=1, noise_sigma=1.0, seed=44))
        self.truth = truth[0]
        self.noisy = noisy[0]

    def test_identity_most_setting_on_clean_input(self):
        assert tune("MA", self.truth, self.truth).ma_order == 1
        assert tune("EMA", self.truth, self.truth).ema_alpha == 1.0
        assert tune("Butterworth", self.truth, self.truth).cutoff == pytest.approx(
            CUTOFF_GRID[0]
        )

    def test_argmin_contract(self):
        spec = tune("MA", self.noisy, self.truth)
        best = np.sqrt(np.mean(
            (apply_filter(spec, self.noisy.windows) - self.truth.windows) ** 2))
        for order in (1, 3, 5, 7, 9, 11):
            other = np.sqrt(np.mean(
                (moving_average(self.noisy.windows, order) - self.truth.windows) ** 2))
            assert best <= other + 1e-12

    def test_ma_beats_ema_on_benchmark(self):
        # at sigma = 1.1 the centered mean wins over the causal recursion
        truth, _ = synthesize_corpus(SyntheticSpec(n=2000, noise_sigma=0, seed=3))
        gt = decays_to_matrix(truth)
        noisy = gt + np.random.default_rng(4).normal(0, 1.1, gt.shape)
        _, _, e_ma = tune_batch("MA", noisy, gt)
        _, _, e_ema = tune_batch("EMA", noisy, gt)
        assert e_ma.mean() < e_ema.mean()

    def test_scheme_mismatch(self):
        from ipvae.data import WindowScheme
        other = IpDecay(windows=np.ones(10), scheme=WindowScheme(count=10))
        with pytest.raises(ValueError, match="scheme"):
            tune("MA", self.noisy, other)


class TestFilterSpec:
    def test_even_order_rejected(self):
        with pytest.raises(ValueError):
            FilterSpec(kind="MA", ma_order=4)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            FilterSpec(kind="savgol")

    def test_cutoff_open_interval(self):
        with pytest.raises(ValueError):
            FilterSpec(kind="Butterworth", cutoff=1.0)
