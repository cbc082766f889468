import numpy as np
import pytest

from mmwslam.angles import AngleEstimate
from mmwslam.geometry import SPEED_OF_LIGHT, PathKind
from mmwslam.simulate import (
    PathTruth,
    WaveformConfig,
    desk_codebook,
    synth_rs_samples,
    synth_time_series,
)
from mmwslam.toa import CoarseToa, FineToa, coarse_toa, combine_toa, fine_toa, make_reference

CB = desk_codebook()
WF = WaveformConfig.make(256, 4)
FS = WF.bandwidth


def grid_for(tau_fine, noise=0.0, rng=None, doppler=0.0):
    aod, aoa = float(CB.tx_angles[30]), float(CB.rx_angles[70])
    paths = [PathTruth(PathKind.los(), tau_fine, aod, aoa, 0.1 + 0j, doppler)]
    pair = (30, 70)
    est = AngleEstimate(aod, aoa, 1.0)
    return synth_rs_samples(paths, CB, WF, pair, noise, rng), est


def fine_search_oracle(grid, wf, step):
    """Brute-force delay search on a uniform grid (test oracle)."""
    c_k = np.sum(np.conj(wf.rs_symbols) * grid, axis=1)
    taus = np.arange(0.0, 1.0 / wf.scs, step)
    k = np.arange(wf.subcarriers)
    vals = np.abs(np.exp(2j * np.pi * np.outer(taus, k) * wf.scs) @ c_k)
    return taus[int(np.argmax(vals))]


class TestReference:
    def test_unit_modulus_and_deterministic(self):
        a = make_reference(3, 256)
        b = make_reference(3, 256)
        c = make_reference(4, 256)
        assert np.allclose(np.abs(a), 1.0)
        assert np.array_equal(a, b)
        assert not np.allclose(a, c)


class TestCoarse:
    def test_integer_delay_recovered(self):
        ref = make_reference(0, 400)
        rx = np.concatenate([np.zeros(7, complex), ref, np.zeros(20, complex)])
        out = coarse_toa(rx, [ref], FS)
        assert out.sample_offset == 7
        assert out.sequence_id == 0
        assert out.delay == pytest.approx(7 / FS)

    def test_sequence_identification_at_0db(self):
        refs = [make_reference(i, 512) for i in range(2)]
        correct = 0
        for seed in range(100):
            rng = np.random.default_rng([21, seed])
            paths = [PathTruth(PathKind.los(), 33 / FS, 0.0, 0.0, 1.0 + 0j)]
            rx = synth_time_series(paths, refs[1], FS, 0.0, noise_var=1.0, rng=rng)
            out = coarse_toa(rx, refs, FS)
            correct += out.sequence_id == 1 and out.sample_offset == 33
        assert correct >= 99

    def test_fractional_delay_rounds_to_neighbor(self):
        # fractional shifts via frequency-domain ramp on the reference
        ref = make_reference(0, 512)
        n = 2048
        spec = np.fft.fft(np.concatenate([ref, np.zeros(n - ref.size, complex)]))
        shift = 7.4
        ramp = np.exp(-2j * np.pi * np.fft.fftfreq(n) * shift)
        rx = np.fft.ifft(spec * ramp)
        out = coarse_toa(rx, [ref], FS)
        assert out.sample_offset in (7, 8)

    def test_amplitude_scale_invariant(self):
        ref = make_reference(2, 300)
        rng = np.random.default_rng(4)
        rx = np.concatenate([np.zeros(11, complex), ref,
                             0.01 * rng.standard_normal(40)])
        a = coarse_toa(rx, [ref], FS)
        b = coarse_toa(1e6 * rx, [ref], FS)
        assert (a.sequence_id, a.sample_offset) == (b.sequence_id, b.sample_offset)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            coarse_toa(np.array([]), [make_reference(0, 8)], FS)
        with pytest.raises(ValueError):
            coarse_toa(np.ones(8, complex), [], FS)


class TestFine:
    def test_ten_nanoseconds_noiseless(self):
        grid, est = grid_for(10e-9)
        out = fine_toa(grid, WF, est, CB)
        assert abs(out.delay - 10e-9) < 0.2e-9
        # agree with a 10x-finer brute-force grid to within its own step
        step = 1.0 / (80 * WF.subcarriers * WF.scs)
        oracle = fine_search_oracle(grid, WF, step)
        assert abs(out.delay - oracle) < step

    def test_zero_delay(self):
        grid, est = grid_for(0.0)
        out = fine_toa(grid, WF, est, CB)
        assert out.delay == pytest.approx(0.0, abs=1.0 / (8 * WF.subcarriers * WF.scs))

    def test_global_phase_rotation_invariant(self):
        grid, est = grid_for(23e-9)
        a = fine_toa(grid, WF, est, CB)
        b = fine_toa(np.exp(1.234j) * grid, WF, est, CB)
        assert a.delay == pytest.approx(b.delay, abs=1e-15)

    def test_beam_pair_selection(self):
        grid, _ = grid_for(5e-9)
        est = AngleEstimate(float(CB.tx_angles[12]) + 0.3 * 0.05,
                            float(CB.rx_angles[97]) - 0.2 * 0.05, 1.0)
        out = fine_toa(grid, WF, est, CB, path_index=3)
        assert out.beam_pair == (12, 97)
        assert out.path_index == 3

    def test_error_below_two_percent_of_resolution_cell(self):
        cell = 1.0 / (WF.subcarriers * WF.scs)
        rng = np.random.default_rng(6)
        for _ in range(20):
            tau = rng.uniform(0, 60) * 1e-9
            grid, est = grid_for(tau)
            out = fine_toa(grid, WF, est, CB)
            assert abs(out.delay - tau) < 0.02 * cell

    def test_all_zero_grid_rejected(self):
        est = AngleEstimate(0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            fine_toa(np.zeros((256, 4), complex), WF, est, CB)


class TestCombine:
    def test_additive(self):
        coarse = CoarseToa(0, int(round(100e-9 * FS)), FS)
        fine = FineToa(0, 3e-9, (1, 2))
        assert combine_toa(coarse, fine) == pytest.approx(coarse.delay + 3e-9)

    def test_zero_coarse_passthrough(self):
        assert combine_toa(CoarseToa(0, 0, FS), FineToa(0, 7e-9, (0, 0))) \
            == pytest.approx(7e-9)


class TestEndToEnd:
    def run_snapshot(self, bias_m):
        """Single-path snapshot through coarse + fine with clock bias."""
        d = 9.4  # meters
        tau = d / SPEED_OF_LIGHT
        aod, aoa = float(CB.tx_angles[30]), float(CB.rx_angles[70])
        paths = [PathTruth(PathKind.los(), tau, aod, aoa, 0.2 + 0j)]
        ref = make_reference(0, 512)
        rx = synth_time_series(paths, ref, FS, bias_m)
        coarse = coarse_toa(rx, [ref], FS)
        shift = bias_m / SPEED_OF_LIGHT + coarse.delay
        grid = synth_rs_samples(paths, CB, WF, (30, 70), delay_shift=shift)
        est = AngleEstimate(aod, aoa, 1.0)
        fine = fine_toa(grid, WF, est, CB)
        tau_b = combine_toa(coarse, fine)
        if fine.delay > 0.75 / WF.scs:
            tau_b -= 1.0 / WF.scs
        return tau_b, d

    @pytest.mark.parametrize("bias_m", [0.0, 3.0, -2.2, 7.7])
    def test_biased_range_recovered(self, bias_m):
        tau_b, d = self.run_snapshot(bias_m)
        assert SPEED_OF_LIGHT * tau_b == pytest.approx(d - bias_m, abs=0.1)

    def test_bias_transparency(self):
        base, d = self.run_snapshot(0.0)
        for bias_m in (1.5, -4.0):
            shifted, _ = self.run_snapshot(bias_m)
            assert SPEED_OF_LIGHT * (shifted - base) == pytest.approx(-bias_m, abs=0.02)
