"""Steering tests: TDOA model, grid construction, predicted features, HRTF."""

import json

import numpy as np
import pytest

from doatrack.dprtf import normalize_feature
from doatrack.errors import InputError
from doatrack.steering import (
    ArrayGeometry,
    build_grid,
    grid_azimuths,
    load_hrtf_table,
    predicted_feature,
    tdoa,
)

FS = 16000
FFT = 256


class TestTdoa:
    def test_identical_positions_rejected(self):
        with pytest.raises(InputError, match="distinct"):
            ArrayGeometry(mic_positions=np.zeros((3, 3)))

    def test_coincident_wavefront_zero_delay(self):
        geom = ArrayGeometry(mic_positions=np.array([[0, 0, 0], [0, 0, 0.2]]))
        # Both mics on the z axis: any azimuth in the plane gives zero TDOA.
        assert tdoa(geom, 30.0)[1] == pytest.approx(0.0, abs=1e-15)

    def test_endfire_pair_delay(self, pair_array):
        delays = tdoa(pair_array, 0.0)
        assert delays[0] == 0.0
        assert abs(delays[1]) == pytest.approx(0.1 / 343.0, rel=1e-12)

    def test_broadside_pair_zero(self, pair_array):
        assert tdoa(pair_array, 90.0)[1] == pytest.approx(0.0, abs=1e-15)

    def test_sign_convention(self, pair_array):
        # Source toward +x: mic at +x hears it first -> negative delay.
        assert tdoa(pair_array, 0.0)[1] < 0
        assert tdoa(pair_array, 180.0)[1] > 0

    def test_periodicity(self, square_array):
        assert np.allclose(tdoa(square_array, 37.0), tdoa(square_array, 397.0))


class TestGrid:
    def test_default_grid_spacing(self):
        az = grid_azimuths(72)
        assert len(az) == 72
        assert az[0] == -175.0
        assert az[-1] == 180.0
        assert np.allclose(np.diff(az), 5.0)

    def test_predicted_feature_zero_delay_value(self, square_array):
        # tau = 0: raw value is the constant magnitude, phase zero.
        geom = ArrayGeometry(mic_positions=np.array([[0, 0, 0], [0, 0, 0.1]]))
        value = predicted_feature(geom, 25.0, bin_index=10, channel=1,
                                  fft_samples=FFT, sample_rate=FS)
        assert value == pytest.approx(normalize_feature(0.5 + 0j))

    def test_magnitude_constant_and_bounded(self, square_array):
        grid = build_grid(square_array, FFT, FS)
        mags = np.abs(grid.predicted)
        assert np.all(mags <= 1.0)
        expected = 0.5 / np.sqrt(1.25)
        assert np.allclose(mags, expected)

    def test_grid_matches_scalar_op(self, square_array):
        grid = build_grid(square_array, FFT, FS)
        for d in (0, 17, 71):
            az = grid.azimuths_deg[d]
            for ch in (1, 2, 3):
                for k in (5, 40):
                    want = predicted_feature(square_array, az, k, ch, FFT, FS)
                    assert grid.predicted[k, ch - 1, d] == pytest.approx(want)

    def test_continuity_in_azimuth(self, square_array):
        k, ch = 30, 1
        values = [predicted_feature(square_array, az, k, ch, FFT, FS)
                  for az in np.linspace(-10, 10, 41)]
        steps = np.abs(np.diff(values))
        assert np.max(steps) < 0.02


class TestHrtfTable:
    def make_table(self, tmp_path, square_array, fft=FFT):
        grid = build_grid(square_array, fft, FS)
        # Raw (pre-normalization) ratios: magnitude 0.5 phases from geometry.
        bins = np.arange(fft // 2 + 1)
        freqs = bins * FS / fft
        delays = tdoa(square_array, grid.azimuths_deg)
        raw = 0.5 * np.exp(-2j * np.pi * freqs[:, None, None]
                           * delays.T[None, 1:, :])
        payload = {
            "azimuths_deg": grid.azimuths_deg.tolist(),
            "channels": 4,
            "fft_samples": fft,
            "sample_rate": FS,
            "ratios": np.stack([raw.real, raw.imag], axis=-1).tolist(),
        }
        path = tmp_path / "hrtf.json"
        path.write_text(json.dumps(payload))
        return path, grid

    def test_load_matches_geometry_grid(self, tmp_path, square_array):
        path, reference = self.make_table(tmp_path, square_array)
        loaded = load_hrtf_table(path)
        assert np.allclose(loaded.predicted, reference.predicted)
        assert np.allclose(loaded.azimuths_deg, reference.azimuths_deg)

    def test_dimension_mismatch_reported(self, tmp_path, square_array):
        path, _ = self.make_table(tmp_path, square_array)
        data = json.loads(path.read_text())
        data["ratios"] = data["ratios"][:10]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(data))
        with pytest.raises(InputError, match="do not match"):
            load_hrtf_table(bad)

    def test_fft_size_mismatch_reported(self, tmp_path, square_array):
        path, _ = self.make_table(tmp_path, square_array)
        with pytest.raises(InputError, match="FFT size"):
            load_hrtf_table(path, fft_samples=512)
