import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frameproj.errors import DimensionError, FormatError, NumericOverflowError, StaleCacheError
from frameproj.frames import (
    MORLET_XI,
    SignalBatch,
    TransformConfig,
    cache_views,
    compute_views,
    dft_ortho,
    estimate_frame_bounds,
    from_polar,
    full_spectrum,
    gabor_cwt,
    load_views,
    morlet_scales,
    to_polar,
    verify_parseval,
    view_cache_key,
)
from oracles import cwt_loop, dft_loop

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestDftOrtho:
    def test_delta(self):
        np.testing.assert_allclose(dft_ortho(np.array([1.0, 0, 0, 0])), [0.5, 0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(dft_ortho(np.array([1.0, 0, 0, 0]), full=True), [0.5] * 4, atol=1e-15)

    def test_constant(self):
        np.testing.assert_allclose(dft_ortho(np.full(4, 3.0)), [6.0, 0, 0], atol=1e-15)

    def test_pure_cosine(self):
        n = np.arange(32)
        spec = np.abs(dft_ortho(np.cos(2 * np.pi * 3 * n / 32)))
        assert abs(spec[3] - math.sqrt(32) / 2) < 1e-12
        assert np.delete(spec, 3).max() < 1e-12

    @pytest.mark.parametrize("length", [8, 32, 200, 2, 3, 17])
    def test_matches_direct_sum(self, rng, length):
        x = rng.standard_normal(length)
        ref = dft_loop(x)
        np.testing.assert_allclose(dft_ortho(x), ref[:length // 2 + 1], atol=1e-10, rtol=0)
        np.testing.assert_allclose(dft_ortho(x, full=True), ref, atol=1e-10, rtol=0)

    @pytest.mark.parametrize("length", [8, 64, 256])
    def test_radix2_agrees_with_direct(self, rng, length):
        x = rng.standard_normal((3, length))
        np.testing.assert_allclose(dft_ortho(x, full=True, method="radix2"),
                                   dft_ortho(x, full=True, method="direct"), atol=1e-10)

    def test_radix2_rejects_other_lengths(self):
        with pytest.raises(DimensionError):
            dft_ortho(np.ones(12), method="radix2")

    def test_too_short(self):
        with pytest.raises(DimensionError):
            dft_ortho(np.ones(1))

    def test_non_finite(self):
        with pytest.raises((NumericOverflowError, ValueError)):
            dft_ortho(np.array([1.0, np.nan, 0.0, 0.0]))

    def test_batched_axes(self, rng):
        x = rng.standard_normal((2, 3, 16))
        out = dft_ortho(x)
        assert out.shape == (2, 3, 9)
        np.testing.assert_allclose(out[1, 2], dft_ortho(x[1, 2]), atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(2, 64), elements=finite))
    def test_parseval(self, x):
        energy = float((x * x).sum())
        spec = dft_ortho(x, full=True)
        assert abs(float((np.abs(spec) ** 2).sum()) - energy) <= 1e-12 * max(energy, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.integers(2, 48), elements=finite))
    def test_conjugate_symmetry(self, x):
        spec = full_spectrum(dft_ortho(x), len(x))
        n = len(x)
        for k in range(1, n):
            assert abs(spec[n - k] - np.conj(spec[k])) <= 1e-9 * max(1.0, abs(spec[k]))

    def test_linearity(self, rng):
        x, y = rng.standard_normal(40), rng.standard_normal(40)
        np.testing.assert_allclose(dft_ortho(2.5 * x - y), 2.5 * dft_ortho(x) - dft_ortho(y), atol=1e-12)


class TestPolar:
    def test_three_four(self):
        v = to_polar(np.array([3 + 4j]))
        assert v.magnitudes[0] == 5.0
        assert abs(v.phases[0] - math.atan2(4, 3)) < 1e-15

    def test_zero_bin(self):
        v = to_polar(np.array([0j, -0.0 + 0j]))
        assert v.phases.tolist() == [0.0, 0.0]

    def test_phase_range(self):
        v = to_polar(np.array([-1 + 0j, -1 - 0j]))
        assert np.all(v.phases > -math.pi) and np.all(v.phases <= math.pi)

    def test_round_trip(self, rng):
        spec = rng.standard_normal(50) + 1j * rng.standard_normal(50)
        np.testing.assert_allclose(from_polar(to_polar(spec)), spec, atol=1e-12)


class TestMorletScales:
    def test_defaults(self):
        s = morlet_scales()
        assert len(s) == 48 and s[0] == 1.0 and s[-1] == 128.0
        assert abs(s[1] - 128 ** (1 / 47)) < 1e-12
        assert abs(s[1] - 1.10875) < 1e-5

    def test_two(self):
        assert morlet_scales(2, 1, 4).tolist() == [1.0, 4.0]

    def test_geometric(self):
        s = morlet_scales(20, 0.5, 90.0)
        r = s[1:] / s[:-1]
        assert np.all(np.diff(s) > 0)
        np.testing.assert_allclose(r, r[0], rtol=1e-12)

    @pytest.mark.parametrize("args", [(1, 1.0, 2.0), (5, 0.0, 2.0), (5, 3.0, 2.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            morlet_scales(*args)


class TestGaborCwt:
    def test_matches_direct_sum(self, rng):
        x = rng.standard_normal(64)
        scales = np.array([1.0, 2.7, 6.0, 15.5])
        w = gabor_cwt(x, scales, 1.0, MORLET_XI, magnitude=False)
        np.testing.assert_allclose(w, cwt_loop(x, scales, 1.0, MORLET_XI), atol=1e-10, rtol=0)

    def test_other_sigma_xi(self, rng):
        x = rng.standard_normal(40)
        scales = np.array([1.5, 4.0])
        w = gabor_cwt(x, scales, 0.7, 0.4, magnitude=False)
        np.testing.assert_allclose(w, cwt_loop(x, scales, 0.7, 0.4), atol=1e-10, rtol=0)

    def test_zero_signal(self):
        assert not gabor_cwt(np.zeros(32), morlet_scales(8, 1, 16)).any()

    def test_magnitude_view(self, rng):
        batch = SignalBatch(rng.standard_normal((2, 1, 32)))
        view = gabor_cwt(batch, morlet_scales(8, 1, 16))
        assert view.coefficients.shape == (2, 1, 8, 32)
        assert (view.coefficients >= 0).all()

    def test_linearity_pre_magnitude(self, rng):
        x = rng.standard_normal(48)
        s = morlet_scales(6, 1, 20)
        np.testing.assert_allclose(gabor_cwt(3.5 * x, s, magnitude=False), 3.5 * gabor_cwt(x, s, magnitude=False),
                                   atol=1e-12)

    def test_tone_peaks_at_matching_scale(self):
        n = np.arange(256)
        f = 0.05  # cycles/sample
        scales = morlet_scales(24, 1, 64)
        w = np.abs(gabor_cwt(np.cos(2 * np.pi * f * n), scales, magnitude=False))
        best = int(np.argmax(w[:, 64:-64].mean(axis=1)))
        target = int(np.argmin(np.abs(scales - MORLET_XI / f)))
        assert abs(best - target) <= 1

    def test_shift_covariance(self, rng):
        x = rng.standard_normal(128)
        s = morlet_scales(6, 1, 8)
        shift = 5
        w = gabor_cwt(x, s, magnitude=False)
        ws = gabor_cwt(np.roll(x, shift), s, magnitude=False)
        for i, a in enumerate(s):
            edge = int(math.ceil(4 * a)) + shift
            np.testing.assert_allclose(ws[i, edge + shift:-edge], w[i, edge:-edge - shift], atol=1e-12)

    def test_warns_on_oversized_scale(self, caplog):
        gabor_cwt(np.ones(8), np.array([1.0, 16.0]))
        assert any("exceeds 8x the window length" in r.getMessage() for r in caplog.records)

    def test_rejects_non_finite(self):
        with pytest.raises((NumericOverflowError, ValueError)):
            gabor_cwt(np.array([1.0] * 7 + [np.inf]), np.array([1.0, 2.0]))

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            gabor_cwt(np.ones(16), np.array([1.0]), sigma=0.0)


class TestFrameChecks:
    def test_parseval_random(self, rng):
        r = verify_parseval(rng.standard_normal((50, 200)))
        assert np.abs(r - 1).max() < 1e-12

    def test_parseval_zero_signal(self):
        assert verify_parseval(np.zeros((1, 16))).tolist() == [1.0]

    def test_frame_bounds_positive(self, rng):
        rep = estimate_frame_bounds(morlet_scales(), 1.0, MORLET_XI, rng.standard_normal((100, 128)))
        assert 0 < rep.a_lower <= rep.b_upper < math.inf
        assert rep.ratio == rep.b_upper / rep.a_lower and rep.n_probes == 100

    def test_single_probe(self, rng):
        rep = estimate_frame_bounds(morlet_scales(8, 1, 8), 1.0, MORLET_XI, rng.standard_normal((1, 64)))
        assert rep.a_lower == rep.b_upper

    def test_amplitude_invariance(self, rng):
        p = rng.standard_normal((12, 64))
        s = morlet_scales(8, 1, 8)
        a = estimate_frame_bounds(s, 1.0, MORLET_XI, p)
        b = estimate_frame_bounds(s, 1.0, MORLET_XI, 2 * p)
        assert abs(a.a_lower - b.a_lower) < 1e-12 * a.a_lower and abs(a.b_upper - b.b_upper) < 1e-12 * a.b_upper

    def test_zero_probe_rejected(self):
        with pytest.raises(ValueError):
            estimate_frame_bounds(np.array([1.0, 2.0]), 1.0, MORLET_XI, np.zeros((3, 16)))


class TestSignalBatch:
    def test_promotes_2d(self):
        assert SignalBatch(np.zeros((3, 16))).samples.shape == (3, 1, 16)

    def test_rejects_short(self):
        with pytest.raises(DimensionError):
            SignalBatch(np.zeros((2, 1, 7)))

    def test_rejects_non_finite(self):
        with pytest.raises(NumericOverflowError):
            SignalBatch(np.full((1, 1, 8), np.nan))


class TestViewCache:
    def _batch(self, rng):
        return SignalBatch(rng.standard_normal((4, 1, 32)), np.arange(4))

    def test_round_trip_bitwise(self, rng, tmp_path):
        b = self._batch(rng)
        cfg = TransformConfig(num_scales=8, scale_hi=16.0)
        spec, scal, _ = cache_views(b, str(tmp_path), cfg)
        spec2, scal2, _ = load_views(str(tmp_path), b, cfg)
        assert spec.magnitudes.tobytes() == spec2.magnitudes.tobytes()
        assert spec.phases.tobytes() == spec2.phases.tobytes()
        assert scal.coefficients.tobytes() == scal2.coefficients.tobytes()
        np.testing.assert_array_equal(scal.scales, scal2.scales)

    def test_header_layout(self, rng, tmp_path):
        b = self._batch(rng)
        cfg = TransformConfig(num_scales=8, scale_hi=16.0)
        cache_views(b, str(tmp_path), cfg)
        raw = (tmp_path / "scalogram.fpvc").read_bytes()
        assert raw[:4] == b"FPVC"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert raw[8:40] == view_cache_key(b, cfg)
        assert int.from_bytes(raw[40:44], "little") == 2
        assert int.from_bytes(raw[44:48], "little") == 4  # rank of (N, C, S, L)

    def test_sigma_change_invalidates(self, rng, tmp_path):
        b = self._batch(rng)
        cfg = TransformConfig(num_scales=8, scale_hi=16.0)
        cache_views(b, str(tmp_path), cfg)
        other = TransformConfig(num_scales=8, scale_hi=16.0, sigma=1.5)
        assert view_cache_key(b, cfg) != view_cache_key(b, other)
        with pytest.raises(StaleCacheError):
            load_views(str(tmp_path), b, other)

    def test_data_change_invalidates(self, rng, tmp_path):
        b = self._batch(rng)
        cfg = TransformConfig(num_scales=8, scale_hi=16.0)
        cache_views(b, str(tmp_path), cfg)
        changed = SignalBatch(b.samples + 1e-9, b.labels)
        with pytest.raises(StaleCacheError):
            load_views(str(tmp_path), changed, cfg)

    def test_truncated_file(self, rng, tmp_path):
        cache_views(self._batch(rng), str(tmp_path), TransformConfig(num_scales=8, scale_hi=16.0))
        path = tmp_path / "spectral.fpvc"
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_views(str(tmp_path))

    def test_trailing_garbage(self, rng, tmp_path):
        cache_views(self._batch(rng), str(tmp_path), TransformConfig(num_scales=8, scale_hi=16.0))
        with open(tmp_path / "scalogram.fpvc", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(FormatError):
            load_views(str(tmp_path))

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_views(os.path.join(str(tmp_path), "nope"))

    def test_compute_views_shapes(self, rng):
        spec, scal = compute_views(self._batch(rng), TransformConfig(num_scales=8, scale_hi=16.0))
        assert spec.magnitudes.shape == (4, 1, 17)
        assert scal.coefficients.shape == (4, 1, 8, 32)
