import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectre.errors import (
    BadMagicError,
    ConfigError,
    PatchMisalignmentError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from spectre.signal import (
    PreprocessConfig,
    RobustStats,
    SignalSegment,
    SynthConfig,
    bandpass,
    channel_gains,
    notch,
    preprocess,
    read_dataset,
    robust_scale_clip,
    synthesize_dataset,
    write_dataset,
)

FS = 2000.0


def rms(a):
    return np.sqrt(np.mean(np.square(a)))


def tone(freq, n=4000):
    t = np.arange(n) / FS
    return SignalSegment(np.sin(2 * np.pi * freq * t)[None, :], FS)


class TestBandpass:
    cfg = PreprocessConfig()

    def test_dc_is_removed(self):
        out = bandpass(SignalSegment(np.ones((2, 2000)), FS), self.cfg).data
        assert np.abs(out[:, 100:-100]).max() < 0.05

    def test_midband_tone_passes(self):
        seg = tone(100.0)
        out = bandpass(seg, self.cfg).data[0, 100:-100]
        ratio = rms(out) / rms(seg.data[0, 100:-100])
        assert abs(ratio - 1) < 0.05

    def test_passband_gain_window(self):
        # probe the passband numerically on a grid
        for f in (20, 50, 150, 300, 400):
            seg = tone(float(f))
            ratio = rms(bandpass(seg, self.cfg).data[0, 200:-200]) / rms(seg.data[0, 200:-200])
            assert 0.9 <= ratio <= 1.1, f

    def test_stopband_is_attenuated(self):
        # documented stopband: >= 20 dB down at 1 Hz and 800 Hz
        for f in (1.0, 800.0):
            seg = tone(f, 8000)
            ratio = rms(bandpass(seg, self.cfg).data[0, 500:-500]) / rms(seg.data[0, 500:-500])
            assert ratio < 0.1, f

    def test_zero_in_zero_out(self):
        assert np.all(bandpass(SignalSegment(np.zeros((3, 1000)), FS), self.cfg).data == 0)

    def test_rejects_non_finite(self):
        data = np.zeros((1, 1000))
        data[0, 5] = np.nan
        with pytest.raises(ConfigError):
            bandpass(SignalSegment(data, FS), self.cfg)

    def test_band_edge_at_nyquist_rejected(self):
        with pytest.raises(ConfigError):
            bandpass(SignalSegment(np.zeros((1, 1000)), 1000.0), self.cfg)

    def test_too_short_rejected(self):
        with pytest.raises(ConfigError):
            bandpass(SignalSegment(np.zeros((1, 20)), FS), self.cfg)


class TestNotch:
    cfg = PreprocessConfig()

    def test_mains_tone_suppressed(self):
        seg = tone(50.0)
        assert rms(notch(seg, self.cfg).data[0, 200:-200]) < 0.1 * rms(seg.data[0, 200:-200])

    def test_between_harmonics_passes(self):
        seg = tone(75.0)
        assert rms(notch(seg, self.cfg).data[0, 200:-200]) > 0.7 * rms(seg.data[0, 200:-200])

    @pytest.mark.parametrize("f0", [50.0, 150.0, 350.0, 500.0])
    def test_each_notch_20db_neighbours_under_3db(self, f0):
        seg = tone(f0, 8000)
        at = rms(notch(seg, self.cfg).data[0, 1000:-1000]) / rms(seg.data[0, 1000:-1000])
        assert 20 * np.log10(at) <= -20
        for df in (-10.0, 10.0):
            seg = tone(f0 + df, 8000)
            near = rms(notch(seg, self.cfg).data[0, 1000:-1000]) / rms(seg.data[0, 1000:-1000])
            assert 20 * np.log10(near) > -3

    def test_zero_in_zero_out(self):
        assert np.all(notch(SignalSegment(np.zeros((2, 1000)), FS), self.cfg).data == 0)

    def test_harmonic_above_nyquist_rejected(self):
        with pytest.raises(ConfigError):
            notch(SignalSegment(np.zeros((1, 1000)), 800.0), PreprocessConfig(band_hi_hz=300))


class TestRobustScale:
    cfg = PreprocessConfig()

    def test_formula(self):
        # median 5, q25 4, q75 6
        x = np.array([[3.0, 4.0, 5.0, 6.0, 7.0]])
        out = robust_scale_clip(SignalSegment(x), self.cfg).data
        np.testing.assert_array_equal(out, (x - 5) / 2)

    def test_clip(self):
        x = np.array([[0.0, 1.0, 2.0, 3.0, 4.0, 52.0]])
        # median 2.5, q25 1.25, q75 3.75 -> (52 - 2.5)/2.5 = 19.8; push further
        x[0, -1] = 65.0
        out = robust_scale_clip(SignalSegment(x), self.cfg).data
        assert out[0, -1] == 20.0

    def test_constant_channel_goes_to_zero(self):
        out = robust_scale_clip(SignalSegment(np.full((2, 50), 3.7)), self.cfg).data
        assert np.all(out == 0)

    def test_supplied_statistics(self):
        x = np.array([[1.0, 2.0, 3.0]])
        stats = RobustStats(np.array([1.0]), np.array([4.0]))
        out = robust_scale_clip(SignalSegment(x), self.cfg, stats).data
        np.testing.assert_array_equal(out, [[0.0, 0.25, 0.5]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1e4))
    def test_bounded_and_median_centred(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = rng.standard_t(2, size=(3, 301)) * scale
        out = robust_scale_clip(SignalSegment(x), self.cfg).data
        assert np.all(np.abs(out) <= self.cfg.clip_bound)
        assert np.all(np.abs(np.median(out, axis=1)) < 1e-9)

    def test_quantiles_must_increase(self):
        with pytest.raises(ConfigError):
            robust_scale_clip(SignalSegment(np.ones((1, 5))), PreprocessConfig(scale_quantiles=(0.7, 0.3)))


class TestPipeline:
    def test_not_idempotent(self):
        segs = synthesize_dataset(SynthConfig(segments=2))
        cfg = PreprocessConfig(scale_scope="segment")
        once = preprocess(segs, cfg)
        twice = preprocess(once, cfg)
        assert not np.allclose(once[0].data, twice[0].data)

    def test_output_finite_and_bounded(self):
        out = preprocess(synthesize_dataset(SynthConfig(segments=4)), PreprocessConfig())
        for s in out:
            assert np.all(np.isfinite(s.data))
            assert np.abs(s.data).max() <= 20


class TestSynth:
    def test_deterministic(self):
        a = synthesize_dataset(SynthConfig(segments=3, seed=7))
        b = synthesize_dataset(SynthConfig(segments=3, seed=7))
        for x, y in zip(a, b):
            assert x.data.tobytes() == y.data.tobytes()
            assert x.targets.tobytes() == y.targets.tobytes()

    def test_seed_matters(self):
        a = synthesize_dataset(SynthConfig(segments=2, seed=1))
        b = synthesize_dataset(SynthConfig(segments=2, seed=2))
        assert not np.array_equal(a[0].data, b[0].data)

    def test_gain_collapse(self):
        cfg = SynthConfig(dof=1, noise=0.0, kappa=np.inf, segments=2)
        segs = synthesize_dataset(cfg)
        energy = np.square(segs[0].data).sum(axis=1)
        assert (energy > 0).sum() == 1

    def test_large_kappa_gains(self):
        g = channel_gains(12, [2 * np.pi * 3 / 12 + 0.01], 1e6)
        assert g.argmax() == 3
        assert np.sort(g[:, 0])[-2] < 1e-300 or np.sort(g[:, 0])[-2] == 0

    def test_default_target_coverage(self):
        segs = synthesize_dataset(SynthConfig())
        assert len(segs) == 256 and segs[0].data.shape == (12, 2000)
        y = np.stack([s.window_targets for s in segs])
        assert np.all(y.min(axis=0) < 0.2)
        assert np.all(y.max(axis=0) > 0.8)
        assert y.min() >= 0 and y.max() <= 1

    def test_invalid_shapes(self):
        with pytest.raises(ConfigError):
            synthesize_dataset(SynthConfig(length=1950))
        with pytest.raises(ConfigError):
            synthesize_dataset(SynthConfig(channels=0))


class TestDatasetFile:
    def _segments(self):
        rng = np.random.default_rng(0)
        return [SignalSegment(rng.standard_normal((4, 300)).astype(np.float32), 2000.0,
                              rng.uniform(size=(5, 1)).astype(np.float32)) for _ in range(3)]

    def test_round_trip(self, tmp_path):
        segs = self._segments()
        write_dataset(tmp_path / "d.sptr", segs)
        back = read_dataset(tmp_path / "d.sptr", patch_len=100)
        assert len(back) == 3
        for a, b in zip(segs, back):
            assert a.data.tobytes() == b.data.tobytes()
            assert a.targets.tobytes() == b.targets.tobytes()
            assert a.sample_rate_hz == b.sample_rate_hz

    def test_round_trip_without_targets(self, tmp_path):
        segs = [SignalSegment(np.ones((2, 100), dtype=np.float32))]
        write_dataset(tmp_path / "d.sptr", segs)
        assert read_dataset(tmp_path / "d.sptr")[0].targets is None

    def test_header_layout(self, tmp_path):
        write_dataset(tmp_path / "d.sptr", self._segments())
        raw = (tmp_path / "d.sptr").read_bytes()
        assert struct.unpack_from("<4sIIIIfI", raw) == (b"SPTR", 1, 4, 300, 5, 2000.0, 3)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "d.sptr"
        write_dataset(p, self._segments())
        p.write_bytes(b"XXXX" + p.read_bytes()[4:])
        with pytest.raises(BadMagicError):
            read_dataset(p)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "d.sptr"
        write_dataset(p, self._segments())
        raw = bytearray(p.read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            read_dataset(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "d.sptr"
        write_dataset(p, self._segments())
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(TruncatedPayloadError):
            read_dataset(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "d.sptr"
        write_dataset(p, self._segments())
        p.write_bytes(p.read_bytes() + b"\0\0\0\0")
        with pytest.raises(ShapeMismatchError):
            read_dataset(p)

    def test_patch_misalignment(self, tmp_path):
        p = tmp_path / "d.sptr"
        write_dataset(p, self._segments())
        with pytest.raises(PatchMisalignmentError):
            read_dataset(p, patch_len=128)

    def test_error_codes_are_distinct(self):
        codes = {e.code for e in (BadMagicError, VersionMismatchError, TruncatedPayloadError,
                                  ShapeMismatchError, PatchMisalignmentError)}
        assert len(codes) == 5
