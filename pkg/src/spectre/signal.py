"""Signal segments, preprocessing filters, synthetic data and the dataset file."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import (
    BadMagicError,
    ConfigError,
    PatchMisalignmentError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

EPS_SCALE = 1e-8
DATASET_MAGIC = b"SPTR"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIIIIfI")


@dataclass
class SignalSegment:
    """One recording window.

    ``data`` is [C, L]. ``targets`` is [DoF, L_target] or None; the synthetic
    pipeline stores one window-level vector (L_target = 1, value at window end).
    """

    data: np.ndarray
    sample_rate_hz: float = 2000.0
    targets: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ConfigError(f"segment data must be 2-D [C, L], got shape {self.data.shape}")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if self.targets is not None:
            t = np.asarray(self.targets)
            if t.ndim == 1:
                t = t[:, None]
            self.targets = t

    @property
    def channel_count(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]

    @property
    def dof(self) -> int:
        return 0 if self.targets is None else self.targets.shape[0]

    @property
    def window_targets(self) -> np.ndarray | None:
        """Target vector at the window end, [DoF]."""
        return None if self.targets is None else self.targets[:, -1]

    def with_data(self, data):
        return SignalSegment(data, self.sample_rate_hz, self.targets)


@dataclass
class PreprocessConfig:
    band_lo_hz: float = 8.0
    band_hi_hz: float = 500.0
    bandpass_order: int = 4
    notch_base_hz: float = 50.0
    notch_harmonics: int = 10
    notch_q: float = 30.0
    clip_bound: float = 20.0
    scale_quantiles: tuple[float, float] = (0.25, 0.75)
    scale_scope: str = "session"

    def validate(self, sample_rate_hz: float | None = None):
        if not (0 < self.band_lo_hz < self.band_hi_hz):
            raise ConfigError("need 0 < band_lo_hz < band_hi_hz")
        if sample_rate_hz is not None and self.band_hi_hz >= sample_rate_hz / 2:
            raise ConfigError(
                f"band_hi_hz={self.band_hi_hz} must be below Nyquist ({sample_rate_hz / 2})"
            )
        if self.bandpass_order < 1:
            raise ConfigError("bandpass_order must be >= 1")
        if self.notch_base_hz <= 0 or self.notch_harmonics < 0 or self.notch_q <= 0:
            raise ConfigError("invalid notch settings")
        if sample_rate_hz is not None and self.notch_harmonics > 0:
            top = self.notch_base_hz * self.notch_harmonics
            if top >= sample_rate_hz / 2:
                raise ConfigError(f"notch harmonic {top} Hz is not below Nyquist")
        if self.clip_bound <= 0:
            raise ConfigError("clip_bound must be positive")
        lo, hi = self.scale_quantiles
        if not (0 < lo < hi < 1):
            raise ConfigError("scale_quantiles must be strictly increasing inside (0, 1)")
        if self.scale_scope not in ("segment", "session"):
            raise ConfigError("scale_scope must be 'segment' or 'session'")


def _check_finite(seg: SignalSegment):
    if not np.all(np.isfinite(seg.data)):
        raise ConfigError("segment contains non-finite samples")


def bandpass(seg: SignalSegment, cfg: PreprocessConfig) -> SignalSegment:
    """Zero-phase Butterworth band-pass, applied per channel."""
    cfg.validate(seg.sample_rate_hz)
    _check_finite(seg)
    sos = sps.butter(
        cfg.bandpass_order, [cfg.band_lo_hz, cfg.band_hi_hz],
        btype="bandpass", output="sos", fs=seg.sample_rate_hz,
    )
    padlen = 3 * (2 * len(sos) + 1)
    if seg.length <= max(8 * 2 * cfg.bandpass_order, padlen):
        raise ConfigError(f"segment of length {seg.length} is too short for the band-pass warm-up")
    out = sps.sosfiltfilt(sos, np.asarray(seg.data, dtype=np.float64), axis=-1)
    return seg.with_data(out)


def notch_frequencies(cfg: PreprocessConfig) -> list[float]:
    return [cfg.notch_base_hz * (h + 1) for h in range(cfg.notch_harmonics)]


def notch(seg: SignalSegment, cfg: PreprocessConfig) -> SignalSegment:
    """Zero-phase IIR notches at the mains frequency and its harmonics.

    ``notch_q`` applies at the base frequency; harmonic h uses ``h * notch_q``
    so every notch has the same absolute bandwidth.
    """
    cfg.validate(seg.sample_rate_hz)
    _check_finite(seg)
    out = np.asarray(seg.data, dtype=np.float64)
    for h, f0 in enumerate(notch_frequencies(cfg), start=1):
        b, a = sps.iirnotch(f0, cfg.notch_q * h, fs=seg.sample_rate_hz)
        out = sps.filtfilt(b, a, out, axis=-1)
    return seg.with_data(out)


@dataclass
class RobustStats:
    """Per-channel centre and spread used by robust scaling."""

    median: np.ndarray
    spread: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray, quantiles=(0.25, 0.75)) -> "RobustStats":
        """``data`` is [C, samples]; statistics are taken along the last axis."""
        data = np.asarray(data, dtype=np.float64)
        med = np.median(data, axis=-1)
        q_lo, q_hi = np.quantile(data, quantiles, axis=-1)
        return cls(med, q_hi - q_lo)

    @classmethod
    def fit_session(cls, segments, quantiles=(0.25, 0.75)) -> "RobustStats":
        return cls.fit(np.concatenate([s.data for s in segments], axis=1), quantiles)


def robust_scale_clip(seg: SignalSegment, cfg: PreprocessConfig,
                      stats: RobustStats | None = None) -> SignalSegment:
    """Median-centre, divide by the inter-quantile range, clip to +-clip_bound.

    Statistics come from the segment itself unless ``stats`` is supplied.
    Channels whose spread is at most ``EPS_SCALE`` are divided by ``EPS_SCALE``.
    """
    cfg.validate()
    _check_finite(seg)
    x = np.asarray(seg.data, dtype=np.float64)
    if stats is None:
        stats = RobustStats.fit(x, cfg.scale_quantiles)
    spread = np.where(stats.spread > EPS_SCALE, stats.spread, EPS_SCALE)
    y = (x - stats.median[:, None]) / spread[:, None]
    return seg.with_data(np.clip(y, -cfg.clip_bound, cfg.clip_bound))


def preprocess(segments, cfg: PreprocessConfig, n_fit: int | None = None):
    """bandpass -> notch -> robust_scale_clip, statistics per ``cfg.scale_scope``.

    With session scope the statistics come from the first ``n_fit`` segments
    (all of them by default), so held-out windows can share training statistics.
    """
    filtered = [notch(bandpass(s, cfg), cfg) for s in segments]
    stats = None
    if cfg.scale_scope == "session" and filtered:
        fit = filtered if n_fit is None else filtered[:n_fit]
        if not fit:
            raise ConfigError("n_fit must select at least one segment")
        stats = RobustStats.fit_session(fit, cfg.scale_quantiles)
    return [robust_scale_clip(s, cfg, stats) for s in filtered]


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthConfig:
    channels: int = 12
    length: int = 2000
    dof: int = 5
    segments: int = 256
    sample_rate_hz: float = 2000.0
    noise: float = 0.1
    kappa: float = 2.0
    seed: int = 0
    patch_len: int = 100
    band_lo_hz: float = 20.0
    band_hi_hz: float = 450.0
    target_freq_hz: tuple[float, float] = (0.2, 1.5)

    def validate(self):
        if self.channels < 1 or self.length < 1 or self.dof < 1 or self.segments < 1:
            raise ConfigError("channels, length, dof and segments must be positive")
        if self.length % self.patch_len:
            raise ConfigError(f"length {self.length} is not a multiple of patch_len {self.patch_len}")
        if self.noise < 0 or self.kappa < 0:
            raise ConfigError("noise and kappa must be non-negative")
        if not (0 < self.band_lo_hz < self.band_hi_hz < self.sample_rate_hz / 2):
            raise ConfigError("invalid synthetic noise band")


def angular_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def channel_gains(channels: int, muscle_angles, kappa: float) -> np.ndarray:
    """[C, DoF] gains exp(-kappa * angdist^2) between electrode and muscle angles.

    ``kappa = inf`` keeps only the nearest electrode(s) of each muscle.
    """
    elec = 2 * np.pi * np.arange(channels) / channels
    dist = angular_distance(elec[:, None], np.asarray(muscle_angles)[None, :])
    if np.isinf(kappa):
        return np.isclose(dist, dist.min(axis=0, keepdims=True), rtol=0, atol=1e-12).astype(float)
    return np.exp(-kappa * dist**2)


def synthesize_dataset(cfg: SynthConfig) -> list[SignalSegment]:
    """Generate one continuous recording and cut it into windows.

    Each DoF has a slow [0, 1] trajectory that modulates shared band-limited
    noise; channels see each DoF through an angular gain profile on the
    electrode ring, plus independent white noise.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.sample_rate_hz
    total = cfg.segments * cfg.length
    t = np.arange(total) / fs

    targets = np.empty((cfg.dof, total))
    for f in range(cfg.dof):
        n_comp = rng.integers(2, 5)
        freqs = rng.uniform(*cfg.target_freq_hz, size=n_comp)
        phases = rng.uniform(0, 2 * np.pi, size=n_comp)
        amps = rng.uniform(0.5, 1.0, size=n_comp)
        y = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(0)
        # normalise on the window-end samples (the stored targets) so they span [0, 1]
        ends = y[cfg.length - 1::cfg.length] if cfg.segments > 1 else y
        targets[f] = np.clip((y - ends.min()) / (ends.max() - ends.min()), 0.0, 1.0)

    angles = rng.uniform(0, 2 * np.pi, size=cfg.dof)
    gains = channel_gains(cfg.channels, angles, cfg.kappa)

    sos = sps.butter(4, [cfg.band_lo_hz, cfg.band_hi_hz], btype="bandpass", output="sos", fs=fs)
    carriers = sps.sosfiltfilt(sos, rng.standard_normal((cfg.dof, total)), axis=-1)
    carriers /= carriers.std(axis=-1, keepdims=True)

    data = gains @ (targets * carriers)
    if cfg.noise > 0:
        data += cfg.noise * rng.standard_normal((cfg.channels, total))

    segs = []
    for i in range(cfg.segments):
        sl = slice(i * cfg.length, (i + 1) * cfg.length)
        segs.append(SignalSegment(data[:, sl].copy(), fs, targets[:, sl][:, -1:].copy()))
    return segs


# -- dataset file --------------------------------------------------------------

def write_dataset(path, segments) -> None:
    """Little-endian SPTR file; data and window-level targets stored as f32."""
    segments = list(segments)
    if not segments:
        raise ShapeMismatchError("cannot write an empty dataset")
    c, length = segments[0].data.shape
    dof = segments[0].dof
    fs = segments[0].sample_rate_hz
    for s in segments:
        if s.data.shape != (c, length) or s.dof != dof or s.sample_rate_hz != fs:
            raise ShapeMismatchError("all segments must share C, L, DoF and sample rate")
        if s.targets is not None and s.targets.shape[1] != 1:
            raise ShapeMismatchError("only window-level targets (L_target = 1) can be stored")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, c, length, dof, fs, len(segments)))
        for s in segments:
            fh.write(np.ascontiguousarray(s.data, dtype="<f4").tobytes())
            if dof:
                fh.write(np.ascontiguousarray(s.window_targets, dtype="<f4").tobytes())


def read_dataset_header(buf: bytes) -> dict:
    if len(buf) < 4 or buf[:4] != DATASET_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {DATASET_MAGIC!r}")
    if len(buf) < _DATASET_HEADER.size:
        raise TruncatedPayloadError("dataset header is truncated")
    _, version, c, length, dof, fs, count = _DATASET_HEADER.unpack_from(buf)
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"dataset version {version}, expected {DATASET_VERSION}")
    return dict(version=version, channels=c, length=length, dof=dof,
                sample_rate_hz=float(fs), segments=count)


def read_dataset(path, patch_len: int | None = None) -> list[SignalSegment]:
    buf = Path(path).read_bytes()
    hdr = read_dataset_header(buf)
    c, length, dof, count = hdr["channels"], hdr["length"], hdr["dof"], hdr["segments"]
    if c == 0 or length == 0 or count == 0:
        raise ShapeMismatchError("dataset header declares an empty dimension")
    if patch_len is not None and length % patch_len:
        raise PatchMisalignmentError(f"L={length} is not a multiple of patch length {patch_len}")
    per_seg = 4 * (c * length + dof)
    expected = _DATASET_HEADER.size + count * per_seg
    if len(buf) < expected:
        raise TruncatedPayloadError(f"payload has {len(buf)} bytes, expected {expected}")
    if len(buf) > expected:
        raise ShapeMismatchError(f"payload has {len(buf) - expected} trailing bytes")
    body = np.frombuffer(buf, dtype="<f4", offset=_DATASET_HEADER.size).reshape(count, c * length + dof)
    segs = []
    for row in body:
        data = row[: c * length].reshape(c, length).astype(np.float32)
        targets = row[c * length:].astype(np.float32)[:, None] if dof else None
        segs.append(SignalSegment(data, hdr["sample_rate_hz"], targets))
    return segs


def stack_segments(segments):
    """[S, C, L] data array and [S, DoF] window targets (or None)."""
    x = np.stack([s.data for s in segments])
    y = None
    if segments and segments[0].targets is not None:
        y = np.stack([s.window_targets for s in segments])
    return x, y
