"""Patch STFT features, K-means codebooks and pseudo-label assignment."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    BadMagicError,
    ConfigError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

CODEBOOK_MAGIC = b"SPCB"
CODEBOOK_VERSION = 1
# magic, version, K, D_s, window_len, hop, log_feature, patch_len, feature_kind, fit_seed, inertia
_CODEBOOK_HEADER = struct.Struct("<4sIIIIIIIIqd")
FEATURE_KINDS = ("stft", "raw")


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 64
    hop: int = 32
    log_feature: bool = True

    def validate(self, patch_len: int | None = None):
        if self.window_len < 2 or self.hop < 1:
            raise ConfigError("window_len must be >= 2 and hop >= 1")
        if self.hop > self.window_len:
            raise ConfigError("hop must not exceed window_len")
        if patch_len is not None and patch_len < self.window_len:
            raise ConfigError(f"patch length {patch_len} is shorter than window_len {self.window_len}")

    @property
    def n_freq(self) -> int:
        return self.window_len // 2 + 1

    def n_frames(self, patch_len: int) -> int:
        return (patch_len - self.window_len) // self.hop + 1

    def feature_dim(self, patch_len: int) -> int:
        return self.n_freq * self.n_frames(patch_len)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even form used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """[..., P] -> [..., T_patch, window_len]; frames lie fully inside the patch."""
    n_frames = cfg.n_frames(x.shape[-1])
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.window_len)[None, :]
    return x[..., idx]


def stft_magnitude(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """|DFT(hann * frame)| for a batch of patches: [..., P] -> [..., F, T_patch]."""
    x = np.asarray(x, dtype=np.float64)
    cfg.validate(x.shape[-1])
    spec = np.abs(np.fft.rfft(_frames(x, cfg) * hann(cfg.window_len), axis=-1))
    return np.swapaxes(spec, -1, -2)


def patch_stft(patch: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Spectral feature matrix [F, T_patch] of a single patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 1:
        raise ConfigError("patch_stft expects a 1-D patch")
    mag = stft_magnitude(patch, cfg)
    return np.log1p(mag) if cfg.log_feature else mag


def flatten_spectral(s: np.ndarray) -> np.ndarray:
    """Frequency-major flattening: row f occupies [f*T, (f+1)*T)."""
    return np.asarray(s).reshape(*s.shape[:-2], -1)


def unflatten_spectral(v: np.ndarray, n_frames: int) -> np.ndarray:
    v = np.asarray(v)
    return v.reshape(*v.shape[:-1], -1, n_frames)


def patchify(x: np.ndarray, patch_len: int) -> np.ndarray:
    """[..., C, L] -> [..., C * L/P, P], token order channel-major (c, t)."""
    *lead, c, length = x.shape
    if length % patch_len:
        raise ConfigError(f"length {length} is not a multiple of patch length {patch_len}")
    return x.reshape(*lead, c * (length // patch_len), patch_len)


def patch_features(x: np.ndarray, patch_len: int, kind: str = "stft",
                   cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Flattened per-patch features [..., N, D_s] for a [..., C, L] array.

    ``kind="stft"`` gives the spectral features; ``kind="raw"`` the raw samples.
    """
    patches = patchify(np.asarray(x, dtype=np.float64), patch_len)
    if kind == "raw":
        return patches
    if kind != "stft":
        raise ConfigError(f"unknown feature kind {kind!r}")
    mag = stft_magnitude(patches, cfg)
    return flatten_spectral(np.log1p(mag) if cfg.log_feature else mag)


@dataclass
class SpectralCodebook:
    centroids: np.ndarray
    stft_cfg: StftConfig = StftConfig()
    patch_len: int = 100
    feature_kind: str = "stft"
    fit_seed: int = 0
    inertia: float = 0.0
    inertia_history: list = field(default_factory=list, repr=False)
    n_iter: int = 0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.k < 2:
            raise ConfigError("a codebook needs a [K, D_s] centroid matrix with K >= 2")
        if not np.all(np.isfinite(self.centroids)):
            raise ConfigError("codebook centroids must be finite")
        if self.feature_kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.feature_kind!r}")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def expected_dim(self) -> int:
        if self.feature_kind == "raw":
            return self.patch_len
        return self.stft_cfg.feature_dim(self.patch_len)

    def labels_for(self, x: np.ndarray) -> np.ndarray:
        """Pseudo-labels [..., N] for signal arrays [..., C, L]."""
        feats = patch_features(x, self.patch_len, self.feature_kind, self.stft_cfg)
        lead = feats.shape[:-1]
        return assign_pseudolabels(self, feats.reshape(-1, feats.shape[-1])).reshape(lead)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(m)]
    _, d2 = kernels.nearest_centroid(x, centers[:1])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total), side="right"))
            idx = min(idx, m - 1)
        centers[j] = x[idx]
        _, d_new = kernels.nearest_centroid(x, centers[j:j + 1])
        d2 = np.minimum(d2, d_new)
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iters: int):
    k = centers.shape[0]
    labels, d2 = kernels.nearest_centroid(x, centers)
    history = [float(d2.sum())]
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        sums, counts = kernels.accumulate_centroids(x, labels, k)
        new_centers = centers.copy()
        filled = counts > 0
        new_centers[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            # distances to the centroids the points are currently assigned to
            far = ((x - new_centers[labels]) ** 2).sum(axis=1)
            for j in empty:
                idx = int(np.argmax(far))
                new_centers[j] = x[idx]
                far[idx] = -1.0
        centers = new_centers
        new_labels, d2 = kernels.nearest_centroid(x, centers)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centers, labels, history, n_iter


def kmeans_fit(vectors: np.ndarray, k: int, seed: int = 0, max_iters: int = 300,
               n_init: int = 4, stft_cfg: StftConfig = StftConfig(),
               patch_len: int = 100, feature_kind: str = "stft") -> SpectralCodebook:
    """Lloyd's algorithm from k-means++ seeds; the best of ``n_init`` restarts wins.

    Each restart iterates until the assignment stops changing or
    ``max_iters`` is reached. A cluster left empty is re-seeded at the point
    farthest from its own centroid.
    """
    x = np.ascontiguousarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("kmeans_fit expects a [M, D] matrix")
    if k < 2:
        raise ConfigError("K must be at least 2")
    if x.shape[0] < k:
        raise ConfigError(f"need at least K={k} vectors, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("kmeans_fit input must be finite")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centers, _, history, n_iter = _lloyd(x, _kmeans_pp(x, k, rng), max_iters)
        if best is None or history[-1] < best[1][-1]:
            best = (centers, history, n_iter)
    centers, history, n_iter = best
    return SpectralCodebook(centers, stft_cfg, patch_len, feature_kind, seed,
                            history[-1], history, n_iter)


def assign_pseudolabels(codebook: SpectralCodebook, vectors: np.ndarray) -> np.ndarray:
    """Nearest centroid under squared Euclidean distance, lowest index on ties."""
    x = np.ascontiguousarray(np.atleast_2d(vectors), dtype=np.float64)
    if x.shape[1] != codebook.dim:
        raise ShapeMismatchError(f"vector dim {x.shape[1]} != codebook dim {codebook.dim}")
    labels, _ = kernels.nearest_centroid(x, codebook.centroids)
    return labels


def fit_codebook(x: np.ndarray, k: int, seed: int, patch_len: int = 100,
                 kind: str = "stft", stft_cfg: StftConfig = StftConfig(), **kw) -> SpectralCodebook:
    """Featurize every patch of [S, C, L] signals and cluster the features."""
    feats = patch_features(x, patch_len, kind, stft_cfg)
    return kmeans_fit(feats.reshape(-1, feats.shape[-1]), k, seed, stft_cfg=stft_cfg,
                      patch_len=patch_len, feature_kind=kind, **kw)


def write_codebook(path, cb: SpectralCodebook) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _CODEBOOK_HEADER.pack(
        CODEBOOK_MAGIC, CODEBOOK_VERSION, cb.k, cb.dim, cb.stft_cfg.window_len,
        cb.stft_cfg.hop, int(cb.stft_cfg.log_feature), cb.patch_len,
        FEATURE_KINDS.index(cb.feature_kind), cb.fit_seed, cb.inertia,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())


def read_codebook_header(buf: bytes) -> dict:
    if len(buf) < 4 or buf[:4] != CODEBOOK_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CODEBOOK_MAGIC!r}")
    if len(buf) < _CODEBOOK_HEADER.size:
        raise TruncatedPayloadError("codebook header is truncated")
    (_, version, k, dim, win, hop, log_flag, patch_len, kind,
     seed, inertia) = _CODEBOOK_HEADER.unpack_from(buf)
    if version != CODEBOOK_VERSION:
        raise VersionMismatchError(f"codebook version {version}, expected {CODEBOOK_VERSION}")
    if kind >= len(FEATURE_KINDS):
        raise ShapeMismatchError(f"unknown feature kind code {kind}")
    return dict(version=version, k=k, dim=dim, window_len=win, hop=hop,
                log_feature=bool(log_flag), patch_len=patch_len,
                feature_kind=FEATURE_KINDS[kind], fit_seed=seed, inertia=inertia)


def read_codebook(path) -> SpectralCodebook:
    buf = Path(path).read_bytes()
    h = read_codebook_header(buf)
    expected = _CODEBOOK_HEADER.size + 4 * h["k"] * h["dim"]
    if len(buf) < expected:
        raise TruncatedPayloadError(f"codebook has {len(buf)} bytes, expected {expected}")
    if len(buf) > expected:
        raise ShapeMismatchError("codebook has trailing bytes")
    cents = np.frombuffer(buf, dtype="<f4", offset=_CODEBOOK_HEADER.size).reshape(h["k"], h["dim"])
    stft_cfg = StftConfig(h["window_len"], h["hop"], h["log_feature"])
    try:
        cb = SpectralCodebook(cents.astype(np.float64), stft_cfg, h["patch_len"],
                              h["feature_kind"], h["fit_seed"], h["inertia"])
    except ConfigError as exc:
        raise ShapeMismatchError(str(exc)) from exc
    if cb.dim != cb.expected_dim():
        raise ShapeMismatchError(f"D_s={cb.dim} does not match featurization ({cb.expected_dim()})")
    return cb
