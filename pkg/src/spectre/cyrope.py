"""Cylindrical rotary position embedding.

A head vector of size d_h is split into a temporal half and a spatial half.
Each half is a stack of d_h/4 adjacent pairs (2j, 2j+1). Temporal pair i
(1-based) turns by ``t * beta_t ** (-2i / (d_h/2))``. Spatial pair i turns
by ``c * (2*pi/C) ** (2i / (d_h/2))``, so the last spatial pair advances
exactly one full turn per trip around the electrode ring.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class CyRopeTable:
    head_dim: int
    channels: int
    temporal_base: float
    temporal_freqs: np.ndarray
    spatial_freqs: np.ndarray

    @property
    def n_pairs(self) -> int:
        """Pairs per half (d_h / 4)."""
        return self.head_dim // 4

    @property
    def spatial_base(self) -> float:
        return self.channels / (2 * math.pi)

    def angles(self, t, c) -> np.ndarray:
        """Rotation angles [..., d_h/2] for positions (t, c): temporal pairs first."""
        t = np.asarray(t, dtype=np.float64)[..., None]
        c = np.asarray(c, dtype=np.float64)[..., None]
        return np.concatenate(
            np.broadcast_arrays(t * self.temporal_freqs, c * self.spatial_freqs), axis=-1
        )

    def cos_sin(self, t, c):
        ang = self.angles(t, c)
        return np.cos(ang), np.sin(ang)

    def frequency_rows(self):
        """(pair index, theta_t, theta_c) rows, 1-based pair index."""
        return [(i + 1, float(self.temporal_freqs[i]), float(self.spatial_freqs[i]))
                for i in range(self.n_pairs)]


def build_table(head_dim: int, channels: int, temporal_base: float = 1e4) -> CyRopeTable:
    if head_dim <= 0 or head_dim % 4:
        raise ConfigError(f"head_dim must be a positive multiple of 4, got {head_dim}")
    if channels < 2:
        raise ConfigError("need at least 2 channels")
    if temporal_base <= 1:
        raise ConfigError("temporal_base must exceed 1")
    half = head_dim // 2
    expo = 2 * np.arange(1, head_dim // 4 + 1) / half
    theta_t = temporal_base ** (-expo)
    omega0 = 2 * math.pi / channels
    theta_c = omega0 ** expo
    # the fundamental has exponent exactly 1; pin it so no pow rounding leaks in
    theta_c[-1] = omega0
    theta_t.flags.writeable = False
    theta_c.flags.writeable = False
    return CyRopeTable(head_dim, channels, float(temporal_base), theta_t, theta_c)


def apply_cyrope(v, t, c, table: CyRopeTable) -> np.ndarray:
    """Rotate head vector(s) ``v`` [..., d_h] at time-patch ``t`` and channel ``c``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != table.head_dim:
        raise ConfigError(f"vector dim {v.shape[-1]} != head_dim {table.head_dim}")
    cos, sin = table.cos_sin(t, c)
    lead = np.broadcast_shapes(v.shape[:-1], cos.shape[:-1])
    flat_v = np.ascontiguousarray(np.broadcast_to(v, (*lead, v.shape[-1])).reshape(-1, v.shape[-1]))
    flat_cos = np.ascontiguousarray(np.broadcast_to(cos, (*lead, cos.shape[-1])).reshape(-1, cos.shape[-1]))
    flat_sin = np.ascontiguousarray(np.broadcast_to(sin, (*lead, sin.shape[-1])).reshape(-1, sin.shape[-1]))
    return kernels.rotate_pairs(flat_v, flat_cos, flat_sin).reshape(*lead, v.shape[-1])


def special_token_rotation(v):
    """Tokens without a physical position (e.g. the kinematics token) are not rotated."""
    return v
