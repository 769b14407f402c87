"""Pure numpy versions of the compiled kernels.

Operation order mirrors ``_kernels.pyx`` exactly (sequential accumulation
over the feature axis, point-order centroid sums), so results are bit
identical to the extension.
"""
import numpy as np

_CHUNK = 4096


def nearest_centroid(x, centroids):
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    m, dim = x.shape
    labels = np.empty(m, dtype=np.int64)
    dist = np.empty(m, dtype=np.float64)
    for start in range(0, m, _CHUNK):
        xs = x[start:start + _CHUNK]
        acc = np.zeros((xs.shape[0], centroids.shape[0]))
        for j in range(dim):
            diff = xs[:, j, None] - centroids[None, :, j]
            acc += diff * diff
        lab = np.argmin(acc, axis=1)
        labels[start:start + _CHUNK] = lab
        dist[start:start + _CHUNK] = acc[np.arange(xs.shape[0]), lab]
    return labels, dist


def accumulate_centroids(x, labels, k):
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def rotate_pairs(x, cos, sin):
    x = np.asarray(x, dtype=np.float64)
    a = x[:, 0::2]
    b = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = a * cos - b * sin
    out[:, 1::2] = a * sin + b * cos
    return out
