"""Point-set geometry kernels: sampling, grouping, interpolation, segments.

Everything here is a pure function over numpy arrays. Scenes are small
(<= 512 detections) so all neighbor searches are linear scans.

Coordinate convention: x is the range coordinate along the driving
direction, y is lateral with left = y >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Band(Enum):
    NEAR = "near"
    MID = "mid"
    FAR = "far"


class Side(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class SegmentId:
    band: Band
    side: Side

    def __str__(self):
        return f"{self.band.value}_{self.side.value}"


SEGMENT_IDS = tuple(SegmentId(band, side) for band in Band for side in Side)


@dataclass(frozen=True)
class SegmentSpec:
    """Field-of-view partition: range bands at 20% / 50% of range d."""

    d: float

    def __post_init__(self):
        if not (self.d > 0):
            raise ValueError("detection range d must be positive")

    @property
    def boundaries(self) -> tuple:
        return (0.2 * self.d, 0.5 * self.d)


class PointSet:
    """An ordered set of 2-D detections with optional per-point features."""

    def __init__(self, xy, features=None):
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        if not np.isfinite(xy).all():
            raise ValueError("point coordinates must be finite")
        self.xy = xy
        if features is not None:
            features = np.asarray(features, dtype=np.float64)
            if features.ndim != 2 or features.shape[0] != xy.shape[0]:
                raise ValueError("features must have one row per point")
            if not np.isfinite(features).all():
                raise ValueError("feature values must be finite")
        self.features = features

    def __len__(self):
        return self.xy.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointSet):
            return NotImplemented
        if not np.array_equal(self.xy, other.xy):
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)

    def take(self, indices) -> "PointSet":
        indices = np.asarray(indices, dtype=np.int64)
        feats = None if self.features is None else self.features[indices]
        return PointSet(self.xy[indices], feats)

    def __repr__(self):
        return f"PointSet(n={len(self)})"


def _xy(points) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.xy
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def farthest_point_sample(points, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min subset selection of k point indices.

    The first pick is ``start_index``; each later pick maximizes the minimum
    distance to everything already picked, ties broken by lowest index.
    """
    xy = _xy(points)
    n = xy.shape[0]
    if n == 0:
        raise ValueError("cannot sample from an empty point set")
    if not (1 <= k <= n):
        raise ValueError(f"k={k} out of range for {n} points")
    if not (0 <= start_index < n):
        raise ValueError(f"start_index={start_index} out of range")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start_index
    min_d2 = np.sum((xy - xy[start_index]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))  # argmax returns the lowest tied index
        chosen[i] = nxt
        np.minimum(min_d2, np.sum((xy - xy[nxt]) ** 2, axis=1), out=min_d2)
    return chosen


def ball_query(centers, points, radius: float, max_samples: int):
    """Fixed-width neighbor groups within ``radius`` of each center.

    Returns (groups, empty) where groups is [n_centers, max_samples] of point
    indices in ascending order, truncated to max_samples and padded by
    repeating the first in-range index; ``empty`` flags centers with no
    neighbor at all (their group rows are all zeros and must be ignored).
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if max_samples < 1:
        raise ValueError("max_samples must be >= 1")
    cxy = _xy(centers)
    pxy = _xy(points)
    d2 = np.sum((cxy[:, None, :] - pxy[None, :, :]) ** 2, axis=-1)
    mask = d2 <= radius * radius + 0.0
    # stable argsort puts in-range indices first, in ascending index order
    order = np.argsort(~mask, axis=1, kind="stable")[:, :max_samples]
    if order.shape[1] < max_samples:
        pad = np.repeat(order[:, :1], max_samples - order.shape[1], axis=1)
        order = np.concatenate([order, pad], axis=1)
    counts = mask.sum(axis=1)
    empty = counts == 0
    slot = np.arange(order.shape[1])[None, :]
    pad_needed = slot >= counts[:, None]
    first = order[:, :1]
    groups = np.where(pad_needed, first, order)
    groups[empty] = 0
    return groups, empty


def knn(queries, points, k: int):
    """k nearest source points per query; ties broken by lowest index.

    Returns (indices, distances) of shape [n_queries, k] with distances in
    non-decreasing order.
    """
    qxy = _xy(queries)
    pxy = _xy(points)
    n = pxy.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k={k} out of range for {n} points")
    d2 = np.sum((qxy[:, None, :] - pxy[None, :, :]) ** 2, axis=-1)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    return idx, dist


def idw_interpolate(queries, sources, source_features, k: int,
                    eps: float = 1e-8) -> np.ndarray:
    """Inverse-distance weighted features over the k nearest sources.

    Weights are (1/(d_i+eps)) normalized to sum to 1 per query.
    """
    feats = np.asarray(source_features, dtype=np.float64)
    sxy = _xy(sources)
    if sxy.shape[0] == 0:
        raise ValueError("idw_interpolate needs at least one source point")
    if feats.shape[0] != sxy.shape[0]:
        raise ValueError("one feature row per source point required")
    idx, dist = knn(queries, sxy, k)
    w = 1.0 / (dist + eps)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("qk,qkf->qf", w, feats[idx])


def idw_weights(query_xy: np.ndarray, source_xy: np.ndarray, k: int,
                eps: float = 1e-8):
    """knn indices and normalized inverse-distance weights (no features)."""
    idx, dist = knn(query_xy, source_xy, k)
    w = 1.0 / (dist + eps)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def segment_index(xy: np.ndarray, spec: SegmentSpec):
    """Map each point to one of the 6 segments or the out-of-FoV remainder.

    Returns (labels, remainder_mask) where labels[i] indexes SEGMENT_IDS and
    is -1 for out-of-FoV points.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    near_cut, mid_cut = spec.boundaries
    x, y = xy[:, 0], xy[:, 1]
    out = (x < 0) | (x > spec.d)
    band = np.where(x < near_cut, 0, np.where(x < mid_cut, 1, 2))
    side = np.where(y >= 0, 0, 1)
    labels = np.where(out, -1, band * 2 + side)
    return labels.astype(np.int64), out


def segment_partition(scene: PointSet, spec: SegmentSpec):
    """Split a scene into the 6 FoV segments plus the out-of-FoV remainder."""
    labels, out_mask = segment_index(scene.xy, spec)
    segments = {}
    for i, seg_id in enumerate(SEGMENT_IDS):
        segments[seg_id] = scene.take(np.flatnonzero(labels == i))
    remainder = scene.take(np.flatnonzero(out_mask))
    return segments, remainder


def mirror_scene(scene: PointSet, lateral_channels=()) -> PointSet:
    """Negate every point's lateral coordinate (and listed feature columns)."""
    xy = scene.xy.copy()
    xy[:, 1] = -xy[:, 1]
    feats = None
    if scene.features is not None:
        feats = scene.features.copy()
        for col in lateral_channels:
            if not (0 <= col < feats.shape[1]):
                raise ValueError(f"lateral channel {col} out of range")
            feats[:, col] = -feats[:, col]
    elif lateral_channels:
        raise ValueError("scene has no feature columns to mirror")
    return PointSet(xy, feats)
