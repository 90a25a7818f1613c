"""Feature pipeline: extraction plans, per-axis stack merging and a
deterministic hand-crafted "toy" extractor that stands in for the neural
network so the full pipeline runs without one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVolume, FeatureDimMismatch, IncompatibleDims
from .volgrid import (
    FeatureStack,
    FeatureVolume,
    Volume,
    compute_norms,
    sanitize_features,
)

TOY_FEATURE_DIM = 32


@dataclass(frozen=True)
class ExtractionPlan:
    source_dims: tuple[int, int, int]
    resize_target: int
    patch: int
    target_feature_dims: tuple[int, int, int]
    feature_dim: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "v": 1,
                "source_dims": list(self.source_dims),
                "resize_target": self.resize_target,
                "patch": self.patch,
                "target_feature_dims": list(self.target_feature_dims),
                "feature_dim": self.feature_dim,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "ExtractionPlan":
        d = json.loads(text)
        return ExtractionPlan(
            source_dims=tuple(d["source_dims"]),
            resize_target=int(d["resize_target"]),
            patch=int(d["patch"]),
            target_feature_dims=tuple(d["target_feature_dims"]),
            feature_dim=int(d["feature_dim"]),
        )


def plan_for(v: Volume, resize_target: int = 640, patch: int = 8,
             feature_dim: int = 384) -> ExtractionPlan:
    """Derive the reduced feature-grid dimensions for a volume.

    Slices are scaled so the longest edge hits ``resize_target`` before
    patching, so each feature dim is round(dim * resize_target / max_dim) / patch.
    """
    if resize_target < patch * 4:
        raise IncompatibleDims(
            f"resize_target {resize_target} < 4*patch {patch * 4}"
        )
    dims = v.dims
    if min(dims) < 8:
        raise DegenerateVolume(f"volume dims {dims} below minimum of 8")
    max_dim = max(dims)
    target = tuple(
        int(round(round(d * resize_target / max_dim) / patch)) for d in dims
    )
    if min(target) < 4:
        raise DegenerateVolume(
            f"target feature dims {target} below minimum of 4"
        )
    return ExtractionPlan(
        source_dims=dims,
        resize_target=resize_target,
        patch=patch,
        target_feature_dims=target,
        feature_dim=feature_dim,
    )


# --------------------------------------------------------------------------
# Fractional box-average pooling
# --------------------------------------------------------------------------

def pooling_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) area-weighted box-pooling matrix with fractional bin
    edges; each row sums to 1. Requires n_out <= n_in."""
    if n_out > n_in:
        raise IncompatibleDims(f"cannot pool {n_in} up to {n_out}")
    edges = np.linspace(0.0, n_in, n_out + 1)
    m = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = edges[j], edges[j + 1]
        i0 = int(np.floor(lo))
        i1 = int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                m[j, i] = overlap
        m[j] /= hi - lo
    return m


def pool_axis(data: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    """Box-average ``data`` along ``axis`` down to ``n_out`` samples."""
    m = pooling_matrix(data.shape[axis], n_out)
    pooled = np.tensordot(m, data, axes=([1], [axis]))
    return np.moveaxis(pooled, 0, axis)


def pool_to(data: np.ndarray, target: tuple[int, int, int]) -> np.ndarray:
    """Pool the three leading spatial axes of ``data`` to ``target``."""
    out = data
    for a in range(3):
        if out.shape[a] != target[a]:
            out = pool_axis(out, a, target[a])
    return out


def merge_stacks(fx: FeatureStack, fy: FeatureStack, fz: FeatureStack,
                 target: tuple[int, int, int]) -> FeatureVolume:
    """Average-pool each per-axis stack to ``target`` dims, then average the
    three pooled grids elementwise."""
    stacks = (fx, fy, fz)
    fdim = fx.feature_dim
    if any(s.feature_dim != fdim for s in stacks):
        raise FeatureDimMismatch(
            f"feature dims differ: {[s.feature_dim for s in stacks]}"
        )
    for s in stacks:
        if any(t > d for t, d in zip(target, s.dims)):
            raise IncompatibleDims(
                f"target {target} exceeds stack dims {s.dims}"
            )
    merged = sum(pool_to(s.data, target) for s in stacks) / 3.0
    merged = np.ascontiguousarray(merged, dtype=np.float32)
    merged, _ = sanitize_features(merged)
    # the un-reduced axis of each stack equals the source resolution
    source_dims = (fx.dims[0], fy.dims[1], fz.dims[2])
    return FeatureVolume(
        dims=target,
        feature_dim=fdim,
        data=merged,
        source_dims=source_dims,
        norms=compute_norms(merged),
    )


# --------------------------------------------------------------------------
# Toy extractor
# --------------------------------------------------------------------------

_N_HIST = 8
_N_ORIENT = 8
_N_RINGS = 12


def _toy_slice_features(img: np.ndarray, cells: tuple[int, int]) -> np.ndarray:
    """Per-cell descriptor grid for one slice.

    Descriptor layout (length 32): mean, std, 8-bin intensity histogram,
    8-bin gradient-orientation histogram, 12 neighborhood-ring means and a
    contrast-gated 2-value normalized in-slice position. The position
    channel is scaled by the cell's std so a constant slice yields
    identical descriptors everywhere.
    """
    h, w = img.shape
    ch, cw = cells
    from scipy.ndimage import uniform_filter

    mx = pooling_matrix(h, ch)
    my = pooling_matrix(w, cw)

    def cell_mean(a):
        return mx @ a @ my.T

    mean = cell_mean(img)
    var = np.maximum(cell_mean(img * img) - mean * mean, 0.0)
    std = np.sqrt(var)

    # intensity histogram: pooled bin-indicator maps
    bins = np.minimum((img * _N_HIST).astype(np.intp), _N_HIST - 1)
    hist = np.stack(
        [cell_mean((bins == b).astype(np.float64)) for b in range(_N_HIST)],
        axis=-1,
    )

    # gradient-orientation histogram weighted by magnitude
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)  # [-pi, pi]
    obin = np.minimum(
        ((ang + np.pi) / (2 * np.pi) * _N_ORIENT).astype(np.intp),
        _N_ORIENT - 1,
    )
    orient = np.stack(
        [
            cell_mean(mag * (obin == b).astype(np.float64))
            for b in range(_N_ORIENT)
        ],
        axis=-1,
    )
    omax = orient.sum(axis=-1, keepdims=True)
    orient = np.divide(orient, omax, out=np.zeros_like(orient),
                       where=omax > 1e-12)

    # neighborhood rings: annulus means between growing box windows,
    # sampled at cell centers
    cell_px = max(h / ch, w / cw)
    cy = ((np.arange(ch) + 0.5) * h / ch).astype(np.intp).clip(0, h - 1)
    cx = ((np.arange(cw) + 0.5) * w / cw).astype(np.intp).clip(0, w - 1)
    rings = np.empty((ch, cw, _N_RINGS))
    prev_size = int(round(cell_px)) | 1
    prev = uniform_filter(img, size=prev_size, mode="nearest")
    for k in range(_N_RINGS):
        size = int(round((k + 2) * cell_px)) | 1
        if size <= prev_size:
            size = prev_size + 2
        blurred = uniform_filter(img, size=size, mode="nearest")
        a_out, a_in = size * size, prev_size * prev_size
        ring = (a_out * blurred - a_in * prev) / (a_out - a_in)
        rings[:, :, k] = ring[np.ix_(cy, cx)]
        prev, prev_size = blurred, size

    # contrast-gated normalized position
    py = np.repeat(((np.arange(ch) + 0.5) / ch)[:, None], cw, axis=1)
    px = np.repeat(((np.arange(cw) + 0.5) / cw)[None, :], ch, axis=0)
    pos = np.stack([py, px], axis=-1) * std[..., None]

    feats = np.concatenate(
        [
            mean[..., None],
            std[..., None],
            hist,
            orient * 0.5,
            rings * 0.5,
            pos * 0.25,
        ],
        axis=-1,
    )
    return feats.astype(np.float32)


def toy_extract(v: Volume, plan: ExtractionPlan) \
        -> tuple[FeatureStack, FeatureStack, FeatureStack]:
    """Deterministic patch-descriptor extraction along all three axes.

    CI stand-in for the neural extractor: each axis keeps its slice count,
    the in-slice dims are reduced to the plan's target feature dims.
    """
    if tuple(plan.source_dims) != tuple(v.dims):
        raise IncompatibleDims(
            f"plan source dims {plan.source_dims} != volume dims {v.dims}"
        )
    target = plan.target_feature_dims
    stacks = []
    for axis in range(3):
        other = [a for a in range(3) if a != axis]
        cells = (target[other[0]], target[other[1]])
        n_slices = v.dims[axis]
        dims = [0, 0, 0]
        dims[axis] = n_slices
        dims[other[0]] = cells[0]
        dims[other[1]] = cells[1]
        data = np.empty((*dims, TOY_FEATURE_DIM), dtype=np.float32)
        for s in range(n_slices):
            img = np.take(v.data, s, axis=axis).astype(np.float64)
            feats = _toy_slice_features(img, cells)  # (c0, c1, F)
            idx = [slice(None)] * 3
            idx[axis] = s
            data[tuple(idx)] = feats
        stacks.append(
            FeatureStack(axis=axis, dims=tuple(dims),
                         feature_dim=TOY_FEATURE_DIM, data=data)
        )
    return tuple(stacks)


def map_to_feature_grid(points: np.ndarray, source_dims, feature_dims) \
        -> np.ndarray:
    """Scale source-volume voxel coordinates into feature-grid coordinates."""
    points = np.asarray(points, dtype=np.float64)
    scale = np.array(
        [f / s for f, s in zip(feature_dims, source_dims)], dtype=np.float64
    )
    return points * scale
