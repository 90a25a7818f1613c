"""Interactive similarity queries: classes, annotations, cosine-similarity
maps with proximity scaling, multi-class labeling and connected-component
filtering.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import (
    DimMismatch,
    EmptyAnnotationSet,
    EmptyMask,
    OutOfBounds,
)
from .featpipe import map_to_feature_grid
from .volgrid import FeatureVolume, SimilarityVolume, trilinear_sample

PROXIMITY_FALLOFF = 10.0  # exponent scale of the proximity kernel

_CONN26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class ClassDef:
    id: int
    name: str = ""
    color: tuple[float, float, float] = (1.0, 0.5, 0.0)
    opacity: float = 1.0
    iso_value: float = 0.5
    proximity: float = 0.0
    use_solver: bool = False
    solver_cfg: object = None  # bls3d.RefineConfig, kept loose to avoid a cycle
    cc_filter: bool = False


@dataclass(frozen=True)
class AnnotationSet:
    """Annotated voxel positions plus their cached feature vectors.

    Immutable; mutating operations return a new set. The feature cache is
    tied to the feature volume passed at annotation time and must be
    rebuilt if the feature volume changes.
    """

    class_id: int
    points: tuple[tuple[int, int, int], ...] = ()
    cached_features: np.ndarray | None = None  # (N, F)

    def __len__(self):
        return len(self.points)


def _sample_feature(fv: FeatureVolume, point, source_dims) -> np.ndarray:
    pos = map_to_feature_grid(np.asarray(point, dtype=np.float64),
                              source_dims, fv.dims)
    return trilinear_sample(fv.data, pos).astype(np.float32)


def add_annotation(aset: AnnotationSet, point, fv: FeatureVolume,
                   source_dims=None) -> AnnotationSet:
    """Append a voxel annotation (deduplicated) and cache its feature."""
    source_dims = source_dims or fv.source_dims
    p = tuple(int(c) for c in point)
    for c, d in zip(p, source_dims):
        if c < 0 or c >= d:
            raise OutOfBounds(f"point {p} outside volume {source_dims}")
    if p in aset.points:
        return aset
    feat = _sample_feature(fv, p, source_dims)[None, :]
    if aset.cached_features is None:
        feats = feat
    else:
        feats = np.concatenate([aset.cached_features, feat], axis=0)
    return replace(aset, points=aset.points + (p,), cached_features=feats)


def add_annotations(aset: AnnotationSet, points, fv: FeatureVolume,
                    source_dims=None) -> AnnotationSet:
    for p in points:
        aset = add_annotation(aset, p, fv, source_dims)
    return aset


def remove_annotations_near(aset: AnnotationSet, point,
                            radius: float) -> AnnotationSet:
    """Drop every annotation within Euclidean ``radius`` of ``point``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    p = np.asarray(point, dtype=np.float64)
    keep = [
        i for i, q in enumerate(aset.points)
        if np.linalg.norm(np.asarray(q, dtype=np.float64) - p) > radius
    ]
    points = tuple(aset.points[i] for i in keep)
    feats = None
    if aset.cached_features is not None and keep:
        feats = aset.cached_features[keep]
    return replace(aset, points=points,
                   cached_features=feats if points else None)


def _normalized_query(aset: AnnotationSet) -> np.ndarray:
    """Mean of unit-normalized annotation features; the similarity map is
    one dot product with this vector."""
    if len(aset) == 0 or aset.cached_features is None:
        raise EmptyAnnotationSet(f"class {aset.class_id} has no annotations")
    feats = aset.cached_features.astype(np.float64)
    norms = np.linalg.norm(feats, axis=1)
    norms[norms == 0] = 1.0
    return (feats / norms[:, None]).mean(axis=0)


def similarity_map(aset: AnnotationSet, fv: FeatureVolume) \
        -> SimilarityVolume:
    """Clamped mean cosine similarity of the annotations against every
    feature voxel."""
    q = _normalized_query(aset)
    # single matvec in float32; avoid any copy of the feature block
    sims = fv.flat_features() @ q.astype(np.float32)
    sims *= fv.flat_rnorms()  # zero-norm voxels already have sims == 0
    np.maximum(sims, 0.0, out=sims)
    return SimilarityVolume(dims=fv.dims, data=sims.reshape(fv.dims),
                            resolution_tag="low", class_id=aset.class_id)


def proximity_weights(aset: AnnotationSet, target_dims, source_dims,
                      proximity: float) -> np.ndarray:
    """Per-voxel max over annotations of exp(-10 * p * |x - a|), with both
    positions normalized to [0, 1]^3 by the source dims."""
    if len(aset) == 0:
        raise EmptyAnnotationSet(f"class {aset.class_id} has no annotations")
    if proximity == 0.0:
        return np.ones(tuple(target_dims), dtype=np.float32)
    src = np.asarray(source_dims, dtype=np.float64)
    tgt = np.asarray(target_dims, dtype=np.float64)
    axes = [np.arange(d) * (s / t) / s
            for d, s, t in zip(target_dims, src, tgt)]
    anns = np.asarray(aset.points, dtype=np.float64) / src
    # squared distances are separable per axis, so broadcast three 1-D
    # arrays instead of materializing full coordinate grids
    best = np.empty(tuple(target_dims), dtype=np.float32)
    d2 = np.empty(tuple(target_dims), dtype=np.float32)
    for i, a in enumerate(anns):
        dx, dy, dz = (((ax - c) ** 2).astype(np.float32)
                      for ax, c in zip(axes, a))
        out = best if i == 0 else d2
        np.add(dx[:, None, None], dy[None, :, None], out=out)
        out += dz[None, None, :]
        if i > 0:
            np.minimum(best, d2, out=best)
    np.sqrt(best, out=best)
    best *= np.float32(-PROXIMITY_FALLOFF * proximity)
    return np.exp(best, out=best)


def scaled_similarity(aset: AnnotationSet, fv: FeatureVolume,
                      proximity: float) -> SimilarityVolume:
    """similarity_map scaled elementwise by the proximity weights."""
    sim = similarity_map(aset, fv)
    if proximity == 0.0:
        return sim
    w = proximity_weights(aset, fv.dims, fv.source_dims, proximity)
    w *= sim.data
    return replace(sim, data=w)


def label_volume(classes: list[tuple[ClassDef, SimilarityVolume]]) \
        -> np.ndarray:
    """Per-voxel argmax labeling among classes whose similarity reaches
    their iso-value; 0 where none qualifies, ties to the lowest class id."""
    if not classes:
        return np.zeros((0, 0, 0), dtype=np.int64)
    dims = classes[0][1].dims
    for _, sv in classes:
        if tuple(sv.dims) != tuple(dims):
            raise DimMismatch(f"{sv.dims} != {dims}")
    labels = np.zeros(dims, dtype=np.int64)
    best = np.full(dims, -np.inf)
    for cdef, sv in sorted(classes, key=lambda cs: cs[0].id):
        qualified = sv.data >= cdef.iso_value
        better = qualified & (sv.data > best)
        labels[better] = cdef.id
        best[better] = sv.data[better]
    return labels


def connected_components_filter(mask: np.ndarray, keep: str = "largest",
                                annotations: AnnotationSet | None = None) \
        -> np.ndarray:
    """Keep only the selected 26-connected component(s) of a binary mask.

    ``keep`` is "largest" or "containing_annotations" (requires
    ``annotations``).
    """
    mask = np.asarray(mask, dtype=bool)
    labeled, n = ndimage.label(mask, structure=_CONN26)
    if keep == "largest":
        if n == 0:
            raise EmptyMask("mask has no foreground voxels")
        sizes = np.bincount(labeled.ravel())
        sizes[0] = 0
        return labeled == int(np.argmax(sizes))
    if keep == "containing_annotations":
        if annotations is None or len(annotations) == 0:
            raise EmptyAnnotationSet("no annotations for component selection")
        ids = set()
        for p in annotations.points:
            ids.add(int(labeled[tuple(int(c) for c in p)]))
        ids.discard(0)
        return np.isin(labeled, sorted(ids))
    raise ValueError(f"unknown keep mode {keep!r}")
