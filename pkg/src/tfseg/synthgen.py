"""Synthetic ground-truth volumes: sphere, torus, multi-shape phantoms and
step-edge fixtures for solver verification.

Labels always come from the exact implicit function; intensity smoothing
never touches the labels.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateTorus
from .evalseg import LabelVolume
from .volgrid import Volume


def _grid(dims):
    ax = [np.arange(d, dtype=np.float64) for d in dims]
    return np.meshgrid(*ax, indexing="ij")


def _smooth_blend(signed_dist: np.ndarray, inside_val: float,
                  outside_val: float, smooth_voxels: float) -> np.ndarray:
    """Intensity from a signed distance (positive inside)."""
    if smooth_voxels <= 0:
        t = (signed_dist >= 0).astype(np.float64)
    else:
        t = np.clip(signed_dist / smooth_voxels + 0.5, 0.0, 1.0)
    return outside_val + (inside_val - outside_val) * t


def gen_sphere(dim: int | tuple[int, int, int], center=None, radius=20.0,
               inside_val=0.8, outside_val=0.1, smooth_voxels=0.0,
               label=1) -> tuple[Volume, LabelVolume]:
    dims = (dim, dim, dim) if isinstance(dim, int) else tuple(dim)
    if center is None:
        center = tuple((d - 1) / 2 for d in dims)
    x, y, z = _grid(dims)
    dist = np.sqrt(
        (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    )
    labels = (dist <= radius).astype(np.int64) * label
    intensity = _smooth_blend(radius - dist, inside_val, outside_val,
                              smooth_voxels)
    vol = Volume(dims=dims, data=np.clip(intensity, 0, 1).astype(np.float32),
                 name="sphere")
    return vol, LabelVolume(dims=dims, labels=labels,
                            class_names={label: "sphere"})


def gen_torus(dim: int | tuple[int, int, int], center=None, major_R=20.0,
              minor_r=8.0, inside_val=0.8, outside_val=0.1,
              smooth_voxels=0.0, axis=2, label=1) \
        -> tuple[Volume, LabelVolume]:
    """Torus around ``axis``: (sqrt(u^2 + v^2) - R)^2 + w^2 <= r^2."""
    if minor_r > major_R:
        raise DegenerateTorus(f"minor radius {minor_r} > major {major_R}")
    dims = (dim, dim, dim) if isinstance(dim, int) else tuple(dim)
    if center is None:
        center = tuple((d - 1) / 2 for d in dims)
    coords = _grid(dims)
    rel = [c - o for c, o in zip(coords, center)]
    w = rel[axis]
    uv = [rel[a] for a in range(3) if a != axis]
    ring = np.sqrt(uv[0] ** 2 + uv[1] ** 2) - major_R
    dist = np.sqrt(ring ** 2 + w ** 2)
    labels = (dist <= minor_r).astype(np.int64) * label
    intensity = _smooth_blend(minor_r - dist, inside_val, outside_val,
                              smooth_voxels)
    vol = Volume(dims=dims, data=np.clip(intensity, 0, 1).astype(np.float32),
                 name="torus")
    return vol, LabelVolume(dims=dims, labels=labels,
                            class_names={label: "torus"})


def gen_phantom(dim: int | tuple[int, int, int], spec: list[dict],
                background=0.05) -> tuple[Volume, LabelVolume]:
    """Composite shapes in order; later shapes overwrite earlier ones.

    Each entry: ``{"shape": "sphere"|"torus"|"box", "intensity": float,
    "label": int, ...shape params}``.
    """
    dims = (dim, dim, dim) if isinstance(dim, int) else tuple(dim)
    intensity = np.full(dims, background, dtype=np.float32)
    labels = np.zeros(dims, dtype=np.int64)
    names = {}
    x, y, z = _grid(dims)
    for entry in spec:
        shape = entry["shape"]
        label = int(entry["label"])
        val = float(entry["intensity"])
        names[label] = entry.get("name", f"{shape}_{label}")
        if shape == "sphere":
            c = entry.get("center", tuple((d - 1) / 2 for d in dims))
            r = float(entry["radius"])
            mask = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 \
                <= r * r
        elif shape == "torus":
            c = entry.get("center", tuple((d - 1) / 2 for d in dims))
            axis = int(entry.get("axis", 2))
            big_r, small_r = float(entry["major_R"]), float(entry["minor_r"])
            if small_r > big_r:
                raise DegenerateTorus(f"{small_r} > {big_r}")
            rel = [x - c[0], y - c[1], z - c[2]]
            w = rel[axis]
            uv = [rel[a] for a in range(3) if a != axis]
            ring = np.sqrt(uv[0] ** 2 + uv[1] ** 2) - big_r
            mask = ring ** 2 + w ** 2 <= small_r * small_r
        elif shape == "box":
            lo = entry["lo"]
            hi = entry["hi"]
            mask = (
                (x >= lo[0]) & (x <= hi[0])
                & (y >= lo[1]) & (y <= hi[1])
                & (z >= lo[2]) & (z <= hi[2])
            )
        else:
            raise ValueError(f"unknown shape {shape!r}")
        intensity[mask] = val
        labels[mask] = label
    vol = Volume(dims=dims, data=np.clip(intensity, 0, 1), name="phantom")
    return vol, LabelVolume(dims=dims, labels=labels, class_names=names)


def gen_step_edge(dim: int | tuple[int, int, int], axis: int = 0,
                  position: float = None, lo: float = 0.2, hi: float = 0.8,
                  noise_sigma: float = 0.0, seed: int = 0) -> Volume:
    """Step along ``axis`` at ``position`` with optional Gaussian noise."""
    dims = (dim, dim, dim) if isinstance(dim, int) else tuple(dim)
    if position is None:
        position = dims[axis] / 2
    coords = _grid(dims)
    data = np.where(coords[axis] >= position, hi, lo)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, noise_sigma, size=dims)
    return Volume(dims=dims, data=np.clip(data, 0, 1).astype(np.float32),
                  name="step_edge")
