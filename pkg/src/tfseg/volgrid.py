"""Dense grid types (volumes, feature stacks/volumes, similarity maps) and
their binary file formats.

All in-memory arrays are indexed ``[x, y, z]`` (features innermost where
present). On disk, payloads are little-endian with x fastest and features
innermost, matching the documented raw formats.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    IoFailure,
    MissingSidecar,
    UnsupportedDtype,
    VersionUnsupported,
)

_VOLUME_DTYPES = {"uint8": np.uint8, "uint16": np.uint16, "f32": np.float32}

AXIS_X, AXIS_Y, AXIS_Z = 0, 1, 2

FSTK_MAGIC = b"FSTK"
FVOL_MAGIC = b"FVOL"
SVOL_MAGIC = b"SVOL"

ZERO_FEATURE_EPS = 1e-6


@dataclass(frozen=True)
class Volume:
    """Scalar 3D grid with intensities normalized to [0, 1]."""

    dims: tuple[int, int, int]
    data: np.ndarray  # shape (W, H, D), float32 in [0, 1]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    name: str = "volume"

    def __post_init__(self):
        if tuple(self.data.shape) != tuple(self.dims):
            raise DimMismatch(
                f"data shape {self.data.shape} != dims {self.dims}"
            )


@dataclass(frozen=True)
class FeatureStack:
    """Per-axis stack of 2D patch features: one axis keeps the source
    resolution, the other two are reduced by the extraction plan."""

    axis: int  # 0=X, 1=Y, 2=Z (the un-reduced axis)
    dims: tuple[int, int, int]
    feature_dim: int
    data: np.ndarray  # shape dims + (feature_dim,), float32
    dtype: str = "f32"  # on-disk dtype; in memory always f32


@dataclass(frozen=True)
class FeatureVolume:
    """Merged per-voxel feature grid."""

    dims: tuple[int, int, int]
    feature_dim: int
    data: np.ndarray  # shape dims + (feature_dim,), float32
    source_dims: tuple[int, int, int]
    norms: np.ndarray | None = None  # shape dims, per-voxel L2 norms

    def flat_features(self) -> np.ndarray:
        """(W'*H'*D', F) view for bulk similarity computation."""
        return self.data.reshape(-1, self.feature_dim)

    def flat_norms(self) -> np.ndarray:
        if self.norms is None:
            # cache: norms are immutable alongside the feature data
            object.__setattr__(
                self, "norms",
                np.linalg.norm(self.flat_features(), axis=1)
                .reshape(self.dims))
        return self.norms.reshape(-1)

    def flat_rnorms(self) -> np.ndarray:
        """Reciprocal norms (0 where the norm is 0), cached; turns the
        cosine normalization into one in-place multiply."""
        cached = getattr(self, "_flat_rnorms", None)
        if cached is None:
            n = self.flat_norms()
            cached = np.zeros(n.shape, dtype=np.float32)
            np.divide(1.0, n, out=cached, where=n > 0)
            object.__setattr__(self, "_flat_rnorms", cached)
        return cached


@dataclass(frozen=True)
class SimilarityVolume:
    dims: tuple[int, int, int]
    data: np.ndarray  # shape dims, float32 in [0, 1]
    resolution_tag: str = "low"  # "low" | "refined"
    class_id: int | str = 0


def compute_norms(features: np.ndarray) -> np.ndarray:
    return np.linalg.norm(features, axis=-1)


def sanitize_features(features: np.ndarray) -> tuple[np.ndarray, int]:
    """Replace exact-zero feature vectors with a tiny epsilon vector.

    Returns the (possibly copied) array and the number of replaced voxels.
    A padded extractor border can legitimately produce zero vectors, which
    would break cosine similarity.
    """
    norms = compute_norms(features)
    zero = norms == 0.0
    n = int(zero.sum())
    if n:
        features = features.copy()
        features[zero] = ZERO_FEATURE_EPS
    return features, n


# --------------------------------------------------------------------------
# Volume raw + JSON sidecar I/O
# --------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _raw_path(path: Path) -> Path:
    return path.with_suffix(".raw")


def load_volume(path) -> Volume:
    """Load a volume from a `.json` sidecar plus `.raw` payload.

    Intensities are normalized to [0, 1] using the sidecar's declared
    ``value_range``.
    """
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise MissingSidecar(str(sidecar))
    meta = json.loads(sidecar.read_text())
    dims = tuple(int(d) for d in meta["dims"])
    dtype_name = meta["dtype"]
    if dtype_name not in _VOLUME_DTYPES:
        raise UnsupportedDtype(dtype_name)
    dtype = np.dtype(_VOLUME_DTYPES[dtype_name]).newbyteorder("<")
    spacing = tuple(float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0)))
    lo, hi = meta.get("value_range", (0.0, 1.0))

    payload = _raw_path(path).read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise DimMismatch(
            f"payload is {len(payload)} bytes, expected {expected} for dims {dims}"
        )
    flat = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if hi > lo:
        flat = (flat - lo) / (hi - lo)
    data = np.clip(flat, 0.0, 1.0)
    # x-fastest on disk -> index [z, y, x], transpose to [x, y, z]
    data = data.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    return Volume(dims=dims, data=np.ascontiguousarray(data),
                  spacing=spacing, name=path.stem)


def save_volume(v: Volume, path) -> None:
    """Write the sidecar + raw pair; f32 payloads round-trip bit-exactly."""
    path = Path(path)
    meta = {
        "dims": list(v.dims),
        "dtype": "f32",
        "spacing": list(v.spacing),
        "value_range": [0.0, 1.0],
    }
    try:
        _sidecar_path(path).write_text(json.dumps(meta, indent=2))
        payload = np.ascontiguousarray(
            v.data.transpose(2, 1, 0), dtype="<f4"
        ).tobytes()
        _raw_path(path).write_bytes(payload)
    except OSError as e:
        raise IoFailure(str(e)) from e


def save_label_volume(labels: np.ndarray, path) -> None:
    """Write an integer label grid (uint16) in the raw + sidecar format."""
    path = Path(path)
    dims = labels.shape
    meta = {
        "dims": list(dims),
        "dtype": "uint16",
        "spacing": [1.0, 1.0, 1.0],
        "value_range": [0, 1],
        "labels": True,
    }
    try:
        _sidecar_path(path).write_text(json.dumps(meta, indent=2))
        payload = np.ascontiguousarray(
            labels.transpose(2, 1, 0), dtype="<u2"
        ).tobytes()
        _raw_path(path).write_bytes(payload)
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_label_volume(path) -> np.ndarray:
    """Load an integer label grid saved by :func:`save_label_volume`."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise MissingSidecar(str(sidecar))
    meta = json.loads(sidecar.read_text())
    dims = tuple(int(d) for d in meta["dims"])
    payload = _raw_path(path).read_bytes()
    expected = dims[0] * dims[1] * dims[2] * 2
    if len(payload) != expected:
        raise DimMismatch(f"payload {len(payload)} != expected {expected}")
    flat = np.frombuffer(payload, dtype="<u2")
    return np.ascontiguousarray(
        flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    ).astype(np.int64)


# --------------------------------------------------------------------------
# Binary feature / similarity formats
# --------------------------------------------------------------------------

_FEATURE_DTYPE_CODES = {"f32": 0, "f16": 1}
_FEATURE_DTYPE_NAMES = {0: "f32", 1: "f16"}
_FEATURE_NP_DTYPES = {"f32": "<f4", "f16": "<f2"}


def _check_magic(payload: bytes, magic: bytes, path) -> None:
    if payload[:4] != magic:
        raise BadMagic(f"{path}: expected {magic!r}, got {payload[:4]!r}")


def _check_version(version: int, path) -> None:
    if version != 1:
        raise VersionUnsupported(f"{path}: version {version}")


def _features_to_bytes(data: np.ndarray, dtype: str) -> bytes:
    # [x, y, z, f] -> on-disk f innermost, x fastest: C-order (D, H, W, F)
    arr = np.ascontiguousarray(
        data.transpose(2, 1, 0, 3), dtype=_FEATURE_NP_DTYPES[dtype]
    )
    return arr.tobytes()


def _features_from_bytes(payload: bytes, dims, feature_dim: int,
                         dtype: str, path) -> np.ndarray:
    np_dtype = np.dtype(_FEATURE_NP_DTYPES[dtype])
    expected = dims[0] * dims[1] * dims[2] * feature_dim * np_dtype.itemsize
    if len(payload) != expected:
        raise DimMismatch(
            f"{path}: payload {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype=np_dtype).astype(np.float32)
    return np.ascontiguousarray(
        flat.reshape(dims[2], dims[1], dims[0], feature_dim)
        .transpose(2, 1, 0, 3)
    )


def save_feature_stack(stack: FeatureStack, path) -> None:
    path = Path(path)
    dtype = stack.dtype
    header = FSTK_MAGIC + struct.pack(
        "<IB3II B7x",
        1,
        stack.axis,
        *stack.dims,
        stack.feature_dim,
        _FEATURE_DTYPE_CODES[dtype],
    )
    try:
        path.write_bytes(header + _features_to_bytes(stack.data, dtype))
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_feature_stack(path) -> FeatureStack:
    path = Path(path)
    payload = path.read_bytes()
    _check_magic(payload, FSTK_MAGIC, path)
    header_fmt = "<IB3II B7x"
    header_size = 4 + struct.calcsize(header_fmt)
    version, axis, dx, dy, dz, fdim, dtype_code = struct.unpack(
        header_fmt, payload[4:header_size]
    )
    _check_version(version, path)
    if dtype_code not in _FEATURE_DTYPE_NAMES:
        raise UnsupportedDtype(f"{path}: dtype code {dtype_code}")
    dtype = _FEATURE_DTYPE_NAMES[dtype_code]
    data = _features_from_bytes(
        payload[header_size:], (dx, dy, dz), fdim, dtype, path
    )
    return FeatureStack(axis=axis, dims=(dx, dy, dz), feature_dim=fdim,
                        data=data, dtype=dtype)


def save_feature_volume(fv: FeatureVolume, path, dtype: str = "f32") -> None:
    path = Path(path)
    header = FVOL_MAGIC + struct.pack(
        "<I3I3IIB",
        1,
        *fv.dims,
        *fv.source_dims,
        fv.feature_dim,
        _FEATURE_DTYPE_CODES[dtype],
    )
    try:
        path.write_bytes(header + _features_to_bytes(fv.data, dtype))
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_feature_volume(path) -> FeatureVolume:
    path = Path(path)
    payload = path.read_bytes()
    _check_magic(payload, FVOL_MAGIC, path)
    header_fmt = "<I3I3IIB"
    header_size = 4 + struct.calcsize(header_fmt)
    fields = struct.unpack(header_fmt, payload[4:header_size])
    version = fields[0]
    _check_version(version, path)
    dims = fields[1:4]
    source_dims = fields[4:7]
    fdim = fields[7]
    dtype_code = fields[8]
    if dtype_code not in _FEATURE_DTYPE_NAMES:
        raise UnsupportedDtype(f"{path}: dtype code {dtype_code}")
    data = _features_from_bytes(
        payload[header_size:], dims, fdim,
        _FEATURE_DTYPE_NAMES[dtype_code], path
    )
    data, _ = sanitize_features(data)
    return FeatureVolume(dims=dims, feature_dim=fdim, data=data,
                         source_dims=source_dims, norms=compute_norms(data))


def save_similarity_volume(sv: SimilarityVolume, path) -> None:
    path = Path(path)
    tag = 0 if sv.resolution_tag == "low" else 1
    header = SVOL_MAGIC + struct.pack("<I3IB", 1, *sv.dims, tag)
    payload = np.ascontiguousarray(
        sv.data.transpose(2, 1, 0), dtype="<f4"
    ).tobytes()
    try:
        path.write_bytes(header + payload)
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_similarity_volume(path) -> SimilarityVolume:
    path = Path(path)
    payload = path.read_bytes()
    _check_magic(payload, SVOL_MAGIC, path)
    header_fmt = "<I3IB"
    header_size = 4 + struct.calcsize(header_fmt)
    version, dx, dy, dz, tag = struct.unpack(header_fmt, payload[4:header_size])
    _check_version(version, path)
    body = payload[header_size:]
    expected = dx * dy * dz * 4
    if len(body) != expected:
        raise DimMismatch(f"{path}: payload {len(body)} != {expected}")
    flat = np.frombuffer(body, dtype="<f4")
    data = np.ascontiguousarray(
        flat.reshape(dz, dy, dx).transpose(2, 1, 0)
    )
    return SimilarityVolume(dims=(dx, dy, dz), data=data,
                            resolution_tag="low" if tag == 0 else "refined")


# --------------------------------------------------------------------------
# Trilinear sampling
# --------------------------------------------------------------------------

def trilinear_sample(grid: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Trilinearly interpolate ``grid`` at continuous voxel coordinates.

    ``grid`` has shape (W, H, D) or (W, H, D, F); ``pos`` has shape (..., 3)
    in voxel units. Positions outside [0, dim-1] are clamped per axis.
    Returns shape (...,) for scalar grids and (..., F) for feature grids.
    """
    pos = np.asarray(pos, dtype=np.float64)
    scalar_input = pos.ndim == 1
    pos = np.atleast_2d(pos)

    dims = grid.shape[:3]
    p = np.empty_like(pos)
    for a in range(3):
        p[..., a] = np.clip(pos[..., a], 0.0, dims[a] - 1)

    i0 = np.floor(p).astype(np.intp)
    for a in range(3):
        np.minimum(i0[..., a], dims[a] - 2 if dims[a] > 1 else 0,
                   out=i0[..., a])
    frac = p - i0
    i1 = np.empty_like(i0)
    for a in range(3):
        i1[..., a] = np.minimum(i0[..., a] + 1, dims[a] - 1)

    x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
    x1, y1, z1 = i1[..., 0], i1[..., 1], i1[..., 2]
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]

    if grid.ndim == 4:
        fx = fx[..., None]
        fy = fy[..., None]
        fz = fz[..., None]

    c000 = grid[x0, y0, z0]
    c100 = grid[x1, y0, z0]
    c010 = grid[x0, y1, z0]
    c110 = grid[x1, y1, z0]
    c001 = grid[x0, y0, z1]
    c101 = grid[x1, y0, z1]
    c011 = grid[x0, y1, z1]
    c111 = grid[x1, y1, z1]

    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz

    if scalar_input:
        return out[0]
    return out
