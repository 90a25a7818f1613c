"""Volume-to-feature-stack extraction.

Slices a volume along each principal axis, replicates slices to RGB,
applies standard channel statistics, resizes to the extraction plan's
token grid and exports the last attention layer's key map of every slice
as one FSTK file per axis. FSTK bytes are written by this package's own
serializer so the files are an independent implementation of the format
consumed by the tfseg loader.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from tfseg import featpipe, volgrid

from .vit import EMBED_DIM, PATCH_SIZE, VisionTransformer

# standard large-dataset channel statistics
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)

_DTYPE_CODES = {"f32": 0, "f16": 1}
_NP_DTYPES = {"f32": "<f4", "f16": "<f2"}


class DinoxError(Exception):
    pass


class InvalidConfig(DinoxError):
    pass


class ModelUnavailable(DinoxError):
    pass


class OutOfMemory(DinoxError):
    """Raised with a hint to lower resize_target."""


@dataclass(frozen=True)
class ExtractorConfig:
    model_id: str = "dino_vits8"
    resize_target: int = 640
    batch_size: int = 16
    dtype: str = "f32"
    device: str = "cpu"
    checkpoint: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.resize_target % PATCH_SIZE != 0:
            raise InvalidConfig(
                f"resize_target {self.resize_target} not divisible by "
                f"patch size {PATCH_SIZE}"
            )
        if self.dtype not in _DTYPE_CODES:
            raise InvalidConfig(f"dtype must be f32 or f16, "
                                f"got {self.dtype!r}")


def build_model(config: ExtractorConfig) -> VisionTransformer:
    """Instantiate the ViT; loads a checkpoint when one is given,
    otherwise uses seeded deterministic initialization."""
    torch.manual_seed(config.seed)
    model = VisionTransformer()
    if config.checkpoint:
        path = Path(config.checkpoint)
        if not path.exists():
            raise ModelUnavailable(f"checkpoint not found: {path}")
        try:
            state = torch.load(path, map_location="cpu",
                               weights_only=True)
        except Exception as e:
            raise ModelUnavailable(f"cannot load {path}: {e}") from e
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        # keep only the tensors this inference path uses
        own = model.state_dict()
        filtered = {k: v for k, v in state.items() if k in own}
        missing = set(own) - set(filtered)
        if missing:
            raise ModelUnavailable(
                f"checkpoint missing {len(missing)} tensors, "
                f"e.g. {sorted(missing)[:3]}"
            )
        model.load_state_dict(filtered, strict=False)
    model.eval()
    return model.to(config.device)


def _token_dims(plan: featpipe.ExtractionPlan, axis: int) \
        -> tuple[int, int]:
    other = [a for a in range(3) if a != axis]
    t = plan.target_feature_dims
    return t[other[0]], t[other[1]]


def _prepare_batch(slices: np.ndarray, h: int, w: int,
                   device: str) -> torch.Tensor:
    """(B, o0, o1) intensities in [0, 1] -> normalized (B, 3, 8h, 8w)."""
    x = torch.from_numpy(np.ascontiguousarray(slices)).float()
    x = x.unsqueeze(1).repeat(1, 3, 1, 1)
    x = torch.nn.functional.interpolate(
        x, size=(h * PATCH_SIZE, w * PATCH_SIZE), mode="bilinear",
        align_corners=False)
    mean = torch.tensor(CHANNEL_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(CHANNEL_STD).view(1, 3, 1, 1)
    return ((x - mean) / std).to(device)


def extract_axis(volume: volgrid.Volume, axis: int,
                 config: ExtractorConfig,
                 model: VisionTransformer | None = None,
                 plan: featpipe.ExtractionPlan | None = None) \
        -> volgrid.FeatureStack:
    if model is None:
        model = build_model(config)
    if plan is None:
        plan = featpipe.plan_for(volume, resize_target=config.resize_target,
                                 patch=PATCH_SIZE, feature_dim=EMBED_DIM)
    t0, t1 = _token_dims(plan, axis)
    n_slices = volume.dims[axis]

    keys = np.empty((n_slices, t0, t1, EMBED_DIM), dtype=np.float32)
    data = np.moveaxis(volume.data, axis, 0)  # (n_slices, o0, o1)
    try:
        with torch.no_grad():
            for start in range(0, n_slices, config.batch_size):
                batch = data[start:start + config.batch_size]
                images = _prepare_batch(batch, t0, t1, config.device)
                out = model.last_layer_keys(images)
                keys[start:start + len(batch)] = out.cpu().numpy()
    except (torch.cuda.OutOfMemoryError, MemoryError) as e:
        raise OutOfMemory(
            f"extraction ran out of memory ({e}); lower resize_target"
        ) from e
    if not np.all(np.isfinite(keys)):
        raise DinoxError("non-finite key values in extractor output")

    stack_data = np.ascontiguousarray(np.moveaxis(keys, 0, axis))
    dims = list(plan.target_feature_dims)
    dims[axis] = n_slices
    return volgrid.FeatureStack(axis=axis, dims=tuple(dims),
                                feature_dim=EMBED_DIM, data=stack_data,
                                dtype=config.dtype)


def write_fstk(stack: volgrid.FeatureStack, path) -> None:
    """Independent FSTK serializer (header + x-fastest payload)."""
    header = b"FSTK" + struct.pack(
        "<IB3IIB7x", 1, stack.axis, *stack.dims, stack.feature_dim,
        _DTYPE_CODES[stack.dtype],
    )
    payload = np.ascontiguousarray(
        stack.data.transpose(2, 1, 0, 3), dtype=_NP_DTYPES[stack.dtype]
    ).tobytes()
    Path(path).write_bytes(header + payload)


def extract_all(volume_path, out_dir, config: ExtractorConfig) \
        -> list[Path]:
    """Write <name>.{x,y,z}.fstk plus plan.json into ``out_dir``."""
    volume = volgrid.load_volume(volume_path)
    plan = featpipe.plan_for(volume, resize_target=config.resize_target,
                             patch=PATCH_SIZE, feature_dim=EMBED_DIM)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    written = []
    for axis, suffix in enumerate("xyz"):
        stack = extract_axis(volume, axis, config, model=model, plan=plan)
        path = out / f"{volume.name}.{suffix}.fstk"
        write_fstk(stack, path)
        written.append(path)
    (out / "plan.json").write_text(plan.to_json())
    written.append(out / "plan.json")
    return written
