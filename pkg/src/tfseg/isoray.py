"""CPU iso-surface raycaster over similarity volumes.

Rays march through a shared volume box at a fixed step; iso crossings are
refined by binary search, shaded with Phong plus a shadow ray and
composited front to back with early termination. Everything is vectorized
over the set of still-active rays, so a frame is a handful of numpy passes
per marching step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import IndexOutOfRange, NoEnabledClasses
from .simquery import AnnotationSet, ClassDef
from .volgrid import SimilarityVolume, Volume, trilinear_sample


@dataclass(frozen=True)
class Camera:
    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    vertical_fov: float = 45.0
    width: int = 512
    height: int = 512

    def to_dict(self) -> dict:
        return {
            "eye": list(self.eye),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov": self.vertical_fov,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            eye=tuple(d["eye"]),
            look_at=tuple(d["look_at"]),
            up=tuple(d.get("up", (0.0, 1.0, 0.0))),
            vertical_fov=float(d.get("fov", 45.0)),
            width=int(d.get("width", 512)),
            height=int(d.get("height", 512)),
        )


@dataclass(frozen=True)
class RenderSettings:
    step_size: float = 1.0
    binary_search_iters: int = 8
    early_termination_alpha: float = 0.99
    ambient: float = 0.1
    diffuse: float = 0.7
    specular: float = 0.2
    shininess: float = 32.0
    light_dir: tuple[float, float, float] = (0.5774, 0.5774, 0.5774)
    shadow_bias: float | None = None  # defaults to 2 * step_size
    background: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    @property
    def bias(self) -> float:
        return self.shadow_bias if self.shadow_bias is not None \
            else 2.0 * self.step_size


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length vector")
    return v / n


def _ray_grid(cam: Camera):
    """Per-pixel ray origins and unit directions (perspective)."""
    eye = np.asarray(cam.eye, dtype=np.float64)
    fwd = _normalize(np.asarray(cam.look_at) - eye)
    right = np.cross(fwd, _normalize(cam.up))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("up vector parallel to view direction")
    right = _normalize(right)
    up = np.cross(right, fwd)

    tanf = np.tan(np.deg2rad(cam.vertical_fov) / 2.0)
    aspect = cam.width / cam.height
    j = (np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0
    i = 1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0
    px, py = np.meshgrid(j * tanf * aspect, i * tanf, indexing="xy")
    dirs = (
        fwd[None, None, :]
        + px[..., None] * right[None, None, :]
        + py[..., None] * up[None, None, :]
    )
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return eye, dirs.reshape(-1, 3)


def _box_intersect(origin, dirs, box_max):
    """Entry/exit parameters of rays against [0, box_max]; exit < entry
    means a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t_lo = (0.0 - origin) * inv
    t_hi = (box_max - origin) * inv
    t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
    t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
    parallel_out = np.any(
        (np.abs(dirs) < 1e-12) & ((origin < 0) | (origin > box_max)), axis=-1
    )
    t_far = np.where(parallel_out, -np.inf, t_far)
    return np.maximum(t_near, 0.0), t_far


class _Scene:
    """Enabled classes with their grids aligned to a shared world box."""

    def __init__(self, classes, bounds=None):
        enabled = [(c, sv) for c, sv in classes if c.opacity > 0.0]
        if not enabled:
            raise NoEnabledClasses("no class with nonzero opacity")
        self.classes = enabled
        if bounds is None:
            bounds = max((sv.dims for _, sv in enabled),
                         key=lambda d: d[0] * d[1] * d[2])
        self.bounds = np.asarray(bounds, dtype=np.float64)
        self.box_max = self.bounds - 1.0
        self.scales = [
            np.array([
                (sv.dims[a] - 1) / max(self.box_max[a], 1e-12)
                for a in range(3)
            ])
            for _, sv in enabled
        ]
        self.isos = np.array([c.iso_value for c, _ in enabled])

    def sample(self, ci: int, pos: np.ndarray) -> np.ndarray:
        sv = self.classes[ci][1]
        return trilinear_sample(sv.data, pos * self.scales[ci])

    def sample_all(self, pos: np.ndarray) -> np.ndarray:
        return np.stack(
            [self.sample(ci, pos) for ci in range(len(self.classes))],
            axis=-1,
        )

    def gradient(self, ci: int, pos: np.ndarray) -> np.ndarray:
        g = np.empty_like(pos)
        for a in range(3):
            e = np.zeros(3)
            e[a] = 1.0 / max(self.scales[ci][a], 1e-12)  # one class voxel
            g[..., a] = (
                self.sample(ci, pos + e) - self.sample(ci, pos - e)
            ) * 0.5 * self.scales[ci][a]
        return g

    def occluded(self, pos: np.ndarray, light_dir: np.ndarray,
                 settings: RenderSettings) -> np.ndarray:
        """Shadow test: march from pos toward the light against every
        enabled class surface."""
        n = pos.shape[0]
        shadow = np.zeros(n, dtype=bool)
        origin = pos + settings.bias * light_dir[None, :]
        dirs = np.broadcast_to(light_dir, (n, 3))
        t0, t1 = _box_intersect(origin, dirs, self.box_max)
        t = t0.copy()
        active = t1 > t0
        while np.any(active):
            idx = np.nonzero(active)[0]
            p = origin[idx] + t[idx, None] * dirs[idx]
            s = self.sample_all(p)
            hit = np.any(s >= self.isos[None, :], axis=-1)
            shadow[idx[hit]] = True
            active[idx[hit]] = False
            t[idx] += settings.step_size
            active &= t <= t1
        return shadow


def _shade(scene: _Scene, ci: int, pos: np.ndarray, view_dir: np.ndarray,
           settings: RenderSettings) -> np.ndarray:
    cdef = scene.classes[ci][0]
    light = _normalize(settings.light_dir)
    g = scene.gradient(ci, pos)
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    normal = np.where(gn > 1e-9, -g / np.maximum(gn, 1e-30), -view_dir)
    # keep normals facing the viewer
    facing = np.sum(normal * view_dir, axis=-1, keepdims=True)
    normal = np.where(facing > 0, -normal, normal)

    ndotl = np.clip(np.sum(normal * light[None, :], axis=-1), 0.0, None)
    refl = 2.0 * ndotl[:, None] * normal - light[None, :]
    rdotv = np.clip(np.sum(refl * (-view_dir), axis=-1), 0.0, None)
    spec = rdotv ** settings.shininess

    lit = ~scene.occluded(pos, light, settings)
    intensity = settings.ambient + lit * (
        settings.diffuse * ndotl + settings.specular * spec
    )
    color = np.asarray(cdef.color, dtype=np.float64)
    return np.clip(intensity[:, None] * color[None, :], 0.0, 1.0)


def render(classes: list[tuple[ClassDef, SimilarityVolume]], cam: Camera,
           settings: RenderSettings | None = None, bounds=None) -> np.ndarray:
    """Render an RGBA float image of shape (height, width, 4) in [0, 1]."""
    settings = settings or RenderSettings()
    scene = _Scene(classes, bounds)
    eye, dirs = _ray_grid(cam)
    n_rays = dirs.shape[0]
    n_cls = len(scene.classes)

    rgb = np.zeros((n_rays, 3))
    alpha = np.zeros(n_rays)

    t0, t1 = _box_intersect(np.broadcast_to(eye, dirs.shape), dirs,
                            scene.box_max)
    active = t1 > t0
    t = t0.copy()

    idx0 = np.nonzero(active)[0]
    prev = np.full((n_rays, n_cls), -np.inf)
    if idx0.size:
        p = eye[None, :] + t[idx0, None] * dirs[idx0]
        prev_vals = scene.sample_all(p)
        # rays starting at/inside a surface hit it at the entry point
        for ci in range(n_cls):
            inside = prev_vals[:, ci] >= scene.isos[ci]
            if np.any(inside):
                hit_idx = idx0[inside]
                _composite(scene, ci, eye, dirs, t[hit_idx], hit_idx,
                           rgb, alpha, settings)
        prev[idx0] = prev_vals
    active &= alpha < settings.early_termination_alpha

    while np.any(active):
        idx = np.nonzero(active)[0]
        t_new = t[idx] + settings.step_size
        t_new = np.minimum(t_new, t1[idx])
        advanced = t_new > t[idx]
        idx = idx[advanced]
        if idx.size == 0:
            break
        t_prev = t[idx]
        t_cur = t_new[advanced]
        p = eye[None, :] + t_cur[:, None] * dirs[idx]
        cur = scene.sample_all(p)

        crossing = (cur >= scene.isos[None, :]) & \
            (prev[idx] < scene.isos[None, :])
        if np.any(crossing):
            rows = np.nonzero(np.any(crossing, axis=1))[0]
            hit_t = np.full((rows.size, n_cls), np.inf)
            for ci in range(n_cls):
                sub = rows[crossing[rows, ci]]
                if sub.size == 0:
                    continue
                th = _bisect(scene, ci, eye, dirs[idx[sub]], t_prev[sub],
                             t_cur[sub], settings.binary_search_iters)
                hit_t[np.searchsorted(rows, sub), ci] = th
            # composite per ray in depth order within the step
            order = np.argsort(hit_t, axis=1)
            for k in range(n_cls):
                for ci in range(n_cls):
                    sel = (order[:, k] == ci) & np.isfinite(
                        hit_t[np.arange(rows.size), ci]
                    ) & (alpha[idx[rows]] < settings.early_termination_alpha)
                    if not np.any(sel):
                        continue
                    ray_ids = idx[rows[sel]]
                    _composite(scene, ci, eye, dirs, hit_t[sel, ci],
                               ray_ids, rgb, alpha, settings)

        t[idx] = t_cur
        prev[idx] = cur
        active[idx] = (t_cur < t1[idx]) & \
            (alpha[idx] < settings.early_termination_alpha)
        done = np.setdiff1d(np.nonzero(active)[0], idx, assume_unique=False)
        active[done] = False

    bg = np.asarray(settings.background, dtype=np.float64)
    rgb += (1.0 - alpha)[:, None] * bg[:3] * bg[3]
    alpha = alpha + (1.0 - alpha) * bg[3]
    img = np.concatenate([rgb, alpha[:, None]], axis=1)
    return np.clip(img, 0.0, 1.0).reshape(cam.height, cam.width, 4)


def _bisect(scene, ci, eye, dirs, t_lo, t_hi, iters):
    lo = t_lo.copy()
    hi = t_hi.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        p = eye[None, :] + mid[:, None] * dirs
        above = scene.sample(ci, p) >= scene.isos[ci]
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return hi


def _composite(scene, ci, eye, dirs, hit_t, ray_ids, rgb, alpha, settings):
    pos = eye[None, :] + hit_t[:, None] * dirs[ray_ids]
    shaded = _shade(scene, ci, pos, dirs[ray_ids], settings)
    a = scene.classes[ci][0].opacity
    trans = (1.0 - alpha[ray_ids])[:, None]
    rgb[ray_ids] += trans * a * shaded
    alpha[ray_ids] += (1.0 - alpha[ray_ids]) * a


def surface_depth(sv: SimilarityVolume, iso: float, origin, direction,
                  settings: RenderSettings | None = None, bounds=None):
    """First iso crossing along one ray, or None when the ray misses."""
    settings = settings or RenderSettings()
    cdef = ClassDef(id=1, iso_value=iso)
    scene = _Scene([(cdef, sv)], bounds)
    origin = np.asarray(origin, dtype=np.float64)
    direction = _normalize(direction)
    t0, t1 = _box_intersect(origin[None, :], direction[None, :],
                            scene.box_max)
    t0, t1 = float(t0[0]), float(t1[0])
    if t1 <= t0:
        return None
    t = t0
    prev = float(scene.sample(0, origin + t * direction))
    if prev >= iso:
        return t
    while t < t1:
        t_next = min(t + settings.step_size, t1)
        if t_next == t:
            break
        cur = float(scene.sample(0, origin + t_next * direction))
        if prev < iso <= cur:
            th = _bisect(scene, 0, origin, direction[None, :],
                         np.array([t]), np.array([t_next]),
                         settings.binary_search_iters)
            return float(th[0])
        t, prev = t_next, cur
    return None


OVERLAY_ALPHA = 0.5
ANNOTATION_RADIUS = 3


def render_slice_overlay(v: Volume, axis: int, index: int,
                         overlays: list[tuple[ClassDef, SimilarityVolume,
                                              AnnotationSet]] = ()) \
        -> np.ndarray:
    """Grayscale slice with per-class similarity tint and annotation
    markers; returns an RGBA float image (rows x cols x 4)."""
    if index < 0 or index >= v.dims[axis]:
        raise IndexOutOfRange(f"slice {index} of axis {axis} in {v.dims}")
    other = [a for a in range(3) if a != axis]
    gray = np.take(v.data, index, axis=axis).astype(np.float64)  # (o0, o1)
    img = np.empty((*gray.shape, 4))
    img[..., 0] = img[..., 1] = img[..., 2] = gray
    img[..., 3] = 1.0

    for cdef, sv, aset in overlays:
        # sample the similarity grid at this slice's voxel positions
        scale = [sv.dims[a] / v.dims[a] for a in range(3)]
        o0 = np.arange(v.dims[other[0]], dtype=np.float64) * scale[other[0]]
        o1 = np.arange(v.dims[other[1]], dtype=np.float64) * scale[other[1]]
        g0, g1 = np.meshgrid(o0, o1, indexing="ij")
        pos = np.empty((*gray.shape, 3))
        pos[..., axis] = index * scale[axis]
        pos[..., other[0]] = g0
        pos[..., other[1]] = g1
        sim = trilinear_sample(sv.data, pos.reshape(-1, 3)) \
            .reshape(gray.shape)
        mask = sim >= cdef.iso_value
        color = np.asarray(cdef.color, dtype=np.float64)
        img[mask, :3] = (1 - OVERLAY_ALPHA) * img[mask, :3] \
            + OVERLAY_ALPHA * color

        if aset is not None:
            for p in aset.points:
                if int(p[axis]) != index:
                    continue
                c0, c1 = int(p[other[0]]), int(p[other[1]])
                r = ANNOTATION_RADIUS
                y0, y1 = max(c0 - r, 0), min(c0 + r + 1, gray.shape[0])
                x0, x1 = max(c1 - r, 0), min(c1 + r + 1, gray.shape[1])
                yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1),
                                     indexing="ij")
                disc = (yy - c0) ** 2 + (xx - c1) ** 2 <= r * r
                patch = img[y0:y1, x0:x1, :3]
                patch[disc] = (1.0, 0.55, 0.0)  # annotation marker
    return img


def image_to_png_bytes(img: np.ndarray) -> bytes:
    import io

    arr = (np.clip(img, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def save_png(img: np.ndarray, path) -> None:
    arr = (np.clip(img, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGBA").save(path)
