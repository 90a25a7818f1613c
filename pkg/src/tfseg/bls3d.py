"""Edge-aware refinement of low-resolution similarity maps.

A sparse bilateral grid over (x, y, z, luma) links each voxel of the raw
reference volume to one grid vertex (hard splat). Smoothing happens in
bilateral space through a separable [1, 2, 1] blur, normalized by
bistochastization, and the refined map is the solution of a small
symmetric positive definite system solved with Jacobi-preconditioned
conjugate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateCrop, DimMismatch, EmptySelection, \
    NumericalBreakdown
from .featpipe import pool_axis
from .volgrid import SimilarityVolume, Volume, trilinear_sample


@dataclass(frozen=True)
class RefineConfig:
    sigma_spatial: float = 8.0
    sigma_luma: float = 8.0  # on the 255-scaled intensity axis
    sigma_chroma: float = 8.0  # accepted for GUI parity; scalar volumes have no chroma
    smoothness: float = 128.0
    confidence: float = 1.0
    tau: float = 0.25
    target_resolution: int = 256
    pcg_tol: float = 1e-5
    pcg_max_iters: int = 25
    bistoch_iters: int = 16
    crop_pad: int = 4

    def to_dict(self) -> dict:
        return {
            "sigma_spatial": self.sigma_spatial,
            "sigma_luma": self.sigma_luma,
            "sigma_chroma": self.sigma_chroma,
            "smoothness": self.smoothness,
            "confidence": self.confidence,
            "tau": self.tau,
            "target_resolution": self.target_resolution,
            "pcg_tol": self.pcg_tol,
            "pcg_max_iters": self.pcg_max_iters,
            "bistoch_iters": self.bistoch_iters,
            "crop_pad": self.crop_pad,
        }

    @staticmethod
    def from_dict(d: dict) -> "RefineConfig":
        return RefineConfig(**{k: d[k] for k in RefineConfig().to_dict()
                               if k in d})


class BilateralGrid:
    """Sparse 4D vertex set with splat mapping and blur adjacency."""

    def __init__(self, reference: np.ndarray, cfg: RefineConfig):
        if reference.size < 8:
            raise DegenerateCrop(
                f"crop of {reference.size} voxels is too small"
            )
        self.shape = reference.shape
        w, h, d = reference.shape

        xs, ys, zs = np.meshgrid(
            np.arange(w), np.arange(h), np.arange(d), indexing="ij"
        )
        cx = np.floor(xs.ravel() / cfg.sigma_spatial).astype(np.int64)
        cy = np.floor(ys.ravel() / cfg.sigma_spatial).astype(np.int64)
        cz = np.floor(zs.ravel() / cfg.sigma_spatial).astype(np.int64)
        cl = np.floor(reference.ravel() * 255.0 / cfg.sigma_luma) \
            .astype(np.int64)

        # pack the 4 bilateral coordinates into one int64 key; strides leave
        # headroom for the +/-1 neighbor probes
        dims4 = np.array(
            [cx.max() + 2, cy.max() + 2, cz.max() + 2, cl.max() + 2],
            dtype=np.int64,
        )
        self._strides = np.array(
            [dims4[1] * dims4[2] * dims4[3], dims4[2] * dims4[3], dims4[3], 1],
            dtype=np.int64,
        )
        keys = (
            cx * self._strides[0]
            + cy * self._strides[1]
            + cz * self._strides[2]
            + cl * self._strides[3]
        )
        self._vertex_keys, self.splat_index = np.unique(
            keys, return_inverse=True
        )
        self.nv = len(self._vertex_keys)
        self.m = np.bincount(self.splat_index,
                             minlength=self.nv).astype(np.float64)

        # blur adjacency: per bilateral dim, index of the +1 / -1 neighbor
        # vertex or -1 when absent
        self.plus = np.full((4, self.nv), -1, dtype=np.int64)
        self.minus = np.full((4, self.nv), -1, dtype=np.int64)
        for dim in range(4):
            probe = self._vertex_keys + self._strides[dim]
            idx = np.searchsorted(self._vertex_keys, probe)
            idx_c = np.clip(idx, 0, self.nv - 1)
            hit = self._vertex_keys[idx_c] == probe
            self.plus[dim, hit] = idx_c[hit]
            self.minus[dim, idx_c[hit]] = np.nonzero(hit)[0]

        self.n: np.ndarray | None = None  # bistochastization diagonal

    # -- operators ---------------------------------------------------------

    def splat(self, x: np.ndarray) -> np.ndarray:
        """Accumulate per-voxel values into their vertices."""
        flat = np.asarray(x, dtype=np.float64).ravel()
        if flat.size != self.splat_index.size:
            raise DimMismatch(
                f"field of {flat.size} voxels, grid has "
                f"{self.splat_index.size}"
            )
        return np.bincount(self.splat_index, weights=flat,
                           minlength=self.nv)

    def slice(self, y: np.ndarray) -> np.ndarray:
        """Read each voxel's vertex value back into a voxel field."""
        y = np.asarray(y, dtype=np.float64)
        if y.size != self.nv:
            raise DimMismatch(f"{y.size} vertex values, grid has {self.nv}")
        return y[self.splat_index].reshape(self.shape)

    def blur(self, y: np.ndarray) -> np.ndarray:
        """[1, 2, 1] stencil along each of the 4 bilateral dims; missing
        neighbors contribute zero, so the center weight is always 8."""
        y = np.asarray(y, dtype=np.float64)
        out = 8.0 * y
        for dim in range(4):
            p = self.plus[dim]
            valid = p >= 0
            out[valid] += y[p[valid]]
            q = self.minus[dim]
            valid = q >= 0
            out[valid] += y[q[valid]]
        return out

    def bistochastize(self, iters: int = 16) -> np.ndarray:
        """Iterate n <- sqrt(n * m / blur(n)) from n = sqrt(m)."""
        n = np.sqrt(self.m)
        for _ in range(iters):
            bn = self.blur(n)
            assert np.all(bn > 0), "blur of positive n must stay positive"
            n = np.sqrt(n * self.m / bn)
        self.n = n
        return n


def solve(grid: BilateralGrid, target: np.ndarray, cfg: RefineConfig) \
        -> tuple[np.ndarray, list[float]]:
    """Solve the bilateral-space normal equations for a smoothed field.

    ``target`` is the per-voxel field to fit; the result is sliced back to
    voxels and clamped to [0, 1]. Also returns the PCG residual history.
    """
    if grid.n is None:
        grid.bistochastize(cfg.bistoch_iters)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != grid.shape:
        raise DimMismatch(f"target {target.shape} vs crop {grid.shape}")

    lam = cfg.smoothness
    c = cfg.confidence
    m, n = grid.m, grid.n
    splat_c = c * grid.m  # splat of the constant confidence field
    b = c * grid.splat(target)

    def matvec(y):
        return lam * (m * y - n * grid.blur(n * y)) + splat_c * y

    diag = lam * (m - 8.0 * n * n) + splat_c
    diag = np.maximum(diag, 1e-12)

    y = b / splat_c  # confidence-weighted mean as initial guess
    r = b - matvec(y)
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    b_norm = float(np.linalg.norm(b))
    residuals = [float(np.linalg.norm(r))]
    tol = cfg.pcg_tol * max(b_norm, 1e-30)
    for _ in range(cfg.pcg_max_iters):
        if residuals[-1] <= tol:
            break
        ap = matvec(p)
        denom = float(p @ ap)
        if not np.isfinite(denom) or denom <= 0:
            raise NumericalBreakdown(
                f"PCG breakdown: p'Ap = {denom}, nv = {grid.nv}"
            )
        alpha = rz / denom
        y += alpha * p
        r -= alpha * ap
        res = float(np.linalg.norm(r))
        if not np.isfinite(res):
            raise NumericalBreakdown("non-finite PCG residual")
        residuals.append(res)
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return np.clip(grid.slice(y), 0.0, 1.0), residuals


def _downsample_reference(reference: Volume, target_resolution: int) \
        -> np.ndarray:
    data = reference.data.astype(np.float64)
    for a in range(3):
        if data.shape[a] > target_resolution:
            data = pool_axis(data, a, target_resolution)
    return data


def _upsample_to(sim: np.ndarray, out_dims, lo, hi) -> np.ndarray:
    """Trilinearly sample ``sim`` over the output index box [lo, hi)."""
    in_dims = sim.shape
    axes = []
    for a in range(3):
        idx = np.arange(lo[a], hi[a], dtype=np.float64)
        if out_dims[a] > 1:
            idx = idx * (in_dims[a] - 1) / (out_dims[a] - 1)
        else:
            idx = idx * 0.0
        axes.append(idx)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)
    out = trilinear_sample(sim, pos)
    return out.reshape(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2])


def refine(sim: SimilarityVolume, reference: Volume,
           cfg: RefineConfig | None = None) -> SimilarityVolume:
    """Crop, upsample and solve: the full refinement pipeline.

    Output resolution is the reference resolution capped per-axis at
    ``cfg.target_resolution`` (box-averaging the reference when capped).
    Voxels outside the solved crop stay exactly zero.
    """
    cfg = cfg or RefineConfig()
    ref = _downsample_reference(reference, cfg.target_resolution)
    out_dims = ref.shape

    sim_data = sim.data.astype(np.float64)
    if not np.any(sim_data > cfg.tau):
        raise EmptySelection(
            f"no similarity above tau={cfg.tau}; nothing to refine"
        )

    # candidate crop from the low-res mask (1 low-res voxel of slack covers
    # every location where the trilinear upsample can still exceed tau)
    mask_lo = sim_data > cfg.tau
    lo_idx = np.array([np.min(np.nonzero(mask_lo.any(
        axis=tuple(a for a in range(3) if a != ax)))[0]) for ax in range(3)])
    hi_idx = np.array([np.max(np.nonzero(mask_lo.any(
        axis=tuple(a for a in range(3) if a != ax)))[0]) for ax in range(3)])
    scale = np.array([
        (out_dims[a] - 1) / max(sim.dims[a] - 1, 1) for a in range(3)
    ])
    cand_lo = np.maximum(np.floor((lo_idx - 1) * scale).astype(int), 0)
    cand_hi = np.minimum(
        np.ceil((hi_idx + 1) * scale).astype(int) + 1,
        np.asarray(out_dims),
    )

    up_cand = _upsample_to(sim_data, out_dims, cand_lo, cand_hi)

    mask = up_cand > cfg.tau
    if not np.any(mask):
        raise EmptySelection(
            f"no upsampled similarity above tau={cfg.tau}"
        )
    nz = np.nonzero(mask)
    crop_lo = np.array([int(nz[a].min()) for a in range(3)]) + cand_lo
    crop_hi = np.array([int(nz[a].max()) for a in range(3)]) + cand_lo + 1
    crop_lo = np.maximum(crop_lo - cfg.crop_pad, 0)
    crop_hi = np.minimum(crop_hi + cfg.crop_pad, np.asarray(out_dims))

    target = _upsample_to(sim_data, out_dims, crop_lo, crop_hi)
    ref_crop = ref[crop_lo[0]:crop_hi[0], crop_lo[1]:crop_hi[1],
                   crop_lo[2]:crop_hi[2]]

    grid = BilateralGrid(ref_crop, cfg)
    grid.bistochastize(cfg.bistoch_iters)
    solved, _ = solve(grid, target, cfg)

    out = np.zeros(out_dims, dtype=np.float32)
    out[crop_lo[0]:crop_hi[0], crop_lo[1]:crop_hi[1],
        crop_lo[2]:crop_hi[2]] = solved.astype(np.float32)
    return SimilarityVolume(dims=tuple(out_dims), data=out,
                            resolution_tag="refined", class_id=sim.class_id)
