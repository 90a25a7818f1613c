// Pixel-space strokes to voxel point sets. Slice images map image row ->
// first in-plane axis and image column -> second in-plane axis at a view
// zoom factor; a brush stroke becomes one deduplicated batch of voxels.

import type { Vec3 } from './types.js';

export function inPlaneAxes(axis: number): [number, number] {
  const others: number[] = [];
  for (let a = 0; a < 3; a++) {
    if (a !== axis) others.push(a);
  }
  return [others[0], others[1]];
}

/** Map a slice-view pixel to a voxel; returns null outside the volume. */
export function pixelToVoxel(
  axis: number,
  sliceIndex: number,
  px: number, // column in image pixels
  py: number, // row in image pixels
  zoom: number,
  dims: Vec3,
): Vec3 | null {
  const [a0, a1] = inPlaneAxes(axis);
  const v0 = Math.floor(py / zoom);
  const v1 = Math.floor(px / zoom);
  if (v0 < 0 || v0 >= dims[a0] || v1 < 0 || v1 >= dims[a1]) return null;
  const voxel: Vec3 = [0, 0, 0];
  voxel[axis] = sliceIndex;
  voxel[a0] = v0;
  voxel[a1] = v1;
  return voxel;
}

function discOffsets(radius: number): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  const r = Math.max(0, Math.floor(radius));
  for (let dy = -r; dy <= r; dy++) {
    for (let dx = -r; dx <= r; dx++) {
      if (dx * dx + dy * dy <= radius * radius) out.push([dy, dx]);
    }
  }
  return out;
}

/**
 * Rasterize a pixel polyline into in-slice voxels with a round brush.
 * Segments are stepped at sub-pixel resolution so fast drags leave no
 * gaps; the result is deduplicated and bounded to the volume.
 */
export function rasterizeStroke(
  axis: number,
  sliceIndex: number,
  pixels: Array<[number, number]>, // [px, py] path
  zoom: number,
  brushRadius: number,
  dims: Vec3,
): Vec3[] {
  if (pixels.length === 0) return [];
  const [a0, a1] = inPlaneAxes(axis);
  const offsets = discOffsets(brushRadius);
  const seen = new Set<number>();
  const out: Vec3[] = [];

  const stamp = (px: number, py: number) => {
    const center = pixelToVoxel(axis, sliceIndex, px, py, zoom, dims);
    if (!center) return;
    for (const [dy, dx] of offsets) {
      const v0 = center[a0] + dy;
      const v1 = center[a1] + dx;
      if (v0 < 0 || v0 >= dims[a0] || v1 < 0 || v1 >= dims[a1]) continue;
      const key = v0 * dims[a1] + v1;
      if (seen.has(key)) continue;
      seen.add(key);
      const voxel: Vec3 = [0, 0, 0];
      voxel[axis] = sliceIndex;
      voxel[a0] = v0;
      voxel[a1] = v1;
      out.push(voxel);
    }
  };

  stamp(pixels[0][0], pixels[0][1]);
  for (let i = 1; i < pixels.length; i++) {
    const [x0, y0] = pixels[i - 1];
    const [x1, y1] = pixels[i];
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist / Math.max(zoom * 0.5, 0.5)));
    for (let s = 1; s <= steps; s++) {
      const t = s / steps;
      stamp(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
    }
  }
  return out;
}
