// Client-side session state. Only annotations-in-flight and configuration
// live here; all imagery is fetched from the server.

import type { ClassInfo, Tool, Vec3 } from './types.js';

export interface UiSessionState {
  sessionId: string;
  dims: Vec3;
  sliceIndex: Vec3; // current index per axis
  activeTool: Tool;
  activeClass: number | null;
  classes: Map<number, ClassInfo>;
  brushRadius: number; // voxels, in-plane
  eraseRadius: number; // voxels, spherical
  pendingJobs: Set<number>; // refine job ids in flight
}

export function initialState(sessionId: string, dims: Vec3): UiSessionState {
  return {
    sessionId,
    dims,
    sliceIndex: [
      Math.floor(dims[0] / 2),
      Math.floor(dims[1] / 2),
      Math.floor(dims[2] / 2),
    ],
    activeTool: 'point',
    activeClass: null,
    classes: new Map(),
    brushRadius: 2,
    eraseRadius: 2,
    pendingJobs: new Set(),
  };
}

export function clampIndex(state: UiSessionState, axis: number, index: number): number {
  return Math.min(Math.max(Math.round(index), 0), state.dims[axis] - 1);
}

export function setSliceIndex(state: UiSessionState, axis: number, index: number): void {
  state.sliceIndex[axis] = clampIndex(state, axis, index);
}

/** Clicking a voxel in one view moves the other two views to it. */
export function syncCrosshair(state: UiSessionState, voxel: Vec3, clickedAxis: number): void {
  for (let axis = 0; axis < 3; axis++) {
    if (axis !== clickedAxis) {
      setSliceIndex(state, axis, voxel[axis]);
    }
  }
}

export function setTool(state: UiSessionState, tool: Tool): void {
  state.activeTool = tool; // exactly one tool: assignment replaces
}
