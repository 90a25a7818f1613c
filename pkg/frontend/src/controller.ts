// Wires UI intent to the API: annotation tools, class parameter edits,
// orbiting the 3D view and reacting to server events. Views are plain
// callbacks so the controller is fully testable without a DOM.
//
// Invariants kept here:
// - annotation tools never block on a running refine job (job ids are
//   tracked, nothing is disabled),
// - per-view in-flight de-duplication: at most one slice fetch per axis
//   and one render fetch at a time, with a dirty flag for re-fetch,
// - 3D renders are rate limited to at most 1 per RENDER_INTERVAL_MS.

import { ApiClient } from './api.js';
import { rasterizeStroke, pixelToVoxel } from './brush.js';
import { OrbitCamera, orbit, toCameraJson } from './camera.js';
import { RateLimiter } from './ratelimit.js';
import { UiSessionState, setSliceIndex, syncCrosshair } from './state.js';
import type { ClassPatch, ServerEvent, Vec3 } from './types.js';

export const RENDER_INTERVAL_MS = 200; // at most 5 renders per second

export interface ViewHooks {
  showSlice(axis: number, image: Blob): void;
  showRender(image: Blob): void;
  showStatus?(text: string): void;
}

export class AnnotationController {
  private sliceInFlight = [false, false, false];
  private sliceDirty = [false, false, false];
  private renderInFlight = false;
  private renderDirty = false;
  private renderLimiter: RateLimiter<[]>;

  constructor(
    private api: ApiClient,
    public state: UiSessionState,
    public camera: OrbitCamera,
    private hooks: ViewHooks,
  ) {
    this.renderLimiter = new RateLimiter(() => {
      void this.fetchRender();
    }, RENDER_INTERVAL_MS);
  }

  // -- slice views ----------------------------------------------------------

  async refreshSlice(axis: number): Promise<void> {
    if (this.sliceInFlight[axis]) {
      this.sliceDirty[axis] = true;
      return;
    }
    this.sliceInFlight[axis] = true;
    try {
      const url = this.api.sliceUrl(this.state.sessionId, axis, this.state.sliceIndex[axis]);
      const blob = await this.api.fetchImage(url);
      this.hooks.showSlice(axis, blob);
    } finally {
      this.sliceInFlight[axis] = false;
      if (this.sliceDirty[axis]) {
        this.sliceDirty[axis] = false;
        void this.refreshSlice(axis);
      }
    }
  }

  async refreshAllSlices(): Promise<void> {
    await Promise.all([0, 1, 2].map((a) => this.refreshSlice(a)));
  }

  setSlice(axis: number, index: number): Promise<void> {
    setSliceIndex(this.state, axis, index);
    return this.refreshSlice(axis);
  }

  // -- annotation tools -------------------------------------------------------

  async handleSliceClick(axis: number, px: number, py: number, zoom: number): Promise<void> {
    const cid = this.state.activeClass;
    if (cid === null) return;
    const voxel = pixelToVoxel(
      axis, this.state.sliceIndex[axis], px, py, zoom, this.state.dims);
    if (!voxel) return;

    syncCrosshair(this.state, voxel, axis);
    if (this.state.activeTool === 'erase') {
      await this.api.erase(this.state.sessionId, cid, voxel, this.state.eraseRadius);
    } else {
      await this.api.postAnnotations(this.state.sessionId, cid, [voxel]);
    }
    await this.refreshAllSlices();
  }

  /** A full drag is rasterized and sent as one batched request. */
  async handleSliceDrag(axis: number, pixels: Array<[number, number]>, zoom: number): Promise<void> {
    const cid = this.state.activeClass;
    if (cid === null || this.state.activeTool !== 'brush') return;
    const points = rasterizeStroke(
      axis, this.state.sliceIndex[axis], pixels, zoom,
      this.state.brushRadius, this.state.dims);
    if (points.length === 0) return;
    await this.api.postAnnotations(this.state.sessionId, cid, points);
    await this.refreshAllSlices();
  }

  // -- class parameters --------------------------------------------------------

  async handleParamChange(
    classId: number,
    field: keyof ClassPatch,
    value: ClassPatch[keyof ClassPatch],
  ): Promise<void> {
    const patch = { [field]: value } as ClassPatch;
    const updated = await this.api.patchClass(this.state.sessionId, classId, patch);
    this.state.classes.set(classId, updated);
    if (field === 'proximity' || field === 'iso_value') {
      // similarity input / threshold changed: overlays are stale
      await this.refreshAllSlices();
    }
    if (field === 'opacity' || field === 'color' || field === 'iso_value') {
      this.requestRender();
    }
  }

  async requestRefine(classId: number): Promise<number> {
    const res = await this.api.refine(this.state.sessionId, classId);
    this.state.pendingJobs.add(res.job_id);
    return res.job_id;
  }

  // -- 3D view -------------------------------------------------------------------

  handleOrbitDrag(dAzimuth: number, dElevation: number): void {
    orbit(this.camera, dAzimuth, dElevation);
    this.requestRender();
  }

  requestRender(): void {
    this.renderLimiter.schedule();
  }

  private async fetchRender(): Promise<void> {
    if (this.renderInFlight) {
      this.renderDirty = true;
      return;
    }
    this.renderInFlight = true;
    try {
      const url = this.api.renderUrl(this.state.sessionId, toCameraJson(this.camera));
      const blob = await this.api.fetchImage(url);
      this.hooks.showRender(blob);
    } finally {
      this.renderInFlight = false;
      if (this.renderDirty) {
        this.renderDirty = false;
        void this.fetchRender();
      }
    }
  }

  // -- server events ----------------------------------------------------------------

  handleEvent(ev: ServerEvent): void {
    switch (ev.type) {
      case 'similarity_updated':
        void this.refreshAllSlices();
        break;
      case 'refined_ready':
        this.state.pendingJobs.delete(ev.job_id);
        this.requestRender();
        break;
      case 'refine_failed':
        this.state.pendingJobs.delete(ev.job_id);
        this.hooks.showStatus?.(`refine failed: ${ev.error}`);
        break;
    }
  }

  connectEvents(socketFactory?: (url: string) => WebSocket): WebSocket {
    const make = socketFactory ?? ((url: string) => new WebSocket(url));
    const ws = make(this.api.eventsUrl(this.state.sessionId));
    ws.onmessage = (msg: MessageEvent) => {
      this.handleEvent(JSON.parse(String(msg.data)) as ServerEvent);
    };
    return ws;
  }
}

export type { Vec3 };
