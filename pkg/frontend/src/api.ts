// Thin REST/WS client for the session service. All methods resolve with
// parsed JSON; image endpoints return Blobs. The fetch implementation is
// injectable so tests can run against a mocked backend.

import type {
  AnnotateResponse,
  CameraJson,
  ClassInfo,
  ClassPatch,
  RefineResponse,
  SessionSnapshot,
  Vec3,
} from './types.js';

export interface ApiOptions {
  baseUrl: string;
  fetchFn?: typeof fetch;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  private baseUrl: string;
  private fetchFn: typeof fetch;

  constructor(opts: ApiOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/$/, '');
    this.fetchFn = opts.fetchFn ?? fetch.bind(globalThis);
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { 'content-type': 'application/json' },
      ...init,
    });
    if (!res.ok) {
      throw new ApiError(res.status, `${init?.method ?? 'GET'} ${path}: ${res.status}`);
    }
    return (await res.json()) as T;
  }

  createSession(volumeId: string): Promise<SessionSnapshot> {
    return this.json('/sessions', {
      method: 'POST',
      body: JSON.stringify({ volume_id: volumeId }),
    });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.json(`/sessions/${sessionId}`);
  }

  upsertClass(sessionId: string, cls: Partial<ClassInfo> & { id: number }): Promise<ClassInfo> {
    return this.json(`/sessions/${sessionId}/classes`, {
      method: 'POST',
      body: JSON.stringify(cls),
    });
  }

  patchClass(sessionId: string, classId: number, patch: ClassPatch): Promise<ClassInfo> {
    return this.json(`/sessions/${sessionId}/classes/${classId}`, {
      method: 'PATCH',
      body: JSON.stringify(patch),
    });
  }

  deleteClass(sessionId: string, classId: number): Promise<{ deleted: number }> {
    return this.json(`/sessions/${sessionId}/classes/${classId}`, { method: 'DELETE' });
  }

  postAnnotations(sessionId: string, classId: number, points: Vec3[]): Promise<AnnotateResponse> {
    return this.json(`/sessions/${sessionId}/classes/${classId}/annotations`, {
      method: 'POST',
      body: JSON.stringify({ points }),
    });
  }

  erase(sessionId: string, classId: number, point: Vec3, radius: number): Promise<AnnotateResponse> {
    return this.json(`/sessions/${sessionId}/classes/${classId}/erase`, {
      method: 'POST',
      body: JSON.stringify({ point, radius }),
    });
  }

  refine(sessionId: string, classId: number): Promise<RefineResponse> {
    return this.json(`/sessions/${sessionId}/classes/${classId}/refine`, { method: 'POST' });
  }

  sliceUrl(sessionId: string, axis: number, index: number, overlay = true): string {
    const q = overlay ? '?overlay=1' : '';
    return `${this.baseUrl}/sessions/${sessionId}/slice/${axis}/${index}${q}`;
  }

  renderUrl(sessionId: string, cam: CameraJson): string {
    const q = encodeURIComponent(JSON.stringify(cam));
    return `${this.baseUrl}/sessions/${sessionId}/render?cam=${q}`;
  }

  async fetchImage(url: string): Promise<Blob> {
    const res = await this.fetchFn(url);
    if (!res.ok) {
      throw new ApiError(res.status, `GET ${url}: ${res.status}`);
    }
    return res.blob();
  }

  eventsUrl(sessionId: string): string {
    return `${this.baseUrl.replace(/^http/, 'ws')}/sessions/${sessionId}/events`;
  }
}
