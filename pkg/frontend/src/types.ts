// Shared wire and UI types mirroring the session service's JSON schema.

export type Vec3 = [number, number, number];

export interface ClassInfo {
  id: number;
  name: string;
  color: Vec3;
  opacity: number;
  iso_value: number;
  proximity: number;
  use_solver: boolean;
  cc_filter: boolean;
}

export interface SessionSnapshot {
  v: number;
  id: string;
  volume_id: string;
  dims: Vec3;
  feature_dims: Vec3;
  classes: ClassInfo[];
  annotations: Record<string, Vec3[]>;
  camera: CameraJson;
}

export interface CameraJson {
  eye: Vec3;
  look_at: Vec3;
  up: Vec3;
  fov: number;
  width: number;
  height: number;
}

export interface AnnotateResponse {
  v: number;
  class_id: number;
  count: number;
  digest: string | null;
}

export interface RefineResponse {
  v: number;
  job_id: number;
  class_id: number;
}

export type ServerEvent =
  | { v: number; type: 'similarity_updated'; class_id: number; digest: string }
  | { v: number; type: 'refined_ready'; class_id: number; job_id: number; digest: string }
  | { v: number; type: 'refine_failed'; class_id: number; job_id: number; error: string };

export type Tool = 'point' | 'brush' | 'erase';

export type ClassPatch = Partial<
  Pick<ClassInfo, 'name' | 'color' | 'opacity' | 'iso_value' | 'proximity' | 'use_solver' | 'cc_filter'>
>;
