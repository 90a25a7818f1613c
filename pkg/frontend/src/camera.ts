// Orbit camera: azimuth/elevation/distance around a target point,
// serialized to the server's camera JSON schema.

import type { CameraJson, Vec3 } from './types.js';

export interface OrbitCamera {
  target: Vec3;
  distance: number;
  azimuth: number; // radians around +y
  elevation: number; // radians above the xz plane
  fov: number;
  width: number;
  height: number;
}

const MAX_ELEVATION = Math.PI / 2 - 0.01;

export function defaultOrbit(dims: Vec3, width = 512, height = 512): OrbitCamera {
  const target: Vec3 = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
  return {
    target,
    distance: 2.5 * Math.max(...dims),
    azimuth: Math.PI, // looking down -z toward the volume front
    elevation: 0,
    fov: 45,
    width,
    height,
  };
}

export function orbit(cam: OrbitCamera, dAzimuth: number, dElevation: number): void {
  cam.azimuth = (cam.azimuth + dAzimuth) % (2 * Math.PI);
  cam.elevation = Math.min(Math.max(cam.elevation + dElevation, -MAX_ELEVATION), MAX_ELEVATION);
}

export function zoom(cam: OrbitCamera, factor: number): void {
  cam.distance = Math.max(1, cam.distance * factor);
}

export function toCameraJson(cam: OrbitCamera): CameraJson {
  const ce = Math.cos(cam.elevation);
  const eye: Vec3 = [
    cam.target[0] + cam.distance * ce * Math.sin(cam.azimuth),
    cam.target[1] + cam.distance * Math.sin(cam.elevation),
    cam.target[2] + cam.distance * ce * Math.cos(cam.azimuth),
  ];
  return {
    eye,
    look_at: [...cam.target] as Vec3,
    up: [0, 1, 0],
    fov: cam.fov,
    width: cam.width,
    height: cam.height,
  };
}
