/** Camera model, frustum extraction, and node priority.
 *
 * These formulas replicate the server's planner arithmetic exactly so a
 * client-side plan selects the same node set as the server for the same
 * camera and budget.
 */
import { AABB, Vec3, center, cross, dot, norm, scale, size, sub } from "./math.js";

export interface CameraState {
  position: Vec3;
  forward: Vec3; // unit, after normalization
  up: Vec3; // unit, orthogonal to forward
  verticalFovRadians: number;
  aspect: number;
  nearPlane: number;
  farPlane: number;
  screenHeightPixels: number;
}

export interface CameraInit {
  position: Vec3;
  forward: Vec3;
  up: Vec3;
  verticalFovRadians?: number;
  aspect?: number;
  nearPlane?: number;
  farPlane?: number;
  screenHeightPixels?: number;
}

export function makeCamera(init: CameraInit): CameraState {
  const fovy = init.verticalFovRadians ?? (60 * Math.PI) / 180;
  const near = init.nearPlane ?? 0.1;
  const far = init.farPlane ?? 10_000;
  const fn = norm(init.forward);
  const un = norm(init.up);
  if (fn === 0 || un === 0) throw new Error("zero-length camera axis");
  if (!(near > 0 && near < far)) throw new Error("require 0 < near < far");
  if (!(fovy > 0 && fovy < Math.PI)) throw new Error("fov outside (0, pi)");
  const f = scale(init.forward, 1 / fn);
  let u = sub(init.up, scale(f, dot(init.up, f)));
  const uLen = norm(u);
  if (uLen < 1e-12) throw new Error("up parallel to forward");
  u = scale(u, 1 / uLen);
  return {
    position: init.position,
    forward: f,
    up: u,
    verticalFovRadians: fovy,
    aspect: init.aspect ?? 16 / 9,
    nearPlane: near,
    farPlane: far,
    screenHeightPixels: init.screenHeightPixels ?? 1080,
  };
}

export function right(cam: CameraState): Vec3 {
  return cross(cam.forward, cam.up);
}

export interface Frustum {
  normals: Vec3[]; // 6 unit inward normals
  offsets: number[]; // 6
}

/** Six inward planes; a point is inside iff dot(n,p)+d >= 0 for all. */
export function extractFrustum(cam: CameraState): Frustum {
  const th = Math.tan(cam.verticalFovRadians / 2);
  const tw = th * cam.aspect;
  const f = cam.forward;
  const u = cam.up;
  const r = right(cam);
  const raw: Vec3[] = [
    f, // near
    scale(f, -1), // far
    sub(scale(f, tw), r), // right
    add3(scale(f, tw), r), // left
    sub(scale(f, th), u), // top
    add3(scale(f, th), u), // bottom
  ];
  const normals = raw.map((n) => scale(n, 1 / norm(n)));
  const offsets = new Array<number>(6);
  offsets[0] = -dot(normals[0], cam.position) - cam.nearPlane;
  offsets[1] = dot(f, cam.position) + cam.farPlane;
  for (let i = 2; i < 6; i++) offsets[i] = -dot(normals[i], cam.position);
  return { normals, offsets };
}

function add3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

/** Conservative positive-vertex test: never culls an intersecting box. */
export function aabbVisible(b: AABB, fr: Frustum): boolean {
  for (let i = 0; i < 6; i++) {
    const n = fr.normals[i];
    const pv: Vec3 = [
      n[0] >= 0 ? b.max[0] : b.min[0],
      n[1] >= 0 ? b.max[1] : b.min[1],
      n[2] >= 0 ? b.max[2] : b.min[2],
    ];
    if (dot(n, pv) + fr.offsets[i] < 0) return false;
  }
  return true;
}

/** Projected pixel radius of the node's bounding sphere.
 *
 * Camera inside the sphere scores +Infinity so enclosing nodes always
 * come first.
 */
export function nodePriority(bounds: AABB, cam: CameraState): number {
  const c = center(bounds);
  const r = norm(size(bounds)) / 2;
  const dist = norm(sub(cam.position, c)) - r;
  if (dist <= 0) return Infinity;
  const d = Math.max(dist, cam.nearPlane);
  return (r / d) * (cam.screenHeightPixels / (2 * Math.tan(cam.verticalFovRadians / 2)));
}
