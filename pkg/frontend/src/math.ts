/** Minimal double-precision vector helpers.
 *
 * The planner must reproduce the server's selection exactly, so these
 * mirror the server's float64 arithmetic operation for operation.
 */

export type Vec3 = [number, number, number];

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.sqrt(dot(a, a));
}

export interface AABB {
  min: Vec3;
  max: Vec3;
}

export function center(b: AABB): Vec3 {
  return [
    (b.min[0] + b.max[0]) / 2,
    (b.min[1] + b.max[1]) / 2,
    (b.min[2] + b.max[2]) / 2,
  ];
}

export function size(b: AABB): Vec3 {
  return sub(b.max, b.min);
}

/** Octant k of a cube: bit2 = x-high, bit1 = y-high, bit0 = z-high. */
export function childOctantBounds(b: AABB, k: number): AABB {
  const mid = center(b);
  const hi = [(k >> 2) & 1, (k >> 1) & 1, k & 1];
  const mn: Vec3 = [0, 0, 0];
  const mx: Vec3 = [0, 0, 0];
  for (let i = 0; i < 3; i++) {
    mn[i] = hi[i] ? mid[i] : b.min[i];
    mx[i] = hi[i] ? b.max[i] : mid[i];
  }
  return { min: mn, max: mx };
}

/** Descend from the cubic root along an octant path like "r372". */
export function nodeBoundsFromName(root: AABB, name: string): AABB {
  let b = root;
  for (let i = 1; i < name.length; i++) {
    b = childOctantBounds(b, name.charCodeAt(i) - 48);
  }
  return b;
}
