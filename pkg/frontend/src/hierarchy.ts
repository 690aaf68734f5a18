/** Client-side parsing of the served octree skeleton.
 *
 * /metadata is JSON; /hierarchy is a flat array of 22-byte little-endian
 * records in breadth-first order. Node names are implicit: a BFS queue
 * seeded with "r" assigns one name per record, pushing children in
 * octant order as each child mask is consumed.
 */
import { AABB, Vec3, nodeBoundsFromName } from "./math.js";

export const HIERARCHY_RECORD_SIZE = 22;
export const POINT_RECORD_SIZE = 16;

export interface Metadata {
  version: number;
  points: number;
  bounds: { min: Vec3; max: Vec3 };
  scale: Vec3;
  offset: Vec3;
  rootSide: number;
  maxNodePoints: number;
  gridSize: number;
  files: Record<string, string>;
}

export interface NodeEntry {
  childMask: number;
  numPoints: number;
  byteOffset: number;
  byteSize: number;
}

export interface Hierarchy {
  nodes: Map<string, NodeEntry>;
  rootBounds: AABB; // cubic
  metadata: Metadata;
}

export function parseHierarchy(meta: Metadata, buffer: ArrayBuffer): Hierarchy {
  if (buffer.byteLength % HIERARCHY_RECORD_SIZE !== 0) {
    throw new Error("hierarchy payload is not a whole number of records");
  }
  const view = new DataView(buffer);
  const count = buffer.byteLength / HIERARCHY_RECORD_SIZE;
  const nodes = new Map<string, NodeEntry>();
  const queue: string[] = ["r"];
  for (let i = 0; i < count; i++) {
    const name = queue.shift();
    if (name === undefined) throw new Error("more records than reachable nodes");
    const off = i * HIERARCHY_RECORD_SIZE;
    const childMask = view.getUint8(off);
    const entry: NodeEntry = {
      childMask,
      numPoints: view.getUint32(off + 2, true),
      byteOffset: Number(view.getBigUint64(off + 6, true)),
      byteSize: Number(view.getBigUint64(off + 14, true)),
    };
    nodes.set(name, entry);
    for (let k = 0; k < 8; k++) {
      if (childMask & (1 << k)) queue.push(name + k);
    }
  }
  if (queue.length > 0) throw new Error("child mask names a missing record");
  const c: Vec3 = [
    (meta.bounds.min[0] + meta.bounds.max[0]) / 2,
    (meta.bounds.min[1] + meta.bounds.max[1]) / 2,
    (meta.bounds.min[2] + meta.bounds.max[2]) / 2,
  ];
  const half = meta.rootSide / 2;
  const rootBounds: AABB = {
    min: [c[0] - half, c[1] - half, c[2] - half],
    max: [c[0] + half, c[1] + half, c[2] + half],
  };
  return { nodes, rootBounds, metadata: meta };
}

export function nodeBounds(h: Hierarchy, name: string): AABB {
  return nodeBoundsFromName(h.rootBounds, name);
}

/** Breadth-first (and byte-layout) order: by (length, name). */
export function bfsNames(h: Hierarchy): string[] {
  return [...h.nodes.keys()].sort((a, b) =>
    a.length !== b.length ? a.length - b.length : a < b ? -1 : a > b ? 1 : 0,
  );
}
