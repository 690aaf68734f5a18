import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { bfsNames, nodeBounds, parseHierarchy, Metadata } from "../src/hierarchy.js";

const fixture = (name: string) =>
  fileURLToPath(new URL(`./fixtures/${name}`, import.meta.url));

function loadFixture() {
  const meta = JSON.parse(readFileSync(fixture("metadata.json"), "utf8")) as Metadata;
  const raw = readFileSync(fixture("hierarchy.bin"));
  const buffer = raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength);
  return parseHierarchy(meta, buffer);
}

describe("hierarchy parsing", () => {
  it("reconstructs every node with consistent totals", () => {
    const h = loadFixture();
    expect(h.nodes.has("r")).toBe(true);
    let total = 0;
    for (const entry of h.nodes.values()) {
      total += entry.numPoints;
      expect(entry.byteSize).toBe(entry.numPoints * 16);
    }
    expect(total).toBe(h.metadata.points);
  });

  it("lays out payload byte ranges contiguously in BFS order", () => {
    const h = loadFixture();
    let offset = 0;
    for (const name of bfsNames(h)) {
      const entry = h.nodes.get(name)!;
      expect(entry.byteOffset).toBe(offset);
      offset += entry.byteSize;
    }
  });

  it("names children consistently with the child masks", () => {
    const h = loadFixture();
    for (const [name, entry] of h.nodes) {
      for (let k = 0; k < 8; k++) {
        expect(h.nodes.has(name + k)).toBe((entry.childMask & (1 << k)) !== 0);
      }
    }
  });

  it("derives cubic child bounds by octant descent", () => {
    const h = loadFixture();
    const root = nodeBounds(h, "r");
    const side = root.max[0] - root.min[0];
    expect(side).toBeCloseTo(h.metadata.rootSide, 12);
    const child = nodeBounds(h, "r7"); // x,y,z all high
    expect(child.min[0]).toBeCloseTo((root.min[0] + root.max[0]) / 2, 12);
    expect(child.max[0]).toBeCloseTo(root.max[0], 12);
    const childSide = child.max[0] - child.min[0];
    expect(childSide).toBeCloseTo(side / 2, 12);
  });

  it("rejects truncated payloads", () => {
    const h = loadFixture();
    void h;
    const meta = JSON.parse(readFileSync(fixture("metadata.json"), "utf8")) as Metadata;
    expect(() => parseHierarchy(meta, new ArrayBuffer(21))).toThrow(/whole number/);
  });
});
