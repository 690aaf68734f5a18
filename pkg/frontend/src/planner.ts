/** Budget-driven node selection, identical to the server's planner.
 *
 * Best-first by descending projected sphere size; children reachable
 * only through a selected parent; the first node that would overflow
 * the budget stops expansion entirely; ties break by ascending name.
 */
import { CameraState, aabbVisible, extractFrustum, nodePriority } from "./camera.js";
import { Hierarchy, nodeBounds } from "./hierarchy.js";

export interface PlanConfig {
  pointBudget: number;
  minProjectedPixels: number;
}

export const DEFAULT_PLAN_CONFIG: PlanConfig = {
  pointBudget: 2_000_000,
  minProjectedPixels: 2.0,
};

export interface Plan {
  /** resident nodes to draw this tick, priority order */
  renderSet: string[];
  /** selected but not resident: fetch these, priority order */
  loadList: string[];
  /** resident but no longer selected: release these buffers */
  unloadList: string[];
  tickId: number;
}

interface HeapItem {
  pri: number;
  name: string;
}

/** Binary max-heap ordered by (priority desc, name asc). */
class PriorityHeap {
  private items: HeapItem[] = [];

  private before(a: HeapItem, b: HeapItem): boolean {
    if (a.pri !== b.pri) return a.pri > b.pri;
    return a.name < b.name;
  }

  push(item: HeapItem): void {
    const a = this.items;
    a.push(item);
    let i = a.length - 1;
    while (i > 0) {
      const parent = (i - 1) >> 1;
      if (!this.before(a[i], a[parent])) break;
      [a[i], a[parent]] = [a[parent], a[i]];
      i = parent;
    }
  }

  pop(): HeapItem | undefined {
    const a = this.items;
    if (a.length === 0) return undefined;
    const top = a[0];
    const last = a.pop()!;
    if (a.length > 0) {
      a[0] = last;
      let i = 0;
      for (;;) {
        const l = 2 * i + 1;
        const r = l + 1;
        let best = i;
        if (l < a.length && this.before(a[l], a[best])) best = l;
        if (r < a.length && this.before(a[r], a[best])) best = r;
        if (best === i) break;
        [a[i], a[best]] = [a[best], a[i]];
        i = best;
      }
    }
    return top;
  }

  get size(): number {
    return this.items.length;
  }
}

export function planTraversal(
  h: Hierarchy,
  resident: ReadonlySet<string>,
  cam: CameraState,
  cfg: PlanConfig = DEFAULT_PLAN_CONFIG,
  tickId = 0,
): Plan {
  const frustum = extractFrustum(cam);
  const heap = new PriorityHeap();
  const selected: HeapItem[] = [];
  let total = 0;

  const push = (name: string) => {
    heap.push({ pri: nodePriority(nodeBounds(h, name), cam), name });
  };

  if (h.nodes.has("r")) push("r");
  while (heap.size > 0) {
    const { pri, name } = heap.pop()!;
    const entry = h.nodes.get(name)!;
    if (!aabbVisible(nodeBounds(h, name), frustum)) continue;
    if (pri < cfg.minProjectedPixels) continue;
    if (total + entry.numPoints > cfg.pointBudget) break;
    selected.push({ pri, name });
    total += entry.numPoints;
    for (let k = 0; k < 8; k++) {
      if (entry.childMask & (1 << k)) push(name + k);
    }
  }

  selected.sort((a, b) => (a.pri !== b.pri ? b.pri - a.pri : a.name < b.name ? -1 : 1));
  const selectedNames = new Set(selected.map((s) => s.name));
  const renderSet: string[] = [];
  const loadList: string[] = [];
  for (const { name } of selected) {
    (resident.has(name) ? renderSet : loadList).push(name);
  }
  const unloadList = [...resident].filter((n) => !selectedNames.has(n)).sort();
  return { renderSet, loadList, unloadList, tickId };
}
