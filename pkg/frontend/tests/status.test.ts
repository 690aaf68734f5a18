import { describe, expect, it } from "vitest";

import { Mode, StatusDoc, ViewerLifecycle } from "../src/status.js";
import { NodeFetcher } from "../src/fetcher.js";

function status(phase: StatusDoc["phase"], decimatedReady = false): StatusDoc {
  return {
    phase,
    progress: phase === "Done" ? 1 : 0.5,
    decimatedReady: decimatedReady || phase === "Done",
    message: null,
    startedAt: 0,
    updatedAt: 0,
  };
}

/** Scripted server: each poll consumes the next status in the sequence. */
function scripted(sequence: StatusDoc[], previewBytes = 160) {
  let i = 0;
  return {
    getStatus: async () => sequence[Math.min(i++, sequence.length - 1)],
    getDecimated: async () => new ArrayBuffer(previewBytes),
  };
}

describe("preview to octree lifecycle", () => {
  it("switches modes exactly once and releases the preview buffer", async () => {
    const lifecycle = new ViewerLifecycle(
      scripted([
        status("Decimating"),
        status("Chunking", true),
        status("Indexing", true),
        status("Done"),
        status("Done"),
      ]),
    );
    await lifecycle.poll();
    expect(lifecycle.mode).toBe("Connecting");
    expect(lifecycle.previewBytes).toBe(0);

    await lifecycle.poll(); // decimated ready -> preview drawn mid-build
    expect(lifecycle.mode).toBe("Preview");
    expect(lifecycle.previewBytes).toBe(160);

    await lifecycle.poll();
    expect(lifecycle.mode).toBe("Preview");

    await lifecycle.poll(); // build done -> octree, preview discarded
    expect(lifecycle.mode).toBe("Octree");
    expect(lifecycle.previewBytes).toBe(0);
    expect(lifecycle.previewBuffer).toBeNull();

    await lifecycle.poll();
    expect(lifecycle.modeHistory).toEqual(["Connecting", "Preview", "Octree"]);
  });

  it("notifies mode changes without any reload hook", async () => {
    const seen: Mode[] = [];
    const lifecycle = new ViewerLifecycle(
      scripted([status("Decimating", true), status("Done")]),
      { onModeChange: (m) => seen.push(m) },
    );
    await lifecycle.poll();
    await lifecycle.poll();
    expect(seen).toEqual(["Preview", "Octree"]);
  });

  it("goes straight to octree when the server is already done", async () => {
    const lifecycle = new ViewerLifecycle(scripted([status("Done")]));
    await lifecycle.poll();
    expect(lifecycle.mode).toBe("Octree");
    expect(lifecycle.previewBytes).toBe(0);
    expect(lifecycle.modeHistory).toEqual(["Connecting", "Octree"]);
  });

  it("backs off while the server is unreachable and recovers", async () => {
    let down = true;
    const lifecycle = new ViewerLifecycle({
      getStatus: async () => {
        if (down) throw new Error("connection refused");
        return status("Indexing", true);
      },
      getDecimated: async () => new ArrayBuffer(16),
    });
    await lifecycle.poll();
    await lifecycle.poll();
    expect(lifecycle.failures).toBe(2);
    expect(lifecycle.nextPollDelay()).toBeGreaterThan(500);
    down = false;
    await lifecycle.poll();
    expect(lifecycle.failures).toBe(0);
    expect(lifecycle.mode).toBe("Preview");
  });
});

describe("node fetcher", () => {
  it("caps in-flight requests at four", async () => {
    let inFlight = 0;
    let peak = 0;
    const gates: Array<() => void> = [];
    const fetcher = new NodeFetcher(
      (name) =>
        new Promise((resolve) => {
          inFlight += 1;
          peak = Math.max(peak, inFlight);
          gates.push(() => {
            inFlight -= 1;
            resolve(new ArrayBuffer(16));
          });
          void name;
        }),
      () => {},
    );
    fetcher.request(["r", "r0", "r1", "r2", "r3", "r4", "r5"]);
    expect(peak).toBe(4);
    while (gates.length) gates.shift()!();
    await new Promise((r) => setTimeout(r, 0));
    expect(fetcher.stats.succeeded).toBeGreaterThan(0);
  });

  it("retries a failing node twice then skips it", async () => {
    let attempts = 0;
    const loaded: string[] = [];
    const fetcher = new NodeFetcher(
      async () => {
        attempts += 1;
        throw new Error("boom");
      },
      (name) => loaded.push(name),
    );
    fetcher.request(["r"]);
    await new Promise((r) => setTimeout(r, 0));
    expect(attempts).toBe(3);
    expect(fetcher.stats.skipped).toBe(1);
    expect(loaded).toEqual([]);
  });
});
