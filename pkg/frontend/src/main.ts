/** Application wiring: poll the build, show the preview, stream nodes.
 *
 * Lifecycle: Connecting -> Preview (as soon as the decimated cloud is
 * ready) -> Octree (once the build is Done; the preview buffer is
 * released). In Octree mode every camera rest re-plans and reconciles
 * GPU buffers against the new plan.
 */
import { ServiceClient } from "./api.js";
import { CameraState } from "./camera.js";
import { NodeFetcher } from "./fetcher.js";
import { Hierarchy, parseHierarchy } from "./hierarchy.js";
import { center, norm, size } from "./math.js";
import { Plan, PlanConfig, planTraversal } from "./planner.js";
import { CameraControls, PointRenderer } from "./render.js";
import { Mode, ViewerLifecycle } from "./status.js";

const PREVIEW_NAME = "__preview__";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export class ViewerApp {
  private readonly client: ServiceClient;
  private readonly canvas = el<HTMLCanvasElement>("view");
  private renderer: PointRenderer | null = null;
  private controls: CameraControls | null = null;
  private hierarchy: Hierarchy | null = null;
  private fetcher: NodeFetcher | null = null;
  private lifecycle: ViewerLifecycle;
  private plan: Plan | null = null;
  private tickId = 0;
  private frames = 0;
  private fps = 0;

  constructor(baseUrl: string) {
    this.client = new ServiceClient(baseUrl);
    this.lifecycle = new ViewerLifecycle(this.client, {
      onModeChange: (mode) => void this.onMode(mode),
      onProgress: (status) => {
        el("phase").textContent = `${status.phase} ${(status.progress * 100).toFixed(0)}%`;
        el("banner").hidden = true;
      },
      onPreview: (points) => this.renderer?.upload(PREVIEW_NAME, points),
      onError: () => {
        el("banner").hidden = false;
      },
    });
  }

  async start(): Promise<void> {
    const schedule = async () => {
      await this.lifecycle.poll();
      if (this.lifecycle.mode !== "Octree" || this.lifecycle.failures > 0) {
        setTimeout(schedule, this.lifecycle.nextPollDelay());
      }
    };
    await schedule();
    setInterval(() => {
      this.fps = this.frames;
      this.frames = 0;
    }, 1000);
    const loop = () => {
      this.drawFrame();
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
  }

  private budget(): PlanConfig {
    const slider = el<HTMLInputElement>("budget");
    return { pointBudget: Math.max(1, Number(slider.value)), minProjectedPixels: 2.0 };
  }

  private async onMode(mode: Mode): Promise<void> {
    el("mode").textContent = mode;
    if (mode === "Preview") {
      // /metadata only exists after Done, so the preview renders with
      // the default millimeter quantization until the octree arrives.
      this.ensureRenderer([0.001, 0.001, 0.001], [0, 0, 0]);
      return;
    }
    if (mode === "Octree") {
      const meta = await this.client.getMetadata();
      const h = parseHierarchy(meta, await this.client.getHierarchy());
      this.hierarchy = h;
      this.ensureRenderer(meta.scale, meta.offset);
      this.renderer!.release(PREVIEW_NAME); // preview discarded for good
      this.fetcher = new NodeFetcher(
        (name) => this.client.getNode(name),
        (name, payload) => {
          this.renderer!.upload(name, payload);
          this.refreshPlanSets();
        },
      );
      const c = center(h.rootBounds);
      this.controls = new CameraControls(
        c,
        norm(size(h.rootBounds)) * 1.2,
        this.canvas,
        (cam) => this.replan(cam),
      );
      this.replan(this.controls.camera());
    }
  }

  private ensureRenderer(scale: [number, number, number], offset: [number, number, number]): void {
    if (!this.renderer) {
      this.renderer = new PointRenderer(this.canvas, scale, offset);
    } else {
      this.renderer.setQuantization(scale, offset);
    }
  }

  private replan(cam: CameraState): void {
    if (!this.hierarchy || !this.renderer || !this.fetcher) return;
    const resident = new Set(
      this.renderer.residentNames().filter((n) => n !== PREVIEW_NAME),
    );
    const plan = planTraversal(this.hierarchy, resident, cam, this.budget(), this.tickId++);
    // eviction only between frames: defer buffer release to the frame loop
    this.plan = plan;
    this.fetcher.cancelQueued(plan.unloadList);
    this.fetcher.request(plan.loadList);
  }

  private refreshPlanSets(): void {
    if (this.controls) this.replan(this.controls.camera());
  }

  private drawFrame(): void {
    if (!this.renderer) return;
    let drawn = 0;
    if (this.lifecycle.mode === "Preview") {
      drawn = this.controls
        ? this.renderer.draw(this.controls.camera(), [PREVIEW_NAME])
        : this.renderer.residentPoints([PREVIEW_NAME]);
    } else if (this.plan && this.controls) {
      for (const name of this.plan.unloadList) this.renderer.release(name);
      drawn = this.renderer.draw(this.controls.camera(), this.plan.renderSet);
    }
    this.frames += 1;
    el("stats").textContent =
      `${drawn.toLocaleString()} pts | ` +
      `${this.renderer.residentNames().length} nodes | ` +
      `queue ${this.fetcher?.queueLength ?? 0} | ` +
      `preview ${this.lifecycle.previewBytes} B | ${this.fps} fps`;
  }
}

declare global {
  interface Window {
    viewerApp?: ViewerApp;
  }
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  const base = new URLSearchParams(location.search).get("server") ?? "http://127.0.0.1:8080";
  window.viewerApp = new ViewerApp(base);
  void window.viewerApp.start();
}
