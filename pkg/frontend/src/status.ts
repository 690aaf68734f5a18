/** Build-status polling and the Preview -> Octree lifecycle.
 *
 * The session draws the decimated preview as soon as the server reports
 * it ready, then switches to octree streaming exactly once when the
 * build reaches Done — at which point the preview buffer is discarded
 * and its resident byte count drops to zero. No page reload is involved;
 * the switch is a state transition inside the running session.
 */

export type Phase =
  | "Idle"
  | "Decimating"
  | "Chunking"
  | "Indexing"
  | "Stitching"
  | "Done"
  | "Failed";

export interface StatusDoc {
  phase: Phase;
  progress: number;
  decimatedReady: boolean;
  message: string | null;
  startedAt: number;
  updatedAt: number;
}

export type Mode = "Connecting" | "Preview" | "Octree";

export interface StatusApi {
  getStatus(): Promise<StatusDoc>;
  getDecimated(): Promise<ArrayBuffer>;
}

export interface LifecycleEvents {
  onModeChange?(mode: Mode): void;
  onProgress?(status: StatusDoc): void;
  onPreview?(points: ArrayBuffer): void;
  onError?(err: unknown): void;
}

export const POLL_INTERVAL_MS = 500;

export class ViewerLifecycle {
  mode: Mode = "Connecting";
  lastStatus: StatusDoc | null = null;
  /** retained preview points; null once the octree takes over */
  previewBuffer: ArrayBuffer | null = null;
  /** consecutive failed polls, drives retry backoff */
  failures = 0;
  readonly modeHistory: Mode[] = ["Connecting"];

  constructor(
    private readonly api: StatusApi,
    private readonly events: LifecycleEvents = {},
  ) {}

  get previewBytes(): number {
    return this.previewBuffer ? this.previewBuffer.byteLength : 0;
  }

  /** Delay before the next poll: 500 ms normally, backoff on failures. */
  nextPollDelay(): number {
    if (this.failures === 0) return POLL_INTERVAL_MS;
    return Math.min(POLL_INTERVAL_MS * 2 ** this.failures, 8000);
  }

  private setMode(mode: Mode): void {
    if (this.mode === mode) return;
    if (this.mode === "Octree") {
      throw new Error("mode may not leave Octree within a session");
    }
    this.mode = mode;
    this.modeHistory.push(mode);
    this.events.onModeChange?.(mode);
  }

  /** One poll step; callers schedule the next with nextPollDelay(). */
  async poll(): Promise<StatusDoc | null> {
    let status: StatusDoc;
    try {
      status = await this.api.getStatus();
      this.failures = 0;
    } catch (err) {
      this.failures += 1;
      this.events.onError?.(err);
      return null;
    }
    this.lastStatus = status;
    this.events.onProgress?.(status);

    if (status.phase === "Done") {
      if (this.mode !== "Octree") {
        // "the decimated cloud is discarded and the octree rendered in its place"
        this.previewBuffer = null;
        this.setMode("Octree");
      }
      return status;
    }
    if (status.decimatedReady && this.mode === "Connecting") {
      try {
        const preview = await this.api.getDecimated();
        this.previewBuffer = preview;
        this.setMode("Preview");
        this.events.onPreview?.(preview);
      } catch (err) {
        this.events.onError?.(err);
      }
    }
    return status;
  }
}
