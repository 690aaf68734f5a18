/** Node payload fetching with bounded concurrency and bounded retries.
 *
 * At most 4 requests are in flight at once; a failed fetch is retried
 * twice, then the node is skipped until a later plan asks for it again.
 */

export const MAX_IN_FLIGHT = 4;
export const MAX_ATTEMPTS = 3; // first try + two retries

export interface FetchStats {
  started: number;
  succeeded: number;
  failed: number;
  skipped: number;
}

export class NodeFetcher {
  private inFlight = 0;
  private queue: string[] = [];
  private queued = new Set<string>();
  readonly stats: FetchStats = { started: 0, succeeded: 0, failed: 0, skipped: 0 };

  constructor(
    private readonly fetchNode: (name: string) => Promise<ArrayBuffer>,
    private readonly onLoaded: (name: string, payload: ArrayBuffer) => void,
    private readonly maxInFlight = MAX_IN_FLIGHT,
  ) {}

  get queueLength(): number {
    return this.queue.length + this.inFlight;
  }

  /** Enqueue in plan order; duplicates already queued are ignored. */
  request(names: string[]): void {
    for (const name of names) {
      if (!this.queued.has(name)) {
        this.queued.add(name);
        this.queue.push(name);
      }
    }
    this.pump();
  }

  /** Drop queued (not yet started) fetches for nodes no longer wanted. */
  cancelQueued(names: Iterable<string>): void {
    const drop = new Set(names);
    this.queue = this.queue.filter((n) => {
      if (drop.has(n)) {
        this.queued.delete(n);
        return false;
      }
      return true;
    });
  }

  private pump(): void {
    while (this.inFlight < this.maxInFlight && this.queue.length > 0) {
      const name = this.queue.shift()!;
      this.queued.delete(name);
      this.inFlight += 1;
      this.stats.started += 1;
      void this.run(name);
    }
  }

  private async run(name: string): Promise<void> {
    try {
      for (let attempt = 1; ; attempt++) {
        try {
          const payload = await this.fetchNode(name);
          this.stats.succeeded += 1;
          this.onLoaded(name, payload);
          return;
        } catch (err) {
          this.stats.failed += 1;
          if (attempt >= MAX_ATTEMPTS) {
            this.stats.skipped += 1;
            return;
          }
        }
      }
    } finally {
      this.inFlight -= 1;
      this.pump();
    }
  }
}
