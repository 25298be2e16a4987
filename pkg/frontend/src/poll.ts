/** Coalesced polling: one in-flight request per endpoint category, a
 * user-adjustable interval with a 500 ms floor, and stale marking after two
 * missed polls. */

export const MIN_INTERVAL_MS = 500;
export const DEFAULT_INTERVAL_MS = 2000;

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;
  intervalMs = DEFAULT_INTERVAL_MS;
  missedPolls = 0;

  constructor(
    private tick: () => Promise<void>,
    private onStale: (missed: number) => void,
  ) {}

  setInterval(ms: number): void {
    this.intervalMs = Math.max(MIN_INTERVAL_MS, ms);
    if (this.timer !== null) {
      this.stop();
      this.start();
    }
  }

  start(): void {
    if (this.timer !== null) return;
    void this.fire();
    this.timer = setInterval(() => void this.fire(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One poll; coalesces if the previous one is still in flight. */
  async fire(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      await this.tick();
      this.missedPolls = 0;
    } catch {
      this.missedPolls += 1;
      this.onStale(this.missedPolls);
    } finally {
      this.inFlight = false;
    }
  }
}
