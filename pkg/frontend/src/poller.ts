/**
 * Session poller with injectable timers so tests can drive it with fake
 * clocks. Polls every `intervalMs` while healthy; when a tick reports the
 * hub unreachable it backs off to `offlineMs` until a tick succeeds again.
 */

export interface PollerTimers {
  setTimeout(fn: () => void, ms: number): unknown;
  clearTimeout(handle: unknown): void;
}

export interface PollerOptions {
  /** Runs one poll; resolve true on success, false when the hub is offline. */
  tick(): Promise<boolean>;
  intervalMs?: number;
  offlineMs?: number;
  timers?: PollerTimers;
}

export const POLL_INTERVAL_MS = 2000;
export const OFFLINE_BACKOFF_MS = 10000;

export class Poller {
  private readonly tick: () => Promise<boolean>;
  private readonly intervalMs: number;
  private readonly offlineMs: number;
  private readonly timers: PollerTimers;
  private handle: unknown = null;
  private running = false;

  constructor(options: PollerOptions) {
    this.tick = options.tick;
    this.intervalMs = options.intervalMs ?? POLL_INTERVAL_MS;
    this.offlineMs = options.offlineMs ?? OFFLINE_BACKOFF_MS;
    this.timers = options.timers ?? globalThis;
  }

  get active(): boolean {
    return this.running;
  }

  start(): void {
    if (this.running) return;
    this.running = true;
    this.schedule(this.intervalMs);
  }

  stop(): void {
    this.running = false;
    if (this.handle !== null) {
      this.timers.clearTimeout(this.handle);
      this.handle = null;
    }
  }

  private schedule(ms: number): void {
    this.handle = this.timers.setTimeout(() => {
      this.handle = null;
      void this.run();
    }, ms);
  }

  private async run(): Promise<void> {
    if (!this.running) return;
    let ok = false;
    try {
      ok = await this.tick();
    } catch {
      ok = false;
    }
    if (!this.running) return; // stop() may have been called mid-tick
    this.schedule(ok ? this.intervalMs : this.offlineMs);
  }
}
