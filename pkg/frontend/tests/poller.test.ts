import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { OFFLINE_BACKOFF_MS, POLL_INTERVAL_MS, Poller } from "../src/poller.js";

describe("poller cadence", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  it("ticks every 2 seconds while healthy", async () => {
    const tick = vi.fn(async () => true);
    const poller = new Poller({ tick });
    poller.start();

    expect(tick).not.toHaveBeenCalled(); // nothing before the first interval
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1);
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS * 3);
    expect(tick).toHaveBeenCalledTimes(4);
    poller.stop();
  });

  it("backs off to 10 seconds while the hub is unreachable", async () => {
    let online = false;
    const tick = vi.fn(async () => online);
    const poller = new Poller({ tick });
    poller.start();

    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1); // failed -> next poll is 10s out

    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1); // 2s later: nothing yet

    await vi.advanceTimersByTimeAsync(OFFLINE_BACKOFF_MS - POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(2); // the 10s backoff fired

    online = true;
    await vi.advanceTimersByTimeAsync(OFFLINE_BACKOFF_MS);
    expect(tick).toHaveBeenCalledTimes(3); // one more backoff tick succeeds

    // recovered: back on the 2s cadence
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(4);
    poller.stop();
  });

  it("treats a throwing tick as offline", async () => {
    const tick = vi.fn(async () => {
      throw new Error("boom");
    });
    const poller = new Poller({ tick });
    poller.start();

    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1);
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1); // backoff in effect
    await vi.advanceTimersByTimeAsync(OFFLINE_BACKOFF_MS);
    expect(tick).toHaveBeenCalledTimes(2);
    poller.stop();
  });

  it("stop() cancels the pending timer", async () => {
    const tick = vi.fn(async () => true);
    const poller = new Poller({ tick });
    poller.start();
    poller.stop();
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS * 10);
    expect(tick).not.toHaveBeenCalled();
    expect(poller.active).toBe(false);
  });

  it("stop() during an in-flight tick suppresses the reschedule", async () => {
    let release: (value: boolean) => void = () => undefined;
    const tick = vi.fn(
      () => new Promise<boolean>((resolve) => {
        release = resolve;
      }),
    );
    const poller = new Poller({ tick });
    poller.start();
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1);

    poller.stop();
    release(true);
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS * 10);
    expect(tick).toHaveBeenCalledTimes(1);
  });

  it("start() is idempotent", async () => {
    const tick = vi.fn(async () => true);
    const poller = new Poller({ tick });
    poller.start();
    poller.start();
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS);
    expect(tick).toHaveBeenCalledTimes(1); // not doubled
    poller.stop();
  });

  it("honours custom intervals", async () => {
    const tick = vi.fn(async () => true);
    const poller = new Poller({ tick, intervalMs: 50, offlineMs: 200 });
    poller.start();
    await vi.advanceTimersByTimeAsync(50);
    expect(tick).toHaveBeenCalledTimes(1);
    poller.stop();
  });
});
