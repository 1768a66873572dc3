// Fixed-interval polling used by the provisioning wizard and dashboards.
// The interval is 2000 ms; each tick awaits the previous fetch so slow
// responses never stack up.

export const POLL_INTERVAL_MS = 2000;

export interface Poller {
  stop(): void;
}

type Scheduler = (fn: () => void, ms: number) => ReturnType<typeof setTimeout>;

export function startPolling(
  tick: () => Promise<boolean>,
  schedule: Scheduler = setTimeout,
  intervalMs: number = POLL_INTERVAL_MS,
): Poller {
  let stopped = false;
  let handle: ReturnType<typeof setTimeout> | null = null;

  const run = async (): Promise<void> => {
    if (stopped) return;
    let keepGoing = true;
    try {
      keepGoing = await tick();
    } catch {
      // A transient fetch failure should not kill the poll loop.
    }
    if (!stopped && keepGoing) {
      handle = schedule(() => void run(), intervalMs);
    }
  };

  void run();
  return {
    stop() {
      stopped = true;
      if (handle !== null) clearTimeout(handle);
    },
  };
}
