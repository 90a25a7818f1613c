// Leading + trailing rate limiter: the first call fires immediately,
// calls inside the window are coalesced into one trailing call with the
// latest arguments. Caps a burst of n calls to at most
// 1 + ceil(duration / interval) executions.

export class RateLimiter<A extends unknown[]> {
  private lastRun = -Infinity;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pendingArgs: A | null = null;

  constructor(
    private fn: (...args: A) => void,
    private intervalMs: number,
  ) {}

  schedule(...args: A): void {
    const now = Date.now();
    if (now - this.lastRun >= this.intervalMs && this.timer === null) {
      this.lastRun = now;
      this.fn(...args);
      return;
    }
    this.pendingArgs = args;
    if (this.timer === null) {
      const wait = Math.max(this.intervalMs - (now - this.lastRun), 0);
      this.timer = setTimeout(() => {
        this.timer = null;
        this.lastRun = Date.now();
        const pending = this.pendingArgs;
        this.pendingArgs = null;
        if (pending) this.fn(...pending);
      }, wait);
    }
  }

  cancel(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.pendingArgs = null;
  }
}
