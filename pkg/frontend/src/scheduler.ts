// Debounced preview requests with a single in-flight request at a time.
//
// Every annotation change calls notify(). After a quiet period the current
// serialized annotation is sent, unless it is the one already shown. While a
// request is in flight newer notifications are held back; if the annotation
// changed by the time the response lands, the response is discarded as stale
// and the newest annotation is sent immediately.

export interface SchedulerHooks<R> {
  /** Serialize the current annotation (canonical bytes, used for no-op detection). */
  snapshot(): string;
  send(serialized: string): Promise<R>;
  apply(result: R, serialized: string): void;
  onError(error: unknown): void;
}

type TimerHandle = ReturnType<typeof setTimeout>;

export class PreviewScheduler<R> {
  private timer: TimerHandle | null = null;
  private inFlight = false;
  private applied: string | null = null;

  constructor(
    private readonly hooks: SchedulerHooks<R>,
    readonly debounceMs = 150,
  ) {}

  /** Call on every annotation change. */
  notify(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.flush();
    }, this.debounceMs);
  }

  /** Bypass the debounce (initial render after session creation). */
  flushNow(): Promise<void> {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    return this.flush();
  }

  private async flush(): Promise<void> {
    if (this.inFlight) return; // the completion handler re-checks freshness
    const serialized = this.hooks.snapshot();
    if (serialized === this.applied) return; // nothing changed: no request
    this.inFlight = true;
    let failed = false;
    try {
      const result = await this.hooks.send(serialized);
      if (this.hooks.snapshot() === serialized) {
        this.applied = serialized;
        this.hooks.apply(result, serialized);
      }
      // else: the annotation moved while this request was in flight; the
      // response is stale and is dropped without being applied.
    } catch (error) {
      failed = true; // surfaced to the UI; the next user input retries
      this.hooks.onError(error);
    } finally {
      this.inFlight = false;
    }
    if (!failed && this.hooks.snapshot() !== this.applied) {
      void this.flush(); // superseded: send the newest annotation right away
    }
  }

  /** Forget the applied annotation (e.g. after a new session). */
  reset(): void {
    this.applied = null;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }
}
