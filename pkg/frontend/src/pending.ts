/** Latest-wins request gate: at most one job in flight; while one runs the
 * newest submission waits and any older waiter is dropped. */
export class RequestGate<T> {
  private inFlight = false;
  private queued: (() => Promise<T>) | null = null;

  constructor(
    private onResult: (result: T) => void,
    private onError: (error: unknown) => void,
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  submit(job: () => Promise<T>): void {
    if (this.inFlight) {
      this.queued = job; // replaces any older queued job
      return;
    }
    void this.run(job);
  }

  private async run(job: () => Promise<T>): Promise<void> {
    this.inFlight = true;
    try {
      const result = await job();
      this.onResult(result);
    } catch (error) {
      this.onError(error);
    } finally {
      this.inFlight = false;
      if (this.queued) {
        const next = this.queued;
        this.queued = null;
        void this.run(next);
      }
    }
  }
}
