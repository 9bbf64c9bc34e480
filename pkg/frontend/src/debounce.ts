/**
 * Trailing-edge debounce and latest-wins request management.
 *
 * The slider debounce caps request rate during a drag; LatestWins keeps at
 * most one in-flight request per control, aborting the superseded one.
 */

export interface Debounced<A extends unknown[]> {
  (...args: A): void;
  cancel(): void;
  /** true while a call is armed and waiting for the timer */
  readonly pending: boolean;
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): Debounced<A> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const wrapped = (...args: A): void => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, waitMs);
  };
  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
  };
  Object.defineProperty(wrapped, "pending", { get: () => timer !== null });
  return wrapped as Debounced<A>;
}

export class LatestWins {
  private controller: AbortController | null = null;

  /**
   * Run a request, aborting any previous one still in flight. Resolves to
   * undefined when this run was itself superseded or aborted.
   */
  async run<T>(task: (signal: AbortSignal) => Promise<T>): Promise<T | undefined> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      const result = await task(controller.signal);
      return controller.signal.aborted ? undefined : result;
    } catch (err) {
      if (controller.signal.aborted) return undefined;
      throw err;
    } finally {
      if (this.controller === controller) this.controller = null;
    }
  }

  abort(): void {
    this.controller?.abort();
    this.controller = null;
  }
}
