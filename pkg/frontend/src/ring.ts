/**
 * Fixed-span rolling window of (t, value) samples for the strip charts.
 *
 * Samples outside the span behind the newest time are discarded on push,
 * so memory is bounded by span x frame rate. A reset that rewinds
 * simulation time clears the window instead of plotting backwards.
 */
export class RollingWindow {
  readonly spanS: number;
  ts: number[] = [];
  vs: number[] = [];

  constructor(spanS = 30) {
    this.spanS = spanS;
  }

  push(t: number, v: number): void {
    const n = this.ts.length;
    if (n > 0 && t < this.ts[n - 1]) this.clear();
    if (this.ts.length > 0 && t === this.ts[this.ts.length - 1]) {
      // repeated timestamp (paused heartbeats): replace, don't grow
      this.vs[this.vs.length - 1] = v;
      return;
    }
    this.ts.push(t);
    this.vs.push(v);
    const cutoff = t - this.spanS;
    let drop = 0;
    while (drop < this.ts.length && this.ts[drop] < cutoff) drop += 1;
    if (drop > 0) {
      this.ts.splice(0, drop);
      this.vs.splice(0, drop);
    }
  }

  get length(): number {
    return this.ts.length;
  }

  latest(): number | null {
    return this.vs.length > 0 ? this.vs[this.vs.length - 1] : null;
  }

  clear(): void {
    this.ts.length = 0;
    this.vs.length = 0;
  }
}
