/**
 * Newline-delimited framing helpers.
 *
 * Every protocol frame is a single line of JSON with all strings escaped, so
 * splitting on "\n" is exact. The splitter tolerates frames arriving in
 * arbitrary chunk boundaries; the queue turns pushed lines into pulled
 * promises so a serial request loop can await one reply at a time.
 */

export class LineSplitter {
  private buffer = "";

  constructor(private readonly onLine: (line: string) => void) {}

  push(chunk: string): void {
    this.buffer += chunk;
    let at: number;
    while ((at = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, at);
      this.buffer = this.buffer.slice(at + 1);
      if (line.trim().length > 0) {
        this.onLine(line);
      }
    }
  }
}

export class LineQueue {
  private lines: string[] = [];
  private waiters: Array<(line: string | null) => void> = [];
  private closed = false;

  push(line: string): void {
    const waiter = this.waiters.shift();
    if (waiter) {
      waiter(line);
    } else {
      this.lines.push(line);
    }
  }

  /** Signal end of stream; pending and future takes resolve to null. */
  close(): void {
    this.closed = true;
    for (const waiter of this.waiters.splice(0)) {
      waiter(null);
    }
  }

  take(timeoutMs: number): Promise<string | null> {
    const line = this.lines.shift();
    if (line !== undefined) {
      return Promise.resolve(line);
    }
    if (this.closed) {
      return Promise.resolve(null);
    }
    return new Promise((resolve) => {
      const timer = setTimeout(() => {
        const at = this.waiters.indexOf(wrapped);
        if (at >= 0) {
          this.waiters.splice(at, 1);
        }
        resolve(null);
      }, timeoutMs);
      const wrapped = (value: string | null) => {
        clearTimeout(timer);
        resolve(value);
      };
      this.waiters.push(wrapped);
    });
  }
}
