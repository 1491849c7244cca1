import type { EventFrame, SessionEvent } from "./types.js";

/**
 * Incremental parser for a text/event-stream byte feed. Frames can arrive
 * split across arbitrary chunk boundaries; feed() returns every frame that
 * became complete with the new chunk.
 */
export class SseParser {
  private buffer = "";

  feed(chunk: string): EventFrame[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const frames: EventFrame[] = [];
    let boundary = this.buffer.indexOf("\n\n");
    while (boundary >= 0) {
      const block = this.buffer.slice(0, boundary);
      this.buffer = this.buffer.slice(boundary + 2);
      const frame = parseBlock(block);
      if (frame) {
        frames.push(frame);
      }
      boundary = this.buffer.indexOf("\n\n");
    }
    return frames;
  }
}

function parseBlock(block: string): EventFrame | null {
  let id = -1;
  let event = "";
  const dataLines: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith("id:")) {
      id = Number(line.slice(3).trim());
    } else if (line.startsWith("event:")) {
      event = line.slice(6).trim();
    } else if (line.startsWith("data:")) {
      dataLines.push(line.slice(5).trimStart());
    }
  }
  if (id < 0 || dataLines.length === 0) {
    return null;
  }
  return { id, event, data: JSON.parse(dataLines.join("\n")) as SessionEvent };
}

export interface EventStreamOptions {
  /** Last event index already applied; streaming resumes after it. */
  since: number;
  onFrame: (frame: EventFrame) => void;
  onStateChange?: (state: "live" | "reconnecting" | "closed") => void;
  /** Delay before reconnect attempts, ms. */
  retryDelayMs?: number;
}

/**
 * Follows a session's event stream over fetch streaming, reconnecting from
 * the last delivered index so no frame is ever lost. Duplicate delivery
 * after a reconnect is possible by design; the store dedups by index.
 */
export class EventStream {
  private cursor: number;
  private controller: AbortController | null = null;
  private stopped = false;

  constructor(
    private readonly urlFor: (since: number) => string,
    private readonly options: EventStreamOptions,
  ) {
    this.cursor = options.since;
  }

  start(): void {
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    this.options.onStateChange?.("closed");
  }

  private async run(): Promise<void> {
    const retry = this.options.retryDelayMs ?? 500;
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const response = await fetch(this.urlFor(this.cursor), {
          signal: this.controller.signal,
          headers: { Accept: "text/event-stream" },
        });
        if (!response.ok || !response.body) {
          throw new Error(`event stream failed: ${response.status}`);
        }
        this.options.onStateChange?.("live");
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
            if (frame.id > this.cursor) {
              this.cursor = frame.id;
            }
            this.options.onFrame(frame);
          }
        }
      } catch {
        // fall through to reconnect
      }
      if (this.stopped) break;
      this.options.onStateChange?.("reconnecting");
      await new Promise((resolve) => setTimeout(resolve, retry));
    }
  }
}
