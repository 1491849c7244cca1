import { ApiClient } from "./api.js";
import { EventStream } from "./sse.js";
import { SessionStore } from "./store.js";
import type { EventFrame, RgbaColor, SessionEvent, WorkflowKind } from "./types.js";

/**
 * Binds one session to one store: loads history, follows the live stream,
 * and exposes the user intents as methods that each issue exactly one API
 * call. The stream handler is the sole writer of gallery and layer state;
 * brush strokes additionally leave an optimistic local echo that the
 * confirming Edit event reconciles.
 */
export class StudioController {
  private stream: EventStream | null = null;

  constructor(
    readonly api: ApiClient,
    readonly store: SessionStore,
    readonly sessionId: string,
  ) {}

  static async create(
    api: ApiClient,
    store: SessionStore,
    workflow: WorkflowKind,
    options: { width?: number; height?: number; seed?: string } = {},
  ): Promise<StudioController> {
    const ref = await api.createSession(workflow, options);
    const controller = new StudioController(api, store, ref.id);
    await controller.connect();
    return controller;
  }

  static async attach(api: ApiClient, store: SessionStore, sessionId: string): Promise<StudioController> {
    const controller = new StudioController(api, store, sessionId);
    await controller.connect();
    return controller;
  }

  /** Load the full log once, then subscribe from the last applied index. */
  async connect(): Promise<void> {
    this.store.reset(this.sessionId, this.api.baseUrl);
    this.store.setConnection("connecting");
    const text = await this.api.logText(this.sessionId);
    for (const frame of framesFromLog(text)) {
      this.store.applyFrame(frame);
    }
    this.stream = new EventStream((since) => this.api.eventsUrl(this.sessionId, since), {
      since: this.store.snapshot.lastIndex,
      onFrame: (frame) => this.store.applyFrame(frame),
      onStateChange: (state) => this.store.setConnection(state),
    });
    this.stream.start();
  }

  disconnect(): void {
    this.stream?.stop();
    this.stream = null;
  }

  setPrompt(text: string): Promise<void> {
    return this.api.setPrompt(this.sessionId, text);
  }

  setWeight(w: number): Promise<void> {
    return this.api.setWeight(this.sessionId, w);
  }

  async generate(): Promise<number> {
    const result = await this.api.generate(this.sessionId);
    return result.candidate_id;
  }

  startParallel(): Promise<void> {
    return this.api.parallelStart(this.sessionId);
  }

  stopParallel(): Promise<void> {
    return this.api.parallelStop(this.sessionId);
  }

  /** Advance the virtual clock by one cadence step (manual-tick servers). */
  tickOneCadence(): Promise<{ new_candidate_ids: number[] }> {
    const { clock, cadenceMs } = this.store.snapshot;
    return this.api.tick(this.sessionId, clock + cadenceMs);
  }

  tick(nowMs: number): Promise<{ new_candidate_ids: number[] }> {
    return this.api.tick(this.sessionId, nowMs);
  }

  async importCandidate(candidateId: number): Promise<number> {
    const result = await this.api.importCandidate(this.sessionId, candidateId);
    return result.layer_id;
  }

  /** Brush with optimistic echo; the Edit event clears it on confirmation. */
  async brushStroke(layerId: number, x: number, y: number, radius: number, color: RgbaColor): Promise<void> {
    this.store.addPendingStroke({ layerId, x, y, radius, color });
    await this.api.brush(this.sessionId, layerId, x, y, radius, color);
  }

  setLayerProps(layerId: number, props: { opacity?: number; visible?: boolean; index?: number }): Promise<void> {
    return this.api.layerProps(this.sessionId, layerId, props);
  }

  rate(measure: string, score: number): Promise<void> {
    return this.api.rate(this.sessionId, measure, score);
  }

  snapshotUrl(): string {
    return this.api.snapshotUrl(this.sessionId, this.store.snapshot.canvasRevision);
  }
}

/** Turn a JSONL log into stream-equivalent frames (id = log index). */
export function framesFromLog(text: string): EventFrame[] {
  const frames: EventFrame[] = [];
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const data = JSON.parse(line) as SessionEvent;
    frames.push({ id: data.index, event: data.kind, data });
  }
  return frames;
}
