import type {
  ConnectionState,
  CycleMode,
  EventFrame,
  GalleryItem,
  LayerView,
  PendingStroke,
  WorkflowKind,
} from "./types.js";

export interface StoreSnapshot {
  sessionId: string | null;
  workflow: WorkflowKind | null;
  width: number;
  height: number;
  cadenceMs: number;
  prompt: string;
  weight: number;
  weightEnabled: boolean;
  parallelEnabled: boolean;
  parallelRunning: boolean;
  clock: number;
  gallery: GalleryItem[];
  layers: LayerView[];
  pendingStrokes: PendingStroke[];
  canvasRevision: number;
  connection: ConnectionState;
  lastIndex: number;
}

type Listener = (snapshot: StoreSnapshot) => void;

/**
 * The UI's single source of truth. State is reconstructed purely from the
 * session event stream: frames are applied in index order, duplicates (which
 * at-least-once delivery permits) are dropped, and every mutation of gallery
 * or layer state happens here and nowhere else.
 */
export class SessionStore {
  private state: StoreSnapshot = emptyState();
  private listeners = new Set<Listener>();

  get snapshot(): StoreSnapshot {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  reset(sessionId: string, serverBase: string): void {
    this.state = { ...emptyState(), sessionId };
    this.serverBase = serverBase;
    this.emit();
  }

  private serverBase = "";

  setConnection(connection: ConnectionState): void {
    if (this.state.connection !== connection) {
      this.state = { ...this.state, connection };
      this.emit();
    }
  }

  addPendingStroke(stroke: PendingStroke): void {
    this.state = { ...this.state, pendingStrokes: [...this.state.pendingStrokes, stroke] };
    this.emit();
  }

  /** Apply one stream frame; returns false for duplicates (already applied). */
  applyFrame(frame: EventFrame): boolean {
    if (frame.id <= this.state.lastIndex) {
      return false; // at-least-once delivery: drop replays
    }
    const next = { ...this.state, lastIndex: frame.id };
    const { kind, payload, at } = frame.data;
    switch (kind) {
      case "Create": {
        const config = payload.config as { cadence_ms: number; w3_initial_weight: number };
        next.workflow = payload.workflow as WorkflowKind;
        next.width = payload.width as number;
        next.height = payload.height as number;
        next.cadenceMs = config.cadence_ms;
        next.weightEnabled = next.workflow !== "W1";
        next.parallelEnabled = next.workflow === "W3";
        next.weight = next.workflow === "W3" ? config.w3_initial_weight : 0;
        break;
      }
      case "SetPrompt":
        next.prompt = payload.text as string;
        break;
      case "SetWeight":
        next.weight = payload.value as number;
        break;
      case "Generate":
        break; // completion arrives as CandidateReady
      case "CandidateReady": {
        const id = payload.candidate_id as number;
        const item: GalleryItem = {
          id,
          badge: payload.cycle_mode as CycleMode,
          imageUrl: `${this.serverBase}/candidates/${next.sessionId}-${id}.png`,
          createdAt: at,
          latentDigest: payload.latent_digest as string,
          imageDigest: payload.image_digest as string,
        };
        next.gallery = [...next.gallery, item];
        break;
      }
      case "Import": {
        next.layers = [
          ...next.layers,
          {
            id: payload.layer_id as number,
            opacity: 1,
            visible: true,
            importedFrom: payload.candidate_id as number,
          },
        ];
        next.canvasRevision += 1;
        break;
      }
      case "Edit": {
        const op = payload.op as string;
        if (op === "props") {
          next.layers = next.layers.map((layer) =>
            layer.id === (payload.layer_id as number)
              ? {
                  ...layer,
                  opacity: (payload.opacity as number | null) ?? layer.opacity,
                  visible: (payload.visible as boolean | null) ?? layer.visible,
                }
              : layer,
          );
        } else if (op === "brush") {
          next.pendingStrokes = reconcileStroke(next.pendingStrokes, payload);
        }
        next.canvasRevision += 1;
        break;
      }
      case "StartParallel":
        next.parallelRunning = true;
        break;
      case "StopParallel":
        next.parallelRunning = false;
        break;
      case "Tick":
        next.clock = payload.now_ms as number;
        break;
      case "Rate":
        break;
      default:
        break; // forward compatibility: unknown kinds are ignored
    }
    if (at > next.clock) {
      next.clock = at;
    }
    this.state = next;
    this.emit();
    return true;
  }
}

/** Drop the first optimistic stroke the confirmed edit accounts for. */
function reconcileStroke(pending: PendingStroke[], payload: Record<string, unknown>): PendingStroke[] {
  const index = pending.findIndex(
    (stroke) =>
      stroke.layerId === payload.layer_id &&
      stroke.x === payload.x &&
      stroke.y === payload.y &&
      stroke.radius === payload.radius,
  );
  if (index < 0) {
    return pending;
  }
  return [...pending.slice(0, index), ...pending.slice(index + 1)];
}

function emptyState(): StoreSnapshot {
  return {
    sessionId: null,
    workflow: null,
    width: 0,
    height: 0,
    cadenceMs: 2000,
    prompt: "",
    weight: 0,
    weightEnabled: false,
    parallelEnabled: false,
    parallelRunning: false,
    clock: 0,
    gallery: [],
    layers: [],
    pendingStrokes: [],
    canvasRevision: 0,
    connection: "idle",
    lastIndex: -1,
  };
}
