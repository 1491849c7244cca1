export type WorkflowKind = "W1" | "W2" | "W3";
export type CycleMode = "turn_taking" | "parallel";

/** One entry of the server's append-only session log. */
export interface SessionEvent {
  index: number;
  at: number;
  kind: string;
  payload: Record<string, unknown>;
}

/** A server-sent frame: the event name/id plus the full log entry. */
export interface EventFrame {
  id: number;
  event: string;
  data: SessionEvent;
}

export interface SessionRef {
  id: string;
  workflow: WorkflowKind;
  width: number;
  height: number;
}

export interface CandidateMeta {
  id: number;
  created_at: number;
  cycle_mode: CycleMode;
  prompt: string;
  seed: string;
  influence_weight: number;
  conditioned_on_snapshot: boolean;
  latent_digest: string;
  image_digest: string;
  image_url: string;
}

export interface GalleryItem {
  id: number;
  badge: CycleMode;
  imageUrl: string;
  createdAt: number;
  latentDigest: string;
  imageDigest: string;
}

export interface LayerView {
  id: number;
  opacity: number;
  visible: boolean;
  importedFrom: number | null;
}

export interface RgbaColor {
  r: number;
  g: number;
  b: number;
  a: number;
}

export type ConnectionState = "idle" | "connecting" | "live" | "reconnecting" | "closed";

/** A brush stroke drawn locally and not yet confirmed by the event stream. */
export interface PendingStroke {
  layerId: number;
  x: number;
  y: number;
  radius: number;
  color: RgbaColor;
}
