import { ApiClient, ApiError } from "./api.js";
import { StudioController } from "./controller.js";
import { SessionStore, type StoreSnapshot } from "./store.js";
import type { RgbaColor, WorkflowKind } from "./types.js";

export interface StudioAppOptions {
  serverUrl: string;
  /** Show the debug tick control (pair with a --tick-mode manual server). */
  manualTicks?: boolean;
}

const MEASURES = ["ownership", "satisfaction", "usability", "expectation", "explainability", "art"];

/**
 * Framework-free studio UI. All state flows store -> render; all mutations
 * flow DOM handler -> controller -> API, so the server log of a UI session
 * is indistinguishable from a scripted one.
 */
export class StudioApp {
  readonly store = new SessionStore();
  controller: StudioController | null = null;

  private readonly api: ApiClient;
  private selectedLayer: number | null = null;
  private brushColor: RgbaColor = { r: 220, g: 60, b: 40, a: 255 };
  private brushRadius = 4;
  private lastRenderedRevision = -1;

  // Bound during mount().
  private els!: {
    workflowSelect: HTMLSelectElement;
    newSession: HTMLButtonElement;
    sessionLabel: HTMLSpanElement;
    connection: HTMLSpanElement;
    status: HTMLDivElement;
    snapshot: HTMLImageElement;
    overlay: HTMLCanvasElement;
    promptInput: HTMLInputElement;
    promptApply: HTMLButtonElement;
    weightSlider: HTMLInputElement;
    weightValue: HTMLSpanElement;
    generate: HTMLButtonElement;
    parallelStart: HTMLButtonElement;
    parallelStop: HTMLButtonElement;
    tick: HTMLButtonElement;
    clockLabel: HTMLSpanElement;
    gallery: HTMLDivElement;
    layers: HTMLDivElement;
    rateMeasure: HTMLSelectElement;
    rateScore: HTMLSelectElement;
    rateSubmit: HTMLButtonElement;
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly options: StudioAppOptions,
  ) {
    this.api = new ApiClient(options.serverUrl);
  }

  mount(): void {
    this.root.innerHTML = `
      <header class="bar">
        <select data-testid="workflow">
          <option value="W1">W1 - basic turn-taking</option>
          <option value="W2">W2 - iterative turn-taking</option>
          <option value="W3" selected>W3 - parallel hybrid</option>
        </select>
        <button data-testid="new-session">New session</button>
        <span data-testid="session-label" class="session-label"></span>
        <span data-testid="connection" class="connection idle">idle</span>
      </header>
      <div data-testid="status" class="status"></div>
      <main class="grid">
        <section class="canvas-panel">
          <div class="canvas-stack">
            <img data-testid="snapshot" alt="canvas" draggable="false" />
            <canvas data-testid="overlay" class="overlay"></canvas>
          </div>
          <div class="brush-row">
            <label>brush <input data-testid="brush-color" type="color" value="#dc3c28" /></label>
            <label>radius <input data-testid="brush-radius" type="number" min="1" max="32" value="4" /></label>
          </div>
        </section>
        <section class="controls">
          <div class="row">
            <input data-testid="prompt" type="text" placeholder="prompt" />
            <button data-testid="prompt-apply">Set prompt</button>
          </div>
          <div class="row">
            <label>influence
              <input data-testid="weight" type="range" min="0" max="1" step="0.05" />
            </label>
            <span data-testid="weight-value"></span>
          </div>
          <div class="row">
            <button data-testid="generate">Generate</button>
            <button data-testid="parallel-start">Start parallel</button>
            <button data-testid="parallel-stop">Stop parallel</button>
          </div>
          <div class="row tick-row">
            <button data-testid="tick">Tick +cadence</button>
            <span data-testid="clock"></span>
          </div>
          <div class="row rate-row">
            <select data-testid="rate-measure">${MEASURES.map((m) => `<option>${m}</option>`).join("")}</select>
            <select data-testid="rate-score">${[1, 2, 3, 4, 5, 6, 7]
              .map((s) => `<option>${s}</option>`)
              .join("")}</select>
            <button data-testid="rate-submit">Rate</button>
          </div>
          <h3>Layers</h3>
          <div data-testid="layers" class="layers"></div>
        </section>
        <section class="gallery-panel">
          <h3>Candidates</h3>
          <div data-testid="gallery" class="gallery"></div>
        </section>
      </main>
    `;
    this.els = {
      workflowSelect: this.q("workflow"),
      newSession: this.q("new-session"),
      sessionLabel: this.q("session-label"),
      connection: this.q("connection"),
      status: this.q("status"),
      snapshot: this.q("snapshot"),
      overlay: this.q("overlay"),
      promptInput: this.q("prompt"),
      promptApply: this.q("prompt-apply"),
      weightSlider: this.q("weight"),
      weightValue: this.q("weight-value"),
      generate: this.q("generate"),
      parallelStart: this.q("parallel-start"),
      parallelStop: this.q("parallel-stop"),
      tick: this.q("tick"),
      clockLabel: this.q("clock"),
      gallery: this.q("gallery"),
      layers: this.q("layers"),
      rateMeasure: this.q("rate-measure"),
      rateScore: this.q("rate-score"),
      rateSubmit: this.q("rate-submit"),
    };
    this.els.tick.style.display = this.options.manualTicks ? "" : "none";
    this.wire();
    this.store.subscribe((snapshot) => this.render(snapshot));
    this.render(this.store.snapshot);
  }

  private q<T extends HTMLElement>(testId: string): T {
    const el = this.root.querySelector(`[data-testid="${testId}"]`);
    if (!el) throw new Error(`missing element ${testId}`);
    return el as T;
  }

  /** Reconnect to an already-running session (e.g. from a shared link). */
  async attachSession(sessionId: string): Promise<void> {
    this.controller?.disconnect();
    this.controller = await StudioController.attach(this.api, this.store, sessionId);
  }

  private wire(): void {
    this.els.newSession.addEventListener("click", () => {
      void this.guard(async () => {
        this.controller?.disconnect();
        this.controller = await StudioController.create(
          this.api,
          this.store,
          this.els.workflowSelect.value as WorkflowKind,
        );
      });
    });
    this.els.promptApply.addEventListener("click", () => {
      void this.guard(() => this.controller!.setPrompt(this.els.promptInput.value));
    });
    this.els.weightSlider.addEventListener("change", () => {
      void this.guard(() => this.controller!.setWeight(Number(this.els.weightSlider.value)));
    });
    this.els.generate.addEventListener("click", () => {
      void this.guard(() => this.controller!.generate());
    });
    this.els.parallelStart.addEventListener("click", () => {
      void this.guard(() => this.controller!.startParallel());
    });
    this.els.parallelStop.addEventListener("click", () => {
      void this.guard(() => this.controller!.stopParallel());
    });
    this.els.tick.addEventListener("click", () => {
      void this.guard(() => this.controller!.tickOneCadence());
    });
    this.els.rateSubmit.addEventListener("click", () => {
      void this.guard(() =>
        this.controller!.rate(this.els.rateMeasure.value, Number(this.els.rateScore.value)),
      );
    });
    this.q<HTMLInputElement>("brush-color").addEventListener("change", (event) => {
      this.brushColor = hexToRgba((event.target as HTMLInputElement).value);
    });
    this.q<HTMLInputElement>("brush-radius").addEventListener("change", (event) => {
      this.brushRadius = Number((event.target as HTMLInputElement).value) || 1;
    });
    this.els.overlay.addEventListener("mousedown", (event) => {
      void this.paintAt(event as MouseEvent);
    });
  }

  private async paintAt(event: MouseEvent): Promise<void> {
    const snapshot = this.store.snapshot;
    if (!this.controller || snapshot.layers.length === 0) {
      this.setStatus("import a candidate first: strokes need a layer");
      return;
    }
    const target = this.selectedLayer ?? snapshot.layers[snapshot.layers.length - 1].id;
    const rect = this.els.overlay.getBoundingClientRect();
    const scaleX = rect.width > 0 ? snapshot.width / rect.width : 1;
    const scaleY = rect.height > 0 ? snapshot.height / rect.height : 1;
    const x = Math.round((event.clientX - rect.left) * scaleX);
    const y = Math.round((event.clientY - rect.top) * scaleY);
    await this.guard(() => this.controller!.brushStroke(target, x, y, this.brushRadius, this.brushColor));
  }

  private async guard(action: () => Promise<unknown>): Promise<void> {
    try {
      this.setStatus("");
      await action();
    } catch (error) {
      if (error instanceof ApiError) {
        this.setStatus(`${error.code}: ${error.message}`);
      } else {
        this.setStatus(String(error));
      }
    }
  }

  setStatus(text: string): void {
    this.els.status.textContent = text;
  }

  private render(snapshot: StoreSnapshot): void {
    const els = this.els;
    els.sessionLabel.textContent = snapshot.sessionId
      ? `${snapshot.workflow ?? "?"} session ${snapshot.sessionId}`
      : "no session";
    els.connection.textContent = snapshot.connection;
    els.connection.className = `connection ${snapshot.connection}`;

    const haveSession = snapshot.sessionId !== null && this.controller !== null;
    els.promptApply.disabled = !haveSession;
    els.generate.disabled = !haveSession;
    els.weightSlider.disabled = !haveSession || !snapshot.weightEnabled;
    els.weightSlider.title = snapshot.weightEnabled
      ? "how strongly the canvas steers generation"
      : "influence weight is pinned for this workflow";
    els.parallelStart.disabled = !haveSession || !snapshot.parallelEnabled || snapshot.parallelRunning;
    els.parallelStop.disabled = !haveSession || !snapshot.parallelEnabled || !snapshot.parallelRunning;
    if (!snapshot.parallelEnabled && haveSession) {
      els.parallelStart.title = "background generation is a W3 capability";
    }
    els.tick.disabled = !haveSession;
    els.weightSlider.value = String(snapshot.weight);
    els.weightValue.textContent = snapshot.weight.toFixed(2);
    els.clockLabel.textContent = `t=${snapshot.clock}ms`;

    if (haveSession && snapshot.canvasRevision !== this.lastRenderedRevision) {
      this.lastRenderedRevision = snapshot.canvasRevision;
      els.snapshot.src = this.controller!.snapshotUrl();
      els.snapshot.width = snapshot.width;
      els.snapshot.height = snapshot.height;
      els.overlay.width = snapshot.width;
      els.overlay.height = snapshot.height;
    }
    this.drawOverlay(snapshot);
    this.renderGallery(snapshot);
    this.renderLayers(snapshot);
  }

  private drawOverlay(snapshot: StoreSnapshot): void {
    const ctx = this.els.overlay.getContext?.("2d");
    if (!ctx) {
      return; // headless DOM without 2D canvas: server snapshot stays authoritative
    }
    ctx.clearRect(0, 0, this.els.overlay.width, this.els.overlay.height);
    for (const stroke of snapshot.pendingStrokes) {
      ctx.beginPath();
      ctx.fillStyle = `rgba(${stroke.color.r},${stroke.color.g},${stroke.color.b},${stroke.color.a / 255})`;
      ctx.arc(stroke.x, stroke.y, stroke.radius, 0, Math.PI * 2);
      ctx.fill();
    }
  }

  private renderGallery(snapshot: StoreSnapshot): void {
    const gallery = this.els.gallery;
    gallery.innerHTML = "";
    for (const item of snapshot.gallery) {
      const card = document.createElement("div");
      card.className = "candidate";
      card.dataset.candidateId = String(item.id);

      const img = document.createElement("img");
      img.src = item.imageUrl;
      img.alt = `candidate ${item.id}`;
      img.width = 96;
      img.height = 96;

      const badge = document.createElement("span");
      badge.className = `badge ${item.badge}`;
      badge.dataset.testid = "badge";
      badge.textContent = item.badge === "parallel" ? "parallel" : "turn-taking";

      const importButton = document.createElement("button");
      importButton.dataset.testid = "import";
      importButton.textContent = "Import as layer";
      importButton.addEventListener("click", () => {
        void this.guard(() => this.controller!.importCandidate(item.id));
      });

      card.append(img, badge, importButton);
      gallery.appendChild(card);
    }
  }

  private renderLayers(snapshot: StoreSnapshot): void {
    const panel = this.els.layers;
    panel.innerHTML = "";
    for (const layer of [...snapshot.layers].reverse()) {
      const row = document.createElement("div");
      row.className = "layer-row" + (this.selectedLayer === layer.id ? " selected" : "");
      row.dataset.layerId = String(layer.id);

      const pick = document.createElement("button");
      pick.dataset.testid = "layer-pick";
      pick.textContent =
        layer.importedFrom !== null ? `layer ${layer.id} (candidate ${layer.importedFrom})` : `layer ${layer.id}`;
      pick.addEventListener("click", () => {
        this.selectedLayer = layer.id;
        this.render(this.store.snapshot);
      });

      const visible = document.createElement("input");
      visible.type = "checkbox";
      visible.checked = layer.visible;
      visible.addEventListener("change", () => {
        void this.guard(() => this.controller!.setLayerProps(layer.id, { visible: visible.checked }));
      });

      const opacity = document.createElement("input");
      opacity.type = "range";
      opacity.min = "0";
      opacity.max = "1";
      opacity.step = "0.05";
      opacity.value = String(layer.opacity);
      opacity.addEventListener("change", () => {
        void this.guard(() => this.controller!.setLayerProps(layer.id, { opacity: Number(opacity.value) }));
      });

      row.append(pick, visible, opacity);
      panel.appendChild(row);
    }
  }
}

function hexToRgba(hex: string): RgbaColor {
  const value = hex.replace("#", "");
  return {
    r: parseInt(value.slice(0, 2), 16),
    g: parseInt(value.slice(2, 4), 16),
    b: parseInt(value.slice(4, 6), 16),
    a: 255,
  };
}
