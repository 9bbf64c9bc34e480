/**
 * Application wiring: controls, server interaction, rendering.
 *
 * All mask sets shown are verbatim server responses; the slider is
 * debounced to stay under the request-rate budget, and each control keeps
 * at most one request in flight (latest wins).
 */

import { ApiError, ChangeProposalDto, EngineClient } from "./api.js";
import { Debounced, LatestWins, debounce } from "./debounce.js";
import {
  Mode,
  OverlayLayer,
  ViewState,
  addPoint,
  initialState,
  selectionParams,
  setAngle,
  setK,
  setLayer,
  setMode,
  setSemanticAngle,
  undoPoint,
  withSession,
} from "./state.js";
import { PairViewer } from "./viewer.js";

const SLIDER_DEBOUNCE_MS = 250; // <= 4 requests/s during a drag

export class App {
  state: ViewState = initialState();
  /** last change list received from the server, verbatim */
  lastChanges: ChangeProposalDto[] = [];
  lastError = "";

  private doc: Document;
  private viewer: PairViewer;
  private changesRequest = new LatestWins();
  private sliderDebounced: Debounced<[]>;
  private inFlight = 0;

  readonly controls: {
    manifest: HTMLInputElement;
    load: HTMLButtonElement;
    mode: HTMLSelectElement;
    angle: HTMLInputElement;
    angleLabel: HTMLElement;
    k: HTMLInputElement;
    semanticAngle: HTMLInputElement;
    layer: HTMLSelectElement;
    undo: HTMLButtonElement;
    count: HTMLElement;
    error: HTMLElement;
  };

  constructor(root: HTMLElement, private client: EngineClient) {
    this.doc = root.ownerDocument;
    const d = this.doc;

    const toolbar = d.createElement("div");
    toolbar.className = "toolbar";
    const make = <T extends HTMLElement>(tag: string, cls: string): T => {
      const el = d.createElement(tag) as T;
      el.className = cls;
      toolbar.append(el);
      return el;
    };
    this.controls = {
      manifest: make<HTMLInputElement>("input", "ctl-manifest"),
      load: make<HTMLButtonElement>("button", "ctl-load"),
      mode: make<HTMLSelectElement>("select", "ctl-mode"),
      angle: make<HTMLInputElement>("input", "ctl-angle"),
      angleLabel: make<HTMLElement>("span", "ctl-angle-label"),
      k: make<HTMLInputElement>("input", "ctl-k"),
      semanticAngle: make<HTMLInputElement>("input", "ctl-semantic"),
      layer: make<HTMLSelectElement>("select", "ctl-layer"),
      undo: make<HTMLButtonElement>("button", "ctl-undo"),
      count: make<HTMLElement>("span", "ctl-count"),
      error: make<HTMLElement>("div", "ctl-error"),
    };
    const c = this.controls;
    c.manifest.placeholder = "manifest path (relative to --session-dir)";
    c.load.textContent = "Load pair";
    for (const m of ["auto", "threshold", "topk", "query"]) {
      const opt = d.createElement("option");
      opt.value = m;
      opt.textContent = m;
      c.mode.append(opt);
    }
    c.angle.type = "range";
    c.angle.min = "0";
    c.angle.max = "180";
    c.angle.step = "1";
    c.angle.value = String(this.state.angleDeg);
    c.k.type = "number";
    c.k.min = "1";
    c.k.value = String(this.state.k);
    c.semanticAngle.type = "number";
    c.semanticAngle.min = "0";
    c.semanticAngle.max = "180";
    c.semanticAngle.value = String(this.state.semanticAngleDeg);
    for (const l of ["changes", "proposals", "latent"]) {
      const opt = d.createElement("option");
      opt.value = l;
      opt.textContent = l;
      c.layer.append(opt);
    }
    c.undo.textContent = "Undo last point";
    c.count.textContent = "no session";

    this.viewer = new PairViewer(d, (x, y, t) => void this.clickAt(x, y, t));
    root.append(toolbar, this.viewer.root);

    this.sliderDebounced = debounce(() => void this.refresh(), SLIDER_DEBOUNCE_MS);
    c.load.addEventListener("click", () => void this.loadSession(c.manifest.value));
    c.mode.addEventListener("change", () => {
      this.state = setMode(this.state, c.mode.value as Mode);
      this.renderMarkers();
      void this.refresh();
    });
    c.angle.addEventListener("input", () => {
      this.state = setAngle(this.state, Number(c.angle.value));
      c.angleLabel.textContent = `${this.state.angleDeg}°`;
      this.sliderDebounced();
    });
    c.k.addEventListener("change", () => {
      this.state = setK(this.state, Number(c.k.value));
      void this.refresh();
    });
    c.semanticAngle.addEventListener("change", () => {
      this.state = setSemanticAngle(this.state, Number(c.semanticAngle.value));
      if (this.state.mode === "query") void this.refresh();
    });
    c.layer.addEventListener("change", () => {
      this.state = setLayer(this.state, c.layer.value as OverlayLayer);
      void this.refresh();
    });
    c.undo.addEventListener("click", () => {
      this.state = undoPoint(this.state);
      this.renderMarkers();
      void this.refresh();
    });
  }

  async loadSession(manifestPath: string): Promise<void> {
    await this.track(async () => {
      try {
        const info = await this.client.createSession(manifestPath);
        this.state = withSession(this.state, info.session_id, info.image_size);
        this.lastError = "";
        this.controls.count.textContent = `${info.n_t} + ${info.n_t1} proposals`;
        this.renderMarkers();
      } catch (err) {
        this.showError(err);
        return;
      }
      await this.refreshNow();
    });
  }

  /** A click on either pane: accumulate the point and re-query. */
  async clickAt(x: number, y: number, time: "T0" | "T1"): Promise<void> {
    if (this.state.sessionId === null) return;
    if (this.state.mode !== "query") {
      // clicking outside query mode switches into it, starting fresh
      this.state = setMode(this.state, "query");
      this.controls.mode.value = "query";
    }
    this.state = addPoint(this.state, { x, y, t: time });
    this.renderMarkers();
    await this.track(() => this.refreshNow());
  }

  /** Debounce-aware refresh used by event handlers. */
  refresh(): Promise<void> {
    return this.track(() => this.refreshNow());
  }

  private async refreshNow(): Promise<void> {
    const sid = this.state.sessionId;
    if (sid === null) return;
    if (this.state.overlayLayer === "latent") {
      this.viewer.panes.T0.overlayImg.src = this.client.latentUrl(sid, "T0");
      this.viewer.panes.T1.overlayImg.src = this.client.latentUrl(sid, "T1");
      return;
    }
    try {
      const selection = selectionParams(this.state);
      const changes = await this.changesRequest.run((signal) => {
        if (this.state.overlayLayer === "proposals") {
          // angle 0 selects every candidate, i.e. every raw proposal
          return this.client.getChanges(sid, { mode: "threshold", angle: 0 }, signal);
        }
        if (this.state.mode === "query" && this.state.queryPoints.length > 0) {
          return this.client.postQuery(
            sid, this.state.queryPoints, this.state.semanticAngleDeg, selection, signal,
          );
        }
        return this.client.getChanges(sid, selection, signal);
      });
      if (changes === undefined) return; // superseded by a newer request
      this.lastChanges = changes;
      this.lastError = "";
      this.renderChanges();
    } catch (err) {
      this.showError(err);
    }
  }

  private renderChanges(): void {
    const sid = this.state.sessionId;
    if (sid === null) return;
    const noun = this.state.overlayLayer === "proposals" ? "proposals" : "changes";
    this.controls.count.textContent = `${this.lastChanges.length} ${noun}`;
    this.controls.error.textContent = "";
    for (const time of ["T0", "T1"] as const) {
      const ids = this.lastChanges.filter((c) => c.source_time === time).map((c) => c.id);
      this.viewer.panes[time].overlayImg.src = this.client.overlayUrl(sid, time, ids);
      this.viewer.panes[time].baseImg.src = this.client.overlayUrl(sid, time, []);
    }
  }

  private renderMarkers(): void {
    for (const time of ["T0", "T1"] as const) {
      const markers = this.state.queryPoints.filter((p) => p.t === time);
      this.viewer.panes[time].setMarkers(this.doc, markers.map((p) => ({ x: p.x, y: p.y })));
    }
  }

  private showError(err: unknown): void {
    this.lastError = err instanceof ApiError ? err.detail : String(err);
    this.controls.error.textContent = this.lastError;
  }

  private async track(taskFn: () => Promise<void>): Promise<void> {
    this.inFlight += 1;
    try {
      await taskFn();
    } finally {
      this.inFlight -= 1;
    }
  }

  /** Resolves once no debounce is armed and no request is in flight. */
  async settled(): Promise<void> {
    for (;;) {
      if (!this.sliderDebounced.pending && this.inFlight === 0) return;
      await new Promise((resolve) => setTimeout(resolve, 25));
    }
  }
}

export function createApp(root: HTMLElement, client: EngineClient): App {
  return new App(root, client);
}
