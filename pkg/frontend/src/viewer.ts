/**
 * Side-by-side pane viewer with synchronized pan/zoom.
 *
 * Both panes share one transform: wheel zooms about the cursor, drag pans,
 * and any change re-renders both panes, so the pre and post views always
 * show the same window. Click positions are mapped back into image pixel
 * coordinates before they become query points.
 */

export interface Transform {
  scale: number;
  tx: number;
  ty: number;
}

export type ClickHandler = (x: number, y: number, time: "T0" | "T1") => void;

export interface Marker {
  x: number;
  y: number;
}

export class Pane {
  readonly root: HTMLElement;
  readonly content: HTMLElement;
  readonly baseImg: HTMLImageElement;
  readonly overlayImg: HTMLImageElement;
  private markerLayer: HTMLElement;
  private dragging = false;
  private lastClient: [number, number] = [0, 0];
  private moved = 0;

  constructor(
    doc: Document,
    readonly time: "T0" | "T1",
    private transform: Transform,
    private onTransform: () => void,
    private onClick: ClickHandler,
  ) {
    this.root = doc.createElement("div");
    this.root.className = "pane";
    this.root.dataset.time = time;
    this.content = doc.createElement("div");
    this.content.className = "pane-content";
    this.baseImg = doc.createElement("img");
    this.baseImg.className = "pane-base";
    this.baseImg.draggable = false;
    this.overlayImg = doc.createElement("img");
    this.overlayImg.className = "pane-overlay";
    this.overlayImg.draggable = false;
    this.markerLayer = doc.createElement("div");
    this.markerLayer.className = "pane-markers";
    this.content.append(this.baseImg, this.overlayImg, this.markerLayer);
    this.root.append(this.content);

    this.root.addEventListener("wheel", (e) => this.onWheel(e as WheelEvent));
    this.root.addEventListener("mousedown", (e) => this.onDown(e as MouseEvent));
    this.root.addEventListener("mousemove", (e) => this.onMove(e as MouseEvent));
    this.root.addEventListener("mouseup", (e) => this.onUp(e as MouseEvent));
    this.root.addEventListener("mouseleave", () => (this.dragging = false));
    this.apply();
  }

  /** Map a client-space position to image pixel coordinates. */
  clientToImage(clientX: number, clientY: number): [number, number] {
    const rect = this.content.getBoundingClientRect();
    const x = (clientX - rect.left - this.transform.tx) / this.transform.scale;
    const y = (clientY - rect.top - this.transform.ty) / this.transform.scale;
    return [x, y];
  }

  apply(): void {
    const t = this.transform;
    const css = `translate(${t.tx}px, ${t.ty}px) scale(${t.scale})`;
    for (const el of [this.baseImg, this.overlayImg, this.markerLayer]) {
      el.style.transform = css;
      el.style.transformOrigin = "0 0";
    }
  }

  setMarkers(doc: Document, markers: Marker[]): void {
    this.markerLayer.textContent = "";
    for (const m of markers) {
      const dot = doc.createElement("div");
      dot.className = "query-marker";
      dot.style.left = `${m.x}px`;
      dot.style.top = `${m.y}px`;
      this.markerLayer.append(dot);
    }
  }

  private onWheel(e: WheelEvent): void {
    e.preventDefault();
    const factor = e.deltaY < 0 ? 1.2 : 1 / 1.2;
    const next = Math.min(16, Math.max(0.25, this.transform.scale * factor));
    const rect = this.content.getBoundingClientRect();
    const px = e.clientX - rect.left;
    const py = e.clientY - rect.top;
    // keep the point under the cursor fixed while zooming
    this.transform.tx = px - ((px - this.transform.tx) / this.transform.scale) * next;
    this.transform.ty = py - ((py - this.transform.ty) / this.transform.scale) * next;
    this.transform.scale = next;
    this.onTransform();
  }

  private onDown(e: MouseEvent): void {
    this.dragging = true;
    this.moved = 0;
    this.lastClient = [e.clientX, e.clientY];
  }

  private onMove(e: MouseEvent): void {
    if (!this.dragging) return;
    const dx = e.clientX - this.lastClient[0];
    const dy = e.clientY - this.lastClient[1];
    this.moved += Math.abs(dx) + Math.abs(dy);
    this.lastClient = [e.clientX, e.clientY];
    this.transform.tx += dx;
    this.transform.ty += dy;
    this.onTransform();
  }

  private onUp(e: MouseEvent): void {
    this.dragging = false;
    if (this.moved > 4) return; // a drag, not a click
    const [x, y] = this.clientToImage(e.clientX, e.clientY);
    this.onClick(x, y, this.time);
  }
}

export class PairViewer {
  readonly root: HTMLElement;
  readonly panes: { T0: Pane; T1: Pane };
  readonly transform: Transform = { scale: 1, tx: 0, ty: 0 };

  constructor(doc: Document, onClick: ClickHandler) {
    this.root = doc.createElement("div");
    this.root.className = "pair-viewer";
    const sync = () => {
      this.panes.T0.apply();
      this.panes.T1.apply();
    };
    this.panes = {
      T0: new Pane(doc, "T0", this.transform, sync, onClick),
      T1: new Pane(doc, "T1", this.transform, sync, onClick),
    };
    this.root.append(this.panes.T0.root, this.panes.T1.root);
  }
}
