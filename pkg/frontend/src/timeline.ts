import type { WorkbenchApi } from "./api";
import type { FocusRequest, TimelineFiltersRequest, TimelineLayer, TimelineResponse, TypeSeries } from "./types";
import { LatestOnly } from "./state";

const SVG_NS = "http://www.w3.org/2000/svg";
const WIDTH = 640;
const HEIGHT = 150;
const PAD = 28;

/** Stacked per-transplantation chart layers, aligned to the focus point.
 * Clicking any event re-aligns the chart to that event's day (a new
 * server request); dragging zooms locally without any request. */
export class TimelineView {
  patientId = "";
  selectedTypes: { tab: "diagnoses" | "labs"; type: string }[] = [];
  focus: FocusRequest = { align: "transplants", before: 0, after: 0 };
  filters: TimelineFiltersRequest = {};
  includeBaselines = false;

  private last: TimelineResponse | null = null;
  private zoom: [number, number] | null = null;
  private guard = new LatestOnly();
  private chart: HTMLElement;
  private hintsBox: HTMLElement;

  constructor(
    container: HTMLElement,
    private api: WorkbenchApi,
  ) {
    container.classList.add("timeline-view");
    this.hintsBox = document.createElement("div");
    this.hintsBox.className = "hints";
    container.appendChild(this.hintsBox);
    this.chart = document.createElement("div");
    this.chart.className = "chart";
    container.appendChild(this.chart);
  }

  async load(): Promise<void> {
    if (!this.patientId || !this.selectedTypes.length) return;
    const response = await this.guard.run(() =>
      this.api.timeline({
        patient_id: this.patientId,
        selected_types: this.selectedTypes,
        focus: this.focus,
        filters: this.filters,
        include_baselines: this.includeBaselines,
      }),
    );
    if (!response) return; // a newer request superseded this one
    this.last = response;
    this.zoom = null;
    this.render();
  }

  /** Re-align to an absolute day: pure recomputation via a new request. */
  realign(day: number): Promise<void> {
    this.focus = { points: [{ layer: null, day }], before: this.focus.before, after: this.focus.after };
    return this.load();
  }

  /** Local zoom; never triggers a request (the engine always returns the
   * full filtered series). */
  zoomTo(range: [number, number] | null): void {
    this.zoom = range;
    this.render();
  }

  async refreshHints(tab: "diagnoses" | "labs", focusDay: number): Promise<void> {
    const response = await this.api.timelineTypes({
      patientId: this.patientId,
      tab,
      focusDay,
      before: this.focus.before,
      after: this.focus.after,
      episodeR: this.filters.episode_r ?? undefined,
      windowDays: this.filters.significance?.window_days,
      thresholdPct: this.filters.significance?.threshold_pct,
    });
    this.hintsBox.textContent = "";
    for (const [side, value] of [
      ["before", response.hints.before],
      ["after", response.hints.after],
    ] as const) {
      const button = document.createElement("button");
      button.className = `hint hint-${side}`;
      button.textContent = value === null ? "–" : String(value);
      button.disabled = value === null;
      button.title = `nächstes Ereignis ${side === "before" ? "davor" : "danach"}`;
      button.addEventListener("click", () => {
        // clicking a hint fills its value into the focus range
        if (value === null) return;
        this.focus = { ...this.focus, [side]: value };
        void this.load();
      });
      this.hintsBox.appendChild(button);
    }
  }

  private domain(layers: TimelineLayer[]): [number, number] {
    if (this.zoom) return this.zoom;
    let lo = Number.POSITIVE_INFINITY;
    let hi = Number.NEGATIVE_INFINITY;
    for (const layer of layers) {
      for (const series of layer.series) {
        for (const p of series.points) {
          lo = Math.min(lo, p.x);
          hi = Math.max(hi, p.x);
        }
      }
    }
    if (!Number.isFinite(lo)) return [-1, 1];
    if (lo === hi) return [lo - 1, hi + 1];
    return [lo, hi];
  }

  private render(): void {
    this.chart.textContent = "";
    if (!this.last) return;
    const [lo, hi] = this.domain(this.last.layers);
    // first transplantation at the bottom: render highest ordinal first
    const ordered = [...this.last.layers].sort((a, b) => b.ordinal - a.ordinal);
    for (const layer of ordered) {
      this.chart.appendChild(this.renderLayer(layer, lo, hi));
    }
  }

  private renderLayer(layer: TimelineLayer, lo: number, hi: number): HTMLElement {
    const wrap = document.createElement("div");
    wrap.className = "layer";
    wrap.dataset.ordinal = String(layer.ordinal);
    const caption = document.createElement("div");
    caption.className = "layer-caption";
    caption.textContent = `Transplantation ${layer.ordinal} (Fokustag ${layer.focus_day})`;
    wrap.appendChild(caption);

    const svg = document.createElementNS(SVG_NS, "svg");
    svg.setAttribute("width", String(WIDTH));
    svg.setAttribute("height", String(HEIGHT));
    const xOf = (x: number) => PAD + ((x - lo) / (hi - lo || 1)) * (WIDTH - 2 * PAD);

    const ys = layer.series.flatMap((s) => s.points.map((p) => p.y).filter((y): y is number => y !== undefined));
    const yMax = ys.length ? Math.max(...ys) : 1;
    const yOf = (y: number) => HEIGHT - PAD - (y / (yMax || 1)) * (HEIGHT - 2 * PAD);

    // focus line at x = 0
    const axis = document.createElementNS(SVG_NS, "line");
    axis.setAttribute("x1", String(xOf(0)));
    axis.setAttribute("x2", String(xOf(0)));
    axis.setAttribute("y1", "0");
    axis.setAttribute("y2", String(HEIGHT));
    axis.setAttribute("class", "focus-line");
    svg.appendChild(axis);

    for (const series of layer.series) {
      this.renderSeries(svg, layer, series, xOf, yOf);
    }

    this.wireZoom(svg, lo, hi);
    wrap.appendChild(svg);
    return wrap;
  }

  private renderSeries(
    svg: SVGSVGElement,
    layer: TimelineLayer,
    series: TypeSeries,
    xOf: (x: number) => number,
    yOf: (y: number) => number,
  ): void {
    const visible = series.points.filter((p) => {
      const [lo, hi] = this.zoom ?? [Number.NEGATIVE_INFINITY, Number.POSITIVE_INFINITY];
      return p.x >= lo && p.x <= hi;
    });
    if (series.kind === "labs") {
      if (series.baseline?.length) {
        const line = document.createElementNS(SVG_NS, "polyline");
        line.setAttribute("points", series.baseline.map((p) => `${xOf(p.x)},${yOf(p.y)}`).join(" "));
        line.setAttribute("class", "baseline");
        svg.appendChild(line);
      }
      if (visible.length > 1) {
        const line = document.createElementNS(SVG_NS, "polyline");
        line.setAttribute(
          "points",
          visible.filter((p) => p.y !== undefined).map((p) => `${xOf(p.x)},${yOf(p.y as number)}`).join(" "),
        );
        line.setAttribute("class", "lab-line");
        svg.appendChild(line);
      }
      const flagged = new Map(series.flags.map((f) => [f.x, f]));
      for (const point of visible) {
        if (point.y === undefined) continue;
        const circle = document.createElementNS(SVG_NS, "circle");
        circle.setAttribute("cx", String(xOf(point.x)));
        circle.setAttribute("cy", String(yOf(point.y)));
        circle.setAttribute("r", "4");
        const flag = flagged.get(point.x);
        circle.setAttribute("class", flag ? "point flag" : "point");
        circle.setAttribute("data-x", String(point.x));
        circle.setAttribute("data-day", String(layer.focus_day + point.x));
        circle.setAttribute("data-type", series.type);
        const title = document.createElementNS(SVG_NS, "title");
        title.textContent = flag
          ? `${series.type}: ${point.y} (${flag.deviation_pct >= 0 ? "+" : ""}${flag.deviation_pct.toFixed(0)}%)`
          : `${series.type}: ${point.y}`;
        circle.appendChild(title);
        circle.addEventListener("click", () => void this.realign(layer.focus_day + point.x));
        svg.appendChild(circle);
      }
    } else {
      for (const point of visible) {
        const marker = document.createElementNS(SVG_NS, "rect");
        marker.setAttribute("x", String(xOf(point.x) - 4));
        marker.setAttribute("y", String(HEIGHT - PAD));
        marker.setAttribute("width", "8");
        marker.setAttribute("height", "8");
        marker.setAttribute("class", "event-marker");
        marker.setAttribute("data-x", String(point.x));
        marker.setAttribute("data-day", String(layer.focus_day + point.x));
        marker.setAttribute("data-type", series.type);
        const title = document.createElementNS(SVG_NS, "title");
        title.textContent = `${point.label ?? series.type} (Tag ${layer.focus_day + point.x})`;
        marker.appendChild(title);
        marker.addEventListener("click", () => void this.realign(layer.focus_day + point.x));
        svg.appendChild(marker);
      }
    }
  }

  private wireZoom(svg: SVGSVGElement, lo: number, hi: number): void {
    let dragStart: number | null = null;
    const toDomain = (px: number) => lo + ((px - PAD) / (WIDTH - 2 * PAD)) * (hi - lo);
    svg.addEventListener("mousedown", (event) => {
      dragStart = (event as MouseEvent).offsetX;
    });
    svg.addEventListener("mouseup", (event) => {
      if (dragStart === null) return;
      const a = toDomain(dragStart);
      const b = toDomain((event as MouseEvent).offsetX);
      dragStart = null;
      if (Math.abs(a - b) < 1) return; // a click, not a drag
      this.zoomTo([Math.min(a, b), Math.max(a, b)]);
    });
    svg.addEventListener("dblclick", () => this.zoomTo(null));
  }
}
