import { WorkbenchApi } from "./api";
import { AnnotationView } from "./annotations";
import { FacetBlockView } from "./facets";
import { RestrictionSet } from "./state";
import { TimelineView } from "./timeline";
import type { PatientProfile } from "./types";

const BLOCKS = ["Stammdaten", "Diagnosen", "Labor", "Medikation", "Untersuchungen", "Endpunkte"];

/** Wire the whole workbench into a page. */
export function mountWorkbench(root: HTMLElement, api: WorkbenchApi): void {
  root.innerHTML = `
    <header><h1>Kohorten-Workbench</h1></header>
    <main>
      <aside id="facet-column"></aside>
      <section id="result-column">
        <div id="result-actions">
          <input id="fulltext-input" placeholder="Freitextsuche (AND/OR/NOT, * ?) …" />
          <button id="fulltext-go">Suchen</button>
          <input id="save-name" placeholder="Name der Kohorte" />
          <button id="save-resultset">speichern</button>
          <span id="result-total"></span>
        </div>
        <ol id="profiles"></ol>
      </section>
      <section id="annotation-column"></section>
      <section id="timeline-column"></section>
    </main>
  `;

  const restrictions = new RestrictionSet();
  const facetColumn = root.querySelector<HTMLElement>("#facet-column")!;
  const profiles = root.querySelector<HTMLOListElement>("#profiles")!;
  const total = root.querySelector<HTMLElement>("#result-total")!;
  const timeline = new TimelineView(root.querySelector<HTMLElement>("#timeline-column")!, api);
  new AnnotationView(root.querySelector<HTMLElement>("#annotation-column")!, api);

  const blockViews = BLOCKS.map((name) => {
    const mount = document.createElement("div");
    facetColumn.appendChild(mount);
    return new FacetBlockView(mount, name, api, restrictions);
  });

  async function refreshResults(): Promise<void> {
    const response = await api.search(restrictions.list(), 0, 20);
    total.textContent = `${response.total} Patienten`;
    profiles.textContent = "";
    for (const profile of response.patient_profiles) {
      profiles.appendChild(renderProfile(profile));
    }
  }

  function renderProfile(profile: PatientProfile): HTMLElement {
    const item = document.createElement("li");
    item.className = "profile";
    const label =
      `${profile.patient_id} · ${profile.sex}, ${profile.age_years} J · ` +
      `${profile.basic_disease ?? "?"} · Transplantationen: ${profile.transplant_count}` +
      (profile.failure_count ? ` (Versagen: ${profile.failure_count})` : "");
    const link = document.createElement("a");
    link.href = "#";
    link.textContent = label;
    link.addEventListener("click", (event) => {
      event.preventDefault();
      timeline.patientId = profile.patient_id;
      timeline.selectedTypes = [{ tab: "labs", type: "CRPHP (mg/l)" }];
      void timeline.load();
    });
    item.appendChild(link);
    return item;
  }

  for (const view of blockViews) {
    view.onTotals = () => void refreshResults();
  }

  root.querySelector("#fulltext-go")!.addEventListener("click", () => {
    const expr = root.querySelector<HTMLInputElement>("#fulltext-input")!.value;
    if (!expr) return;
    restrictions.add({ type: "fulltext", expr });
    void Promise.all(blockViews.map((v) => v.refresh())).then(() => refreshResults());
  });
  root.querySelector("#save-resultset")!.addEventListener("click", () => {
    const name = root.querySelector<HTMLInputElement>("#save-name")!.value;
    if (name) void api.saveResultSet(name);
  });

  void Promise.all(blockViews.map((v) => v.refresh())).then(() => refreshResults());
}

declare global {
  interface Window {
    __workbenchMounted?: boolean;
  }
}

if (typeof document !== "undefined" && document.getElementById("app") && !window.__workbenchMounted) {
  window.__workbenchMounted = true;
  mountWorkbench(document.getElementById("app")!, new WorkbenchApi((input, init) => fetch(input, init)));
}
