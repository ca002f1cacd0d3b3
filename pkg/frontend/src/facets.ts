import type { WorkbenchApi } from "./api";
import type { Facet, FacetsResponse, FacetValue, KeywordFacet } from "./types";
import { LatestOnly, RestrictionSet } from "./state";

const UMLAUTS: Record<string, string> = { "ä": "ae", "ö": "oe", "ü": "ue", "ß": "ss" };

export function foldText(text: string): string {
  return text.toLowerCase().replace(/[äöüß]/g, (c) => UMLAUTS[c]);
}

/** One facet block: current restrictions as removable chips, the top-k
 * value menu with counts and green OK badges, and the full value list
 * whose substring filtering happens entirely on the client (typing never
 * triggers a request). Counts always come verbatim from the last server
 * response. */
export class FacetBlockView {
  private lastResponse: FacetsResponse | null = null;
  private substrings = new Map<string, string>();
  private guard = new LatestOnly();
  onTotals?: (total: number) => void;

  constructor(
    private container: HTMLElement,
    private block: string,
    private api: WorkbenchApi,
    private restrictions: RestrictionSet,
  ) {
    this.container.classList.add("facet-block");
  }

  async refresh(): Promise<void> {
    const result = await this.guard.run(async () => {
      const search = await this.api.search(this.restrictions.list(), 0, 0);
      const facets = await this.api.facets(this.block);
      return { search, facets };
    });
    if (!result) return; // superseded by a newer refresh
    this.lastResponse = result.facets;
    this.onTotals?.(result.search.total);
    this.render();
  }

  /** Re-render from the cached response (used by the substring filter). */
  private render(): void {
    if (!this.lastResponse) return;
    this.container.textContent = "";
    const title = document.createElement("h3");
    title.textContent = this.block;
    this.container.appendChild(title);
    for (const facet of this.lastResponse.facets) {
      this.container.appendChild(this.renderFacet(facet));
    }
  }

  private renderFacet(facet: Facet): HTMLElement {
    const root = document.createElement("div");
    root.className = "facet";
    root.dataset.field = facet.field;
    const heading = document.createElement("h4");
    heading.textContent = facet.field;
    root.appendChild(heading);

    if (facet.kind === "numeric") {
      const list = document.createElement("ul");
      list.className = "intervals";
      for (const interval of facet.intervals) {
        const item = document.createElement("li");
        item.textContent = `[${interval.lower.toFixed(1)}, ${interval.upper.toFixed(1)}): ${interval.count}`;
        list.appendChild(item);
      }
      root.appendChild(list);
      return root;
    }

    root.appendChild(this.renderChips(facet));
    root.appendChild(this.renderTopValues(facet));
    root.appendChild(this.renderAllValues(facet));
    return root;
  }

  private renderChips(facet: KeywordFacet): HTMLElement {
    const chips = document.createElement("div");
    chips.className = "chips";
    for (const restriction of this.restrictions.forField(facet.field)) {
      const chip = document.createElement("span");
      chip.className = "chip";
      chip.dataset.id = restriction.id;
      const label = document.createElement("b");
      label.textContent =
        "term" in restriction && restriction.term
          ? restriction.term
          : "terms" in restriction && restriction.terms
            ? restriction.terms.join(" | ")
            : restriction.id;
      chip.appendChild(label);
      const remove = document.createElement("button");
      remove.className = "chip-delete";
      remove.textContent = "×";
      remove.title = "Restriktion entfernen";
      remove.addEventListener("click", () => {
        this.restrictions.remove(restriction.id);
        void this.refresh();
      });
      chip.appendChild(remove);
      chips.appendChild(chip);
    }
    return chips;
  }

  private renderTopValues(facet: KeywordFacet): HTMLElement {
    const list = document.createElement("ul");
    list.className = "top-values";
    const byTerm = new Map(facet.values.map((v) => [v.term, v]));
    for (const term of facet.top_values) {
      const value = byTerm.get(term);
      if (value) list.appendChild(this.valueItem(facet, value));
    }
    return list;
  }

  private valueItem(facet: KeywordFacet, value: FacetValue): HTMLElement {
    const item = document.createElement("li");
    item.dataset.term = value.term;
    item.dataset.count = String(value.count);
    const link = document.createElement("a");
    link.className = "value";
    link.textContent = value.term;
    link.href = "#";
    link.addEventListener("click", (event) => {
      event.preventDefault();
      this.restrictions.add({ type: "keyword", field: facet.field, term: value.term });
      void this.refresh();
    });
    item.appendChild(link);
    const count = document.createElement("span");
    count.className = "count";
    count.textContent = String(value.count);
    item.appendChild(count);
    if (value.common_to_all) {
      const badge = document.createElement("span");
      badge.className = "ok-badge";
      badge.textContent = "OK";
      badge.title = "Alle verbleibenden Patienten haben diesen Wert";
      item.appendChild(badge);
    }
    return item;
  }

  private renderAllValues(facet: KeywordFacet): HTMLElement {
    const details = document.createElement("details");
    details.className = "all-values";
    const summary = document.createElement("summary");
    summary.textContent = `alle Werte (${facet.values.length})`;
    details.appendChild(summary);

    const input = document.createElement("input");
    input.className = "substring";
    input.placeholder = "Teilzeichenkette …";
    input.value = this.substrings.get(facet.field) ?? "";
    details.appendChild(input);

    const go = document.createElement("button");
    go.className = "go";
    go.textContent = "Go";
    go.title = "Alle angezeigten Varianten aufnehmen";
    details.appendChild(go);

    const menu = document.createElement("ul");
    menu.className = "menu";
    details.appendChild(menu);

    const fillMenu = () => {
      // pure client-side filtering of the already-delivered full list
      menu.textContent = "";
      for (const value of this.visibleMenuValues(facet)) {
        menu.appendChild(this.valueItem(facet, value));
      }
    };
    fillMenu();

    input.addEventListener("input", () => {
      this.substrings.set(facet.field, input.value);
      fillMenu();
    });
    go.addEventListener("click", () => {
      const terms = this.visibleMenuValues(facet).map((v) => v.term);
      if (!terms.length) return;
      this.restrictions.add({ type: "keyword", field: facet.field, terms });
      void this.refresh();
    });
    return details;
  }

  private visibleMenuValues(facet: KeywordFacet): FacetValue[] {
    const needle = foldText(this.substrings.get(facet.field) ?? "");
    const menuSet = new Set(facet.menu_values);
    const menu = facet.values
      .filter((v) => menuSet.has(v.term))
      .sort((a, b) => foldText(a.term).localeCompare(foldText(b.term)));
    if (!needle) return menu;
    return menu.filter((v) => foldText(v.term).includes(needle));
  }
}
