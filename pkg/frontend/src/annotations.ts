import type { WorkbenchApi } from "./api";
import type { Annotation } from "./types";

/** Spans chosen for highlighting: sorted by begin; where spans overlap,
 * the outermost (earliest start, then longest) wins and inner ones are
 * dropped. */
export function highlightSpans(annotations: Annotation[]): Annotation[] {
  const sorted = [...annotations].sort((a, b) => a.begin - b.begin || b.end - b.begin - (a.end - a.begin));
  const chosen: Annotation[] = [];
  let coveredUntil = -1;
  for (const annotation of sorted) {
    if (annotation.begin < coveredUntil) continue; // nested/overlapping: outermost wins
    chosen.push(annotation);
    coveredUntil = annotation.end;
  }
  return chosen;
}

/** Render the source text with <mark> highlights at the annotation
 * character offsets. Clicking a highlight opens a detail pop-up. */
export function renderHighlightedText(container: HTMLElement, text: string, annotations: Annotation[]): void {
  container.textContent = "";
  container.classList.add("annotated-text");
  let cursor = 0;
  for (const annotation of highlightSpans(annotations)) {
    if (annotation.begin > cursor) {
      container.appendChild(document.createTextNode(text.slice(cursor, annotation.begin)));
    }
    const mark = document.createElement("mark");
    mark.className = annotation.negated ? "annotation negated" : "annotation";
    mark.dataset.begin = String(annotation.begin);
    mark.dataset.end = String(annotation.end);
    mark.dataset.type = annotation.annotation_type;
    mark.textContent = text.slice(annotation.begin, annotation.end);
    mark.title = annotation.negated
      ? `${annotation.canonical_term} (verneint durch "${annotation.negation_trigger}")`
      : annotation.canonical_term;
    mark.addEventListener("click", () => showPopup(container, annotation));
    container.appendChild(mark);
    cursor = annotation.end;
  }
  if (cursor < text.length) {
    container.appendChild(document.createTextNode(text.slice(cursor)));
  }
}

function showPopup(container: HTMLElement, annotation: Annotation): void {
  container.querySelector(".annotation-popup")?.remove();
  const popup = document.createElement("div");
  popup.className = "annotation-popup";
  const rows: [string, string][] = [
    ["Typ", annotation.annotation_type],
    ["Kanonisch", annotation.canonical_term],
    ["Code", annotation.code ?? "–"],
    ["Verneint", annotation.negated ? `ja (${annotation.negation_trigger})` : "nein"],
    ["Quelle", annotation.provenance],
  ];
  for (const [key, value] of rows) {
    const row = document.createElement("div");
    row.textContent = `${key}: ${value}`;
    popup.appendChild(row);
  }
  const close = document.createElement("button");
  close.textContent = "schließen";
  close.addEventListener("click", () => popup.remove());
  popup.appendChild(close);
  container.appendChild(popup);
}

export interface TableOptions {
  /** NEW column contents per annotation index: "known" | "new" | "contradiction". */
  recordStatus?: (annotation: Annotation) => string | undefined;
  onFeedback?: (annotation: Annotation) => void;
}

/** Tabbed tables of annotations, grouped by type, with a `correct?`
 * feedback toggle and the NEW column. */
export function renderAnnotationTables(container: HTMLElement, annotations: Annotation[], options: TableOptions = {}): void {
  container.textContent = "";
  container.classList.add("annotation-tables");
  const byType = new Map<string, Annotation[]>();
  for (const annotation of annotations) {
    const list = byType.get(annotation.annotation_type) ?? [];
    list.push(annotation);
    byType.set(annotation.annotation_type, list);
  }
  for (const [type, list] of [...byType.entries()].sort()) {
    const section = document.createElement("section");
    section.dataset.tab = type;
    const heading = document.createElement("h4");
    heading.textContent = `${type} (${list.length})`;
    section.appendChild(heading);
    const table = document.createElement("table");
    const head = document.createElement("tr");
    for (const column of ["Text", "Kanonisch", "Code", "Verneinung", "korrekt?", "NEU"]) {
      const th = document.createElement("th");
      th.textContent = column;
      head.appendChild(th);
    }
    table.appendChild(head);
    for (const annotation of list) {
      const row = document.createElement("tr");
      const cells = [
        annotation.surface,
        annotation.canonical_term,
        annotation.code ?? "",
        annotation.negated ? annotation.negation_trigger ?? "ja" : "",
      ];
      for (const value of cells) {
        const td = document.createElement("td");
        td.textContent = value;
        row.appendChild(td);
      }
      const feedback = document.createElement("td");
      const flag = document.createElement("button");
      flag.className = "feedback";
      flag.textContent = "↓";
      flag.title = "als inkorrekt melden";
      flag.addEventListener("click", () => options.onFeedback?.(annotation));
      feedback.appendChild(flag);
      row.appendChild(feedback);
      const newCell = document.createElement("td");
      newCell.className = "new-column";
      const status = options.recordStatus?.(annotation);
      if (status === "new") {
        newCell.textContent = "+";
        newCell.title = "nicht in der Krankenakte";
      } else if (status === "contradiction") {
        newCell.textContent = "!";
        newCell.title = "widerspricht der Krankenakte";
      }
      row.appendChild(newCell);
      table.appendChild(row);
    }
    section.appendChild(table);
    container.appendChild(section);
  }
}

/** The presentation-and-validation panel: text input, highlighted result,
 * tables, and the dictionary-extension form. */
export class AnnotationView {
  private textContainer: HTMLElement;
  private tablesContainer: HTMLElement;
  private input: HTMLTextAreaElement;
  private versionLabel: HTMLElement;

  constructor(
    container: HTMLElement,
    private api: WorkbenchApi,
  ) {
    container.classList.add("annotation-view");
    this.input = document.createElement("textarea");
    this.input.placeholder = "Text eingeben …";
    container.appendChild(this.input);

    const run = document.createElement("button");
    run.className = "annotate";
    run.textContent = "Annotieren";
    run.addEventListener("click", () => void this.annotate());
    container.appendChild(run);

    this.versionLabel = document.createElement("span");
    this.versionLabel.className = "pipeline-version";
    container.appendChild(this.versionLabel);

    container.appendChild(this.dictionaryForm());

    this.textContainer = document.createElement("div");
    container.appendChild(this.textContainer);
    this.tablesContainer = document.createElement("div");
    container.appendChild(this.tablesContainer);
  }

  private dictionaryForm(): HTMLElement {
    const form = document.createElement("form");
    form.className = "dictionary-add";
    const type = document.createElement("select");
    for (const t of ["diagnosis", "disorder", "examination", "procedure", "medication", "drug", "lab_value"]) {
      const option = document.createElement("option");
      option.value = t;
      option.textContent = t;
      type.appendChild(option);
    }
    const term = document.createElement("input");
    term.placeholder = "Begriff";
    const code = document.createElement("input");
    code.placeholder = "Code (optional)";
    const definition = document.createElement("input");
    definition.placeholder = "Definition (optional)";
    const submit = document.createElement("button");
    submit.textContent = "zum Wörterbuch hinzufügen";
    form.append(type, term, code, definition, submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      if (!term.value) return;
      void this.api
        .addDictionaryEntry(type.value, term.value, code.value || undefined, definition.value || undefined)
        .then(() => this.annotate());
    });
    return form;
  }

  async annotate(): Promise<void> {
    const text = this.input.value;
    const response = await this.api.annotate(text);
    this.versionLabel.textContent = `Pipeline v${response.pipeline_version}`;
    renderHighlightedText(this.textContainer, text, response.annotations);
    renderAnnotationTables(this.tablesContainer, response.annotations, {
      onFeedback: (annotation) => void this.api.sendFeedback(annotation, text.slice(0, 40)),
    });
  }
}
