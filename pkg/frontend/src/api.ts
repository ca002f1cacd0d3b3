import type {
  AnnotateResponse,
  FacetsResponse,
  FulltextResponse,
  Restriction,
  ResultSetEntry,
  SearchResponse,
  TimelineRequest,
  TimelineResponse,
  TypesResponse,
} from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public fieldPath?: string,
  ) {
    super(message);
  }
}

/** Thin typed client over the workbench JSON API. All truth lives on the
 * server; this class never computes counts of its own. */
export class WorkbenchApi {
  constructor(
    private fetchFn: FetchLike,
    private baseUrl = "",
    public sessionId = "workbench",
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: {
        "Content-Type": "application/json",
        "X-Session-Id": this.sessionId,
      },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, payload.error ?? response.statusText, payload.field);
    }
    return payload as T;
  }

  search(restrictions: Restriction[], offset = 0, limit = 20): Promise<SearchResponse> {
    return this.request("POST", "/api/search", { restrictions, offset, limit });
  }

  facets(block: string, opts: { topK?: number; mincount?: number } = {}): Promise<FacetsResponse> {
    const params = new URLSearchParams({ block });
    if (opts.topK !== undefined) params.set("top_k", String(opts.topK));
    if (opts.mincount !== undefined) params.set("mincount", String(opts.mincount));
    return this.request("GET", `/api/facets?${params}`);
  }

  fulltext(expr: string): Promise<FulltextResponse> {
    return this.request("POST", "/api/fulltext", { expr });
  }

  annotate(text: string): Promise<AnnotateResponse> {
    return this.request("POST", "/api/annotate", { text });
  }

  addDictionaryEntry(type: string, term: string, code?: string, definition?: string): Promise<{ pipeline_version: number }> {
    return this.request("POST", "/api/dictionary", { type, term, code, definition });
  }

  sendFeedback(annotation: unknown, context?: string): Promise<{ logged: boolean }> {
    return this.request("POST", "/api/feedback", { annotation, verdict: "incorrect", context });
  }

  timeline(req: TimelineRequest): Promise<TimelineResponse> {
    return this.request("POST", "/api/timeline", req);
  }

  timelineTypes(params: {
    patientId: string;
    tab: "diagnoses" | "labs";
    episodeR?: number;
    focusDay?: number;
    before?: number;
    after?: number;
    windowDays?: number;
    thresholdPct?: number;
    substring?: string;
  }): Promise<TypesResponse> {
    const qs = new URLSearchParams({ patient_id: params.patientId, tab: params.tab });
    if (params.episodeR !== undefined) qs.set("episode_r", String(params.episodeR));
    if (params.focusDay !== undefined) qs.set("focus_day", String(params.focusDay));
    if (params.before !== undefined) qs.set("before", String(params.before));
    if (params.after !== undefined) qs.set("after", String(params.after));
    if (params.windowDays !== undefined) qs.set("window_days", String(params.windowDays));
    if (params.thresholdPct !== undefined) qs.set("threshold_pct", String(params.thresholdPct));
    if (params.substring) qs.set("substring", params.substring);
    return this.request("GET", `/api/timeline/types?${qs}`);
  }

  saveResultSet(name: string): Promise<ResultSetEntry> {
    return this.request("POST", "/api/resultsets", { name });
  }

  listResultSets(): Promise<{ resultsets: ResultSetEntry[] }> {
    return this.request("GET", "/api/resultsets");
  }
}
