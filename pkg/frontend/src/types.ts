// Wire types mirroring the JSON schemas in docs/api/.

export type EndpointKind =
  | "basic_disease"
  | "first_dialysis"
  | "transplantation"
  | "rejection"
  | "failure"
  | "death";

export interface EndpointSelector {
  kind: EndpointKind;
  rule?: "first" | "any" | "nth";
  n?: number;
}

export interface DayWindow {
  lower?: number | null;
  upper?: number | null;
}

export interface Predicate {
  type: "keyword" | "range";
  field: string;
  term?: string;
  terms?: string[];
  lower?: number | null;
  upper?: number | null;
}

export type Restriction =
  | { id: string; type: "keyword"; field: string; term?: string; terms?: string[] }
  | { id: string; type: "range"; field: string; lower?: number | null; upper?: number | null }
  | { id: string; type: "child_group"; kind: string; predicates: Predicate[] }
  | {
      id: string;
      type: "temporal_child";
      kind: string;
      predicates: Predicate[];
      anchor: EndpointSelector;
      window: DayWindow;
    }
  | { id: string; type: "endpoint_relation"; a: EndpointSelector; b: EndpointSelector; window: DayWindow }
  | { id: string; type: "fulltext"; expr: string; field?: string };

export interface PatientProfile {
  patient_id: string;
  sex: string;
  age_years: number;
  deceased: boolean;
  basic_disease: string | null;
  first_dialysis_day: number | null;
  transplant_count: number;
  failure_count: number;
}

export interface SearchResponse {
  total: number;
  patient_profiles: PatientProfile[];
  offset: number;
  limit: number;
  session_id?: string;
}

export interface FacetValue {
  term: string;
  count: number;
  common_to_all: boolean;
}

export interface KeywordFacet {
  kind: "keyword";
  field: string;
  total_remaining_patients: number;
  values: FacetValue[];
  shown_top_k: number;
  mincount: number;
  top_values: string[];
  menu_values: string[];
}

export interface NumericInterval {
  lower: number;
  upper: number;
  count: number;
}

export interface NumericFacet {
  kind: "numeric";
  field: string;
  intervals: NumericInterval[];
}

export type Facet = KeywordFacet | NumericFacet;

export interface FacetsResponse {
  block: string;
  facets: Facet[];
}

export interface FulltextResponse {
  total: number;
  patient_ids: string[];
  matched_docs: Record<string, string[]>;
  highlights: Record<string, [number, number][]>;
}

export interface Annotation {
  annotation_type: string;
  begin: number;
  end: number;
  surface: string;
  canonical_term: string;
  code: string | null;
  negated: boolean;
  negation_trigger: string | null;
  provenance: string;
  confidence: number;
}

export interface AnnotateResponse {
  annotations: Annotation[];
  pipeline_version: number;
}

export interface FocusPoint {
  layer: number | null;
  day: number;
}

export interface FocusRequest {
  align?: "transplants";
  points?: FocusPoint[];
  before?: number;
  after?: number;
}

export interface TimelineFiltersRequest {
  episode_r?: number | null;
  use_focus_range?: boolean;
  significance?: { window_days: number; threshold_pct: number } | null;
}

export interface TimelineRequest {
  patient_id: string;
  selected_types: { tab: "diagnoses" | "labs"; type: string }[];
  focus?: FocusRequest;
  filters?: TimelineFiltersRequest;
  include_baselines?: boolean;
}

export interface SeriesPoint {
  x: number;
  y?: number;
  label?: string;
}

export interface FlaggedPoint {
  x: number;
  y: number;
  deviation_pct: number;
}

export interface TypeSeries {
  type: string;
  kind: "diagnoses" | "labs";
  points: SeriesPoint[];
  baseline?: { x: number; y: number }[];
  flags: FlaggedPoint[];
}

export interface TimelineLayer {
  ordinal: number;
  focus_day: number;
  series: TypeSeries[];
}

export interface TimelineResponse {
  layers: TimelineLayer[];
}

export interface TypeSummary {
  type: string;
  count: number;
  nearest_offset: number | null;
  max_deviation: { deviation_pct: number; day: number } | null;
}

export interface TypesResponse {
  types: TypeSummary[];
  hints: { before: number | null; after: number | null };
}

export interface ResultSetEntry {
  name: string;
  patient_ids: string[];
  restrictions?: unknown[];
  created_at: string;
}
