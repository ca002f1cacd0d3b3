"""HTTP/JSON workbench service.

Thin adapters over the library: every endpoint's response equals the
corresponding library call. Request handlers share immutable snapshots;
re-indexing swaps the snapshot atomically so in-flight queries finish on
the old one. Sessions (current restriction set, open facet blocks) are
server-side and in-memory with a TTL; saved result sets persist as JSON
files under the data directory and survive restarts.
"""

from __future__ import annotations

import datetime as dt
import json
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Header, Query
from fastapi.responses import JSONResponse
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from . import extract, query, timeline
from .datamodel import PatientRecord
from .index import NestedIndex, SchemaError, build_index
from .query import (
    FacetReport,
    Restriction,
    RestrictionParseError,
    evaluate,
    evaluate_mask,
    facet_report,
    free_text_search,
    numeric_interval_report,
    restrictions_from_json,
)

DEFAULT_PORT = 8080
DEFAULT_MINCOUNT = 5
DEFAULT_TOP_K = 4
DEFAULT_PAGE_LIMIT = 20
SESSION_TTL_SECONDS = 3600

# facet blocks shown by the workbench; composition is configuration, not code
DEFAULT_BLOCKS: dict[str, list[str]] = {
    "Stammdaten": ["sex", "deceased", "blood_group", "height_cm", "age_years"],
    "Diagnosen": ["diagnosis.term", "diagnosis.icd10", "diagnosis.therapy_term", "diagnosis.therapy_code"],
    "Labor": ["lab.term", "lab.term_canon", "lab.classification", "lab.numeric_value"],
    "Medikation": ["medication.term"],
    "Untersuchungen": ["examination.method", "examination.birads", "examination.physician"],
    "Endpunkte": ["endpoint.kind"],
}


class Session:
    def __init__(self, session_id: str):
        self.session_id = session_id
        self.restrictions: list[Restriction] = []
        self.raw_restrictions: list[dict] = []
        self.open_blocks: set[str] = set()
        self.last_access = time.monotonic()


class ResultSetStore:
    """Named result sets as JSON files; listing reads the directory, so a
    restarted server sees everything saved before."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, name: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in name)
        return self.directory / f"{safe}.json"

    def save(self, name: str, patient_ids: list[str], restrictions: list[dict]) -> dict:
        with self._lock:
            path = self._path(name)
            if path.exists():
                raise FileExistsError(name)
            entry = {
                "name": name,
                "patient_ids": patient_ids,
                "restrictions": restrictions,
                "created_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            }
            path.write_text(json.dumps(entry, ensure_ascii=False, indent=2), encoding="utf-8")
            return entry

    def list(self) -> list[dict]:
        entries = []
        for path in sorted(self.directory.glob("*.json")):
            entries.append(json.loads(path.read_text(encoding="utf-8")))
        entries.sort(key=lambda e: e["name"])
        return entries


class WorkbenchState:
    """Shared service state: snapshot, pipeline, sessions, stores."""

    def __init__(
        self,
        records: list[PatientRecord],
        index: NestedIndex | None = None,
        pipeline: extract.PipelineConfig | None = None,
        data_dir: str | Path = "data",
        mincount_default: int = DEFAULT_MINCOUNT,
        blocks: dict[str, list[str]] | None = None,
        session_ttl: float = SESSION_TTL_SECONDS,
    ):
        self._lock = threading.Lock()
        self._snapshot = (records, index if index is not None else build_index(records))
        self.pipeline = pipeline if pipeline is not None else extract.default_pipeline_config()
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.mincount_default = mincount_default
        self.blocks = blocks if blocks is not None else DEFAULT_BLOCKS
        self.session_ttl = session_ttl
        self.sessions: dict[str, Session] = {}
        self.resultsets = ResultSetStore(self.data_dir / "resultsets")
        self.feedback = extract.FeedbackLog(self.data_dir / "feedback.jsonl")
        self.user_dict_dir = self.data_dir / "dictionaries" / "user"

    def snapshot(self) -> tuple[list[PatientRecord], NestedIndex]:
        # single attribute read: handlers keep working on the tuple they got
        return self._snapshot

    def swap_snapshot(self, records: list[PatientRecord], index: NestedIndex | None = None) -> None:
        new = (records, index if index is not None else build_index(records))
        with self._lock:
            self._snapshot = new

    def session(self, session_id: str | None) -> Session:
        sid = session_id or "default"
        now = time.monotonic()
        with self._lock:
            expired = [k for k, s in self.sessions.items() if now - s.last_access > self.session_ttl]
            for k in expired:
                del self.sessions[k]
            sess = self.sessions.get(sid)
            if sess is None:
                sess = Session(sid)
                self.sessions[sid] = sess
            sess.last_access = now
            return sess

    def add_user_dictionary_entry(self, annotation_type, term, code, definition) -> int:
        with self._lock:
            new_config = extract.add_user_entry(self.pipeline, annotation_type, term, code, definition)
            extract.append_user_entry_file(self.user_dict_dir, annotation_type, term, code, definition)
            self.pipeline = new_config
            return new_config.version


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message, **extra})


def _record_by_id(state: WorkbenchState, patient_id: str):
    records, index = state.snapshot()
    parent = index.id_to_parent.get(patient_id)
    if parent is None:
        return None, index
    return records[parent], index


def _facet_payload(report: FacetReport) -> dict:
    return {
        "field": report.field,
        "total_remaining_patients": report.total_remaining_patients,
        "values": [
            {"term": v.term, "count": v.count, "common_to_all": v.common_to_all} for v in report.values
        ],
        "shown_top_k": report.shown_top_k,
        "mincount": report.mincount,
        "top_values": [v.term for v in report.top_values],
        "menu_values": [v.term for v in report.menu_values],
    }


def _parse_focus(data: dict, patient: PatientRecord) -> timeline.FocusState:
    before = int(data.get("before", 0))
    after = int(data.get("after", 0))
    if data.get("align") == "transplants" or "points" not in data:
        return timeline.FocusState.at_transplants(patient, before=before, after=after)
    points = tuple((p.get("layer"), int(p["day"])) for p in data["points"])
    return timeline.FocusState(focus_points=points, before=before, after=after)


def _parse_filters(data: dict, patient: PatientRecord) -> timeline.TimelineFilters:
    episodes = None
    if data.get("episode_r") is not None:
        episodes = tuple(timeline.compute_episodes(patient, int(data["episode_r"])))
    significance = None
    if data.get("significance"):
        s = data["significance"]
        significance = timeline.SignificanceParams(
            window_days=int(s.get("window_days", timeline.DEFAULT_BASELINE_WINDOW)),
            threshold_pct=float(s.get("threshold_pct", timeline.DEFAULT_THRESHOLD_PCT)),
        )
    return timeline.TimelineFilters(
        episodes=episodes,
        use_focus_range=bool(data.get("use_focus_range", False)),
        significance=significance,
    )


def create_app(state: WorkbenchState, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="cohortexplorer workbench", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.workbench = state

    @app.post("/api/search")
    def search(
        payload: dict = Body(default={}),
        x_session_id: str | None = Header(default=None),
    ):
        records, index = state.snapshot()
        sess = state.session(x_session_id)
        raw = payload.get("restrictions", [])
        try:
            restrictions = restrictions_from_json(raw)
        except RestrictionParseError as exc:
            return _error(400, str(exc), field=exc.field_path)
        except query.QuerySyntaxError as exc:
            return _error(400, str(exc), field="restrictions")
        try:
            mask = evaluate_mask(index, restrictions)
        except (SchemaError, query.QuerySyntaxError) as exc:
            return _error(400, str(exc), field="restrictions")
        sess.restrictions = restrictions
        sess.raw_restrictions = raw
        offset = max(0, int(payload.get("offset", 0)))
        limit = max(0, int(payload.get("limit", DEFAULT_PAGE_LIMIT)))
        matching = np.flatnonzero(mask)
        profiles = [index.profiles[i] for i in matching[offset : offset + limit]]
        return {
            "total": int(mask.sum()),
            "patient_profiles": profiles,
            "offset": offset,
            "limit": limit,
            "session_id": sess.session_id,
        }

    @app.get("/api/facets")
    def facets(
        block: str,
        top_k: int = Query(default=DEFAULT_TOP_K, ge=0),
        mincount: int | None = Query(default=None, ge=0),
        substring: str | None = None,
        x_session_id: str | None = Header(default=None),
    ):
        if block not in state.blocks:
            return _error(404, f"unknown facet block: {block!r}")
        records, index = state.snapshot()
        sess = state.session(x_session_id)
        sess.open_blocks.add(block)
        mc = state.mincount_default if mincount is None else mincount
        mask = evaluate_mask(index, sess.restrictions)  # one evaluation per block request
        out = []
        for field_key in state.blocks[block]:
            fs = index.field_schema(field_key)
            if fs.value_kind == "keyword" and fs.facetable:
                report = facet_report(
                    index,
                    sess.restrictions,
                    field_key,
                    top_k=top_k,
                    mincount=mc,
                    substring=substring,
                    result_mask=mask,
                )
                out.append({"kind": "keyword", **_facet_payload(report)})
            elif fs.is_numeric and fs.facetable:
                table = index.tables[fs.level]
                col = table.numeric_cols[fs.name]
                present = col[~np.isnan(col)]
                if len(present) == 0:
                    out.append({"kind": "numeric", "field": field_key, "intervals": []})
                    continue
                lo, hi = float(present.min()), float(present.max()) + 1.0
                edges = [lo + (hi - lo) * i / 5 for i in range(6)]
                intervals = numeric_interval_report(index, sess.restrictions, field_key, edges, result_mask=mask)
                out.append(
                    {
                        "kind": "numeric",
                        "field": field_key,
                        "intervals": [
                            {"lower": lo_, "upper": hi_, "count": count} for (lo_, hi_), count in intervals
                        ],
                    }
                )
        return {"block": block, "facets": out}

    @app.post("/api/fulltext")
    def fulltext(payload: dict = Body(...), x_session_id: str | None = Header(default=None)):
        records, index = state.snapshot()
        sess = state.session(x_session_id)
        expr = payload.get("expr", "")
        try:
            result = free_text_search(index, sess.restrictions, expr)
        except query.QuerySyntaxError as exc:
            return _error(400, str(exc), position=exc.position)
        return {
            "total": len(result.result),
            "patient_ids": list(result.result.patient_ids),
            "matched_docs": {pid: list(docs) for pid, docs in result.matched_docs.items()},
            "highlights": {doc_id: [list(span) for span in spans] for doc_id, spans in result.highlights.items()},
        }

    @app.post("/api/annotate")
    def annotate(payload: dict = Body(...)):
        text = payload.get("text", "")
        pipeline = state.pipeline
        annotations = extract.annotate(text, pipeline)
        return {
            "annotations": [a.to_dict() for a in annotations],
            "pipeline_version": pipeline.version,
        }

    @app.post("/api/dictionary", status_code=201)
    def add_dictionary_entry(payload: dict = Body(...)):
        try:
            annotation_type = extract.AnnotationType(payload.get("type", ""))
        except ValueError:
            return _error(400, f"unknown annotation type: {payload.get('type')!r}")
        term = payload.get("term", "")
        if not term:
            return _error(400, "term must be non-empty")
        try:
            version = state.add_user_dictionary_entry(
                annotation_type, term, payload.get("code"), payload.get("definition")
            )
        except extract.DuplicateEntryError as exc:
            return _error(409, str(exc))
        return {"pipeline_version": version}

    @app.post("/api/feedback", status_code=202)
    def feedback(payload: dict = Body(...)):
        entry = state.feedback.record_feedback(
            annotation=payload.get("annotation", {}),
            verdict=payload.get("verdict", "incorrect"),
            context=payload.get("context"),
        )
        return {"logged": True, "timestamp": entry["timestamp"]}

    @app.post("/api/timeline")
    def timeline_series(payload: dict = Body(...)):
        patient_id = payload.get("patient_id", "")
        patient, _ = _record_by_id(state, patient_id)
        if patient is None:
            return _error(404, f"unknown patient: {patient_id!r}")
        selected = [(t.get("tab", "labs"), t.get("type", "")) for t in payload.get("selected_types", [])]
        if not selected:
            return _error(400, "selected_types must be nonempty")
        focus = _parse_focus(payload.get("focus", {}), patient)
        filters = _parse_filters(payload.get("filters", {}), patient)
        series = timeline.build_timeline(
            patient,
            selected,
            focus,
            filters,
            include_baselines=bool(payload.get("include_baselines", False)),
        )
        return series.to_dict()

    @app.get("/api/timeline/types")
    def timeline_types(
        patient_id: str,
        tab: str = "labs",
        episode_r: int | None = None,
        focus_day: int | None = None,
        before: int = 0,
        after: int = 0,
        window_days: int | None = None,
        threshold_pct: float | None = None,
        substring: str | None = None,
    ):
        patient, _ = _record_by_id(state, patient_id)
        if patient is None:
            return _error(404, f"unknown patient: {patient_id!r}")
        episodes = timeline.compute_episodes(patient, episode_r) if episode_r is not None else None
        focus = None
        if focus_day is not None:
            focus = timeline.FocusState.single(focus_day, before=before, after=after)
        elif before or after:
            focus = timeline.FocusState.at_transplants(patient, before=before, after=after)
        sig = None
        if window_days is not None or threshold_pct is not None:
            sig = timeline.SignificanceParams(
                window_days=window_days or timeline.DEFAULT_BASELINE_WINDOW,
                threshold_pct=threshold_pct or timeline.DEFAULT_THRESHOLD_PCT,
            )
        types = timeline.filter_event_types(patient, tab, episodes, focus, sig, substring)
        # hints consider everything except the focus range itself: they tell
        # the user how far to widen it
        hint_candidates = timeline.surviving_events(patient, tab, episodes, None, sig)
        hints = (None, None)
        if focus is not None:
            hints = timeline.nearest_event_hints(patient, focus, hint_candidates)
        return {
            "types": [
                {
                    "type": t.event_type,
                    "count": t.count,
                    "nearest_offset": t.nearest_offset,
                    "max_deviation": (
                        {"deviation_pct": t.max_deviation[0], "day": t.max_deviation[1]} if t.max_deviation else None
                    ),
                }
                for t in types
            ],
            "hints": {"before": hints[0], "after": hints[1]},
        }

    @app.post("/api/resultsets", status_code=201)
    def save_resultset(payload: dict = Body(...), x_session_id: str | None = Header(default=None)):
        name = payload.get("name", "")
        if not name:
            return _error(400, "name must be non-empty")
        records, index = state.snapshot()
        sess = state.session(x_session_id)
        result = evaluate(index, sess.restrictions)
        try:
            entry = state.resultsets.save(name, list(result.patient_ids), sess.raw_restrictions)
        except FileExistsError:
            return _error(409, f"result set {name!r} already exists")
        return entry

    @app.get("/api/resultsets")
    def list_resultsets():
        return {"resultsets": state.resultsets.list()}

    @app.get("/api/health")
    def health():
        records, index = state.snapshot()
        return {"status": "ok", "patients": index.patient_count, "pipeline_version": state.pipeline.version}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="workbench")

    return app
