"""Immutable nested-document index over a patient snapshot.

Layout follows the classic block-join arrangement: every patient's child
events occupy contiguous slots, grouped by kind and ordered by day, with
the parent slot directly after its children. Keyword fields get sorted
term dictionaries with slot postings and precomputed unique-parent
counts; numeric fields are dense per-row columns (absent values are NaN,
so any range predicate is false on them); full-text fields get token
postings with positions.

The index is immutable after build and freely shared by concurrent
readers. Builds are deterministic: two builds from the same snapshot are
content-equal (verified via content_digest).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import PatientRecord, days_since_epoch, fold_text, normalize_term
from .ingest import record_from_dict, record_to_json_line

log = logging.getLogger(__name__)

CHILD_KINDS = ("diagnosis", "lab", "medication", "examination", "endpoint", "document")
PATIENT_LEVEL = "patient"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

SNAPSHOT_MAGIC = "#cohortexplorer-snapshot"
SNAPSHOT_FORMAT = 1


class IndexBuildError(ValueError):
    pass


class SchemaError(KeyError):
    pass


class SnapshotIntegrityError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldSchema:
    name: str
    level: str  # "patient" or a child kind
    value_kind: str  # keyword | numeric | date_day | fulltext
    facetable: bool = False

    @property
    def key(self) -> str:
        return self.name if self.level == PATIENT_LEVEL else f"{self.level}.{self.name}"

    @property
    def is_numeric(self) -> bool:
        return self.value_kind in ("numeric", "date_day")


def _bool_str(value) -> str | None:
    if value is None:
        return None
    return "true" if value else "false"


def _age_years(record: PatientRecord, ctx: dict) -> float:
    return float(int((ctx["reference_day"] - record.birth_day) / 365.25))


# (level, name) -> getter(obj, ctx) returning a raw keyword string / float / token text
_GETTERS = {
    ("patient", "sex"): lambda r, ctx: r.sex.value,
    ("patient", "deceased"): lambda r, ctx: _bool_str(r.deceased),
    ("patient", "blood_group"): lambda r, ctx: r.blood_group.value,
    ("patient", "height_cm"): lambda r, ctx: r.height_cm,
    ("patient", "birth_day"): lambda r, ctx: float(r.birth_day),
    ("patient", "last_contact_day"): lambda r, ctx: (
        float(ctx["days"](r.last_contact)) if r.last_contact is not None else None
    ),
    ("patient", "age_years"): _age_years,
    ("diagnosis", "term"): lambda d, ctx: d.term,
    ("diagnosis", "icd10"): lambda d, ctx: d.icd10,
    ("diagnosis", "therapy_term"): lambda d, ctx: d.therapy_term,
    ("diagnosis", "therapy_code"): lambda d, ctx: d.therapy_code,
    ("diagnosis", "day"): lambda d, ctx: float(d.day),
    ("diagnosis", "provenance"): lambda d, ctx: d.provenance.value,
    ("lab", "term"): lambda l, ctx: l.term,
    ("lab", "term_canon"): lambda l, ctx: l.term_canon,
    ("lab", "day"): lambda l, ctx: float(l.day),
    ("lab", "numeric_value"): lambda l, ctx: l.numeric_value,
    ("lab", "text_value"): lambda l, ctx: l.text_value,
    ("lab", "classification"): lambda l, ctx: l.classification.value if l.classification else None,
    ("lab", "provenance"): lambda l, ctx: l.provenance.value,
    ("medication", "term"): lambda m, ctx: m.term,
    ("medication", "day"): lambda m, ctx: float(m.day),
    ("medication", "provenance"): lambda m, ctx: m.provenance.value,
    ("examination", "method"): lambda e, ctx: e.method.value,
    ("examination", "day"): lambda e, ctx: float(e.day),
    ("examination", "physician"): lambda e, ctx: e.physician,
    ("examination", "birads"): lambda e, ctx: e.birads,
    ("endpoint", "kind"): lambda e, ctx: e.kind.value,
    ("endpoint", "day"): lambda e, ctx: float(e.day),
    ("endpoint", "ordinal"): lambda e, ctx: float(e.ordinal),
    ("document", "doc_type"): lambda t, ctx: t.doc_type.value,
    ("document", "day"): lambda t, ctx: float(t.day) if t.day is not None else None,
    ("document", "body"): lambda t, ctx: t.body,
}

DEFAULT_SCHEMA: tuple[FieldSchema, ...] = (
    FieldSchema("sex", "patient", "keyword", facetable=True),
    FieldSchema("deceased", "patient", "keyword", facetable=True),
    FieldSchema("blood_group", "patient", "keyword", facetable=True),
    FieldSchema("height_cm", "patient", "numeric", facetable=True),
    FieldSchema("birth_day", "patient", "date_day"),
    FieldSchema("last_contact_day", "patient", "date_day", facetable=True),
    FieldSchema("age_years", "patient", "numeric", facetable=True),
    FieldSchema("term", "diagnosis", "keyword", facetable=True),
    FieldSchema("icd10", "diagnosis", "keyword", facetable=True),
    FieldSchema("therapy_term", "diagnosis", "keyword", facetable=True),
    FieldSchema("therapy_code", "diagnosis", "keyword", facetable=True),
    FieldSchema("day", "diagnosis", "date_day"),
    FieldSchema("provenance", "diagnosis", "keyword", facetable=True),
    FieldSchema("term", "lab", "keyword", facetable=True),
    FieldSchema("term_canon", "lab", "keyword", facetable=True),
    FieldSchema("day", "lab", "date_day"),
    FieldSchema("numeric_value", "lab", "numeric", facetable=True),
    FieldSchema("text_value", "lab", "keyword"),
    FieldSchema("classification", "lab", "keyword", facetable=True),
    FieldSchema("provenance", "lab", "keyword", facetable=True),
    FieldSchema("term", "medication", "keyword", facetable=True),
    FieldSchema("day", "medication", "date_day"),
    FieldSchema("provenance", "medication", "keyword", facetable=True),
    FieldSchema("method", "examination", "keyword", facetable=True),
    FieldSchema("day", "examination", "date_day"),
    FieldSchema("physician", "examination", "keyword", facetable=True),
    FieldSchema("birads", "examination", "keyword", facetable=True),
    FieldSchema("kind", "endpoint", "keyword", facetable=True),
    FieldSchema("day", "endpoint", "date_day"),
    FieldSchema("ordinal", "endpoint", "numeric"),
    FieldSchema("doc_type", "document", "keyword", facetable=True),
    FieldSchema("day", "document", "date_day"),
    FieldSchema("body", "document", "fulltext"),
)


def tokenize_fulltext(body: str) -> list[tuple[str, int]]:
    """Lowercased, umlaut-folded word tokens split on non-letters/digits,
    with token-ordinal positions."""
    return [(fold_text(m.group()), i) for i, m in enumerate(_TOKEN_RE.finditer(body))]


def tokenize_with_offsets(body: str) -> list[tuple[str, int, int, int]]:
    """Like tokenize_fulltext but also carrying character offsets into the
    original (unfolded) text, for highlighting."""
    return [(fold_text(m.group()), i, m.start(), m.end()) for i, m in enumerate(_TOKEN_RE.finditer(body))]


@dataclass
class TermDict:
    terms: list[str]  # sorted by (normalized form, raw term)
    norms: list[str]
    term_to_id: dict[str, int]
    postings: list[np.ndarray]  # per term id: sorted slot array
    unique_parents: np.ndarray  # per term id: distinct parents over the whole index

    def lookup(self, term: str) -> int | None:
        return self.term_to_id.get(term)


@dataclass
class KindTable:
    kind: str
    slots: np.ndarray  # global slot per row
    parent: np.ndarray  # parent ordinal per row (non-decreasing)
    row_start: np.ndarray  # CSR offsets per parent, length P+1
    keyword_cols: dict[str, np.ndarray] = field(default_factory=dict)  # int32 term ids, -1 = absent
    numeric_cols: dict[str, np.ndarray] = field(default_factory=dict)  # float64, NaN = absent

    def rows_of_parent(self, parent_ordinal: int) -> slice:
        return slice(int(self.row_start[parent_ordinal]), int(self.row_start[parent_ordinal + 1]))


@dataclass
class NestedIndex:
    patient_ids: list[str]
    id_to_parent: dict[str, int]
    slot_count: int
    parent_slots: np.ndarray  # slot of each parent ordinal
    parent_bitmap: np.ndarray  # bool per slot
    slot_parent: np.ndarray  # parent ordinal per slot
    tables: dict[str, KindTable]
    term_dicts: dict[str, TermDict]
    text_postings: dict[str, dict[str, list[tuple[int, np.ndarray]]]]  # field -> token -> [(slot, positions)]
    text_vocab: dict[str, list[str]]  # field -> sorted token list
    doc_ids: list[str]  # per document row
    doc_bodies: list[str]
    schema: dict[str, FieldSchema]
    child_counts: dict[str, int]
    reference_day: int
    profiles: list[dict]

    @property
    def patient_count(self) -> int:
        return len(self.patient_ids)

    def field_schema(self, key: str) -> FieldSchema:
        try:
            return self.schema[key]
        except KeyError:
            raise SchemaError(f"unknown field: {key!r}") from None

    def child_block(self, parent_ordinal: int, kind: str) -> tuple[int, int]:
        """Contiguous (start_slot, end_slot) of a parent's children of one
        kind; empty block when the patient has none."""
        table = self.tables[kind]
        rows = table.rows_of_parent(parent_ordinal)
        if rows.start == rows.stop:
            return (0, 0)
        return (int(table.slots[rows.start]), int(table.slots[rows.stop - 1]) + 1)

    def term_posting_slots(self, field_key: str, term: str) -> np.ndarray:
        td = self.term_dicts[field_key]
        tid = td.lookup(term)
        if tid is None:
            return np.empty(0, dtype=np.int64)
        return td.postings[tid]

    def content_digest(self) -> str:
        """SHA-256 over the full index content in a fixed layout; equal
        digests mean content-equal indexes (bit-exact across platforms)."""
        h = hashlib.sha256()

        def put(text: str):
            h.update(text.encode("utf-8"))
            h.update(b"\x00")

        def put_arr(arr: np.ndarray):
            if arr.dtype.kind == "f":
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            elif arr.dtype.kind == "b":
                h.update(np.ascontiguousarray(arr, dtype="<i1").tobytes())
            else:
                h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
            h.update(b"\x01")

        put(f"format={SNAPSHOT_FORMAT};patients={self.patient_count};slots={self.slot_count};ref={self.reference_day}")
        for pid in self.patient_ids:
            put(pid)
        put_arr(self.parent_slots)
        put_arr(self.parent_bitmap)
        put_arr(self.slot_parent)
        for kind in sorted(self.tables):
            table = self.tables[kind]
            put(f"table:{kind}")
            put_arr(table.slots)
            put_arr(table.parent)
            put_arr(table.row_start)
            for name in sorted(table.keyword_cols):
                put(f"kw:{name}")
                put_arr(table.keyword_cols[name])
            for name in sorted(table.numeric_cols):
                put(f"num:{name}")
                put_arr(table.numeric_cols[name])
        for key in sorted(self.term_dicts):
            td = self.term_dicts[key]
            put(f"dict:{key}")
            for term in td.terms:
                put(term)
            put_arr(td.unique_parents)
            for posting in td.postings:
                put_arr(posting)
        for key in sorted(self.text_postings):
            put(f"text:{key}")
            for token in self.text_vocab[key]:
                put(token)
                for slot, positions in self.text_postings[key][token]:
                    put(str(slot))
                    put_arr(positions)
        for profile in self.profiles:
            put(json.dumps(profile, sort_keys=True, ensure_ascii=False))
        return "sha256:" + h.hexdigest()


def _sorted_children(record: PatientRecord, kind: str):
    if kind == "diagnosis":
        return sorted(record.diagnoses, key=lambda d: d.day)
    if kind == "lab":
        return sorted(record.labs, key=lambda l: l.day)
    if kind == "medication":
        return sorted(record.medications, key=lambda m: m.day)
    if kind == "examination":
        return sorted(record.examinations, key=lambda e: e.day)
    if kind == "endpoint":
        return sorted(record.endpoints, key=lambda e: (e.day, e.kind.value, e.ordinal))
    if kind == "document":
        return sorted(record.documents, key=lambda d: (d.day is None, d.day if d.day is not None else 0, d.doc_id))
    raise KeyError(kind)


def _build_term_dict(raw_values: list[str | None], slots: np.ndarray, parent: np.ndarray) -> tuple[TermDict, np.ndarray]:
    """Vocabulary + postings for one keyword field; also returns the dense
    per-row term-id column (-1 where absent)."""
    distinct = sorted({v for v in raw_values if v is not None}, key=lambda t: (normalize_term(t), t))
    term_to_id = {t: i for i, t in enumerate(distinct)}
    col = np.fromiter(
        (term_to_id[v] if v is not None else -1 for v in raw_values), dtype=np.int32, count=len(raw_values)
    )
    n_terms = len(distinct)
    postings: list[np.ndarray] = []
    unique_parents = np.zeros(n_terms, dtype=np.int64)
    if n_terms:
        order = np.argsort(col, kind="stable")
        sorted_ids = col[order]
        first = np.searchsorted(sorted_ids, np.arange(n_terms), side="left")
        last = np.searchsorted(sorted_ids, np.arange(n_terms), side="right")
        for tid in range(n_terms):
            rows = order[first[tid] : last[tid]]
            postings.append(np.sort(slots[rows]).astype(np.int64))
            unique_parents[tid] = len(np.unique(parent[rows]))
    td = TermDict(
        terms=distinct,
        norms=[normalize_term(t) for t in distinct],
        term_to_id=term_to_id,
        postings=postings,
        unique_parents=unique_parents,
    )
    return td, col


def _profile(record: PatientRecord, ctx: dict) -> dict:
    first_dialysis = next(
        (e.day for e in record.endpoints if e.kind.value == "first_dialysis" and e.ordinal == 1), None
    )
    transplant_count = sum(1 for e in record.endpoints if e.kind.value == "transplantation")
    failure_count = sum(1 for e in record.endpoints if e.kind.value == "failure")
    basic = min(record.diagnoses, key=lambda d: (d.day, d.term), default=None)
    return {
        "patient_id": record.patient_id,
        "sex": record.sex.value,
        "age_years": int((ctx["reference_day"] - record.birth_day) / 365.25),
        "deceased": record.deceased,
        "basic_disease": basic.term if basic else None,
        "first_dialysis_day": first_dialysis,
        "transplant_count": transplant_count,
        "failure_count": failure_count,
    }


def build_index(
    snapshot: list[PatientRecord],
    schema: tuple[FieldSchema, ...] = DEFAULT_SCHEMA,
    reference_day: int | None = None,
) -> NestedIndex:
    """Build the immutable index. Slot count is Σ(1 + children) over all
    patients; duplicate patient ids abort the build; schema entries with
    no known accessor are skipped and logged."""
    seen = set()
    for record in snapshot:
        if record.patient_id in seen:
            raise IndexBuildError(f"duplicate patient_id: {record.patient_id}")
        seen.add(record.patient_id)

    if reference_day is None:
        reference_day = 0
        for record in snapshot:
            for kind in CHILD_KINDS:
                for child in _sorted_children(record, kind):
                    day = getattr(child, "day", None)
                    if day is not None and day > reference_day:
                        reference_day = day

    ctx = {"reference_day": reference_day, "days": days_since_epoch}

    by_level: dict[str, list[FieldSchema]] = {}
    schema_map: dict[str, FieldSchema] = {}
    for fs in schema:
        if (fs.level, fs.name) not in _GETTERS:
            log.warning("no accessor for schema field %s.%s; skipping", fs.level, fs.name)
            continue
        by_level.setdefault(fs.level, []).append(fs)
        schema_map[fs.key] = fs

    P = len(snapshot)
    patient_ids = [r.patient_id for r in snapshot]
    kinds = list(CHILD_KINDS)

    # slot assignment: children (grouped by kind, day order), then the parent
    slot = 0
    parent_slots = np.zeros(P, dtype=np.int64)
    raw_cols: dict[str, dict[str, list]] = {level: {fs.name: [] for fs in fields} for level, fields in by_level.items()}
    table_slots: dict[str, list[int]] = {k: [] for k in kinds + [PATIENT_LEVEL]}
    table_parent: dict[str, list[int]] = {k: [] for k in kinds + [PATIENT_LEVEL]}
    row_counts: dict[str, np.ndarray] = {k: np.zeros(P + 1, dtype=np.int64) for k in kinds + [PATIENT_LEVEL]}
    doc_ids: list[str] = []
    doc_bodies: list[str] = []
    fulltext_fields = [fs for fs in schema_map.values() if fs.value_kind == "fulltext"]
    fulltext_raw: dict[str, list[str]] = {fs.key: [] for fs in fulltext_fields}
    profiles = []

    for p, record in enumerate(snapshot):
        for kind in kinds:
            children = _sorted_children(record, kind)
            row_counts[kind][p + 1] = len(children)
            fields = by_level.get(kind, [])
            for child in children:
                table_slots[kind].append(slot)
                table_parent[kind].append(p)
                for fs in fields:
                    if fs.value_kind == "fulltext":
                        fulltext_raw[fs.key].append(_GETTERS[(fs.level, fs.name)](child, ctx))
                    else:
                        raw_cols[kind][fs.name].append(_GETTERS[(fs.level, fs.name)](child, ctx))
                if kind == "document":
                    doc_ids.append(child.doc_id)
                    doc_bodies.append(child.body)
                slot += 1
        parent_slots[p] = slot
        table_slots[PATIENT_LEVEL].append(slot)
        table_parent[PATIENT_LEVEL].append(p)
        row_counts[PATIENT_LEVEL][p + 1] = 1
        for fs in by_level.get(PATIENT_LEVEL, []):
            raw_cols[PATIENT_LEVEL][fs.name].append(_GETTERS[(fs.level, fs.name)](record, ctx))
        profiles.append(_profile(record, ctx))
        slot += 1

    slot_count = slot
    parent_bitmap = np.zeros(slot_count, dtype=bool)
    parent_bitmap[parent_slots] = True
    slot_parent = np.zeros(slot_count, dtype=np.int32)
    prev = 0
    for p in range(P):
        slot_parent[prev : parent_slots[p] + 1] = p
        prev = parent_slots[p] + 1

    tables: dict[str, KindTable] = {}
    term_dicts: dict[str, TermDict] = {}
    for level in kinds + [PATIENT_LEVEL]:
        slots_arr = np.asarray(table_slots[level], dtype=np.int64)
        parent_arr = np.asarray(table_parent[level], dtype=np.int32)
        table = KindTable(
            kind=level,
            slots=slots_arr,
            parent=parent_arr,
            row_start=np.cumsum(row_counts[level]),
        )
        for fs in by_level.get(level, []):
            if fs.value_kind == "fulltext":
                continue
            values = raw_cols[level][fs.name]
            if fs.is_numeric:
                col = np.fromiter(
                    (float(v) if v is not None else np.nan for v in values), dtype=np.float64, count=len(values)
                )
                table.numeric_cols[fs.name] = col
            else:
                td, col = _build_term_dict(values, slots_arr, parent_arr)
                term_dicts[fs.key] = td
                table.keyword_cols[fs.name] = col
        tables[level] = table

    text_postings: dict[str, dict[str, list[tuple[int, np.ndarray]]]] = {}
    text_vocab: dict[str, list[str]] = {}
    for fs in fulltext_fields:
        table = tables[fs.level]
        postings: dict[str, list[tuple[int, np.ndarray]]] = {}
        for row, body in enumerate(fulltext_raw[fs.key]):
            by_token: dict[str, list[int]] = {}
            for token, pos in tokenize_fulltext(body):
                by_token.setdefault(token, []).append(pos)
            slot_of_row = int(table.slots[row])
            for token in sorted(by_token):
                postings.setdefault(token, []).append((slot_of_row, np.asarray(by_token[token], dtype=np.int64)))
        text_postings[fs.key] = postings
        text_vocab[fs.key] = sorted(postings)

    child_counts = {kind: len(table_slots[kind]) for kind in kinds}
    return NestedIndex(
        patient_ids=patient_ids,
        id_to_parent={pid: i for i, pid in enumerate(patient_ids)},
        slot_count=slot_count,
        parent_slots=parent_slots,
        parent_bitmap=parent_bitmap,
        slot_parent=slot_parent,
        tables=tables,
        term_dicts=term_dicts,
        text_postings=text_postings,
        text_vocab=text_vocab,
        doc_ids=doc_ids,
        doc_bodies=doc_bodies,
        schema=schema_map,
        child_counts=child_counts,
        reference_day=reference_day,
        profiles=profiles,
    )


def term_lookup(index: NestedIndex, field_key: str, substring: str) -> list[tuple[str, int]]:
    """Alphabetical (term, unique-parent-count) list for a facetable
    keyword field, restricted to terms whose normalized form contains the
    normalized substring. Counts are over the whole, unrestricted index."""
    fs = index.field_schema(field_key)
    if fs.value_kind != "keyword" or not fs.facetable:
        raise SchemaError(f"field {field_key!r} is not a facetable keyword field")
    td = index.term_dicts[field_key]
    needle = normalize_term(substring)
    out = []
    for tid, term in enumerate(td.terms):
        if needle and needle not in td.norms[tid]:
            continue
        out.append((term, int(td.unique_parents[tid])))
    return out


# --- snapshot file -------------------------------------------------------------
# Layout (UTF-8 text, LF line endings):
#   line 1: "#cohortexplorer-snapshot v<format>"
#   line 2: header JSON {format, patients, child_counts, reference_day,
#           index_digest}
#   lines 3..: one canonical PatientRecord JSON per line
# The digest is recomputed after load; a mismatch means the snapshot or the
# build is not bit-exact on this platform and raises SnapshotIntegrityError.


def save_snapshot(path: str | Path, records: list[PatientRecord], index: NestedIndex | None = None) -> None:
    if index is None:
        index = build_index(records)
    header = {
        "format": SNAPSHOT_FORMAT,
        "patients": len(records),
        "child_counts": index.child_counts,
        "reference_day": index.reference_day,
        "index_digest": index.content_digest(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{SNAPSHOT_MAGIC} v{SNAPSHOT_FORMAT}\n")
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n")
        for record in records:
            fh.write(record_to_json_line(record) + "\n")


def load_snapshot(path: str | Path, verify: bool = True) -> tuple[list[PatientRecord], NestedIndex]:
    with open(path, encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if not magic.startswith(SNAPSHOT_MAGIC):
            raise SnapshotIntegrityError(f"{path}: not a snapshot file")
        header = json.loads(fh.readline())
        if header.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotIntegrityError(f"{path}: unsupported snapshot format {header.get('format')}")
        records = [record_from_dict(json.loads(line)) for line in fh if line.strip()]
    index = build_index(records, reference_day=header.get("reference_day"))
    if verify and index.content_digest() != header["index_digest"]:
        raise SnapshotIntegrityError(f"{path}: index digest mismatch (snapshot not reproducible here)")
    return records, index
