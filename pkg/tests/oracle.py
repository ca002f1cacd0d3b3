"""Independent linear-scan reference implementations.

Everything here works directly on PatientRecord objects with naive loops,
deliberately avoiding the index/query code paths it is used to check.
Only the parsed restriction dataclasses and the free-text AST are shared
(they are the contract, not the implementation under test).
"""

from __future__ import annotations

import re
from fnmatch import fnmatchcase

from cohortexplorer.datamodel import PatientRecord
from cohortexplorer.query import (
    AndNode,
    ChildGroup,
    DayWindow,
    EndpointRelation,
    EndpointSelector,
    FreeText,
    KeywordAnyOf,
    KeywordEquals,
    NotNode,
    NumericRange,
    OrNode,
    Restriction,
    TemporalChild,
    TokenAtom,
    parse_fulltext_expr,
)

_UML = str.maketrans({"ä": "ae", "ö": "oe", "ü": "ue", "ß": "ss"})
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def _fold(text: str) -> str:
    return text.lower().translate(_UML)


def doc_tokens(body: str) -> list[str]:
    return [_fold(m.group()) for m in _WORD.finditer(body)]


def patient_values(record: PatientRecord, field_key: str) -> list:
    """Raw values of a field over a patient, one entry per carrier."""
    if field_key == "sex":
        return [record.sex.value]
    if field_key == "deceased":
        return ["true" if record.deceased else "false"]
    if field_key == "blood_group":
        return [record.blood_group.value]
    if field_key == "height_cm":
        return [record.height_cm] if record.height_cm is not None else []
    if field_key == "birth_day":
        return [record.birth_day]
    if field_key == "last_contact_day":
        from cohortexplorer.datamodel import days_since_epoch

        return [days_since_epoch(record.last_contact)] if record.last_contact else []
    if field_key == "age_years":
        raise KeyError("age_years needs the reference day; not oracle-checked")
    rows = child_rows(record, field_key.split(".", 1)[0])
    return [row[field_key] for row in rows if row.get(field_key) is not None]


def child_rows(record: PatientRecord, kind: str) -> list[dict]:
    if kind == "diagnosis":
        return [
            {
                "diagnosis.term": d.term,
                "diagnosis.icd10": d.icd10,
                "diagnosis.therapy_term": d.therapy_term,
                "diagnosis.therapy_code": d.therapy_code,
                "diagnosis.day": d.day,
                "diagnosis.provenance": d.provenance.value,
            }
            for d in record.diagnoses
        ]
    if kind == "lab":
        return [
            {
                "lab.term": l.term,
                "lab.term_canon": l.term_canon,
                "lab.day": l.day,
                "lab.numeric_value": l.numeric_value,
                "lab.text_value": l.text_value,
                "lab.classification": l.classification.value if l.classification else None,
                "lab.provenance": l.provenance.value,
            }
            for l in record.labs
        ]
    if kind == "medication":
        return [
            {"medication.term": m.term, "medication.day": m.day, "medication.provenance": m.provenance.value}
            for m in record.medications
        ]
    if kind == "examination":
        return [
            {
                "examination.method": e.method.value,
                "examination.day": e.day,
                "examination.physician": e.physician,
                "examination.birads": e.birads,
            }
            for e in record.examinations
        ]
    if kind == "endpoint":
        return [
            {"endpoint.kind": e.kind.value, "endpoint.day": e.day, "endpoint.ordinal": e.ordinal}
            for e in record.endpoints
        ]
    if kind == "document":
        return [{"document.doc_type": t.doc_type.value, "document.day": t.day} for t in record.documents]
    raise KeyError(kind)


def _predicate_holds(row: dict, predicate) -> bool:
    if isinstance(predicate, KeywordEquals):
        return row.get(predicate.field) == predicate.term
    if isinstance(predicate, KeywordAnyOf):
        return row.get(predicate.field) in predicate.terms
    if isinstance(predicate, NumericRange):
        value = row.get(predicate.field)
        if value is None:
            return False
        if predicate.lower is not None and value < predicate.lower:
            return False
        if predicate.upper is not None and value > predicate.upper:
            return False
        return True
    raise TypeError(predicate)


def _in_window(value: float, window: DayWindow) -> bool:
    if window.lower is not None and value < window.lower:
        return False
    if window.upper is not None and value > window.upper:
        return False
    return True


def selector_days(record: PatientRecord, selector: EndpointSelector) -> list[int]:
    days = sorted(e.day for e in record.endpoints if e.kind is selector.kind)
    if selector.rule == "any":
        return days
    if selector.rule == "first":
        return days[:1]
    if selector.rule == "nth":
        return [days[selector.n - 1]] if len(days) >= selector.n else []
    raise ValueError(selector.rule)


def _doc_satisfies(tokens: set[str], node) -> bool:
    if isinstance(node, TokenAtom):
        if "*" in node.pattern or "?" in node.pattern:
            return any(fnmatchcase(t, node.pattern) for t in tokens)
        return node.pattern in tokens
    if isinstance(node, NotNode):
        return not _doc_satisfies(tokens, node.child)
    if isinstance(node, AndNode):
        return all(_doc_satisfies(tokens, c) for c in node.children)
    if isinstance(node, OrNode):
        return any(_doc_satisfies(tokens, c) for c in node.children)
    raise TypeError(node)


def matches(record: PatientRecord, body) -> bool:
    if isinstance(body, Restriction):
        body = body.body
    if isinstance(body, KeywordEquals):
        return body.term in patient_values(record, body.field)
    if isinstance(body, KeywordAnyOf):
        return any(t in patient_values(record, body.field) for t in body.terms)
    if isinstance(body, NumericRange):
        return any(
            _predicate_holds({body.field: v}, body)
            for v in patient_values(record, body.field)
        )
    if isinstance(body, ChildGroup):
        return any(all(_predicate_holds(row, p) for p in body.predicates) for row in child_rows(record, body.kind))
    if isinstance(body, TemporalChild):
        anchor_days = selector_days(record, body.anchor)
        if not anchor_days:
            return False
        for row in child_rows(record, body.group.kind):
            if not all(_predicate_holds(row, p) for p in body.group.predicates):
                continue
            day = row.get(f"{body.group.kind}.day")
            if day is None:
                continue
            if any(_in_window(day - e, body.window) for e in anchor_days):
                return True
        return False
    if isinstance(body, EndpointRelation):
        a_days = selector_days(record, body.a)
        b_days = selector_days(record, body.b)
        return any(_in_window(a - b, body.window) for a in a_days for b in b_days)
    if isinstance(body, FreeText):
        node = parse_fulltext_expr(body.expr)
        return any(_doc_satisfies(set(doc_tokens(t.body)), node) for t in record.documents)
    raise TypeError(body)


def evaluate(records: list[PatientRecord], restrictions) -> list[str]:
    out = [r.patient_id for r in records if all(matches(r, x) for x in restrictions)]
    return sorted(out)


def facet_counts(records: list[PatientRecord], restrictions, field_key: str) -> tuple[int, dict[str, int]]:
    remaining = [r for r in records if all(matches(r, x) for x in restrictions)]
    counts: dict[str, int] = {}
    for record in remaining:
        for value in set(patient_values(record, field_key)):
            counts[value] = counts.get(value, 0) + 1
    return len(remaining), counts


def interval_counts(records, restrictions, field_key: str, edges: list[float]) -> list[int]:
    remaining = [r for r in records if all(matches(r, x) for x in restrictions)]
    out = []
    for lo, hi in zip(edges, edges[1:]):
        n = 0
        for record in remaining:
            if any(v is not None and lo <= v < hi for v in patient_values(record, field_key)):
                n += 1
        out.append(n)
    return out


def fulltext_patients(records, expr: str) -> list[str]:
    node = parse_fulltext_expr(expr)
    out = []
    for record in records:
        if any(_doc_satisfies(set(doc_tokens(t.body)), node) for t in record.documents):
            out.append(record.patient_id)
    return sorted(out)


# --- timeline oracles (naive quadratic scans) -----------------------------------


def episodes(record: PatientRecord, r: int) -> list[tuple[int, int]]:
    transplants = sorted(e.day for e in record.endpoints if e.kind.value == "transplantation")
    enders = sorted(e.day for e in record.endpoints if e.kind.value in ("failure", "death"))
    out = []
    for i, t in enumerate(transplants):
        nxt = transplants[i + 1] if i + 1 < len(transplants) else None
        term = None
        for d in enders:
            if d >= t and (nxt is None or d < nxt):
                term = d
                break
        out.append((t - r, (term if term is not None else t) + r))
    return out


def layer_bounds(record: PatientRecord) -> list[tuple[int, float, float]]:
    transplants = sorted(
        (e.ordinal, e.day) for e in record.endpoints if e.kind.value == "transplantation"
    )
    transplants.sort(key=lambda x: x[1])
    if not transplants:
        return [(0, float("-inf"), float("inf"))]
    out = []
    for i, (ordinal, day) in enumerate(transplants):
        start = float("-inf") if i == 0 else float(day)
        end = float(transplants[i + 1][1]) if i + 1 < len(transplants) else float("inf")
        out.append((ordinal, start, end))
    return out


def naive_baseline(series: list[tuple[int, float]], at_day: int, window: int) -> float | None:
    vals = [v for d, v in series if at_day - window <= d < at_day]
    return sum(vals) / len(vals) if vals else None


def surviving(record, tab, r=None, focus=None, sig=None):
    """Naive filter scan; returns (event_type, day, value) tuples."""
    if tab == "diagnoses":
        events = [(d.term, d.day, None) for d in record.diagnoses]
        sig = None
    else:
        events = [(l.term, l.day, l.numeric_value) for l in record.labs]
    eps = episodes(record, r) if r is not None else None
    layers = layer_bounds(record)

    series: dict[str, list[tuple[int, float]]] = {}
    for l in record.labs:
        if l.numeric_value is not None:
            series.setdefault(l.term, []).append((l.day, l.numeric_value))

    def focus_day(day: int) -> int:
        layer = next((o for o, s, e in layers if s <= day < e), layers[-1][0])
        exact = [d for lo, d in focus.focus_points if lo == layer]
        if exact:
            return exact[0]
        fallback = [d for lo, d in focus.focus_points if lo is None]
        return fallback[0] if fallback else focus.focus_points[0][1]

    out = []
    for term, day, value in events:
        if eps is not None and not any(s <= day <= e for s, e in eps):
            continue
        if focus is not None:
            fd = focus_day(day)
            if day < fd - focus.before or day > fd + focus.after:
                continue
        if sig is not None:
            if value is None:
                continue
            base = naive_baseline(series.get(term, []), day, sig.window_days)
            if base is None or base == 0:
                continue
            dev = (value - base) / abs(base) * 100.0
            if abs(dev) < sig.threshold_pct:
                continue
        out.append((term, day, value))
    return out
