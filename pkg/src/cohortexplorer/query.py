"""Faceted query evaluation over a NestedIndex.

A query is an unordered set of individually-removable restrictions; a
patient matches when every restriction holds, and an empty set matches
everyone. Child-group restrictions must hold on ONE child instance (the
block-join semantics the nesting exists for); temporal restrictions
relate a child's day to an endpoint day through an inclusive day window.

Facet reports carry the full value list (unique-patient counts within the
current result set, common-to-all flags); mincount and top-k only shape
the menus derived from it, never the counts. All functions are pure over
the immutable index and safe to call concurrently.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .datamodel import (
    EndpointKind,
    PatientRecord,
    canonical_key,
    fold_text,
    normalize_term,
)
from .extract import Annotation, AnnotationType
from .index import NestedIndex, SchemaError, tokenize_with_offsets


class RestrictionParseError(ValueError):
    def __init__(self, message: str, field_path: str = ""):
        super().__init__(message)
        self.field_path = field_path


class QuerySyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# --- restriction bodies ---------------------------------------------------------


@dataclass(frozen=True)
class KeywordEquals:
    field: str
    term: str


@dataclass(frozen=True)
class KeywordAnyOf:
    field: str
    terms: tuple[str, ...]


@dataclass(frozen=True)
class NumericRange:
    """Inclusive bounds; a missing bound is unbounded. False on absent values."""

    field: str
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True)
class ChildGroup:
    """Conjunction of predicates that must hold on a single child instance."""

    kind: str
    predicates: tuple = ()


@dataclass(frozen=True)
class EndpointSelector:
    kind: EndpointKind
    rule: str = "any"  # "first" | "any" | "nth"
    n: int | None = None

    def __post_init__(self):
        if self.rule not in ("first", "any", "nth"):
            raise ValueError(f"bad ordinal rule: {self.rule!r}")
        if self.rule == "nth" and (self.n is None or self.n < 1):
            raise ValueError("nth rule requires n >= 1")


@dataclass(frozen=True)
class DayWindow:
    """Inclusive window in whole days; None = unbounded on that side."""

    lower: int | None = None
    upper: int | None = None

    def contains(self, value) -> bool:
        if self.lower is not None and value < self.lower:
            return False
        if self.upper is not None and value > self.upper:
            return False
        return True


@dataclass(frozen=True)
class TemporalChild:
    """∃ child satisfying the group and ∃ anchor endpoint e with
    day(child) − day(e) inside the window."""

    group: ChildGroup
    anchor: EndpointSelector
    window: DayWindow


@dataclass(frozen=True)
class EndpointRelation:
    """∃ endpoints a, b with day(a) − day(b) inside the window."""

    a: EndpointSelector
    b: EndpointSelector
    window: DayWindow


@dataclass(frozen=True)
class FreeText:
    expr: str
    field: str = "document.body"


@dataclass(frozen=True)
class Restriction:
    id: str
    body: object


@dataclass(frozen=True)
class ResultSet:
    patient_ids: tuple[str, ...]
    name: str | None = None
    created_at: str | None = None

    def __post_init__(self):
        ids = tuple(sorted(set(self.patient_ids)))
        object.__setattr__(self, "patient_ids", ids)

    def __len__(self):
        return len(self.patient_ids)


@dataclass(frozen=True)
class FacetValue:
    term: str
    count: int
    common_to_all: bool


@dataclass(frozen=True)
class FacetReport:
    field: str
    total_remaining_patients: int
    values: tuple[FacetValue, ...]  # full list, descending count
    shown_top_k: int
    mincount: int

    @property
    def top_values(self) -> tuple[FacetValue, ...]:
        return self.values[: self.shown_top_k]

    @property
    def menu_values(self) -> tuple[FacetValue, ...]:
        """Alphabetical menu list, mincount applied (counts untouched)."""
        kept = [v for v in self.values if v.count >= self.mincount]
        kept.sort(key=lambda v: (normalize_term(v.term), v.term))
        return tuple(kept)


# --- JSON wire format -------------------------------------------------------------


def _selector_from_json(data: dict, path: str) -> EndpointSelector:
    try:
        kind = EndpointKind(data["kind"])
    except (KeyError, ValueError) as exc:
        raise RestrictionParseError(f"bad endpoint selector: {exc}", path) from None
    rule = data.get("rule", "any")
    try:
        return EndpointSelector(kind=kind, rule=rule, n=data.get("n"))
    except ValueError as exc:
        raise RestrictionParseError(str(exc), path) from None


def _selector_to_json(sel: EndpointSelector) -> dict:
    out = {"kind": sel.kind.value, "rule": sel.rule}
    if sel.rule == "nth":
        out["n"] = sel.n
    return out


def _window_from_json(data, path: str) -> DayWindow:
    if not isinstance(data, dict):
        raise RestrictionParseError("window must be an object with lower/upper", path)
    return DayWindow(lower=data.get("lower"), upper=data.get("upper"))


def _predicate_from_json(data: dict, kind: str, path: str):
    ptype = data.get("type")
    field_name = data.get("field", "")
    if "." not in field_name:
        field_name = f"{kind}.{field_name}"
    if ptype == "keyword":
        if "terms" in data:
            return KeywordAnyOf(field=field_name, terms=tuple(data["terms"]))
        if "term" not in data:
            raise RestrictionParseError("keyword predicate needs term or terms", path)
        return KeywordEquals(field=field_name, term=data["term"])
    if ptype == "range":
        return NumericRange(field=field_name, lower=data.get("lower"), upper=data.get("upper"))
    raise RestrictionParseError(f"bad predicate type: {ptype!r}", path)


def restriction_from_json(data: dict, path: str = "restriction") -> Restriction:
    if not isinstance(data, dict):
        raise RestrictionParseError("restriction must be an object", path)
    rid = str(data.get("id", ""))
    rtype = data.get("type")
    if rtype == "keyword":
        fname = data.get("field")
        if not fname:
            raise RestrictionParseError("keyword restriction needs a field", f"{path}.field")
        if "terms" in data:
            body = KeywordAnyOf(field=fname, terms=tuple(data["terms"]))
        elif "term" in data:
            body = KeywordEquals(field=fname, term=data["term"])
        else:
            raise RestrictionParseError("keyword restriction needs term or terms", f"{path}.term")
    elif rtype == "range":
        fname = data.get("field")
        if not fname:
            raise RestrictionParseError("range restriction needs a field", f"{path}.field")
        body = NumericRange(field=fname, lower=data.get("lower"), upper=data.get("upper"))
    elif rtype == "child_group":
        kind = data.get("kind")
        if kind is None:
            raise RestrictionParseError("child_group needs a kind", f"{path}.kind")
        preds = tuple(
            _predicate_from_json(p, kind, f"{path}.predicates[{i}]") for i, p in enumerate(data.get("predicates", []))
        )
        body = ChildGroup(kind=kind, predicates=preds)
    elif rtype == "temporal_child":
        kind = data.get("kind")
        if kind is None:
            raise RestrictionParseError("temporal_child needs a kind", f"{path}.kind")
        preds = tuple(
            _predicate_from_json(p, kind, f"{path}.predicates[{i}]") for i, p in enumerate(data.get("predicates", []))
        )
        body = TemporalChild(
            group=ChildGroup(kind=kind, predicates=preds),
            anchor=_selector_from_json(data.get("anchor", {}), f"{path}.anchor"),
            window=_window_from_json(data.get("window", {}), f"{path}.window"),
        )
    elif rtype == "endpoint_relation":
        body = EndpointRelation(
            a=_selector_from_json(data.get("a", {}), f"{path}.a"),
            b=_selector_from_json(data.get("b", {}), f"{path}.b"),
            window=_window_from_json(data.get("window", {}), f"{path}.window"),
        )
    elif rtype == "fulltext":
        expr = data.get("expr")
        if not expr:
            raise RestrictionParseError("fulltext restriction needs expr", f"{path}.expr")
        body = FreeText(expr=expr, field=data.get("field", "document.body"))
    else:
        raise RestrictionParseError(f"unknown restriction type: {rtype!r}", f"{path}.type")
    if not rid:
        digest = hashlib.sha1(json.dumps(data, sort_keys=True, ensure_ascii=False).encode("utf-8")).hexdigest()
        rid = f"r-{digest[:8]}"
    return Restriction(id=rid, body=body)


def _predicates_json(group: ChildGroup) -> list[dict]:
    out = []
    for p in group.predicates:
        short = p.field.split(".", 1)[1] if p.field.startswith(f"{group.kind}.") else p.field
        if isinstance(p, KeywordEquals):
            out.append({"type": "keyword", "field": short, "term": p.term})
        elif isinstance(p, KeywordAnyOf):
            out.append({"type": "keyword", "field": short, "terms": list(p.terms)})
        elif isinstance(p, NumericRange):
            entry = {"type": "range", "field": short}
            if p.lower is not None:
                entry["lower"] = p.lower
            if p.upper is not None:
                entry["upper"] = p.upper
            out.append(entry)
        else:
            raise TypeError(p)
    return out


def restriction_to_json(r: Restriction) -> dict:
    body = r.body
    if isinstance(body, KeywordEquals):
        return {"id": r.id, "type": "keyword", "field": body.field, "term": body.term}
    if isinstance(body, KeywordAnyOf):
        return {"id": r.id, "type": "keyword", "field": body.field, "terms": list(body.terms)}
    if isinstance(body, NumericRange):
        return {"id": r.id, "type": "range", "field": body.field, "lower": body.lower, "upper": body.upper}
    if isinstance(body, ChildGroup):
        return {"id": r.id, "type": "child_group", "kind": body.kind, "predicates": _predicates_json(body)}
    if isinstance(body, TemporalChild):
        return {
            "id": r.id,
            "type": "temporal_child",
            "kind": body.group.kind,
            "predicates": _predicates_json(body.group),
            "anchor": _selector_to_json(body.anchor),
            "window": {"lower": body.window.lower, "upper": body.window.upper},
        }
    if isinstance(body, EndpointRelation):
        return {
            "id": r.id,
            "type": "endpoint_relation",
            "a": _selector_to_json(body.a),
            "b": _selector_to_json(body.b),
            "window": {"lower": body.window.lower, "upper": body.window.upper},
        }
    if isinstance(body, FreeText):
        return {"id": r.id, "type": "fulltext", "expr": body.expr, "field": body.field}
    raise TypeError(f"unknown restriction body: {body!r}")


def restrictions_from_json(items: list, path: str = "restrictions") -> list[Restriction]:
    if not isinstance(items, list):
        raise RestrictionParseError("restrictions must be an array", path)
    return [restriction_from_json(item, f"{path}[{i}]") for i, item in enumerate(items)]


# --- free-text expression grammar -------------------------------------------------
# expr := or ; or := and ("OR" and)* ; and := not ("AND"? not)* ;
# not := "NOT" atom | atom ; atom := TOKEN | "(" expr ")" .
# TOKEN admits `*` (any chars) and `?` (one char); adjacency means AND.


@dataclass(frozen=True)
class TokenAtom:
    pattern: str  # folded, may contain wildcards


@dataclass(frozen=True)
class NotNode:
    child: object


@dataclass(frozen=True)
class AndNode:
    children: tuple


@dataclass(frozen=True)
class OrNode:
    children: tuple


_LEX_RE = re.compile(r"\(|\)|[^\s()]+")


def parse_fulltext_expr(expr: str):
    tokens = [(m.group(), m.start()) for m in _LEX_RE.finditer(expr)]
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, len(expr))

    def parse_or():
        nonlocal pos
        children = [parse_and()]
        while peek()[0] == "OR":
            pos += 1
            children.append(parse_and())
        return children[0] if len(children) == 1 else OrNode(tuple(children))

    def parse_and():
        nonlocal pos
        children = [parse_not()]
        while True:
            tok, _ = peek()
            if tok == "AND":
                pos += 1
                children.append(parse_not())
            elif tok is not None and tok not in (")", "OR"):
                children.append(parse_not())
            else:
                break
        return children[0] if len(children) == 1 else AndNode(tuple(children))

    def parse_not():
        nonlocal pos
        tok, at = peek()
        if tok == "NOT":
            pos += 1
            return NotNode(parse_atom())
        return parse_atom()

    def parse_atom():
        nonlocal pos
        tok, at = peek()
        if tok is None:
            raise QuerySyntaxError("unexpected end of expression", at)
        if tok == "(":
            pos += 1
            node = parse_or()
            tok2, at2 = peek()
            if tok2 != ")":
                raise QuerySyntaxError("missing closing parenthesis", at2)
            pos += 1
            return node
        if tok == ")":
            raise QuerySyntaxError("unexpected ')'", at)
        if tok in ("AND", "OR", "NOT"):
            raise QuerySyntaxError(f"operator {tok} needs an operand", at)
        pos += 1
        return TokenAtom(pattern=fold_text(tok))

    if not tokens:
        raise QuerySyntaxError("empty expression", 0)
    node = parse_or()
    tok, at = peek()
    if tok is not None:
        raise QuerySyntaxError(f"unexpected token {tok!r}", at)
    return node


def _wildcard_regex(pattern: str) -> re.Pattern:
    return re.compile("".join(".*" if c == "*" else "." if c == "?" else re.escape(c) for c in pattern) + "$")


def token_matches(pattern: str, token: str) -> bool:
    if "*" not in pattern and "?" not in pattern:
        return token == pattern
    return _wildcard_regex(pattern).match(token) is not None


def positive_patterns(node) -> list[str]:
    """Leaf patterns in positive (non-negated) positions; these are the
    tokens that get highlighted."""
    out: list[str] = []

    def walk(n, polarity: bool):
        if isinstance(n, TokenAtom):
            if polarity:
                out.append(n.pattern)
        elif isinstance(n, NotNode):
            walk(n.child, not polarity)
        else:
            for child in n.children:
                walk(child, polarity)

    walk(node, True)
    return out


# --- evaluation -----------------------------------------------------------------


def _resolve_field(index: NestedIndex, field_key: str):
    fs = index.field_schema(field_key)
    return fs, index.tables[fs.level]


def _keyword_row_mask(index: NestedIndex, field_key: str, terms) -> np.ndarray:
    fs, table = _resolve_field(index, field_key)
    if fs.value_kind != "keyword":
        raise SchemaError(f"field {field_key!r} is not a keyword field")
    col = table.keyword_cols[fs.name]
    td = index.term_dicts[field_key]
    ids = [td.lookup(t) for t in terms]
    ids = [i for i in ids if i is not None]
    if not ids:
        return np.zeros(len(col), dtype=bool)
    if len(ids) == 1:
        return col == ids[0]
    return np.isin(col, np.asarray(ids, dtype=np.int32))


def _numeric_row_mask(index: NestedIndex, field_key: str, lower, upper) -> np.ndarray:
    fs, table = _resolve_field(index, field_key)
    if not fs.is_numeric:
        raise SchemaError(f"field {field_key!r} is not numeric")
    col = table.numeric_cols[fs.name]
    mask = ~np.isnan(col)
    if lower is not None:
        mask &= col >= lower
    if upper is not None:
        mask &= col <= upper
    return mask


def _predicate_row_mask(index: NestedIndex, predicate, kind: str) -> np.ndarray:
    if isinstance(predicate, KeywordEquals):
        return _keyword_row_mask(index, predicate.field, [predicate.term])
    if isinstance(predicate, KeywordAnyOf):
        return _keyword_row_mask(index, predicate.field, predicate.terms)
    if isinstance(predicate, NumericRange):
        return _numeric_row_mask(index, predicate.field, predicate.lower, predicate.upper)
    raise SchemaError(f"bad predicate in {kind} group: {predicate!r}")


def _rows_to_parent_mask(index: NestedIndex, table, row_mask: np.ndarray) -> np.ndarray:
    out = np.zeros(index.patient_count, dtype=bool)
    out[table.parent[row_mask]] = True
    return out


def _group_row_mask(index: NestedIndex, group: ChildGroup) -> np.ndarray:
    if group.kind not in index.tables or group.kind == "patient":
        raise SchemaError(f"unknown child kind: {group.kind!r}")
    table = index.tables[group.kind]
    mask = np.ones(len(table.slots), dtype=bool)
    for predicate in group.predicates:
        fs = index.field_schema(predicate.field)
        if fs.level != group.kind:
            raise SchemaError(f"predicate field {predicate.field!r} is not a {group.kind} field")
        mask &= _predicate_row_mask(index, predicate, group.kind)
    return mask


def _anchor_matrix(index: NestedIndex, selector: EndpointSelector) -> np.ndarray:
    """Per-patient anchor days as a NaN-padded [P, K] matrix."""
    table = index.tables["endpoint"]
    kind_mask = _keyword_row_mask(index, "endpoint.kind", [selector.kind.value])
    if selector.rule == "first":
        kind_mask &= _numeric_row_mask(index, "endpoint.ordinal", 1, 1)
    elif selector.rule == "nth":
        kind_mask &= _numeric_row_mask(index, "endpoint.ordinal", selector.n, selector.n)
    parents = table.parent[kind_mask]
    days = table.numeric_cols["day"][kind_mask]
    P = index.patient_count
    if len(parents) == 0:
        return np.full((P, 1), np.nan)
    # rows are grouped by parent in build order, so occurrence index is
    # position minus the first position of that parent
    first_pos = np.searchsorted(parents, parents, side="left")
    occ = np.arange(len(parents)) - first_pos
    K = int(occ.max()) + 1
    matrix = np.full((P, K), np.nan)
    matrix[parents, occ] = days
    return matrix


def _window_mask(values: np.ndarray, window: DayWindow) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        mask = ~np.isnan(values)
        if window.lower is not None:
            mask &= values >= window.lower
        if window.upper is not None:
            mask &= values <= window.upper
    return mask


def _restriction_mask(index: NestedIndex, body) -> np.ndarray:
    P = index.patient_count
    if isinstance(body, (KeywordEquals, KeywordAnyOf)):
        fs, table = _resolve_field(index, body.field)
        terms = [body.term] if isinstance(body, KeywordEquals) else body.terms
        return _rows_to_parent_mask(index, table, _keyword_row_mask(index, body.field, terms))
    if isinstance(body, NumericRange):
        fs, table = _resolve_field(index, body.field)
        return _rows_to_parent_mask(index, table, _numeric_row_mask(index, body.field, body.lower, body.upper))
    if isinstance(body, ChildGroup):
        table = index.tables[body.kind]
        return _rows_to_parent_mask(index, table, _group_row_mask(index, body))
    if isinstance(body, TemporalChild):
        table = index.tables[body.group.kind]
        rows = np.flatnonzero(_group_row_mask(index, body.group))
        if len(rows) == 0:
            return np.zeros(P, dtype=bool)
        day_col = table.numeric_cols.get("day")
        if day_col is None:
            raise SchemaError(f"kind {body.group.kind!r} has no day column")
        days = day_col[rows]
        parents = table.parent[rows]
        valid = ~np.isnan(days)
        anchors = _anchor_matrix(index, body.anchor)
        hit = np.zeros(len(rows), dtype=bool)
        for k in range(anchors.shape[1]):
            diff = days - anchors[parents, k]
            hit |= valid & _window_mask(diff, body.window)
        out = np.zeros(P, dtype=bool)
        out[parents[hit]] = True
        return out
    if isinstance(body, EndpointRelation):
        a = _anchor_matrix(index, body.a)
        b = _anchor_matrix(index, body.b)
        out = np.zeros(P, dtype=bool)
        for i in range(a.shape[1]):
            for j in range(b.shape[1]):
                out |= _window_mask(a[:, i] - b[:, j], body.window)
        return out
    if isinstance(body, FreeText):
        doc_slots = _fulltext_doc_slots(index, body)
        out = np.zeros(P, dtype=bool)
        if doc_slots:
            out[index.slot_parent[np.asarray(sorted(doc_slots), dtype=np.int64)]] = True
        return out
    raise SchemaError(f"unknown restriction body: {body!r}")


def _fulltext_doc_slots(index: NestedIndex, body: FreeText) -> set[int]:
    fs = index.field_schema(body.field)
    if fs.value_kind != "fulltext":
        raise SchemaError(f"field {body.field!r} is not a fulltext field")
    node = parse_fulltext_expr(body.expr)
    postings = index.text_postings[body.field]
    vocab = index.text_vocab[body.field]
    table = index.tables[fs.level]
    all_slots = set(int(s) for s in table.slots)

    def atom_slots(pattern: str) -> set[int]:
        if "*" not in pattern and "?" not in pattern:
            return {slot for slot, _ in postings.get(pattern, [])}
        rx = _wildcard_regex(pattern)
        out: set[int] = set()
        for token in vocab:
            if rx.match(token):
                out.update(slot for slot, _ in postings[token])
        return out

    def eval_node(n) -> set[int]:
        if isinstance(n, TokenAtom):
            return atom_slots(n.pattern)
        if isinstance(n, NotNode):
            return all_slots - eval_node(n.child)
        if isinstance(n, AndNode):
            result = None
            for child in n.children:
                s = eval_node(child)
                result = s if result is None else (result & s)
                if not result:
                    return set()
            return result or set()
        if isinstance(n, OrNode):
            result: set[int] = set()
            for child in n.children:
                result |= eval_node(child)
            return result
        raise TypeError(n)

    return eval_node(node)


def evaluate_mask(index: NestedIndex, restrictions) -> np.ndarray:
    mask = np.ones(index.patient_count, dtype=bool)
    for r in restrictions:
        body = r.body if isinstance(r, Restriction) else r
        mask &= _restriction_mask(index, body)
    return mask


def evaluate(index: NestedIndex, restrictions) -> ResultSet:
    """Patients matching every restriction (empty set matches all)."""
    mask = evaluate_mask(index, restrictions)
    return ResultSet(patient_ids=tuple(index.patient_ids[i] for i in np.flatnonzero(mask)))


def facet_report(
    index: NestedIndex,
    restrictions,
    field_key: str,
    top_k: int = 4,
    mincount: int = 5,
    substring: str | None = None,
    result_mask: np.ndarray | None = None,
) -> FacetReport:
    """Unique-patient counts per facet value within the current result
    set. ALL restrictions are applied, including ones on this same field;
    substring filters values by normalized containment; top-k ties break
    alphabetically.

    result_mask skips re-evaluating the restrictions when a caller
    reports several facets of one block against the same result set; it
    must equal evaluate_mask(index, restrictions).
    """
    fs, table = _resolve_field(index, field_key)
    if not fs.facetable or fs.value_kind != "keyword":
        raise SchemaError(f"field {field_key!r} is not a facetable keyword field")
    mask = result_mask if result_mask is not None else evaluate_mask(index, restrictions)
    total = int(mask.sum())
    td = index.term_dicts[field_key]
    col = table.keyword_cols[fs.name]
    n_terms = len(td.terms)
    if n_terms == 0 or total == 0:
        return FacetReport(field=field_key, total_remaining_patients=total, values=(), shown_top_k=top_k, mincount=mincount)

    sel = mask[table.parent] & (col >= 0)
    pairs = col[sel].astype(np.int64) * index.patient_count + table.parent[sel]
    uniq = np.unique(pairs)
    counts = np.bincount((uniq // index.patient_count).astype(np.int64), minlength=n_terms)

    needle = normalize_term(substring) if substring else ""
    values = []
    for tid in np.flatnonzero(counts):
        if needle and needle not in td.norms[tid]:
            continue
        count = int(counts[tid])
        values.append(FacetValue(term=td.terms[tid], count=count, common_to_all=count == total))
    values.sort(key=lambda v: (-v.count, normalize_term(v.term), v.term))
    return FacetReport(
        field=field_key,
        total_remaining_patients=total,
        values=tuple(values),
        shown_top_k=top_k,
        mincount=mincount,
    )


def numeric_interval_report(
    index: NestedIndex,
    restrictions,
    field_key: str,
    bucket_edges: list[float],
    result_mask: np.ndarray | None = None,
) -> list[tuple[tuple[float, float], int]]:
    """Unique-patient counts per half-open bucket [e_i, e_{i+1}) over the
    current result set; recomputed on every call."""
    if len(bucket_edges) < 2 or any(b <= a for a, b in zip(bucket_edges, bucket_edges[1:])):
        raise ValueError("bucket_edges must be strictly increasing with at least two entries")
    fs, table = _resolve_field(index, field_key)
    if not fs.is_numeric:
        raise SchemaError(f"field {field_key!r} is not numeric")
    mask = result_mask if result_mask is not None else evaluate_mask(index, restrictions)
    col = table.numeric_cols[fs.name]
    in_result = mask[table.parent] & ~np.isnan(col)
    out = []
    for lo, hi in zip(bucket_edges, bucket_edges[1:]):
        rows = in_result & (col >= lo) & (col < hi)
        out.append(((lo, hi), int(len(np.unique(table.parent[rows]))) if rows.any() else 0))
    return out


@dataclass(frozen=True)
class FreeTextResult:
    result: ResultSet
    matched_docs: dict  # patient_id -> tuple of matched doc_ids
    highlights: dict  # doc_id -> tuple of (start, end) character spans


def free_text_search(index: NestedIndex, restrictions, expr: str, field_key: str = "document.body") -> FreeTextResult:
    """Boolean/wildcard search over document bodies within the current
    result set. A patient matches when at least one of their documents
    satisfies the expression; the match map flags which documents did, and
    highlight spans are character offsets of tokens matching positive
    atoms."""
    body = FreeText(expr=expr, field=field_key)
    doc_slots = _fulltext_doc_slots(index, body)
    base_mask = evaluate_mask(index, restrictions)

    table = index.tables["document"]
    P = index.patient_count
    text_mask = np.zeros(P, dtype=bool)
    if doc_slots:
        text_mask[index.slot_parent[np.asarray(sorted(doc_slots), dtype=np.int64)]] = True
    final_mask = base_mask & text_mask
    result = ResultSet(patient_ids=tuple(index.patient_ids[i] for i in np.flatnonzero(final_mask)))

    patterns = positive_patterns(parse_fulltext_expr(expr))
    plain = {p for p in patterns if "*" not in p and "?" not in p}
    regexes = [_wildcard_regex(p) for p in patterns if p not in plain]

    matched_docs: dict[str, tuple] = {}
    highlights: dict[str, tuple] = {}
    for parent in np.flatnonzero(final_mask):
        rows = table.rows_of_parent(int(parent))
        matched = []
        for row in range(rows.start, rows.stop):
            slot = int(table.slots[row])
            if slot not in doc_slots:
                continue
            doc_id = index.doc_ids[row]
            matched.append(doc_id)
            spans = []
            for token, _, start, end in tokenize_with_offsets(index.doc_bodies[row]):
                if token in plain or any(rx.match(token) for rx in regexes):
                    spans.append((start, end))
            highlights[doc_id] = tuple(spans)
        matched_docs[index.patient_ids[parent]] = tuple(matched)
    return FreeTextResult(result=result, matched_docs=matched_docs, highlights=highlights)


# --- extraction vs record comparison ----------------------------------------------


_EXAM_METHOD_SYNONYMS = {
    "sonographie": "sonography",
    "sonografie": "sonography",
    "ultraschall": "sonography",
    "mammographie": "mammography",
    "mammografie": "mammography",
    "roentgen": "xray",
    "mrt": "mrt",
    "ct": "ct",
}


def _record_fact_sets(patient: PatientRecord):
    terms: dict[AnnotationType, set[str]] = {t: set() for t in AnnotationType}
    codes: dict[AnnotationType, set[str]] = {t: set() for t in AnnotationType}
    for d in patient.diagnoses:
        for t in (AnnotationType.DIAGNOSIS, AnnotationType.DISORDER):
            terms[t].add(normalize_term(d.term))
            if d.icd10:
                codes[t].add(d.icd10)
        if d.therapy_term:
            terms[AnnotationType.PROCEDURE].add(normalize_term(d.therapy_term))
        if d.therapy_code:
            codes[AnnotationType.PROCEDURE].add(d.therapy_code)
    for l in patient.labs:
        terms[AnnotationType.LAB_VALUE].add(normalize_term(l.term))
        terms[AnnotationType.LAB_VALUE].add(l.term_canon)
    for m in patient.medications:
        for t in (AnnotationType.MEDICATION, AnnotationType.DRUG):
            terms[t].add(normalize_term(m.term))
    for e in patient.examinations:
        for t in (AnnotationType.EXAMINATION, AnnotationType.EXAM_METHOD):
            terms[t].add(normalize_term(e.method.value))
        if e.birads:
            terms[AnnotationType.BIRADS].add(e.birads.lower())
    return terms, codes


def compare_extraction_to_record(patient: PatientRecord, annotations: list[Annotation]) -> list[tuple[Annotation, str]]:
    """Classify each annotation against the structured record: `known`
    when its code or normalized term matches an existing fact of the same
    kind, `contradiction` when a negated annotation matches a positive
    fact, `new` otherwise."""
    terms, codes = _record_fact_sets(patient)
    out = []
    for a in annotations:
        known_terms = terms.get(a.annotation_type, set())
        known_codes = codes.get(a.annotation_type, set())
        candidates = {normalize_term(a.canonical_term), normalize_term(a.surface), canonical_key(a.surface)}
        if a.annotation_type in (AnnotationType.EXAMINATION, AnnotationType.EXAM_METHOD):
            for cand in list(candidates):
                if cand in _EXAM_METHOD_SYNONYMS:
                    candidates.add(_EXAM_METHOD_SYNONYMS[cand])
        match = bool(candidates & known_terms) or (a.code is not None and a.code in known_codes)
        if match and a.negated:
            status = "contradiction"
        elif match:
            status = "known"
        else:
            status = "new"
        out.append((a, status))
    return out


def make_resultset(index: NestedIndex, restrictions, name: str) -> ResultSet:
    base = evaluate(index, restrictions)
    return ResultSet(
        patient_ids=base.patient_ids,
        name=name,
        created_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    )
