"""Text annotation pipeline.

Stages: sentence splitting, tokenization, dictionary annotators with
longest-match-wins, regex rule annotators (BIRADS), and negation
detection via trigger lexicon plus a token-window scope. User dictionary
entries live in a separate tier that is never merged into the system
files; adding an entry produces a new immutable config with a bumped
version, so concurrent annotate calls see either the old or the new
pipeline, never a mixture.
"""

from __future__ import annotations

import datetime as dt
import json
import re
import threading
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from .datamodel import fold_text, normalize_term

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_SENTENCE_END = ".!?"

# Abbreviations whose trailing dot does not end a sentence.
ABBREVIATIONS = frozenset({"z.b.", "ca.", "dr.", "bzgl."})

# Conjunctions that truncate a negation scope.
SCOPE_BOUNDARY_TOKENS = frozenset({"aber", "jedoch", "sondern"})

DEFAULT_NEGATION_WINDOW = 6


class AnnotationType(str, Enum):
    DIAGNOSIS = "diagnosis"
    DISORDER = "disorder"
    EXAMINATION = "examination"
    PROCEDURE = "procedure"
    MEDICATION = "medication"
    DRUG = "drug"
    LAB_VALUE = "lab_value"
    BIRADS = "birads"
    EXAM_METHOD = "exam_method"


class AnnotationProvenance(str, Enum):
    SYSTEM_DICTIONARY = "system_dictionary"
    USER_DICTIONARY = "user_dictionary"
    RULE = "rule"


class DictTier(str, Enum):
    SYSTEM = "system"
    USER = "user"


class DuplicateEntryError(ValueError):
    """Raised when a user-tier entry with the same normalized term exists."""


@dataclass(frozen=True, slots=True)
class Annotation:
    annotation_type: AnnotationType
    begin: int
    end: int
    surface: str
    canonical_term: str
    code: str | None = None
    negated: bool = False
    negation_trigger: str | None = None
    provenance: AnnotationProvenance = AnnotationProvenance.SYSTEM_DICTIONARY
    confidence: float = 1.0

    def __post_init__(self):
        if not (0 <= self.begin < self.end):
            raise ValueError("annotation span must satisfy 0 <= begin < end")
        if self.negated != (self.negation_trigger is not None):
            raise ValueError("negation_trigger must be present iff negated")

    def to_dict(self) -> dict:
        return {
            "annotation_type": self.annotation_type.value,
            "begin": self.begin,
            "end": self.end,
            "surface": self.surface,
            "canonical_term": self.canonical_term,
            "code": self.code,
            "negated": self.negated,
            "negation_trigger": self.negation_trigger,
            "provenance": self.provenance.value,
            "confidence": self.confidence,
        }


@dataclass(frozen=True, slots=True)
class DictEntry:
    term: str
    code: str | None = None
    definition: str | None = None


@dataclass(frozen=True, slots=True)
class Dictionary:
    annotation_type: AnnotationType
    entries: tuple[DictEntry, ...]
    tier: DictTier = DictTier.SYSTEM


@dataclass(frozen=True, slots=True)
class RuleSpec:
    """Regex annotator. A named group `canon` supplies the canonical term
    (whole match otherwise); a named group `code` supplies the code."""

    name: str
    pattern: str
    annotation_type: AnnotationType

    def compiled(self) -> re.Pattern:
        return re.compile(self.pattern)


@dataclass(frozen=True, slots=True)
class NegationTrigger:
    text: str
    direction: str = "forward"  # "forward" | "backward"
    window: int = DEFAULT_NEGATION_WINDOW

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"bad scope direction: {self.direction!r}")
        if self.window < 0:
            raise ValueError("scope window must be >= 0")


DEFAULT_NEGATION_TRIGGERS: tuple[NegationTrigger, ...] = (
    NegationTrigger("kein"),
    NegationTrigger("keine"),
    NegationTrigger("keinen"),
    NegationTrigger("nicht"),
    NegationTrigger("ohne"),
    NegationTrigger("ausgeschlossen", direction="backward"),
    NegationTrigger("Ausschluss von"),
    NegationTrigger("verneint"),
    NegationTrigger("negativ"),
    # rejected procedures/medications, e.g. "Biopsie wurde abgelehnt"
    NegationTrigger("abgelehnt", direction="backward"),
    NegationTrigger("verweigert", direction="backward"),
)


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    dictionaries: tuple[Dictionary, ...] = ()
    rules: tuple[RuleSpec, ...] = ()
    negation_triggers: tuple[NegationTrigger, ...] = DEFAULT_NEGATION_TRIGGERS
    version: int = 1


@dataclass(frozen=True, slots=True)
class Token:
    text: str
    folded: str
    start: int
    end: int
    sentence: int


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences. Boundaries are {., !, ?, newline};
    a dot does not split after a guarded abbreviation or when glued to a
    following letter/digit (decimals, "z.B.")."""
    spans = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        boundary = False
        if ch == "\n" or ch in "!?":
            boundary = True
        elif ch == ".":
            nxt = text[i + 1] if i + 1 < n else ""
            if nxt and (nxt.isalpha() or nxt.isdigit()):
                boundary = False
            else:
                ws = max(text.rfind(" ", 0, i), text.rfind("\n", 0, i), text.rfind("\t", 0, i))
                chunk = text[ws + 1 : i + 1].lower()
                boundary = chunk not in ABBREVIATIONS
        if boundary:
            if i + 1 > start:
                spans.append((start, i + 1))
            start = i + 1
        i += 1
    if start < n:
        spans.append((start, n))
    return spans


def tokenize(text: str) -> list[Token]:
    """Word tokens (letters/digits) with character offsets, folded forms
    and sentence indices."""
    sentences = split_sentences(text)
    tokens = []
    sent_idx = 0
    for m in _TOKEN_RE.finditer(text):
        while sent_idx < len(sentences) - 1 and m.start() >= sentences[sent_idx][1]:
            sent_idx += 1
        tokens.append(
            Token(
                text=m.group(),
                folded=fold_text(m.group()),
                start=m.start(),
                end=m.end(),
                sentence=sent_idx,
            )
        )
    return tokens


def negation_scope(tokens: list[Token], trigger_index: int, direction: str, window: int) -> range:
    """Token-index scope governed by a trigger at trigger_index.

    Forward: the next `window` tokens, truncated at the sentence end and
    before any conjunction boundary token; backward is symmetric.
    """
    if not (0 <= trigger_index < len(tokens)):
        raise IndexError("trigger_index out of range")
    sentence = tokens[trigger_index].sentence
    if direction == "forward":
        start = trigger_index + 1
        end = min(trigger_index + window, len(tokens) - 1)
        j = start
        while j <= end:
            tok = tokens[j]
            if tok.sentence != sentence or tok.folded in SCOPE_BOUNDARY_TOKENS:
                end = j - 1
                break
            j += 1
        return range(start, end + 1) if start <= end else range(start, start)
    if direction == "backward":
        end = trigger_index - 1
        start = max(trigger_index - window, 0)
        j = end
        while j >= start:
            tok = tokens[j]
            if tok.sentence != sentence or tok.folded in SCOPE_BOUNDARY_TOKENS:
                start = j + 1
                break
            j -= 1
        return range(start, end + 1) if start <= end else range(end + 1, end + 1)
    raise ValueError(f"bad scope direction: {direction!r}")


def _term_token_key(term: str) -> tuple[str, ...]:
    return tuple(t.lower() for t in _TOKEN_RE.findall(fold_text(term)))


_ROMAN = {"i": "1", "ii": "2", "iii": "3", "iv": "4", "v": "5", "vi": "6"}
_BIRADS_CANON_RE = re.compile(r"^(i{1,3}|iv|vi|v|[0-6])\s*([a-c]?)$")


def birads_canonical(raw: str) -> str:
    """Map a captured BIRADS mention to its canonical category: roman
    numerals to digits, suffix lowercased, whitespace removed."""
    compact = raw.strip().lower()
    m = _BIRADS_CANON_RE.match(compact)
    if not m:
        return "".join(compact.split())
    cat, suffix = m.groups()
    return _ROMAN.get(cat, cat) + suffix


class _DictMatcher:
    """Longest-match gazetteer over folded token sequences."""

    def __init__(self, dictionaries: tuple[Dictionary, ...]):
        self.by_first: dict[str, list[tuple[tuple[str, ...], Dictionary, DictEntry]]] = {}
        for d_idx, dictionary in enumerate(dictionaries):
            for e_idx, entry in enumerate(dictionary.entries):
                key = _term_token_key(entry.term)
                if not key:
                    continue
                self.by_first.setdefault(key[0], []).append((key, dictionary, entry))
        # longest first; system tier beats user on equal length, then input order
        tier_rank = {DictTier.SYSTEM: 0, DictTier.USER: 1}
        for candidates in self.by_first.values():
            candidates.sort(key=lambda c: (-len(c[0]), tier_rank[c[1].tier]))

    def match_at(self, tokens: list[Token], i: int):
        candidates = self.by_first.get(tokens[i].folded)
        if not candidates:
            return None
        for key, dictionary, entry in candidates:
            j = i + len(key)
            if j > len(tokens):
                continue
            if tokens[j - 1].sentence != tokens[i].sentence:
                continue
            if all(tokens[i + k].folded == key[k] for k in range(len(key))):
                return len(key), dictionary, entry
        return None


def annotate(text: str, config: PipelineConfig) -> list[Annotation]:
    """Run the full pipeline over a text.

    Dictionary pass (longest-match-wins per start offset, matches do not
    overlap), then rule pass, then negation pass. Output is sorted by
    begin offset; the function is pure and deterministic.
    """
    if not text:
        return []
    tokens = tokenize(text)
    annotations: list[Annotation] = []

    matcher = _DictMatcher(config.dictionaries)
    i = 0
    while i < len(tokens):
        hit = matcher.match_at(tokens, i)
        if hit is None:
            i += 1
            continue
        length, dictionary, entry = hit
        begin = tokens[i].start
        end = tokens[i + length - 1].end
        provenance = (
            AnnotationProvenance.SYSTEM_DICTIONARY
            if dictionary.tier is DictTier.SYSTEM
            else AnnotationProvenance.USER_DICTIONARY
        )
        annotations.append(
            Annotation(
                annotation_type=dictionary.annotation_type,
                begin=begin,
                end=end,
                surface=text[begin:end],
                canonical_term=normalize_term(entry.term),
                code=entry.code,
                provenance=provenance,
            )
        )
        i += length

    for rule in config.rules:
        pattern = rule.compiled()
        for m in pattern.finditer(text):
            group_names = pattern.groupindex
            canon_raw = m.group("canon") if "canon" in group_names and m.group("canon") else m.group()
            canonical = (
                birads_canonical(canon_raw)
                if rule.annotation_type is AnnotationType.BIRADS
                else normalize_term(canon_raw)
            )
            code = m.group("code") if "code" in group_names else None
            annotations.append(
                Annotation(
                    annotation_type=rule.annotation_type,
                    begin=m.start(),
                    end=m.end(),
                    surface=m.group(),
                    canonical_term=canonical,
                    code=code,
                    provenance=AnnotationProvenance.RULE,
                )
            )

    annotations = _apply_negation(text, tokens, annotations, config.negation_triggers)
    annotations.sort(key=lambda a: (a.begin, -(a.end - a.begin), a.annotation_type.value))
    return annotations


def _apply_negation(
    text: str,
    tokens: list[Token],
    annotations: list[Annotation],
    triggers: tuple[NegationTrigger, ...],
) -> list[Annotation]:
    if not triggers or not annotations:
        return annotations

    trigger_keys = [(_term_token_key(t.text), t) for t in triggers]
    occurrences = []  # (first_token, last_token, trigger)
    for i in range(len(tokens)):
        for key, trig in trigger_keys:
            if not key or i + len(key) > len(tokens):
                continue
            if all(tokens[i + k].folded == key[k] for k in range(len(key))):
                occurrences.append((i, i + len(key) - 1, trig))
    if not occurrences:
        return annotations
    occurrences.sort(key=lambda o: o[0])

    # token index range per annotation (tokens overlapping its char span)
    def token_range(a: Annotation) -> tuple[int, int]:
        first = last = -1
        for idx, tok in enumerate(tokens):
            if tok.end <= a.begin:
                continue
            if tok.start >= a.end:
                break
            if first == -1:
                first = idx
            last = idx
        return first, last

    spans = [token_range(a) for a in annotations]
    negated: dict[int, str] = {}
    for first_tok, last_tok, trig in occurrences:
        anchor = last_tok if trig.direction == "forward" else first_tok
        scope = negation_scope(tokens, anchor, trig.direction, trig.window)
        if not scope:
            continue
        trigger_surface = text[tokens[first_tok].start : tokens[last_tok].end]
        for a_idx, (a_first, a_last) in enumerate(spans):
            if a_idx in negated or a_first == -1:
                continue
            if a_first <= scope.stop - 1 and a_last >= scope.start:
                negated[a_idx] = trigger_surface

    return [
        replace(a, negated=True, negation_trigger=negated[idx]) if idx in negated else a
        for idx, a in enumerate(annotations)
    ]


def add_user_entry(
    config: PipelineConfig,
    annotation_type: AnnotationType,
    term: str,
    code: str | None = None,
    definition: str | None = None,
) -> PipelineConfig:
    """Append an entry to the user tier and bump the pipeline version.

    The original config is unchanged. Raises DuplicateEntryError when the
    user tier already holds the same (type, normalized term).
    """
    if not term:
        raise ValueError("term must be non-empty")
    norm = normalize_term(term)
    for d in config.dictionaries:
        if d.tier is DictTier.USER and d.annotation_type is annotation_type:
            if any(normalize_term(e.term) == norm for e in d.entries):
                raise DuplicateEntryError(f"user entry exists: ({annotation_type.value}, {norm!r})")

    entry = DictEntry(term=term, code=code, definition=definition)
    dictionaries = list(config.dictionaries)
    for idx, d in enumerate(dictionaries):
        if d.tier is DictTier.USER and d.annotation_type is annotation_type:
            dictionaries[idx] = replace(d, entries=d.entries + (entry,))
            break
    else:
        dictionaries.append(Dictionary(annotation_type=annotation_type, entries=(entry,), tier=DictTier.USER))
    return replace(config, dictionaries=tuple(dictionaries), version=config.version + 1)


class FeedbackLog:
    """Append-only JSON-lines log of annotation correctness feedback.

    Feedback never changes pipeline behavior; it is collected for later
    review. Writes are serialized through a lock (single-writer stream).
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def record_feedback(
        self,
        annotation: dict,
        verdict: str = "incorrect",
        context: str | None = None,
        now: dt.datetime | None = None,
    ) -> dict:
        stamp = (now or dt.datetime.now(dt.timezone.utc)).isoformat()
        entry = {"timestamp": stamp, "verdict": verdict, "context": context, "annotation": annotation}
        line = json.dumps(entry, ensure_ascii=False, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return entry

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


# --- dictionary / rule file formats -----------------------------------------
# Dictionary files: UTF-8 TSV `term<TAB>code<TAB>definition`, one file per
# annotation type (file stem = type), system and user tiers in separate
# directories. Rules file: one rule per line `name<TAB>type<TAB>regex`.


def load_dictionary_file(path: Path, annotation_type: AnnotationType, tier: DictTier) -> Dictionary:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            term = parts[0].strip()
            if not term:
                continue
            code = parts[1].strip() or None if len(parts) > 1 else None
            definition = parts[2].strip() or None if len(parts) > 2 else None
            entries.append(DictEntry(term=term, code=code, definition=definition))
    return Dictionary(annotation_type=annotation_type, entries=tuple(entries), tier=tier)


def load_dictionary_dir(directory: str | Path, tier: DictTier) -> tuple[Dictionary, ...]:
    directory = Path(directory)
    dictionaries = []
    if directory.is_dir():
        for path in sorted(directory.glob("*.tsv")):
            try:
                annotation_type = AnnotationType(path.stem)
            except ValueError:
                continue
            dictionaries.append(load_dictionary_file(path, annotation_type, tier))
    return tuple(dictionaries)


def append_user_entry_file(
    directory: str | Path,
    annotation_type: AnnotationType,
    term: str,
    code: str | None = None,
    definition: str | None = None,
) -> None:
    """Persist a user-tier entry to `<dir>/<type>.tsv` (user tier only;
    system files are never touched)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{annotation_type.value}.tsv"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"{term}\t{code or ''}\t{definition or ''}\n")


def load_rules_file(path: str | Path) -> tuple[RuleSpec, ...]:
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected name<TAB>type<TAB>regex")
            name, type_str, pattern = parts[0], parts[1], "\t".join(parts[2:])
            rule = RuleSpec(name=name, pattern=pattern, annotation_type=AnnotationType(type_str))
            rule.compiled()  # fail fast on bad patterns
            rules.append(rule)
    return tuple(rules)


def default_pipeline_config(
    dict_dir: str | Path | None = None,
    rules_path: str | Path | None = None,
    user_dict_dir: str | Path | None = None,
) -> PipelineConfig:
    """Pipeline config from the shipped starter dictionaries and rules,
    or from explicit directories when given."""
    if dict_dir is None:
        data_root = resources.files("cohortexplorer") / "data"
        dict_dir = Path(str(data_root / "dictionaries" / "system"))
        if rules_path is None:
            rules_path = Path(str(data_root / "rules.tsv"))
    dictionaries = load_dictionary_dir(dict_dir, DictTier.SYSTEM)
    if user_dict_dir is not None:
        dictionaries = dictionaries + load_dictionary_dir(user_dict_dir, DictTier.USER)
    rules: tuple[RuleSpec, ...] = ()
    if rules_path is not None and Path(rules_path).exists():
        rules = load_rules_file(rules_path)
    return PipelineConfig(dictionaries=dictionaries, rules=rules)
