"""Canonical record hierarchy, identifiers and day-granular time.

The hierarchy is exactly three levels deep: a patient, its child events
(diagnoses, labs, medications, examinations, endpoints, text documents),
and the fields/annotations of each child. All timestamps are whole days
since 1900-01-01; sub-day precision is discarded at ingestion.

All types are immutable after construction and safe to share across
threads without locking.
"""

from __future__ import annotations

import datetime as dt
import re
import string
from dataclasses import dataclass, field
from enum import Enum

EPOCH = dt.date(1900, 1, 1)
_EPOCH_ORDINAL = EPOCH.toordinal()
MIN_YEAR = 1900
MAX_YEAR = 2100

_UMLAUT_MAP = str.maketrans({"ä": "ae", "ö": "oe", "ü": "ue", "ß": "ss"})
_STRIP_CHARS = string.punctuation + string.whitespace
_ICD10_RE = re.compile(r"^[A-Z][0-9]{2}(\.[0-9]{1,2})?$")
_BIRADS_RE = re.compile(r"^[0-6][a-c]?$")


class Sex(str, Enum):
    F = "F"
    M = "M"
    UNKNOWN = "unknown"


class BloodGroup(str, Enum):
    A = "A"
    B = "B"
    AB = "AB"
    ZERO = "0"
    UNKNOWN = "unknown"


class LabClassification(str, Enum):
    LOW = "low"
    NORMAL = "normal"
    HIGH = "high"
    UNCLASSIFIED = "unclassified"


class Provenance(str, Enum):
    DATABASE = "database"
    EXTRACTION = "extraction"


class EndpointKind(str, Enum):
    BASIC_DISEASE = "basic_disease"
    FIRST_DIALYSIS = "first_dialysis"
    TRANSPLANTATION = "transplantation"
    REJECTION = "rejection"
    FAILURE = "failure"
    DEATH = "death"


class ExamMethod(str, Enum):
    SONOGRAPHY = "sonography"
    MAMMOGRAPHY = "mammography"
    MRT = "mrt"
    CT = "ct"
    XRAY = "xray"
    OTHER = "other"


class DocType(str, Enum):
    FINDING = "finding"
    VISIT = "visit"
    CLINICAL_REPORT = "clinical_report"
    PROGRESS_REPORT = "progress_report"
    EVALUATION = "evaluation"


def fold_text(text: str) -> str:
    """Lowercase and fold German umlauts/sharp-s (ä→ae, ö→oe, ü→ue, ß→ss)."""
    return text.lower().translate(_UMLAUT_MAP)


def normalize_term(raw: str) -> str:
    """Normalize a term for matching: fold case and umlauts, collapse
    whitespace, strip surrounding punctuation.

    Idempotent and deterministic. Word order and internal punctuation are
    preserved, so "Anämie, renal" and "Renale Anämie" stay distinct.
    """
    collapsed = " ".join(fold_text(raw).split())
    return collapsed.strip(_STRIP_CHARS)


_CANON_DROP = set(string.punctuation) - {"_"}


def canonical_key(raw: str) -> str:
    """Aggressive canonical form used for lab term keys: fold case and
    umlauts, drop punctuation, join words with underscores (idempotent).

    "KreatininHP (mg/dl)" -> "kreatininhp_mgdl".
    """
    folded = fold_text(raw)
    stripped = "".join(c for c in folded if c not in _CANON_DROP)
    return "_".join(stripped.split())


def days_since_epoch(date: dt.date) -> int:
    """Proleptic day count from 1900-01-01 (= day 0).

    Raises ValueError for dates outside 1900-2100.
    """
    if not (MIN_YEAR <= date.year <= MAX_YEAR):
        raise ValueError(f"date {date.isoformat()} outside supported range {MIN_YEAR}-{MAX_YEAR}")
    return date.toordinal() - _EPOCH_ORDINAL


def date_from_day(day: int) -> dt.date:
    """Inverse of days_since_epoch."""
    date = dt.date.fromordinal(day + _EPOCH_ORDINAL)
    if not (MIN_YEAR <= date.year <= MAX_YEAR):
        raise ValueError(f"day {day} outside supported range")
    return date


@dataclass(frozen=True, slots=True)
class DiagnosisEvent:
    term: str
    day: int
    icd10: str | None = None
    therapy_term: str | None = None
    therapy_code: str | None = None
    provenance: Provenance = Provenance.DATABASE

    def __post_init__(self):
        if not self.term:
            raise ValueError("diagnosis term must be non-empty")
        if self.icd10 is not None and not _ICD10_RE.match(self.icd10):
            raise ValueError(f"malformed ICD10 code: {self.icd10!r}")


@dataclass(frozen=True, slots=True)
class LabEvent:
    term: str
    day: int
    numeric_value: float | None = None
    text_value: str | None = None
    classification: LabClassification | None = None
    provenance: Provenance = Provenance.DATABASE
    term_canon: str = ""

    def __post_init__(self):
        if (self.numeric_value is None) == (self.text_value is None):
            raise ValueError("exactly one of numeric_value/text_value must be present")
        canon = canonical_key(self.term)
        if self.term_canon and self.term_canon != canon:
            raise ValueError(f"term_canon {self.term_canon!r} does not match canonical_key({self.term!r})")
        object.__setattr__(self, "term_canon", canon)


@dataclass(frozen=True, slots=True)
class MedicationEvent:
    term: str
    day: int
    dose: str | None = None
    provenance: Provenance = Provenance.DATABASE

    def __post_init__(self):
        if not self.term:
            raise ValueError("medication term must be non-empty")


@dataclass(frozen=True, slots=True)
class ExaminationEvent:
    method: ExamMethod
    day: int
    physician: str | None = None
    finding_text_ref: str | None = None
    evaluation_text_ref: str | None = None
    birads: str | None = None

    def __post_init__(self):
        if self.birads is not None and not _BIRADS_RE.match(self.birads):
            raise ValueError(f"malformed BIRADS category: {self.birads!r}")


@dataclass(frozen=True, slots=True)
class EndpointEvent:
    kind: EndpointKind
    day: int
    ordinal: int = 1

    def __post_init__(self):
        if self.ordinal < 1:
            raise ValueError("endpoint ordinal must be >= 1")


@dataclass(frozen=True, slots=True)
class TextDocument:
    doc_id: str
    doc_type: DocType
    body: str
    day: int | None = None
    annotations: tuple = ()

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.body:
            raise ValueError("document body must be non-empty")


def assign_ordinals(endpoints: list[tuple[EndpointKind, int]]) -> tuple[EndpointEvent, ...]:
    """Build EndpointEvents from (kind, day) pairs, assigning per-kind
    ordinals consecutively from 1 in day order."""
    by_kind: dict[EndpointKind, list[int]] = {}
    for kind, day in endpoints:
        by_kind.setdefault(kind, []).append(day)
    events = []
    for kind, days in by_kind.items():
        for i, day in enumerate(sorted(days), start=1):
            events.append(EndpointEvent(kind=kind, day=day, ordinal=i))
    events.sort(key=lambda e: (e.day, e.kind.value, e.ordinal))
    return tuple(events)


def _check_endpoint_ordinals(endpoints: tuple[EndpointEvent, ...]) -> None:
    by_kind: dict[EndpointKind, list[EndpointEvent]] = {}
    for e in endpoints:
        by_kind.setdefault(e.kind, []).append(e)
    for kind, events in by_kind.items():
        ordered = sorted(events, key=lambda e: (e.day, e.ordinal))
        if [e.ordinal for e in ordered] != list(range(1, len(ordered) + 1)):
            raise ValueError(f"endpoint ordinals for {kind.value} are not consecutive from 1 in day order")


@dataclass(frozen=True, slots=True)
class PatientRecord:
    """Root document: patient master data plus nested child events."""

    patient_id: str
    sex: Sex = Sex.UNKNOWN
    birth_date: dt.date = dt.date(1970, 1, 1)
    deceased: bool = False
    blood_group: BloodGroup = BloodGroup.UNKNOWN
    height_cm: float | None = None
    last_contact: dt.date | None = None
    diagnoses: tuple[DiagnosisEvent, ...] = ()
    labs: tuple[LabEvent, ...] = ()
    medications: tuple[MedicationEvent, ...] = ()
    examinations: tuple[ExaminationEvent, ...] = ()
    endpoints: tuple[EndpointEvent, ...] = ()
    documents: tuple[TextDocument, ...] = ()

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        if self.height_cm is not None and self.height_cm < 0:
            raise ValueError("height_cm must be non-negative")
        days_since_epoch(self.birth_date)  # range check
        if self.last_contact is not None:
            days_since_epoch(self.last_contact)
        _check_endpoint_ordinals(self.endpoints)

    @property
    def birth_day(self) -> int:
        return days_since_epoch(self.birth_date)

    def endpoints_of_kind(self, kind: EndpointKind) -> tuple[EndpointEvent, ...]:
        return tuple(e for e in self.endpoints if e.kind is kind)
