"""Source-file parsing and the two-tier document store.

Sources: JSON-lines patient records, CSV examination exports (one line =
patient metadata + examination + finding/evaluation texts) and plain-text
letters. Findings live in their own store keyed by doc_id so that a later
examination can never overwrite an earlier finding of the same patient;
patients are assembled from the union of everything known.

Ingestion is single-writer and deterministic: identical inputs produce a
byte-identical store snapshot, and readers only ever see fully assembled
records.
"""

from __future__ import annotations

import configparser
import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import extract
from .datamodel import (
    BloodGroup,
    DiagnosisEvent,
    DocType,
    EndpointEvent,
    EndpointKind,
    ExamMethod,
    ExaminationEvent,
    LabClassification,
    LabEvent,
    MedicationEvent,
    PatientRecord,
    Provenance,
    Sex,
    TextDocument,
    days_since_epoch,
    fold_text,
)

LETTER_ID_SEPARATOR = "__"  # letter files: <patient_id>__<rest>.txt


@dataclass(frozen=True)
class IngestError:
    source: str
    line: int
    reason: str

    def to_dict(self) -> dict:
        return {"source": self.source, "line": self.line, "reason": self.reason}


@dataclass(frozen=True)
class CsvColumnMap:
    patient_id_col: str
    date_col: str
    finding_col: str
    evaluation_col: str | None = None
    method_col: str | None = None
    delimiter: str = ";"


@dataclass(frozen=True)
class IngestManifest:
    patients_path: Path | None = None
    examinations_csv: Path | None = None
    letters_dir: Path | None = None
    mode: str = "rebuild"  # "rebuild" | "update"
    store_path: Path | None = None
    csv_columns: CsvColumnMap | None = None

    def __post_init__(self):
        if self.patients_path is None and self.examinations_csv is None and self.letters_dir is None:
            raise ValueError("manifest needs at least one source path")
        if self.mode not in ("rebuild", "update"):
            raise ValueError(f"bad ingest mode: {self.mode!r}")
        if self.mode == "update" and (self.store_path is None or not Path(self.store_path).exists()):
            raise ValueError("update mode requires an existing store (store_path)")


def read_manifest(path: str | Path) -> IngestManifest:
    """Parse an INI-style manifest: [sources] with patients /
    examinations_csv / letters_dir / mode / store_path, optional [csv]
    with the column map and delimiter."""
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise FileNotFoundError(path)
    base = Path(path).parent
    src = parser["sources"] if parser.has_section("sources") else {}

    def _path(key):
        value = src.get(key)
        return (base / value).resolve() if value else None

    columns = None
    if parser.has_section("csv"):
        c = parser["csv"]
        columns = CsvColumnMap(
            patient_id_col=c.get("patient_id_col", "patient_id"),
            date_col=c.get("date_col", "date"),
            finding_col=c.get("finding_col", "finding"),
            evaluation_col=c.get("evaluation_col") or None,
            method_col=c.get("method_col") or None,
            delimiter=c.get("delimiter", ";"),
        )
    return IngestManifest(
        patients_path=_path("patients"),
        examinations_csv=_path("examinations_csv"),
        letters_dir=_path("letters_dir"),
        mode=src.get("mode", "rebuild"),
        store_path=_path("store_path"),
        csv_columns=columns,
    )


# --- JSON-lines interchange ---------------------------------------------------


def _date_str(d: dt.date | None) -> str | None:
    return d.isoformat() if d is not None else None


def _parse_date(s: str | None) -> dt.date | None:
    return dt.date.fromisoformat(s) if s else None


def record_to_dict(record: PatientRecord) -> dict:
    return {
        "patient_id": record.patient_id,
        "sex": record.sex.value,
        "birth_date": _date_str(record.birth_date),
        "deceased": record.deceased,
        "blood_group": record.blood_group.value,
        "height_cm": record.height_cm,
        "last_contact": _date_str(record.last_contact),
        "diagnoses": [
            {
                "term": d.term,
                "icd10": d.icd10,
                "therapy_term": d.therapy_term,
                "therapy_code": d.therapy_code,
                "day": d.day,
                "provenance": d.provenance.value,
            }
            for d in record.diagnoses
        ],
        "labs": [
            {
                "term": l.term,
                "term_canon": l.term_canon,
                "day": l.day,
                "numeric_value": l.numeric_value,
                "text_value": l.text_value,
                "classification": l.classification.value if l.classification else None,
                "provenance": l.provenance.value,
            }
            for l in record.labs
        ],
        "medications": [
            {"term": m.term, "day": m.day, "dose": m.dose, "provenance": m.provenance.value}
            for m in record.medications
        ],
        "examinations": [
            {
                "method": e.method.value,
                "day": e.day,
                "physician": e.physician,
                "finding_text_ref": e.finding_text_ref,
                "evaluation_text_ref": e.evaluation_text_ref,
                "birads": e.birads,
            }
            for e in record.examinations
        ],
        "endpoints": [{"kind": e.kind.value, "day": e.day, "ordinal": e.ordinal} for e in record.endpoints],
        "documents": [
            {
                "doc_id": t.doc_id,
                "doc_type": t.doc_type.value,
                "day": t.day,
                "body": t.body,
                "annotations": [a.to_dict() for a in t.annotations],
            }
            for t in record.documents
        ],
    }


def record_from_dict(data: dict) -> PatientRecord:
    return PatientRecord(
        patient_id=data["patient_id"],
        sex=Sex(data.get("sex", "unknown")),
        birth_date=_parse_date(data.get("birth_date")) or dt.date(1970, 1, 1),
        deceased=bool(data.get("deceased", False)),
        blood_group=BloodGroup(data.get("blood_group", "unknown")),
        height_cm=data.get("height_cm"),
        last_contact=_parse_date(data.get("last_contact")),
        diagnoses=tuple(
            DiagnosisEvent(
                term=d["term"],
                icd10=d.get("icd10"),
                therapy_term=d.get("therapy_term"),
                therapy_code=d.get("therapy_code"),
                day=d["day"],
                provenance=Provenance(d.get("provenance", "database")),
            )
            for d in data.get("diagnoses", [])
        ),
        labs=tuple(
            LabEvent(
                term=l["term"],
                day=l["day"],
                numeric_value=l.get("numeric_value"),
                text_value=l.get("text_value"),
                classification=LabClassification(l["classification"]) if l.get("classification") else None,
                provenance=Provenance(l.get("provenance", "database")),
            )
            for l in data.get("labs", [])
        ),
        medications=tuple(
            MedicationEvent(
                term=m["term"],
                day=m["day"],
                dose=m.get("dose"),
                provenance=Provenance(m.get("provenance", "database")),
            )
            for m in data.get("medications", [])
        ),
        examinations=tuple(
            ExaminationEvent(
                method=ExamMethod(e.get("method", "other")),
                day=e["day"],
                physician=e.get("physician"),
                finding_text_ref=e.get("finding_text_ref"),
                evaluation_text_ref=e.get("evaluation_text_ref"),
                birads=e.get("birads"),
            )
            for e in data.get("examinations", [])
        ),
        endpoints=tuple(
            EndpointEvent(kind=EndpointKind(e["kind"]), day=e["day"], ordinal=e.get("ordinal", 1))
            for e in data.get("endpoints", [])
        ),
        documents=tuple(
            TextDocument(
                doc_id=t["doc_id"],
                doc_type=DocType(t.get("doc_type", "finding")),
                day=t.get("day"),
                body=t["body"],
                annotations=tuple(_annotation_from_dict(a) for a in t.get("annotations", [])),
            )
            for t in data.get("documents", [])
        ),
    )


def _annotation_from_dict(a: dict) -> extract.Annotation:
    return extract.Annotation(
        annotation_type=extract.AnnotationType(a["annotation_type"]),
        begin=a["begin"],
        end=a["end"],
        surface=a["surface"],
        canonical_term=a["canonical_term"],
        code=a.get("code"),
        negated=a.get("negated", False),
        negation_trigger=a.get("negation_trigger"),
        provenance=extract.AnnotationProvenance(a.get("provenance", "system_dictionary")),
        confidence=a.get("confidence", 1.0),
    )


def record_to_json_line(record: PatientRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def write_patients_jsonl(records, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record_to_json_line(record) + "\n")


def read_patients_jsonl(path: str | Path) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return records


def write_error_report(errors: list[IngestError], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for err in errors:
            fh.write(json.dumps(err.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n")


# --- examinations CSV ----------------------------------------------------------


def _parse_csv_date(raw: str) -> dt.date:
    raw = raw.strip()
    for parse in (dt.date.fromisoformat, lambda s: dt.datetime.strptime(s, "%d.%m.%Y").date()):
        try:
            return parse(raw)
        except ValueError:
            continue
    raise ValueError(f"unparseable date: {raw!r}")


_METHOD_HINTS = (
    ("sono", ExamMethod.SONOGRAPHY),
    ("mammo", ExamMethod.MAMMOGRAPHY),
    ("mrt", ExamMethod.MRT),
    ("magnet", ExamMethod.MRT),
    ("ct", ExamMethod.CT),
    ("roentgen", ExamMethod.XRAY),
    ("xray", ExamMethod.XRAY),
)


def parse_exam_method(raw: str | None) -> ExamMethod:
    if not raw:
        return ExamMethod.OTHER
    folded = fold_text(raw)
    for hint, method in _METHOD_HINTS:
        if hint in folded:
            return method
    return ExamMethod.OTHER


@dataclass
class ExamCsvRow:
    patient_id: str
    examination: ExaminationEvent
    documents: list[TextDocument]


@dataclass
class ExamCsvResult:
    rows: list[ExamCsvRow]
    patient_ids: list[str]  # deduplicated, file order
    errors: list[IngestError]


def parse_examinations_csv(path: str | Path, columns: CsvColumnMap) -> ExamCsvResult:
    """Parse an examination export. One or more TextDocuments per line
    (finding, optional evaluation); malformed lines are skipped and
    recorded in the error report with their line number."""
    path = Path(path)
    rows: list[ExamCsvRow] = []
    errors: list[IngestError] = []
    seen_patients: dict[str, None] = {}
    source = path.name
    stem = path.stem

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=columns.delimiter)
        if reader.fieldnames is None:
            return ExamCsvResult(rows=[], patient_ids=[], errors=[])
        missing = [c for c in (columns.patient_id_col, columns.date_col, columns.finding_col) if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{source}: missing required columns: {', '.join(missing)}")
        for lineno, raw in enumerate(reader, start=2):  # line 1 is the header
            try:
                patient_id = (raw.get(columns.patient_id_col) or "").strip()
                if not patient_id:
                    raise ValueError("empty patient id")
                day = days_since_epoch(_parse_csv_date(raw.get(columns.date_col) or ""))
                finding_text = (raw.get(columns.finding_col) or "").strip()
                if not finding_text:
                    raise ValueError("empty finding text")
            except ValueError as exc:
                errors.append(IngestError(source=source, line=lineno, reason=str(exc)))
                continue

            docs = []
            finding_id = f"{stem}:{lineno}:finding"
            docs.append(TextDocument(doc_id=finding_id, doc_type=DocType.FINDING, day=day, body=finding_text))
            evaluation_id = None
            if columns.evaluation_col:
                evaluation_text = (raw.get(columns.evaluation_col) or "").strip()
                if evaluation_text:
                    evaluation_id = f"{stem}:{lineno}:evaluation"
                    docs.append(
                        TextDocument(doc_id=evaluation_id, doc_type=DocType.EVALUATION, day=day, body=evaluation_text)
                    )
            method = parse_exam_method(raw.get(columns.method_col) if columns.method_col else None)
            exam = ExaminationEvent(
                method=method, day=day, finding_text_ref=finding_id, evaluation_text_ref=evaluation_id
            )
            seen_patients.setdefault(patient_id)
            rows.append(ExamCsvRow(patient_id=patient_id, examination=exam, documents=docs))

    return ExamCsvResult(rows=rows, patient_ids=list(seen_patients), errors=errors)


# --- finding store --------------------------------------------------------------


@dataclass
class FindingStore:
    """Secondary store keyed by doc_id: the system of record for finding
    texts. Re-indexing a patient always reads all of their findings from
    here, so an update can never drop an earlier finding."""

    findings: dict[str, tuple[str, TextDocument]] = field(default_factory=dict)
    examinations: dict[str, tuple[str, ExaminationEvent]] = field(default_factory=dict)
    dirty_patients: set[str] = field(default_factory=set)

    def upsert_finding(self, finding: TextDocument, patient_id: str) -> None:
        if not finding.doc_id:
            raise ValueError("doc_id must be non-empty")
        self.findings[finding.doc_id] = (patient_id, finding)
        self.dirty_patients.add(patient_id)

    def upsert_examination(self, key: str, exam: ExaminationEvent, patient_id: str) -> None:
        self.examinations[key] = (patient_id, exam)
        self.dirty_patients.add(patient_id)

    def findings_of(self, patient_id: str) -> list[TextDocument]:
        docs = [doc for pid, doc in self.findings.values() if pid == patient_id]
        docs.sort(key=lambda d: (d.day is None, d.day if d.day is not None else 0, d.doc_id))
        return docs

    def examinations_of(self, patient_id: str) -> list[ExaminationEvent]:
        exams = [(key, e) for key, (pid, e) in self.examinations.items() if pid == patient_id]
        exams.sort(key=lambda item: (item[1].day, item[0]))
        return [e for _, e in exams]

    def save(self, path: str | Path) -> None:
        """Deterministic snapshot: entries sorted by doc_id / key."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for doc_id in sorted(self.findings):
                patient_id, doc = self.findings[doc_id]
                entry = {
                    "kind": "finding",
                    "patient_id": patient_id,
                    "doc": {
                        "doc_id": doc.doc_id,
                        "doc_type": doc.doc_type.value,
                        "day": doc.day,
                        "body": doc.body,
                    },
                }
                fh.write(json.dumps(entry, ensure_ascii=False, separators=(",", ":")) + "\n")
            for key in sorted(self.examinations):
                patient_id, exam = self.examinations[key]
                entry = {
                    "kind": "examination",
                    "key": key,
                    "patient_id": patient_id,
                    "exam": {
                        "method": exam.method.value,
                        "day": exam.day,
                        "physician": exam.physician,
                        "finding_text_ref": exam.finding_text_ref,
                        "evaluation_text_ref": exam.evaluation_text_ref,
                        "birads": exam.birads,
                    },
                }
                fh.write(json.dumps(entry, ensure_ascii=False, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FindingStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                if entry["kind"] == "finding":
                    doc = entry["doc"]
                    store.findings[doc["doc_id"]] = (
                        entry["patient_id"],
                        TextDocument(
                            doc_id=doc["doc_id"],
                            doc_type=DocType(doc["doc_type"]),
                            day=doc.get("day"),
                            body=doc["body"],
                        ),
                    )
                else:
                    exam = entry["exam"]
                    store.examinations[entry["key"]] = (
                        entry["patient_id"],
                        ExaminationEvent(
                            method=ExamMethod(exam["method"]),
                            day=exam["day"],
                            physician=exam.get("physician"),
                            finding_text_ref=exam.get("finding_text_ref"),
                            evaluation_text_ref=exam.get("evaluation_text_ref"),
                            birads=exam.get("birads"),
                        ),
                    )
        store.dirty_patients = set()
        return store


def upsert_finding(store: FindingStore, finding: TextDocument, patient_id: str) -> FindingStore:
    store.upsert_finding(finding, patient_id)
    return store


@dataclass
class AssembleResult:
    records: list[PatientRecord]
    pending: dict[str, list[str]]  # unknown patient_id -> doc_ids held back


def assemble_patients(store: FindingStore, patients: list[PatientRecord]) -> AssembleResult:
    """Merge every finding/examination known for each patient into its
    record (never a partial subset). Findings for unknown patients are
    held in a pending set and reported."""
    known = {p.patient_id for p in patients}
    pending: dict[str, list[str]] = {}
    for doc_id in sorted(store.findings):
        patient_id, _ = store.findings[doc_id]
        if patient_id not in known:
            pending.setdefault(patient_id, []).append(doc_id)

    records = []
    for patient in patients:
        extra_docs = store.findings_of(patient.patient_id)
        extra_exams = store.examinations_of(patient.patient_id)
        if not extra_docs and not extra_exams:
            records.append(patient)
            continue
        have_ids = {d.doc_id for d in patient.documents}
        docs = list(patient.documents) + [d for d in extra_docs if d.doc_id not in have_ids]
        docs.sort(key=lambda d: (d.day is None, d.day if d.day is not None else 0, d.doc_id))
        exams = sorted(
            list(patient.examinations) + extra_exams,
            key=lambda e: (e.day, e.finding_text_ref or ""),
        )
        records.append(
            PatientRecord(
                patient_id=patient.patient_id,
                sex=patient.sex,
                birth_date=patient.birth_date,
                deceased=patient.deceased,
                blood_group=patient.blood_group,
                height_cm=patient.height_cm,
                last_contact=patient.last_contact,
                diagnoses=patient.diagnoses,
                labs=patient.labs,
                medications=patient.medications,
                examinations=tuple(exams),
                endpoints=patient.endpoints,
                documents=tuple(docs),
            )
        )
    return AssembleResult(records=records, pending=pending)


@dataclass
class IngestResult:
    records: list[PatientRecord]
    errors: list[IngestError]
    pending: dict[str, list[str]]
    store: FindingStore


def ingest(manifest: IngestManifest) -> IngestResult:
    """Run the full two-tier flow: load or create the finding store, pull
    in CSV findings and letters, then assemble complete patients."""
    if manifest.mode == "update":
        store = FindingStore.load(manifest.store_path)
    else:
        store = FindingStore()

    errors: list[IngestError] = []
    patients: list[PatientRecord] = []
    stub_ids: dict[str, None] = {}

    if manifest.examinations_csv is not None:
        columns = manifest.csv_columns or CsvColumnMap(
            patient_id_col="patient_id", date_col="date", finding_col="finding"
        )
        result = parse_examinations_csv(manifest.examinations_csv, columns)
        errors.extend(result.errors)
        for i, row in enumerate(result.rows):
            for doc in row.documents:
                store.upsert_finding(doc, row.patient_id)
            store.upsert_examination(f"{manifest.examinations_csv.name}:{i}", row.examination, row.patient_id)
        for pid in result.patient_ids:
            stub_ids.setdefault(pid)

    if manifest.letters_dir is not None:
        for path in sorted(Path(manifest.letters_dir).glob("*.txt")):
            doc_id = path.stem
            body = path.read_text(encoding="utf-8")
            if not body.strip():
                errors.append(IngestError(source=path.name, line=0, reason="empty letter body"))
                continue
            patient_id = doc_id.split(LETTER_ID_SEPARATOR, 1)[0]
            store.upsert_finding(
                TextDocument(doc_id=doc_id, doc_type=DocType.CLINICAL_REPORT, day=None, body=body),
                patient_id,
            )
            stub_ids.setdefault(patient_id)

    if manifest.patients_path is not None:
        patients = read_patients_jsonl(manifest.patients_path)
    known = {p.patient_id for p in patients}
    for pid in stub_ids:
        if pid not in known:
            patients.append(PatientRecord(patient_id=pid))

    if manifest.store_path is not None:
        store.save(manifest.store_path)

    assembled = assemble_patients(store, patients)
    return IngestResult(records=assembled.records, errors=errors, pending=assembled.pending, store=store)
