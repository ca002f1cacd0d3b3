"""Synthetic cohort generator.

Produces transplant-program style patients: master data, endpoint
sequences (basic disease, first dialysis, transplantations, rejections,
failures, death), diagnoses with variant spellings, dense lab series with
occasional spikes shortly before rejections, medications, examinations
and short German report texts. Everything is driven by one seeded RNG, so
a (patients, seed, knobs) triple always yields the identical cohort.
"""

from __future__ import annotations

import datetime as dt
import random
from dataclasses import dataclass

from .datamodel import (
    BloodGroup,
    DiagnosisEvent,
    DocType,
    EndpointKind,
    ExamMethod,
    ExaminationEvent,
    LabClassification,
    LabEvent,
    MedicationEvent,
    PatientRecord,
    Sex,
    TextDocument,
    assign_ordinals,
    date_from_day,
    days_since_epoch,
)

# Variant spellings of the same diagnosis, as produced by free-text entry.
ANAEMIA_VARIANTS = ("Anämie, renal", "Renale Anämie", "renale Anämie")

BASE_DIAGNOSES: tuple[tuple[str, str | None], ...] = (
    ("Chronische Glomerulonephritis", "N03.9"),
    ("Arterielle Hypertonie", "I10"),
    ("Diabetes mellitus Typ 2", "E11.9"),
    ("Harnwegsinfekt", "N39.0"),
    ("Zystennieren", "Q61.2"),
    ("Hyperlipidämie", "E78.5"),
    ("Osteoporose", "M81.9"),
    ("Hepatitis C", "B18.2"),
    ("Adipositas", "E66.9"),
    ("Gicht", "M10.9"),
    ("Chronische Niereninsuffizienz", "N18.9"),
    ("Sekundärer Hyperparathyreoidismus", "E21.1"),
    ("Herzinsuffizienz", "I50.9"),
    ("Vorhofflimmern", "I48.9"),
    ("Anämie, renal", "D63.8"),
    ("Renale Anämie", "D63.8"),
    ("renale Anämie", None),
)

THERAPIES = (
    ("Nierentransplantation", "5-555"),
    ("Hämodialyse", "8-854"),
    ("Medikamentöse Therapie", "8-80"),
    (None, None),
)

LAB_TERMS: tuple[tuple[str, float, float], ...] = (
    ("KreatininHP (mg/dl)", 1.6, 0.7),
    ("CRPHP (mg/l)", 5.5, 4.0),
    ("ASTHP U/I", 14.0, 5.0),
    ("Harnstoff (mg/dl)", 45.0, 16.0),
    ("Hämoglobin (g/dl)", 11.8, 1.8),
    ("Leukozyten (/nl)", 7.4, 2.4),
    ("GFR (ml/min)", 48.0, 20.0),
    ("Kalium (mmol/l)", 4.4, 0.5),
    ("Natrium (mmol/l)", 139.0, 3.5),
    ("Phosphat (mg/dl)", 3.8, 1.0),
)

MEDICATIONS = (
    "Tacrolimus",
    "Mycophenolat-Mofetil",
    "Prednisolon",
    "Ciclosporin",
    "Furosemid",
    "Amlodipin",
    "Ramipril",
    "Erythropoetin",
    "Calcitriol",
    "Metoprolol",
)

PHYSICIANS = ("Dr. Weber", "Dr. Schmitt", "Dr. Braun", "Dr. Keller", "Dr. Vogel")

_POSITIVE_SENTENCES = (
    "Patient mit {diag}.",
    "Es zeigt sich eine {diag}.",
    "Bekannte {diag} seit Jahren.",
    "Therapie mit {med} fortgesetzt.",
    "Unter {med} stabile Werte.",
    "Sonographie der Transplantatniere durchgeführt.",
    "Röntgenbilder liegen vor.",
    "Verlaufskontrolle empfohlen.",
)

_NEGATION_SENTENCES = (
    "Kein Anhalt für {diag}.",
    "Ausschluss von {diag}.",
    "Keine {diag} nachweisbar.",
    "Biopsie wurde vom Patienten abgelehnt.",
)

_BIRADS_SENTENCES = (
    "Mammographie beidseits, BIRADS {cat} rechts.",
    "Herdbefund links, BI-RADS {cat}.",
)


@dataclass(frozen=True)
class CohortSpec:
    """Scale knobs for the generator. Totals are exact when set (spread
    evenly across patients); otherwise per-patient means apply."""

    patients: int
    seed: int = 0
    labs_per_patient: int = 40
    diagnoses_per_patient: int = 12
    medications_per_patient: int = 5
    examinations_per_patient: int = 3
    documents_per_patient: int = 3
    distinct_diagnosis_terms: int | None = None
    total_diagnoses: int | None = None
    total_labs: int | None = None
    total_medications: int | None = None
    total_examinations: int | None = None


def _counts(total: int | None, per_patient: int, n: int, rng: random.Random, jitter: bool) -> list[int]:
    if total is not None:
        base, rem = divmod(total, n) if n else (0, 0)
        return [base + (1 if i < rem else 0) for i in range(n)]
    if not jitter:
        return [per_patient] * n
    return [max(0, per_patient + rng.randint(-per_patient // 3, per_patient // 3)) for _ in range(n)]


def _diagnosis_pool(spec: CohortSpec) -> list[tuple[str, str | None]]:
    pool = list(BASE_DIAGNOSES)
    target = spec.distinct_diagnosis_terms
    if target is None or target <= len(pool):
        return pool[:target] if target else pool
    grades = ("I", "II", "III", "Grad 1", "Grad 2", "links", "rechts", "beidseits", "chronisch", "akut")
    i = 0
    while len(pool) < target:
        base_term, code = BASE_DIAGNOSES[i % len(BASE_DIAGNOSES)]
        qualifier = grades[(i // len(BASE_DIAGNOSES)) % len(grades)]
        serial = i // (len(BASE_DIAGNOSES) * len(grades))
        term = f"{base_term} {qualifier}" if serial == 0 else f"{base_term} {qualifier} {serial}"
        pool.append((term, code))
        i += 1
    return pool


def generate_cohort(patients: int, seed: int = 0, **knobs) -> list[PatientRecord]:
    return generate(CohortSpec(patients=patients, seed=seed, **knobs))


def generate(spec: CohortSpec) -> list[PatientRecord]:
    rng = random.Random(spec.seed)
    n = spec.patients
    if n <= 0:
        return []

    pool = _diagnosis_pool(spec)
    # heavy-tail weights: a few very common terms, a long tail of rare ones
    diag_weights = [1.0 / (rank + 1) ** 0.5 for rank in range(len(pool))]
    jitter = spec.total_diagnoses is None
    diag_counts = _counts(spec.total_diagnoses, spec.diagnoses_per_patient, n, rng, jitter)
    lab_counts = _counts(spec.total_labs, spec.labs_per_patient, n, rng, spec.total_labs is None)
    med_counts = _counts(spec.total_medications, spec.medications_per_patient, n, rng, spec.total_medications is None)
    exam_counts = _counts(
        spec.total_examinations, spec.examinations_per_patient, n, rng, spec.total_examinations is None
    )

    records = []
    for i in range(n):
        records.append(
            _generate_patient(
                rng,
                patient_id=f"P{i + 1:05d}",
                pool=pool,
                diag_weights=diag_weights,
                n_diagnoses=diag_counts[i],
                n_labs=lab_counts[i],
                n_medications=med_counts[i],
                n_examinations=exam_counts[i],
                n_documents=spec.documents_per_patient,
            )
        )
    return records


def _generate_patient(
    rng: random.Random,
    patient_id: str,
    pool,
    diag_weights,
    n_diagnoses: int,
    n_labs: int,
    n_medications: int,
    n_examinations: int,
    n_documents: int,
) -> PatientRecord:
    sex = rng.choices([Sex.F, Sex.M, Sex.UNKNOWN], weights=[48, 48, 4])[0]
    birth = dt.date(1930, 1, 1) + dt.timedelta(days=rng.randrange(0, 60 * 365))
    blood_group = rng.choices(
        [BloodGroup.A, BloodGroup.ZERO, BloodGroup.B, BloodGroup.AB, BloodGroup.UNKNOWN],
        weights=[37, 35, 13, 5, 10],
    )[0]
    height = round(rng.uniform(150, 198), 1) if rng.random() > 0.1 else None

    # endpoint timeline, in days since epoch
    t0 = days_since_epoch(dt.date(1990, 1, 1)) + rng.randrange(0, 8000)
    endpoint_days: list[tuple[EndpointKind, int]] = [(EndpointKind.BASIC_DISEASE, t0)]
    dialysis = t0 + rng.randint(30, 500)
    endpoint_days.append((EndpointKind.FIRST_DIALYSIS, dialysis))
    n_transplants = rng.choices([0, 1, 2, 3], weights=[15, 50, 25, 10])[0]
    transplants: list[int] = []
    day = dialysis
    rejections: list[int] = []
    failures: list[int] = []
    for k in range(n_transplants):
        day = day + rng.randint(120, 1600)
        transplants.append(day)
        endpoint_days.append((EndpointKind.TRANSPLANTATION, day))
        next_gap = rng.randint(500, 3000)
        if rng.random() < 0.45:
            # a fair share of rejections happen within days of the transplant
            if rng.random() < 0.3:
                rej = day + rng.randint(0, 5)
            else:
                rej = day + rng.randint(3, min(360, next_gap - 30))
            rejections.append(rej)
            endpoint_days.append((EndpointKind.REJECTION, rej))
        if rng.random() < 0.35:
            fail = day + rng.randint(30, next_gap - 10)
            failures.append(fail)
            endpoint_days.append((EndpointKind.FAILURE, fail))
        day = day + next_gap

    last_day = max(d for _, d in endpoint_days)
    deceased = rng.random() < 0.15
    if deceased:
        death = last_day + rng.randint(10, 900)
        endpoint_days.append((EndpointKind.DEATH, death))
        last_day = death
    endpoints = assign_ordinals(endpoint_days)
    span = (t0 - 700, last_day + 200)

    def random_day():
        return rng.randint(span[0], span[1])

    def event_day():
        # mixture: mostly uniform, partly clustered around a transplantation
        if transplants and rng.random() < 0.4:
            center = rng.choice(transplants)
            return max(span[0], min(span[1], center + rng.randint(-60, 60)))
        return random_day()

    diagnoses = []
    for _ in range(n_diagnoses):
        term, icd10 = rng.choices(pool, weights=diag_weights)[0]
        therapy_term, therapy_code = THERAPIES[rng.randrange(len(THERAPIES))]
        diagnoses.append(
            DiagnosisEvent(
                term=term,
                icd10=icd10 if rng.random() < 0.8 else None,
                therapy_term=therapy_term,
                therapy_code=therapy_code,
                day=event_day(),
            )
        )
    diagnoses.sort(key=lambda d: (d.day, d.term))

    labs = []
    for _ in range(n_labs):
        term, base, sd = LAB_TERMS[rng.randrange(len(LAB_TERMS))]
        d = event_day()
        if rng.random() < 0.03:
            labs.append(LabEvent(term=term, day=d, text_value=rng.choice(["positiv", "negativ", "hämolytisch"])))
            continue
        value = rng.gauss(base, sd)
        # spikes shortly before rejections/failures make the significance
        # filter and the temporal facets visible on demo data
        spike_anchors = rejections + failures
        if spike_anchors and rng.random() < 0.25:
            anchor = rng.choice(spike_anchors)
            d = anchor - rng.randint(0, 30)
            value = base * rng.uniform(2.5, 4.5)
        value = round(max(0.01, value), 2)
        z = (value - base) / sd if sd else 0.0
        classification = None
        if rng.random() < 0.7:
            classification = (
                LabClassification.HIGH if z > 1.5 else LabClassification.LOW if z < -1.5 else LabClassification.NORMAL
            )
        labs.append(LabEvent(term=term, day=d, numeric_value=value, classification=classification))
    labs.sort(key=lambda l: (l.day, l.term))

    medications = []
    for _ in range(n_medications):
        medications.append(
            MedicationEvent(
                term=MEDICATIONS[rng.randrange(len(MEDICATIONS))],
                day=event_day(),
                dose=rng.choice(["1-0-0", "1-0-1", "0-0-1", None]),
            )
        )
    medications.sort(key=lambda m: (m.day, m.term))

    documents = []
    doc_serial = 0

    def make_document(body: str, doc_type: DocType, d: int) -> TextDocument:
        nonlocal doc_serial
        doc_serial += 1
        return TextDocument(doc_id=f"{patient_id}-D{doc_serial:02d}", doc_type=doc_type, day=d, body=body)

    examinations = []
    for _ in range(n_examinations):
        method = rng.choices(list(ExamMethod), weights=[30, 12, 10, 10, 20, 18])[0]
        d = event_day()
        birads = None
        finding_ref = None
        if method is ExamMethod.MAMMOGRAPHY:
            cat = rng.choice(["1", "2", "3", "4a", "4b", "5"])
            birads = cat
            if rng.random() < 0.8:
                body = rng.choice(_BIRADS_SENTENCES).format(cat=cat)
                doc = make_document(body, DocType.FINDING, d)
                documents.append(doc)
                finding_ref = doc.doc_id
        examinations.append(
            ExaminationEvent(
                method=method,
                day=d,
                physician=rng.choice(PHYSICIANS),
                finding_text_ref=finding_ref,
                birads=birads,
            )
        )
    examinations.sort(key=lambda e: (e.day, e.method.value))

    for _ in range(max(0, n_documents - len(documents))):
        sentences = []
        for _ in range(rng.randint(2, 5)):
            if rng.random() < 0.3:
                template = rng.choice(_NEGATION_SENTENCES)
            else:
                template = rng.choice(_POSITIVE_SENTENCES)
            sentences.append(
                template.format(
                    diag=rng.choice(BASE_DIAGNOSES)[0],
                    med=rng.choice(MEDICATIONS),
                )
            )
        body = " ".join(sentences)
        doc_type = rng.choice([DocType.VISIT, DocType.CLINICAL_REPORT, DocType.PROGRESS_REPORT, DocType.FINDING])
        documents.append(make_document(body, doc_type, event_day()))
    documents.sort(key=lambda d: (d.day is None, d.day if d.day is not None else 0, d.doc_id))

    last_contact_day = min(last_day + rng.randint(0, 120), days_since_epoch(dt.date(2100, 12, 31)))
    return PatientRecord(
        patient_id=patient_id,
        sex=sex,
        birth_date=birth,
        deceased=deceased,
        blood_group=blood_group,
        height_cm=height,
        last_contact=date_from_day(last_contact_day),
        diagnoses=tuple(diagnoses),
        labs=tuple(labs),
        medications=tuple(medications),
        examinations=tuple(examinations),
        endpoints=endpoints,
        documents=tuple(documents),
    )
