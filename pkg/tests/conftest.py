import datetime as dt

import pytest

from cohortexplorer import demo
from cohortexplorer.datamodel import (
    DiagnosisEvent,
    DocType,
    EndpointEvent,
    EndpointKind,
    LabEvent,
    PatientRecord,
    Sex,
    TextDocument,
)
from cohortexplorer.index import build_index


def make_patient(patient_id="P1", diagnoses=(), labs=(), endpoints=(), documents=(), **kwargs):
    """Terse fixture builder. diagnoses: (term, day) or DiagnosisEvent;
    labs: (term, day, value); endpoints: (kind, day, ordinal);
    documents: (doc_id, body) or TextDocument."""
    return PatientRecord(
        patient_id=patient_id,
        sex=kwargs.pop("sex", Sex.F),
        birth_date=kwargs.pop("birth_date", dt.date(1960, 5, 4)),
        diagnoses=tuple(
            d if isinstance(d, DiagnosisEvent) else DiagnosisEvent(term=d[0], day=d[1]) for d in diagnoses
        ),
        labs=tuple(l if isinstance(l, LabEvent) else LabEvent(term=l[0], day=l[1], numeric_value=l[2]) for l in labs),
        endpoints=tuple(
            e if isinstance(e, EndpointEvent) else EndpointEvent(kind=EndpointKind(e[0]), day=e[1], ordinal=e[2])
            for e in endpoints
        ),
        documents=tuple(
            d if isinstance(d, TextDocument) else TextDocument(doc_id=d[0], doc_type=DocType.FINDING, body=d[1])
            for d in documents
        ),
        **kwargs,
    )


@pytest.fixture(scope="session")
def small_cohort():
    return demo.generate_cohort(60, seed=11)


@pytest.fixture(scope="session")
def small_index(small_cohort):
    return build_index(small_cohort)


@pytest.fixture(scope="session")
def demo_cohort():
    # the 185-patient scale of the original demo data set
    return demo.generate_cohort(185, seed=7)


@pytest.fixture(scope="session")
def demo_index(demo_cohort):
    return build_index(demo_cohort)
