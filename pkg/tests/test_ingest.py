import json

import pytest

from cohortexplorer import demo
from cohortexplorer.datamodel import DocType, TextDocument
from cohortexplorer.ingest import (
    CsvColumnMap,
    FindingStore,
    IngestManifest,
    assemble_patients,
    ingest,
    parse_examinations_csv,
    read_manifest,
    read_patients_jsonl,
    record_from_dict,
    record_to_dict,
    upsert_finding,
    write_error_report,
    write_patients_jsonl,
)
from .conftest import make_patient

COLUMNS = CsvColumnMap(
    patient_id_col="PatientID",
    date_col="Datum",
    finding_col="Befund",
    evaluation_col="Beurteilung",
    method_col="Methode",
)


def write_csv(path, lines):
    header = "PatientID;Datum;Methode;Befund;Beurteilung\n"
    path.write_text(header + "".join(lines), encoding="utf-8")


class TestExamCsv:
    def test_two_lines_same_patient(self, tmp_path):
        path = tmp_path / "exams.csv"
        write_csv(
            path,
            [
                "U1;2010-03-01;Mammographie;Herdbefund links;BIRADS 4a\n",
                "U1;2011-05-12;Sonographie;Unauffälliger Befund;\n",
            ],
        )
        result = parse_examinations_csv(path, COLUMNS)
        assert result.patient_ids == ["U1"]
        assert len(result.rows) == 2
        assert not result.errors
        # first line carries finding + evaluation texts, second only finding
        assert len(result.rows[0].documents) == 2
        assert len(result.rows[1].documents) == 1
        assert result.rows[0].examination.method.value == "mammography"

    def test_header_only(self, tmp_path):
        path = tmp_path / "exams.csv"
        write_csv(path, [])
        result = parse_examinations_csv(path, COLUMNS)
        assert result.rows == [] and result.errors == []

    def test_bad_date_is_skipped_and_reported(self, tmp_path):
        path = tmp_path / "exams.csv"
        write_csv(
            path,
            [
                "U1;2010-03-01;CT;Befundtext;\n",
                "U2;am Dienstag;CT;Befundtext;\n",
            ],
        )
        result = parse_examinations_csv(path, COLUMNS)
        assert len(result.rows) == 1
        assert len(result.errors) == 1
        assert result.errors[0].line == 3  # header is line 1
        report = tmp_path / "errors.jsonl"
        write_error_report(result.errors, report)
        entry = json.loads(report.read_text().strip())
        assert entry["line"] == 3 and entry["source"] == "exams.csv"

    def test_german_date_format(self, tmp_path):
        path = tmp_path / "exams.csv"
        write_csv(path, ["U1;01.03.2010;MRT;Befundtext;\n"])
        result = parse_examinations_csv(path, COLUMNS)
        assert not result.errors
        assert result.rows[0].examination.method.value == "mrt"


class TestFindingStore:
    def doc(self, doc_id, body="Befundtext"):
        return TextDocument(doc_id=doc_id, doc_type=DocType.FINDING, day=100, body=body)

    def test_insert_new(self):
        store = FindingStore()
        upsert_finding(store, self.doc("d1"), "P1")
        assert len(store.findings) == 1
        assert store.dirty_patients == {"P1"}

    def test_upsert_same_id_latest_wins(self):
        store = FindingStore()
        upsert_finding(store, self.doc("d1", "alt"), "P1")
        upsert_finding(store, self.doc("d1", "neu"), "P1")
        assert len(store.findings) == 1
        assert store.findings["d1"][1].body == "neu"

    def test_two_findings_one_patient(self):
        store = FindingStore()
        upsert_finding(store, self.doc("d1"), "P1")
        upsert_finding(store, self.doc("d2"), "P1")
        assert store.dirty_patients == {"P1"}
        assert [d.doc_id for d in store.findings_of("P1")] == ["d1", "d2"]

    def test_save_is_deterministic(self, tmp_path):
        def build():
            store = FindingStore()
            upsert_finding(store, self.doc("b"), "P2")
            upsert_finding(store, self.doc("a"), "P1")
            return store

        p1, p2 = tmp_path / "s1.jsonl", tmp_path / "s2.jsonl"
        build().save(p1)
        build().save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = FindingStore.load(p1)
        assert set(loaded.findings) == {"a", "b"}


class TestAssemble:
    def test_patient_with_findings_on_two_dates(self):
        store = FindingStore()
        store.upsert_finding(TextDocument(doc_id="d2", doc_type=DocType.FINDING, day=200, body="später"), "P1")
        store.upsert_finding(TextDocument(doc_id="d1", doc_type=DocType.FINDING, day=100, body="früher"), "P1")
        result = assemble_patients(store, [make_patient("P1")])
        assert len(result.records) == 1
        assert [d.doc_id for d in result.records[0].documents] == ["d1", "d2"]
        assert not result.pending

    def test_no_findings_empty_documents(self):
        result = assemble_patients(FindingStore(), [make_patient("P1")])
        assert result.records[0].documents == ()

    def test_orphan_finding_goes_pending(self):
        store = FindingStore()
        store.upsert_finding(TextDocument(doc_id="dx", doc_type=DocType.FINDING, body="x"), "GHOST")
        result = assemble_patients(store, [make_patient("P1")])
        assert result.pending == {"GHOST": ["dx"]}
        assert result.records[0].documents == ()

    def test_update_never_loses_a_finding(self):
        store = FindingStore()
        store.upsert_finding(TextDocument(doc_id="d1", doc_type=DocType.FINDING, day=1, body="erster"), "P1")
        first = assemble_patients(store, [make_patient("P1")]).records[0]
        assert len(first.documents) == 1
        # second examination of the same patient arrives later
        store.upsert_finding(TextDocument(doc_id="d2", doc_type=DocType.FINDING, day=2, body="zweiter"), "P1")
        second = assemble_patients(store, [make_patient("P1")]).records[0]
        assert [d.doc_id for d in second.documents] == ["d1", "d2"]


class TestJsonl:
    def test_roundtrip_structural_equality(self, tmp_path):
        records = demo.generate_cohort(12, seed=3)
        path = tmp_path / "patients.jsonl"
        write_patients_jsonl(records, path)
        back = read_patients_jsonl(path)
        assert back == records

    def test_roundtrip_is_stable_bytes(self, tmp_path):
        records = demo.generate_cohort(8, seed=5)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_patients_jsonl(records, p1)
        write_patients_jsonl(read_patients_jsonl(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_dict_roundtrip_single(self):
        record = demo.generate_cohort(1, seed=9)[0]
        assert record_from_dict(record_to_dict(record)) == record


class TestManifest:
    def test_full_flow_and_update_equals_rebuild(self, tmp_path):
        # base patients + two CSVs applied (a) all at once (b) as update
        patients = demo.generate_cohort(4, seed=2)
        patients_path = tmp_path / "patients.jsonl"
        write_patients_jsonl(patients, patients_path)
        csv1 = tmp_path / "batch1.csv"
        write_csv(csv1, [f"{patients[0].patient_id};2012-01-05;CT;Erstbefund;\n"])
        csv2 = tmp_path / "batch2.csv"
        write_csv(csv2, [f"{patients[0].patient_id};2013-02-06;MRT;Zweitbefund;\n"])

        store_a = tmp_path / "store_a.jsonl"
        m1 = IngestManifest(
            patients_path=patients_path, examinations_csv=csv1, store_path=store_a, csv_columns=COLUMNS
        )
        ingest(m1)
        m2 = IngestManifest(
            patients_path=patients_path,
            examinations_csv=csv2,
            store_path=store_a,
            csv_columns=COLUMNS,
            mode="update",
        )
        updated = ingest(m2)

        # rebuild over the union: both CSV batches in one store
        store_b = tmp_path / "store_b.jsonl"
        ingest(IngestManifest(patients_path=patients_path, examinations_csv=csv1, store_path=store_b, csv_columns=COLUMNS))
        rebuilt = ingest(
            IngestManifest(
                patients_path=patients_path,
                examinations_csv=csv2,
                store_path=store_b,
                csv_columns=COLUMNS,
                mode="update",
            )
        )
        target = next(r for r in updated.records if r.patient_id == patients[0].patient_id)
        bodies = {d.body for d in target.documents}
        assert {"Erstbefund", "Zweitbefund"} <= bodies
        assert [record_to_dict(r) for r in updated.records] == [record_to_dict(r) for r in rebuilt.records]

    def test_manifest_requires_a_source(self):
        with pytest.raises(ValueError):
            IngestManifest()

    def test_update_requires_existing_store(self, tmp_path):
        with pytest.raises(ValueError):
            IngestManifest(patients_path=tmp_path / "p.jsonl", mode="update", store_path=tmp_path / "missing.jsonl")

    def test_read_manifest_ini(self, tmp_path):
        patients = tmp_path / "patients.jsonl"
        patients.write_text("", encoding="utf-8")
        ini = tmp_path / "manifest.ini"
        ini.write_text(
            "[sources]\npatients = patients.jsonl\nmode = rebuild\n\n"
            "[csv]\npatient_id_col = PatientID\ndate_col = Datum\nfinding_col = Befund\ndelimiter = ;\n",
            encoding="utf-8",
        )
        manifest = read_manifest(ini)
        assert manifest.patients_path == patients.resolve()
        assert manifest.csv_columns.patient_id_col == "PatientID"

    def test_letters_dir(self, tmp_path):
        patients = demo.generate_cohort(2, seed=1)
        patients_path = tmp_path / "patients.jsonl"
        write_patients_jsonl(patients, patients_path)
        letters = tmp_path / "letters"
        letters.mkdir()
        pid = patients[0].patient_id
        (letters / f"{pid}__brief1.txt").write_text("Entlassungsbrief mit Hypertonie.", encoding="utf-8")
        (letters / "UNKNOWN__brief2.txt").write_text("Brief ohne Patient.", encoding="utf-8")
        result = ingest(IngestManifest(patients_path=patients_path, letters_dir=letters))
        target = next(r for r in result.records if r.patient_id == pid)
        assert any(d.doc_id == f"{pid}__brief1" for d in target.documents)
        # unknown letter owners become stub patients (strict id keying)
        assert any(r.patient_id == "UNKNOWN" for r in result.records)
