import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohortexplorer import demo
from cohortexplorer.datamodel import DiagnosisEvent, EndpointKind, LabEvent
from cohortexplorer.extract import Annotation, AnnotationType
from cohortexplorer.index import SchemaError, build_index
from cohortexplorer.query import (
    ChildGroup,
    DayWindow,
    EndpointRelation,
    EndpointSelector,
    KeywordAnyOf,
    KeywordEquals,
    NumericRange,
    QuerySyntaxError,
    Restriction,
    RestrictionParseError,
    TemporalChild,
    compare_extraction_to_record,
    evaluate,
    facet_report,
    free_text_search,
    numeric_interval_report,
    parse_fulltext_expr,
    restriction_from_json,
    restriction_to_json,
)
from . import oracle
from .conftest import make_patient


def r(body, rid="r1"):
    return Restriction(id=rid, body=body)


class TestEvaluateBasics:
    def test_empty_restrictions_match_all(self, demo_cohort, demo_index):
        result = evaluate(demo_index, [])
        assert len(result) == 185
        assert list(result.patient_ids) == sorted(r.patient_id for r in demo_cohort)

    def test_keyword_equals(self, small_cohort, small_index):
        result = evaluate(small_index, [r(KeywordEquals("sex", "F"))])
        assert set(result.patient_ids) == {p.patient_id for p in small_cohort if p.sex.value == "F"}

    def test_keyword_any_of_is_the_go_button(self, small_cohort, small_index):
        variants = ("Anämie, renal", "Renale Anämie", "renale Anämie")
        result = evaluate(small_index, [r(KeywordAnyOf("diagnosis.term", variants))])
        expected = {
            p.patient_id for p in small_cohort if any(d.term in variants for d in p.diagnoses)
        }
        assert set(result.patient_ids) == expected

    def test_deceased_is_a_keyword_facet(self, small_cohort, small_index):
        result = evaluate(small_index, [r(KeywordEquals("deceased", "true"))])
        assert set(result.patient_ids) == {p.patient_id for p in small_cohort if p.deceased}

    def test_unknown_field_raises_schema_error(self, small_index):
        with pytest.raises(SchemaError):
            evaluate(small_index, [r(KeywordEquals("nonsense.field", "x"))])


class TestSameChildSemantics:
    def test_cross_child_conjunction_is_forbidden(self):
        # lab A: creatinin value 2; lab B: urea value 9 -- the group
        # (term=creatinin AND value>5) must NOT match across children
        patient = make_patient(
            "P1",
            labs=[("Creatinin", 10, 2.0), ("Urea", 11, 9.0)],
        )
        idx = build_index([patient])
        group = ChildGroup(
            kind="lab",
            predicates=(
                KeywordEquals("lab.term", "Creatinin"),
                NumericRange("lab.numeric_value", lower=5.0),
            ),
        )
        assert len(evaluate(idx, [r(group)])) == 0

    def test_same_child_match(self):
        patient = make_patient("P1", labs=[("Creatinin", 10, 6.5), ("Urea", 11, 2.0)])
        idx = build_index([patient])
        group = ChildGroup(
            kind="lab",
            predicates=(
                KeywordEquals("lab.term", "Creatinin"),
                NumericRange("lab.numeric_value", lower=5.0),
            ),
        )
        assert len(evaluate(idx, [r(group)])) == 1


def crphp_temporal(lower=-30, upper=0):
    return TemporalChild(
        group=ChildGroup(
            kind="lab",
            predicates=(
                KeywordEquals("lab.term_canon", "crphp_mgl"),
                NumericRange("lab.numeric_value", lower=6.0),
            ),
        ),
        anchor=EndpointSelector(kind=EndpointKind.FAILURE, rule="any"),
        window=DayWindow(lower=lower, upper=upper),
    )


def rejection_after_transplant(lower=0, upper=3):
    return EndpointRelation(
        a=EndpointSelector(kind=EndpointKind.REJECTION, rule="first"),
        b=EndpointSelector(kind=EndpointKind.TRANSPLANTATION, rule="first"),
        window=DayWindow(lower=lower, upper=upper),
    )


class TestTemporal:
    def test_crphp_before_failure_equals_oracle(self, demo_cohort, demo_index):
        body = crphp_temporal()
        engine = list(evaluate(demo_index, [r(body)]).patient_ids)
        assert engine == oracle.evaluate(demo_cohort, [body])
        assert engine  # the demo cohort has matches

    def test_rejection_within_three_days_equals_oracle(self, demo_cohort, demo_index):
        body = rejection_after_transplant()
        engine = list(evaluate(demo_index, [r(body)]).patient_ids)
        assert engine == oracle.evaluate(demo_cohort, [body])
        assert engine

    def test_boundary_day_minus_30_included(self):
        patient = make_patient(
            "P1",
            labs=[LabEvent(term="CRPHP (mg/l)", day=70, numeric_value=7.0)],
            endpoints=[("failure", 100, 1)],
        )
        idx = build_index([patient])
        assert len(evaluate(idx, [r(crphp_temporal())])) == 1  # exactly -30
        # one day earlier falls outside
        patient2 = make_patient(
            "P2",
            labs=[LabEvent(term="CRPHP (mg/l)", day=69, numeric_value=7.0)],
            endpoints=[("failure", 100, 1)],
        )
        idx2 = build_index([patient2])
        assert len(evaluate(idx2, [r(crphp_temporal())])) == 0

    def test_boundary_day_plus_3_included(self):
        patient = make_patient(
            "P1",
            endpoints=[("transplantation", 100, 1), ("rejection", 103, 1)],
        )
        idx = build_index([patient])
        assert len(evaluate(idx, [r(rejection_after_transplant())])) == 1  # exactly +3
        patient2 = make_patient(
            "P2",
            endpoints=[("transplantation", 100, 1), ("rejection", 104, 1)],
        )
        idx2 = build_index([patient2])
        assert len(evaluate(idx2, [r(rejection_after_transplant())])) == 0

    def test_nth_selector_without_such_endpoint_is_no_match(self):
        patient = make_patient("P1", endpoints=[("transplantation", 100, 1)])
        idx = build_index([patient])
        body = EndpointRelation(
            a=EndpointSelector(kind=EndpointKind.TRANSPLANTATION, rule="nth", n=2),
            b=EndpointSelector(kind=EndpointKind.TRANSPLANTATION, rule="first"),
            window=DayWindow(lower=None, upper=None),
        )
        assert len(evaluate(idx, [r(body)])) == 0

    def test_unbounded_window_side(self):
        # "difference at most 500, no lower bound" shape
        patient = make_patient(
            "P1",
            labs=[LabEvent(term="KreatininHP (mg/dl)", day=40_000, numeric_value=3.0)],
            endpoints=[("transplantation", 41_000, 1)],
        )
        idx = build_index([patient])
        body = TemporalChild(
            group=ChildGroup(kind="lab", predicates=(KeywordEquals("lab.term_canon", "kreatininhp_mgdl"),)),
            anchor=EndpointSelector(kind=EndpointKind.TRANSPLANTATION, rule="any"),
            window=DayWindow(lower=None, upper=500),
        )
        assert len(evaluate(idx, [r(body)])) == 1


class TestFacetReport:
    def test_single_shared_term_is_common_to_all(self):
        patients = [make_patient(f"P{i}", diagnoses=[("Hypertonie", 5)]) for i in range(4)]
        idx = build_index(patients)
        report = facet_report(idx, [], "diagnosis.term", mincount=0)
        assert report.total_remaining_patients == 4
        assert report.values[0].term == "Hypertonie"
        assert report.values[0].common_to_all is True

    def test_counts_include_same_field_restrictions(self, demo_cohort, demo_index):
        body = KeywordEquals("diagnosis.term", "Chronische Glomerulonephritis")
        report = facet_report(demo_index, [r(body)], "diagnosis.term", mincount=0)
        total, counts = oracle.facet_counts(demo_cohort, [body], "diagnosis.term")
        assert report.total_remaining_patients == total
        assert {v.term: v.count for v in report.values} == counts
        # the restricted-to term itself is now common to all
        assert next(v for v in report.values if v.term == "Chronische Glomerulonephritis").common_to_all

    def test_common_to_all_can_appear_after_restriction(self):
        # all patients with CGN also have Arterielle Hypertonie; one other
        # patient has neither
        patients = [
            make_patient("P1", diagnoses=[("Chronische Glomerulonephritis", 1), ("Arterielle Hypertonie", 2)]),
            make_patient("P2", diagnoses=[("Chronische Glomerulonephritis", 3), ("Arterielle Hypertonie", 4)]),
            make_patient("P3", diagnoses=[("Gicht", 5)]),
        ]
        idx = build_index(patients)
        before = facet_report(idx, [], "diagnosis.term", mincount=0)
        hypertonie = next(v for v in before.values if v.term == "Arterielle Hypertonie")
        assert not hypertonie.common_to_all
        after = facet_report(
            idx, [r(KeywordEquals("diagnosis.term", "Chronische Glomerulonephritis"))], "diagnosis.term", mincount=0
        )
        hypertonie = next(v for v in after.values if v.term == "Arterielle Hypertonie")
        assert hypertonie.common_to_all

    def test_substring_filters_menu_variants(self, demo_index):
        report = facet_report(demo_index, [], "diagnosis.term", mincount=0, substring="anäm")
        assert {v.term for v in report.values} == {"Anämie, renal", "Renale Anämie", "renale Anämie"}

    def test_mincount_shrinks_menu_not_counts(self, demo_index):
        low = facet_report(demo_index, [], "diagnosis.term", mincount=1)
        high = facet_report(demo_index, [], "diagnosis.term", mincount=100)
        assert low.values == high.values  # counts identical
        assert len(high.menu_values) < len(low.menu_values)
        assert all(v.count >= 100 for v in high.menu_values)

    def test_top_k_ties_break_alphabetically(self):
        patients = [
            make_patient("P1", diagnoses=[("Beta", 1), ("Alpha", 2)]),
            make_patient("P2", diagnoses=[("Beta", 1), ("Alpha", 2)]),
        ]
        idx = build_index(patients)
        report = facet_report(idx, [], "diagnosis.term", top_k=1, mincount=0)
        assert report.top_values[0].term == "Alpha"

    def test_menu_is_alphabetical(self, demo_index):
        report = facet_report(demo_index, [], "diagnosis.term", mincount=1)
        from cohortexplorer.datamodel import normalize_term

        norms = [normalize_term(v.term) for v in report.menu_values]
        assert norms == sorted(norms)


class TestNumericIntervals:
    def test_single_bucket_counts_patients_with_any_value(self, small_cohort, small_index):
        report = numeric_interval_report(small_index, [], "lab.numeric_value", [0.0, 1e9])
        expected = sum(1 for p in small_cohort if any(l.numeric_value is not None for l in p.labs))
        assert report[0][1] == expected

    def test_empty_bucket(self):
        patients = [make_patient("P1", labs=[("X", 1, 5.0)])]
        idx = build_index(patients)
        report = numeric_interval_report(idx, [], "lab.numeric_value", [0.0, 1.0, 10.0])
        assert report[0][1] == 0 and report[1][1] == 1

    def test_non_monotone_edges_rejected(self, small_index):
        with pytest.raises(ValueError):
            numeric_interval_report(small_index, [], "lab.numeric_value", [1.0, 1.0])

    @settings(max_examples=15, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=5000),
        raw_edges=st.lists(st.integers(0, 300), min_size=2, max_size=6, unique=True),
    )
    def test_random_edges_equal_oracle(self, small_cohort, small_index, seed, raw_edges):
        edges = sorted(float(e) for e in raw_edges)
        engine = [count for _, count in numeric_interval_report(small_index, [], "lab.numeric_value", edges)]
        assert engine == oracle.interval_counts(small_cohort, [], "lab.numeric_value", edges)

    def test_patient_level_numeric(self, small_cohort, small_index):
        report = numeric_interval_report(small_index, [], "height_cm", [150.0, 175.0, 200.0])
        expected = oracle.interval_counts(small_cohort, [], "height_cm", [150.0, 175.0, 200.0])
        assert [c for _, c in report] == expected


class TestFulltext:
    def test_roentgenbilder_matches_and_highlights(self, demo_cohort, demo_index):
        res = free_text_search(demo_index, [], "röntgenbilder")
        assert list(res.result.patient_ids) == oracle.fulltext_patients(demo_cohort, "röntgenbilder")
        assert res.result.patient_ids
        # every matched doc highlights the token at its true offsets
        docs = {d.doc_id: d for p in demo_cohort for d in p.documents}
        flagged = [doc_id for ids in res.matched_docs.values() for doc_id in ids]
        assert flagged
        for doc_id in flagged:
            spans = res.highlights[doc_id]
            assert spans
            for start, end in spans:
                token = docs[doc_id].body[start:end]
                assert token.lower().replace("ö", "oe") == "roentgenbilder"

    def test_expression_matching_nothing(self, demo_index):
        res = free_text_search(demo_index, [], "qqqzzz")
        assert len(res.result) == 0
        assert res.matched_docs == {}

    def test_wildcard_and_not_equals_oracle(self, demo_cohort, demo_index):
        expr = "anäm* AND NOT hypertonie"
        res = free_text_search(demo_index, [], expr)
        assert list(res.result.patient_ids) == oracle.fulltext_patients(demo_cohort, expr)

    def test_or_and_parens_equal_oracle(self, demo_cohort, demo_index):
        expr = "(tacrolimus OR prednisolon) AND therapie"
        res = free_text_search(demo_index, [], expr)
        assert list(res.result.patient_ids) == oracle.fulltext_patients(demo_cohort, expr)

    def test_implicit_adjacency_is_and(self, demo_index):
        a = free_text_search(demo_index, [], "kein anhalt")
        b = free_text_search(demo_index, [], "kein AND anhalt")
        assert a.result == b.result

    def test_question_mark_wildcard(self, demo_cohort, demo_index):
        expr = "r?ntgenbilder"
        res = free_text_search(demo_index, [], expr)
        assert list(res.result.patient_ids) == oracle.fulltext_patients(demo_cohort, expr)

    def test_restrictions_narrow_fulltext(self, demo_cohort, demo_index):
        base = KeywordEquals("sex", "F")
        res = free_text_search(demo_index, [r(base)], "röntgenbilder")
        expected = set(oracle.fulltext_patients(demo_cohort, "röntgenbilder")) & set(
            oracle.evaluate(demo_cohort, [base])
        )
        assert set(res.result.patient_ids) == expected

    @pytest.mark.parametrize("bad", ["", "AND", "(offen", "a )", "NOT"])
    def test_syntax_errors_carry_position(self, bad, demo_index):
        with pytest.raises(QuerySyntaxError) as info:
            parse_fulltext_expr(bad)
        assert info.value.position >= 0


class TestRestrictionAlgebra:
    MIX = st.lists(st.integers(min_value=0, max_value=4), min_size=0, max_size=3)

    def bodies(self, picks):
        pool = [
            KeywordEquals("sex", "F"),
            KeywordEquals("diagnosis.term", "Arterielle Hypertonie"),
            ChildGroup(
                kind="lab",
                predicates=(
                    KeywordEquals("lab.term_canon", "crphp_mgl"),
                    NumericRange("lab.numeric_value", lower=6.0),
                ),
            ),
            crphp_temporal(),
            rejection_after_transplant(),
        ]
        return [Restriction(id=f"r{i}", body=pool[p]) for i, p in enumerate(picks)]

    @settings(max_examples=25, deadline=None)
    @given(picks=MIX)
    def test_order_independence(self, small_index, picks):
        restrictions = self.bodies(picks)
        base = evaluate(small_index, restrictions)
        for perm in itertools.permutations(restrictions):
            assert evaluate(small_index, list(perm)) == base

    @settings(max_examples=25, deadline=None)
    @given(picks=MIX, extra=st.integers(min_value=0, max_value=4))
    def test_monotonicity_and_remove_readd(self, small_index, picks, extra):
        restrictions = self.bodies(picks)
        base = evaluate(small_index, restrictions)
        added = restrictions + [Restriction(id="extra", body=self.bodies([extra])[0].body)]
        narrowed = evaluate(small_index, added)
        assert set(narrowed.patient_ids) <= set(base.patient_ids)
        # removing the added restriction restores the previous result exactly
        restored = evaluate(small_index, [x for x in added if x.id != "extra"])
        assert restored == base
        report_before = facet_report(small_index, restrictions, "diagnosis.term", mincount=0)
        report_after = facet_report(small_index, [x for x in added if x.id != "extra"], "diagnosis.term", mincount=0)
        assert report_before == report_after


class TestWireFormat:
    def test_roundtrip(self):
        raw = {
            "id": "q1",
            "type": "temporal_child",
            "kind": "lab",
            "predicates": [
                {"type": "keyword", "field": "term_canon", "term": "crphp_mgl"},
                {"type": "range", "field": "numeric_value", "lower": 6.0},
            ],
            "anchor": {"kind": "failure", "rule": "any"},
            "window": {"lower": -30, "upper": 0},
        }
        parsed = restriction_from_json(raw)
        assert isinstance(parsed.body, TemporalChild)
        assert restriction_to_json(parsed) == raw

    def test_all_types_roundtrip(self):
        raws = [
            {"id": "a", "type": "keyword", "field": "sex", "term": "F"},
            {"id": "b", "type": "keyword", "field": "diagnosis.term", "terms": ["x", "y"]},
            {"id": "c", "type": "range", "field": "height_cm", "lower": 150.0, "upper": 180.0},
            {
                "id": "d",
                "type": "child_group",
                "kind": "lab",
                "predicates": [{"type": "keyword", "field": "term", "term": "X"}],
            },
            {
                "id": "e",
                "type": "endpoint_relation",
                "a": {"kind": "rejection", "rule": "first"},
                "b": {"kind": "transplantation", "rule": "nth", "n": 2},
                "window": {"lower": 0, "upper": 3},
            },
            {"id": "f", "type": "fulltext", "expr": "anäm*", "field": "document.body"},
        ]
        for raw in raws:
            parsed = restriction_from_json(raw)
            back = restriction_to_json(parsed)
            reparsed = restriction_from_json(back)
            assert reparsed.body == parsed.body

    @pytest.mark.parametrize(
        "raw",
        [
            {"type": "nope"},
            {"type": "keyword"},
            {"type": "child_group"},
            {"type": "temporal_child", "kind": "lab", "anchor": {"kind": "bogus"}, "window": {}},
            "not-an-object",
        ],
    )
    def test_parse_errors(self, raw):
        with pytest.raises(RestrictionParseError):
            restriction_from_json(raw)

    def test_ids_are_deterministic_when_missing(self):
        raw = {"type": "keyword", "field": "sex", "term": "F"}
        assert restriction_from_json(raw).id == restriction_from_json(dict(raw)).id


class TestCompareExtraction:
    def ann(self, type_, surface, canonical=None, code=None, negated=False):
        return Annotation(
            annotation_type=type_,
            begin=0,
            end=len(surface),
            surface=surface,
            canonical_term=canonical or surface.lower(),
            code=code,
            negated=negated,
            negation_trigger="kein" if negated else None,
        )

    def test_known_by_normalized_term(self):
        patient = make_patient("P1", diagnoses=[("Arterielle Hypertonie", 5)])
        result = compare_extraction_to_record(
            patient, [self.ann(AnnotationType.DIAGNOSIS, "arterielle hypertonie")]
        )
        assert result[0][1] == "known"

    def test_new_for_unseen_code(self):
        patient = make_patient("P1", diagnoses=[DiagnosisEvent(term="Gicht", day=1, icd10="M10.9")])
        result = compare_extraction_to_record(
            patient, [self.ann(AnnotationType.DIAGNOSIS, "Psoriasis", code="L40.9")]
        )
        assert result[0][1] == "new"

    def test_known_by_code(self):
        patient = make_patient("P1", diagnoses=[DiagnosisEvent(term="Gicht", day=1, icd10="M10.9")])
        result = compare_extraction_to_record(
            patient, [self.ann(AnnotationType.DIAGNOSIS, "Arthropathie", code="M10.9")]
        )
        assert result[0][1] == "known"

    def test_contradiction_for_negated_existing_fact(self):
        patient = make_patient("P1", diagnoses=[("Hypertonie", 5)])
        result = compare_extraction_to_record(
            patient, [self.ann(AnnotationType.DIAGNOSIS, "Hypertonie", negated=True)]
        )
        assert result[0][1] == "contradiction"


class TestOracleEquivalenceRandomSets:
    """Random restriction sets against the linear-scan oracle."""

    def random_restrictions(self, rnd, records):
        import random as _random

        rng = _random.Random(rnd)
        bodies = []
        for _ in range(rng.randint(0, 3)):
            choice = rng.randrange(6)
            if choice == 0:
                bodies.append(KeywordEquals("sex", rng.choice(["F", "M", "unknown"])))
            elif choice == 1:
                terms = sorted({d.term for p in records for d in p.diagnoses})
                if terms:
                    bodies.append(KeywordEquals("diagnosis.term", rng.choice(terms)))
            elif choice == 2:
                bodies.append(
                    ChildGroup(
                        kind="lab",
                        predicates=(
                            KeywordEquals("lab.term_canon", rng.choice(["crphp_mgl", "kreatininhp_mgdl", "asthp_ui"])),
                            NumericRange("lab.numeric_value", lower=rng.uniform(0, 10)),
                        ),
                    )
                )
            elif choice == 3:
                bodies.append(crphp_temporal(lower=-rng.randint(10, 60), upper=0))
            elif choice == 4:
                bodies.append(rejection_after_transplant(0, rng.randint(1, 30)))
            else:
                bodies.append(NumericRange("height_cm", lower=rng.uniform(150, 180)))
        return [Restriction(id=f"r{i}", body=b) for i, b in enumerate(bodies)]

    @settings(max_examples=30, deadline=None)
    @given(rnd=st.integers(min_value=0, max_value=10**6))
    def test_evaluate_equals_oracle(self, small_cohort, small_index, rnd):
        restrictions = self.random_restrictions(rnd, small_cohort)
        engine = list(evaluate(small_index, restrictions).patient_ids)
        assert engine == oracle.evaluate(small_cohort, restrictions)

    @settings(max_examples=20, deadline=None)
    @given(rnd=st.integers(min_value=0, max_value=10**6))
    def test_facets_equal_oracle(self, small_cohort, small_index, rnd):
        restrictions = self.random_restrictions(rnd, small_cohort)
        for field_key in ("diagnosis.term", "lab.term", "endpoint.kind", "sex"):
            report = facet_report(small_index, restrictions, field_key, mincount=0)
            total, counts = oracle.facet_counts(small_cohort, restrictions, field_key)
            assert report.total_remaining_patients == total
            assert {v.term: v.count for v in report.values} == counts
            for v in report.values:
                assert v.common_to_all == (v.count == total)
