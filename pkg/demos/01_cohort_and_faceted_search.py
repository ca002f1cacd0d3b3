"""Faceted cohort search, step by step.

Generates a reproducible synthetic transplant cohort, builds the nested
index, and walks through the search workflow: facet blocks with counts
and common-to-all flags, substring-filtered menus, numeric intervals,
same-child groups, temporal constraints, and free-text search with
highlighting.

Run:  python3 demos/01_cohort_and_faceted_search.py
"""

from cohortexplorer import demo
from cohortexplorer.index import build_index, term_lookup
from cohortexplorer.query import (
    ChildGroup,
    DayWindow,
    EndpointRelation,
    EndpointSelector,
    KeywordAnyOf,
    KeywordEquals,
    NumericRange,
    Restriction,
    TemporalChild,
    evaluate,
    facet_report,
    free_text_search,
    numeric_interval_report,
)
from cohortexplorer.datamodel import EndpointKind


def show_report(report, label):
    print(f"\n--- {label} ({report.total_remaining_patients} patients remaining) ---")
    for v in report.top_values:
        mark = " OK" if v.common_to_all else ""
        print(f"  {v.count:4d}  {v.term}{mark}")


def main():
    print("generating a 185-patient cohort (seed 7) ...")
    records = demo.generate_cohort(185, seed=7)
    index = build_index(records)
    print(f"indexed {index.patient_count} patients, child counts: {index.child_counts}")

    # an empty restriction set matches everyone
    everyone = evaluate(index, [])
    print(f"\nno restrictions -> {len(everyone)} patients")

    # the four most frequent diagnosis terms, with cardinalities
    show_report(facet_report(index, [], "diagnosis.term"), "diagnoses, unrestricted")

    # restrict to one diagnosis; counts and OK-flags update
    cgn = Restriction(id="cgn", body=KeywordEquals("diagnosis.term", "Chronische Glomerulonephritis"))
    show_report(facet_report(index, [cgn], "diagnosis.term"), "after restricting to Chronische Glomerulonephritis")

    # the substring menu: variant spellings of 'renal anaemia'
    print("\nterms matching substring 'anäm':")
    for term, count in term_lookup(index, "diagnosis.term", "anäm"):
        print(f"  {count:4d}  {term}")

    # the Go-button: include all shown variants at once
    variants = tuple(t for t, _ in term_lookup(index, "diagnosis.term", "anäm"))
    anaemia = Restriction(id="go", body=KeywordAnyOf("diagnosis.term", variants))
    print(f"any anaemia variant -> {len(evaluate(index, [anaemia]))} patients")

    # interval facets over a numeric field, recomputed under restrictions
    intervals = numeric_interval_report(index, [anaemia], "height_cm", [150, 160, 170, 180, 190, 200])
    print("\nbody height distribution within the anaemia cohort:")
    for (lo, hi), count in intervals:
        print(f"  [{lo:.0f}, {hi:.0f}): {count}")

    # same-child group: one lab event must satisfy ALL predicates
    crp_high = Restriction(
        id="crp",
        body=ChildGroup(
            kind="lab",
            predicates=(
                KeywordEquals("lab.term_canon", "crphp_mgl"),
                NumericRange("lab.numeric_value", lower=6.0),
            ),
        ),
    )
    print(f"\nCRPHP over 6 mg/l (same lab event) -> {len(evaluate(index, [crp_high]))} patients")

    # temporal constraint: the same group, at most 30 days before a failure
    crp_before_failure = Restriction(
        id="crp30",
        body=TemporalChild(
            group=crp_high.body,
            anchor=EndpointSelector(kind=EndpointKind.FAILURE, rule="any"),
            window=DayWindow(lower=-30, upper=0),
        ),
    )
    print(f"... at most 30 days before a failure -> {len(evaluate(index, [crp_before_failure]))} patients")

    # endpoint relation: first rejection within 3 days after first transplantation
    early_rejection = Restriction(
        id="rej3",
        body=EndpointRelation(
            a=EndpointSelector(kind=EndpointKind.REJECTION, rule="first"),
            b=EndpointSelector(kind=EndpointKind.TRANSPLANTATION, rule="first"),
            window=DayWindow(lower=0, upper=3),
        ),
    )
    print(f"first rejection within 3 days after first transplant -> {len(evaluate(index, [early_rejection]))} patients")

    # free-text search over report texts, with match map and highlights
    result = free_text_search(index, [], "röntgenbilder")
    print(f"\nfree text 'röntgenbilder' -> {len(result.result)} patients")
    pid, docs = next(iter(result.matched_docs.items()))
    doc_id = docs[0]
    spans = result.highlights[doc_id]
    body = next(d.body for p in records if p.patient_id == pid for d in p.documents if d.doc_id == doc_id)
    start, end = spans[0]
    print(f"  e.g. {doc_id}: ...{body[max(0, start - 20):start]}[{body[start:end]}]{body[end:end + 20]}...")

    # restrictions are individually removable: dropping one restores the wider set
    narrowed = evaluate(index, [anaemia, crp_before_failure])
    widened = evaluate(index, [anaemia])
    print(f"\nanaemia + temporal -> {len(narrowed)}; after removing the temporal restriction -> {len(widened)}")


if __name__ == "__main__":
    main()
