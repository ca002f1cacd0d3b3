"""The workbench HTTP API, end to end, without opening a port.

Drives the FastAPI app through an in-process test client: search with
restrictions, facet blocks, annotation with a dictionary hot-add,
timeline data, and saved result sets. The same app serves real traffic
via `cohort serve --snapshot <file>`.

Run:  python3 demos/04_workbench_api.py
"""

import json
import tempfile

from fastapi.testclient import TestClient

from cohortexplorer import demo
from cohortexplorer.server import WorkbenchState, create_app

CRPHP_BEFORE_FAILURE = {
    "id": "crp30",
    "type": "temporal_child",
    "kind": "lab",
    "predicates": [
        {"type": "keyword", "field": "term_canon", "term": "crphp_mgl"},
        {"type": "range", "field": "numeric_value", "lower": 6.0},
    ],
    "anchor": {"kind": "failure", "rule": "any"},
    "window": {"lower": -30, "upper": 0},
}


def main():
    records = demo.generate_cohort(185, seed=7)
    with tempfile.TemporaryDirectory() as data_dir:
        state = WorkbenchState(records, data_dir=data_dir)
        client = TestClient(create_app(state))

        body = client.post("/api/search", json={"restrictions": [CRPHP_BEFORE_FAILURE], "limit": 3}).json()
        print(f"POST /api/search -> total {body['total']}; first profiles:")
        for profile in body["patient_profiles"]:
            print(f"  {profile['patient_id']}: {profile['sex']}, {profile['age_years']}y, "
                  f"{profile['basic_disease']}, transplants={profile['transplant_count']}")

        facets = client.get("/api/facets", params={"block": "Diagnosen", "top_k": 4}).json()
        term_facet = next(f for f in facets["facets"] if f["field"] == "diagnosis.term")
        print(f"\nGET /api/facets?block=Diagnosen -> {len(term_facet['values'])} values, top: {term_facet['top_values']}")

        annotated = client.post("/api/annotate", json={"text": "Kein Anhalt für Hypertonie."}).json()
        a = annotated["annotations"][0]
        print(f"\nPOST /api/annotate -> {a['surface']} negated={a['negated']} (pipeline v{annotated['pipeline_version']})")

        added = client.post("/api/dictionary", json={"type": "diagnosis", "term": "Nierenzyste"})
        print(f"POST /api/dictionary -> {added.status_code}, pipeline v{added.json()['pipeline_version']}")

        patient_id = body["patient_profiles"][0]["patient_id"]
        series = client.post(
            "/api/timeline",
            json={
                "patient_id": patient_id,
                "selected_types": [{"tab": "labs", "type": "CRPHP (mg/l)"}],
                "focus": {"align": "transplants"},
                "filters": {"significance": {"window_days": 30, "threshold_pct": 100.0}},
                "include_baselines": True,
            },
        ).json()
        print(f"\nPOST /api/timeline for {patient_id} -> {len(series['layers'])} layer(s)")
        print(json.dumps(series["layers"][0], indent=2, ensure_ascii=False)[:400], "...")

        saved = client.post("/api/resultsets", json={"name": "crp-vor-versagen"})
        listed = client.get("/api/resultsets").json()
        print(f"\nPOST /api/resultsets -> {saved.status_code}; saved sets: {[e['name'] for e in listed['resultsets']]}")

    print("\nTo serve over HTTP instead:")
    print("  cohort demo --patients 185 --seed 7 --out patients.jsonl")
    print("  cohort index --patients patients.jsonl --out cohort.snap")
    print("  cohort serve --snapshot cohort.snap --port 8080")


if __name__ == "__main__":
    main()
