"""Operator entry point: build snapshots, run batch annotation, execute
queries, generate demo cohorts, serve the workbench API.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import demo, extract, ingest, query
from .index import build_index, load_snapshot, save_snapshot


def _cmd_demo(args) -> int:
    knobs = {}
    if args.labs is not None:
        knobs["labs_per_patient"] = args.labs
    if args.diagnoses is not None:
        knobs["diagnoses_per_patient"] = args.diagnoses
    if args.medications is not None:
        knobs["medications_per_patient"] = args.medications
    if args.examinations is not None:
        knobs["examinations_per_patient"] = args.examinations
    if args.documents is not None:
        knobs["documents_per_patient"] = args.documents
    if args.distinct_diagnosis_terms is not None:
        knobs["distinct_diagnosis_terms"] = args.distinct_diagnosis_terms
    records = demo.generate_cohort(args.patients, args.seed, **knobs)
    if args.out:
        ingest.write_patients_jsonl(records, args.out)
    else:
        for record in records:
            sys.stdout.write(ingest.record_to_json_line(record) + "\n")
    return 0


def _cmd_index(args) -> int:
    if args.manifest:
        manifest = ingest.read_manifest(args.manifest)
        result = ingest.ingest(manifest)
        records = result.records
        if args.errors_out and result.errors:
            ingest.write_error_report(result.errors, args.errors_out)
        for err in result.errors:
            print(f"skipped {err.source}:{err.line}: {err.reason}", file=sys.stderr)
        for pid, docs in sorted(result.pending.items()):
            print(f"pending findings for unknown patient {pid}: {', '.join(docs)}", file=sys.stderr)
    else:
        records = ingest.read_patients_jsonl(args.patients)
    index = build_index(records)
    save_snapshot(args.out, records, index)
    counts = ", ".join(f"{kind}={n}" for kind, n in index.child_counts.items())
    print(f"indexed {index.patient_count} patients ({counts}) -> {args.out}")
    return 0


def _cmd_query(args) -> int:
    records, index = load_snapshot(args.snapshot)
    if args.restrictions == "-":
        raw = json.load(sys.stdin)
    else:
        raw = json.loads(Path(args.restrictions).read_text(encoding="utf-8"))
    if isinstance(raw, dict):
        raw = raw.get("restrictions", [])
    restrictions = query.restrictions_from_json(raw)
    result = query.evaluate(index, restrictions)
    for pid in result.patient_ids:
        print(pid)
    return 0


def _cmd_annotate(args) -> int:
    config = extract.default_pipeline_config(
        dict_dir=args.dict_dir, rules_path=args.rules, user_dict_dir=args.user_dict_dir
    )
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {in_dir}")
    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
    try:
        for path in sorted(in_dir.glob("*.txt")):
            text = path.read_text(encoding="utf-8")
            annotations = extract.annotate(text, config)
            line = json.dumps(
                {"doc_id": path.stem, "annotations": [a.to_dict() for a in annotations]},
                ensure_ascii=False,
                separators=(",", ":"),
            )
            out.write(line + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import WorkbenchState, create_app

    records, index = load_snapshot(args.snapshot)
    pipeline = extract.default_pipeline_config(
        dict_dir=args.dict_dir,
        rules_path=args.rules,
        user_dict_dir=Path(args.data_dir) / "dictionaries" / "user",
    )
    state = WorkbenchState(
        records,
        index,
        pipeline=pipeline,
        data_dir=args.data_dir,
        mincount_default=args.mincount_default,
    )
    app = create_app(state, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohort", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_demo = sub.add_parser("demo", help="emit a reproducible synthetic cohort (JSON-lines)")
    p_demo.add_argument("--patients", type=int, required=True)
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--out", default=None)
    p_demo.add_argument("--labs", type=int, default=None, help="labs per patient")
    p_demo.add_argument("--diagnoses", type=int, default=None)
    p_demo.add_argument("--medications", type=int, default=None)
    p_demo.add_argument("--examinations", type=int, default=None)
    p_demo.add_argument("--documents", type=int, default=None)
    p_demo.add_argument("--distinct-diagnosis-terms", type=int, default=None)
    p_demo.set_defaults(func=_cmd_demo)

    p_index = sub.add_parser("index", help="build a snapshot from a manifest or a patients file")
    group = p_index.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", help="INI manifest describing the sources")
    group.add_argument("--patients", help="patients JSON-lines file")
    p_index.add_argument("--out", required=True, help="snapshot output path")
    p_index.add_argument("--errors-out", default=None, help="JSON-lines error report path")
    p_index.set_defaults(func=_cmd_index)

    p_query = sub.add_parser("query", help="evaluate restriction JSON against a snapshot")
    p_query.add_argument("--snapshot", required=True)
    p_query.add_argument("--restrictions", required=True, help="JSON file with a restrictions array, or - for stdin")
    p_query.set_defaults(func=_cmd_query)

    p_annotate = sub.add_parser("annotate", help="batch-annotate a directory of .txt files")
    p_annotate.add_argument("--in", dest="in_dir", required=True)
    p_annotate.add_argument("--out", default=None)
    p_annotate.add_argument("--dict-dir", default=None)
    p_annotate.add_argument("--rules", default=None)
    p_annotate.add_argument("--user-dict-dir", default=None)
    p_annotate.set_defaults(func=_cmd_annotate)

    p_serve = sub.add_parser("serve", help="serve the workbench HTTP API")
    p_serve.add_argument("--snapshot", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--data-dir", default="data")
    p_serve.add_argument("--dict-dir", default=None)
    p_serve.add_argument("--rules", default=None)
    p_serve.add_argument("--mincount-default", type=int, default=5)
    p_serve.add_argument("--static-dir", default=None, help="serve a built web UI from this directory")
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and exit 2, never traceback
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
