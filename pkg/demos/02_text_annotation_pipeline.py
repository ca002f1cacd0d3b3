"""The annotation pipeline on German clinical snippets.

Shows dictionary matching (longest match wins), the BIRADS regex rule,
negation detection with scope truncation, hot extension of the user
dictionary, and the comparison of extracted facts against a structured
record (known / NEW / contradiction).

Run:  python3 demos/02_text_annotation_pipeline.py
"""

from cohortexplorer import extract
from cohortexplorer.datamodel import DiagnosisEvent, PatientRecord
from cohortexplorer.query import compare_extraction_to_record

SNIPPETS = [
    "Renale Anämie bestätigt, Therapie mit Erythropoetin.",
    "Kein Anhalt für Hypertonie, aber Diabetes mellitus.",
    "Mammographie beidseits, BI-RADS 4b rechts.",
    "Biopsie wurde vom Patienten abgelehnt.",
    "Kontrolle bei Dr. Weber. Keine Schmerzen.",
]


def show(text, annotations):
    print(f"\n  {text}")
    if not annotations:
        print("    (no annotations)")
    for a in annotations:
        flags = []
        if a.negated:
            flags.append(f"NEGATED by {a.negation_trigger!r}")
        flags.append(a.provenance.value)
        print(f"    [{a.begin:3d},{a.end:3d}) {a.annotation_type.value:12s} {a.surface!r} -> {a.canonical_term} ({', '.join(flags)})")


def main():
    config = extract.default_pipeline_config()
    print(f"pipeline version {config.version}: "
          f"{sum(len(d.entries) for d in config.dictionaries)} dictionary entries, {len(config.rules)} rules")

    for text in SNIPPETS:
        show(text, extract.annotate(text, config))

    # the user dictionary: a missing term is added and recognized after reload
    text = "Sonographisch Nierenzyste links, unverändert."
    print("\nbefore the user adds 'Nierenzyste':")
    show(text, extract.annotate(text, config))
    extended = extract.add_user_entry(config, extract.AnnotationType.DIAGNOSIS, "Nierenzyste", definition="Zyste der Niere")
    print(f"\nafter add_user_entry (version {config.version} -> {extended.version}):")
    show(text, extract.annotate(text, extended))

    # comparison against the structured record: the NEW column
    patient = PatientRecord(
        patient_id="P0001",
        diagnoses=(DiagnosisEvent(term="Diabetes mellitus", day=1000, icd10="E14.9"),),
    )
    annotations = extract.annotate("Kein Anhalt für Diabetes mellitus. Neue Osteoporose.", extended)
    print("\nextraction vs structured record:")
    for annotation, status in compare_extraction_to_record(patient, annotations):
        print(f"    {annotation.surface!r}: {status}")


if __name__ == "__main__":
    main()
