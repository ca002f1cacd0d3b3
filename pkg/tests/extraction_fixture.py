"""Fixed pipeline config and sentence corpus for the extraction goldens.

The dictionaries here are frozen test fixtures, independent of the
shipped starter dictionaries, so golden files never move when the
package data evolves. Sentences cover: positive hits, negations
(forward, backward, multi-word trigger), conjunction truncation, window
truncation, sentence-boundary truncation, multi-word longest-match, and
BIRADS rule variants.
"""

from cohortexplorer.extract import (
    AnnotationType,
    DictEntry,
    Dictionary,
    DictTier,
    NegationTrigger,
    PipelineConfig,
    RuleSpec,
)

BIRADS_PATTERN = r"(?i)\b(?:BI[- ]?)?RADS[:\s]*(?P<canon>(?:[0-6]|IV|VI|V|I{1,3})(?:\s*[a-c])?)\b"


def _dict(annotation_type, *terms_and_codes):
    entries = tuple(
        DictEntry(term=t[0], code=t[1]) if isinstance(t, tuple) else DictEntry(term=t) for t in terms_and_codes
    )
    return Dictionary(annotation_type=annotation_type, entries=entries, tier=DictTier.SYSTEM)


def fixture_config() -> PipelineConfig:
    return PipelineConfig(
        dictionaries=(
            _dict(
                AnnotationType.DIAGNOSIS,
                ("Hypertonie", "I10"),
                ("Arterielle Hypertonie", "I10"),
                ("Anämie", "D64.9"),
                ("Renale Anämie", "D63.8"),
                ("Chronische Glomerulonephritis", "N03.9"),
                ("Diabetes mellitus", "E14.9"),
                ("Diabetes mellitus Typ 2", "E11.9"),
                ("Osteoporose", "M81.9"),
            ),
            _dict(AnnotationType.DISORDER, "Fieber", "Schmerzen", "Ödeme", "Metastasen", "Herdbefund", "Komplikationen"),
            _dict(AnnotationType.EXAMINATION, "Sonographie", "Mammographie", "Röntgen"),
            _dict(AnnotationType.PROCEDURE, ("Nierentransplantation", "5-555"), ("Hämodialyse", "8-854"), "Biopsie"),
            _dict(AnnotationType.MEDICATION, ("Tacrolimus", "L04AD02"), ("Prednisolon", "H02AB06")),
            _dict(AnnotationType.LAB_VALUE, "CRPHP (mg/l)", "KreatininHP (mg/dl)"),
        ),
        rules=(RuleSpec(name="birads", pattern=BIRADS_PATTERN, annotation_type=AnnotationType.BIRADS),),
        negation_triggers=(
            NegationTrigger("kein"),
            NegationTrigger("keine"),
            NegationTrigger("keinen"),
            NegationTrigger("nicht"),
            NegationTrigger("ohne"),
            NegationTrigger("ausgeschlossen", direction="backward"),
            NegationTrigger("Ausschluss von"),
            NegationTrigger("verneint"),
            NegationTrigger("negativ"),
            NegationTrigger("abgelehnt", direction="backward"),
            NegationTrigger("verweigert", direction="backward"),
        ),
    )


SENTENCES: list[tuple[str, str]] = [
    # positive mentions
    ("s01", "Arterielle Hypertonie besteht weiterhin."),
    ("s02", "Diabetes mellitus seit 1998."),
    ("s03", "Bekannte Osteoporose."),
    ("s04", "Tacrolimus und Prednisolon fortgesetzt."),
    ("s05", "Sonographie der Nieren unauffällig."),
    ("s06", "Zustand nach Nierentransplantation."),
    ("s07", "Hämodialyse dreimal wöchentlich."),
    ("s08", "Laborkontrolle zeigt Anämie."),
    # multi-word longest match
    ("s09", "Renale Anämie bestätigt."),
    ("s10", "Verdacht auf renale Anämie."),
    ("s11", "Chronische Glomerulonephritis als Grunderkrankung."),
    ("s12", "Diabetes mellitus Typ 2 bekannt."),
    # negation, forward triggers
    ("s13", "Kein Anhalt für Hypertonie."),
    ("s14", "Keine Anämie nachweisbar."),
    ("s15", "Ausschluss von Diabetes mellitus."),
    ("s16", "Ohne Hinweis auf Osteoporose."),
    # negation, backward triggers
    ("s17", "Hypertonie wurde ausgeschlossen."),
    ("s18", "Biopsie wurde vom Patienten abgelehnt."),
    ("s19", "Metastasen ausgeschlossen."),
    ("s20", "Nicht bestätigt: Anämie."),
    # conjunction truncation
    ("s21", "Kein Anhalt für Hypertonie, aber Diabetes mellitus."),
    ("s22", "Keine Anämie, jedoch Osteoporose."),
    ("s23", "Kein Fieber, sondern Schmerzen."),
    # window truncation: Hypertonie is the 9th token, outside the 6-token scope
    ("s24", "Kein eindeutiger Hinweis in der aktuellen Untersuchung auf Hypertonie."),
    # sentence-boundary truncation
    ("s25", "Kein Befund. Hypertonie besteht."),
    # BIRADS rule variants
    ("s26", "Mammographie rechts, BIRADS 4b."),
    ("s27", "BI-RADS: 3 links."),
    ("s28", "Einstufung als BI RADS IV."),
    ("s29", "Kontrolle bei BIRADS 2 empfohlen."),
    ("s30", "Herdbefund links, birads 4a."),
    ("s31", "BIRADS 5 hochgradig malignitätsverdächtig."),
    # abbreviation guard + mixed
    ("s32", "Therapie mit z.B. Tacrolimus ohne Komplikationen."),
    ("s33", "Kontrolle bei Dr. Weber. Keine Schmerzen."),
    ("s34", "CRPHP (mg/l) deutlich erhöht."),
    ("s35", "Verlaufskontrolle in 6 Wochen empfohlen."),
    ("s36", "Unter Prednisolon keine Ödeme mehr."),
]


def golden_payload() -> list[dict]:
    from cohortexplorer.extract import annotate

    config = fixture_config()
    return [
        {"id": sid, "text": text, "annotations": [a.to_dict() for a in annotate(text, config)]}
        for sid, text in SENTENCES
    ]


def golden_bytes() -> bytes:
    import json

    return (json.dumps(golden_payload(), ensure_ascii=False, indent=2) + "\n").encode("utf-8")
