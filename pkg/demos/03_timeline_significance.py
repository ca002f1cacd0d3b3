"""The event timeline: episodes, filters, baselines, significance.

Builds a patient whose AST value rises sharply three days before a
rejection, then walks the filter pipeline a clinician would use: episode
filter (F1), focus range with nearest-event hints (F2), significance
filter with a trailing moving-average baseline (F3), and the re-aligned
chart data.

Run:  python3 demos/03_timeline_significance.py
"""

import json

from cohortexplorer import timeline
from cohortexplorer.datamodel import (
    DiagnosisEvent,
    EndpointEvent,
    EndpointKind,
    LabEvent,
    PatientRecord,
)


def build_patient() -> PatientRecord:
    ast = [(40, 13.0), (55, 14.5), (70, 14.0), (80, 14.0), (90, 14.0), (100, 48.0), (110, 16.0)]
    crea = [(45, 1.3), (75, 1.4), (98, 1.5), (105, 2.8), (120, 1.6)]
    return PatientRecord(
        patient_id="P0001",
        labs=tuple(
            LabEvent(term=term, day=day, numeric_value=value)
            for term, series in (("ASTHP U/I", ast), ("KreatininHP (mg/dl)", crea))
            for day, value in series
        ),
        diagnoses=(DiagnosisEvent(term="Rejection", day=103),),
        endpoints=(
            EndpointEvent(kind=EndpointKind.TRANSPLANTATION, day=60, ordinal=1),
            EndpointEvent(kind=EndpointKind.REJECTION, day=103, ordinal=1),
            EndpointEvent(kind=EndpointKind.FAILURE, day=400, ordinal=1),
        ),
    )


def main():
    patient = build_patient()

    # F1: transplantation episodes
    episodes = timeline.compute_episodes(patient, r=30)
    for ep in episodes:
        print(f"episode {ep.ordinal}: days [{ep.start_day}, {ep.end_day}] "
              f"(transplant {ep.transplant_day}, terminator {ep.terminator_day})")

    # align the chart to the rejection event
    focus = timeline.FocusState.single(103, before=15, after=15)

    # F2 hints: how far away are the nearest events outside the focus point?
    candidates = timeline.surviving_events(patient, "labs", episodes=episodes)
    before, after = timeline.nearest_event_hints(patient, focus, candidates)
    print(f"\nnearest lab event: {before} days before focus, {after} days after")

    # F3: which lab types show a significant change (>= 200% vs 30d baseline)?
    sig = timeline.SignificanceParams(window_days=30, threshold_pct=200.0)
    print("\nlab types with significant changes:")
    for summary in timeline.filter_event_types(patient, "labs", episodes=episodes, sig=sig):
        pct, day = summary.max_deviation
        print(f"  {summary.event_type}: {summary.count} flagged value(s), max {pct:+.1f}% at day {day}")

    # the chart contract: layers aligned to the focus, flags carried along
    series = timeline.build_timeline(
        patient,
        [("labs", "ASTHP U/I"), ("diagnoses", "Rejection")],
        focus,
        timeline.TimelineFilters(episodes=tuple(episodes), use_focus_range=True, significance=sig),
        include_baselines=True,
    )
    print("\nTimelineSeries JSON for the web chart:")
    print(json.dumps(series.to_dict(), indent=2, ensure_ascii=False))

    # re-alignment is a pure recomputation: x-offsets shift, distances stay
    realigned = timeline.build_timeline(patient, [("labs", "ASTHP U/I")], timeline.FocusState.single(100))
    xs = [p.x for p in realigned.layers[0].series[0].points]
    print(f"\nre-aligned to the spike itself: x offsets {xs}")


if __name__ == "__main__":
    main()
