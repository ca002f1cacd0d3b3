"""Focus-aligned event series for a single patient.

The chart splits a patient's history into one horizontal layer per
transplantation (first at the bottom); every layer is aligned to a focus
point so the x-axis is "days before/after the focus". Three independent
filters narrow the displayed events: transplantation episodes (F1), a day
window around the focus (F2), and a significance test against a trailing
moving-average baseline (F3, laboratory values only). Each filter is
computed against the raw record, so activation order never matters.

All functions are pure over immutable PatientRecords.
"""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass

from .datamodel import EndpointKind, PatientRecord, normalize_term

log = logging.getLogger(__name__)

DEFAULT_EPISODE_RANGE = 30
DEFAULT_BASELINE_WINDOW = 30
DEFAULT_THRESHOLD_PCT = 50.0

_TERMINATORS = (EndpointKind.FAILURE, EndpointKind.DEATH)


@dataclass(frozen=True)
class Episode:
    """Interval from r days before a transplantation until r days after
    its terminating failure/death (or the transplantation itself when
    neither happened)."""

    ordinal: int
    start_day: int
    end_day: int
    transplant_day: int
    terminator_day: int | None
    r: int

    def contains(self, day: int) -> bool:
        return self.start_day <= day <= self.end_day


@dataclass(frozen=True)
class SignificanceParams:
    window_days: int = DEFAULT_BASELINE_WINDOW
    threshold_pct: float = DEFAULT_THRESHOLD_PCT

    def __post_init__(self):
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        if self.threshold_pct <= 0:
            raise ValueError("threshold_pct must be positive")


@dataclass(frozen=True)
class FocusState:
    """Focus points per layer (layer None applies to every layer, the
    single-point case when aligned to an arbitrary clicked event) plus the
    focus-range bounds in days."""

    focus_points: tuple[tuple[int | None, int], ...]
    before: int = 0
    after: int = 0

    def __post_init__(self):
        if self.before < 0 or self.after < 0:
            raise ValueError("focus range bounds must be >= 0")
        if not self.focus_points:
            raise ValueError("focus state needs at least one focus point")

    @classmethod
    def single(cls, day: int, before: int = 0, after: int = 0) -> "FocusState":
        return cls(focus_points=((None, day),), before=before, after=after)

    @classmethod
    def at_transplants(cls, patient: PatientRecord, before: int = 0, after: int = 0) -> "FocusState":
        transplants = sorted(patient.endpoints_of_kind(EndpointKind.TRANSPLANTATION), key=lambda e: e.day)
        if not transplants:
            return cls.single(0, before, after)
        return cls(focus_points=tuple((e.ordinal, e.day) for e in transplants), before=before, after=after)

    def focus_day_for(self, layer: int) -> int:
        fallback = None
        for layer_ordinal, day in self.focus_points:
            if layer_ordinal == layer:
                return day
            if layer_ordinal is None:
                fallback = day
        if fallback is not None:
            return fallback
        # align every layer to the first point when none matches exactly
        return self.focus_points[0][1]


@dataclass(frozen=True)
class TimelineEvent:
    event_type: str
    day: int
    tab: str  # "diagnoses" | "labs"
    value: float | None = None
    deviation_pct: float | None = None


@dataclass(frozen=True)
class TypeSummary:
    event_type: str
    count: int
    nearest_offset: int | None = None  # closest |day - focus| when a focus is given
    max_deviation: tuple[float, int] | None = None  # (deviation_pct, day) under F3


def compute_episodes(patient: PatientRecord, r: int) -> list[Episode]:
    """One episode per transplantation. The terminating event is the
    earliest failure-or-death on/after the transplant day and before the
    next transplant."""
    if r < 0:
        raise ValueError("episode range must be >= 0")
    transplants = sorted(patient.endpoints_of_kind(EndpointKind.TRANSPLANTATION), key=lambda e: (e.day, e.ordinal))
    terminators = sorted(
        (e.day for e in patient.endpoints if e.kind in _TERMINATORS),
    )
    episodes = []
    for i, t in enumerate(transplants):
        next_day = transplants[i + 1].day if i + 1 < len(transplants) else None
        terminator = next(
            (d for d in terminators if d >= t.day and (next_day is None or d < next_day)),
            None,
        )
        end_anchor = terminator if terminator is not None else t.day
        episodes.append(
            Episode(
                ordinal=t.ordinal,
                start_day=t.day - r,
                end_day=end_anchor + r,
                transplant_day=t.day,
                terminator_day=terminator,
                r=r,
            )
        )
    return episodes


@dataclass(frozen=True)
class Layer:
    ordinal: int
    start_day: float
    end_day: float  # half-open [start, end)


def layers_of(patient: PatientRecord) -> list[Layer]:
    """Chart layers: boundaries at transplant days, first layer extending
    to the past, last to the future. Patients without transplantations get
    one layer with ordinal 0."""
    transplants = sorted(patient.endpoints_of_kind(EndpointKind.TRANSPLANTATION), key=lambda e: (e.day, e.ordinal))
    if not transplants:
        return [Layer(ordinal=0, start_day=float("-inf"), end_day=float("inf"))]
    layers = []
    for i, t in enumerate(transplants):
        start = float("-inf") if i == 0 else float(t.day)
        end = float(transplants[i + 1].day) if i + 1 < len(transplants) else float("inf")
        layers.append(Layer(ordinal=t.ordinal, start_day=start, end_day=end))
    return layers


def layer_for_day(layers: list[Layer], day: int) -> Layer:
    for layer in layers:
        if layer.start_day <= day < layer.end_day:
            return layer
    return layers[-1]


def baseline(series: list[tuple[int, float]], at_day: int, window_days: int) -> float | None:
    """Arithmetic mean of the values in the strictly-prior trailing window
    [at_day - window_days, at_day); absent when the window is empty."""
    days = [d for d, _ in series]
    lo = bisect_left(days, at_day - window_days)
    hi = bisect_left(days, at_day)
    if lo >= hi:
        return None
    window = [v for _, v in series[lo:hi]]
    return sum(window) / len(window)


def deviation_pct(value: float, base: float) -> float:
    """Signed percent deviation from the baseline: rises positive, drops
    negative. Undefined for base 0 (callers skip and log)."""
    if base == 0:
        raise ZeroDivisionError("baseline is zero; deviation undefined")
    return (value - base) / abs(base) * 100.0


def _lab_series(patient: PatientRecord) -> dict[str, list[tuple[int, float]]]:
    series: dict[str, list[tuple[int, float]]] = {}
    for lab in patient.labs:
        if lab.numeric_value is None:
            continue
        series.setdefault(lab.term, []).append((lab.day, lab.numeric_value))
    for values in series.values():
        values.sort()
    return series


def _all_events(patient: PatientRecord, tab: str, sig: SignificanceParams | None) -> list[TimelineEvent]:
    if tab == "diagnoses":
        return [TimelineEvent(event_type=d.term, day=d.day, tab=tab) for d in patient.diagnoses]
    if tab != "labs":
        raise ValueError(f"unknown tab: {tab!r}")
    events = []
    series = _lab_series(patient) if sig is not None else {}
    zero_base_logged: set[str] = set()
    for lab in patient.labs:
        dev = None
        if sig is not None and lab.numeric_value is not None:
            base = baseline(series[lab.term], lab.day, sig.window_days)
            if base is not None:
                if base == 0:
                    if lab.term not in zero_base_logged:
                        log.info("baseline 0 for series %r; deviations undefined", lab.term)
                        zero_base_logged.add(lab.term)
                else:
                    dev = deviation_pct(lab.numeric_value, base)
        events.append(
            TimelineEvent(event_type=lab.term, day=lab.day, tab=tab, value=lab.numeric_value, deviation_pct=dev)
        )
    return events


def surviving_events(
    patient: PatientRecord,
    tab: str,
    episodes: list[Episode] | None = None,
    focus: FocusState | None = None,
    sig: SignificanceParams | None = None,
) -> list[TimelineEvent]:
    """Events passing every ACTIVE filter. F1: inside some episode. F2:
    within [focus-before, focus+after] of the event's layer focus. F3
    (labs only): the value deviates at least threshold_pct from its
    trailing baseline. Filters compose set-wise, so order cannot matter."""
    if tab == "diagnoses":
        sig = None  # F3 only applies to laboratory tests
    events = _all_events(patient, tab, sig)
    layers = layers_of(patient)
    out = []
    for ev in events:
        if episodes is not None and not any(ep.contains(ev.day) for ep in episodes):
            continue
        if focus is not None:
            fd = focus.focus_day_for(layer_for_day(layers, ev.day).ordinal)
            if not (fd - focus.before <= ev.day <= fd + focus.after):
                continue
        if sig is not None:
            if ev.deviation_pct is None or abs(ev.deviation_pct) < sig.threshold_pct:
                continue
        out.append(ev)
    return out


def filter_event_types(
    patient: PatientRecord,
    tab: str,
    episodes: list[Episode] | None = None,
    focus: FocusState | None = None,
    sig: SignificanceParams | None = None,
    term_substring: str | None = None,
) -> list[TypeSummary]:
    """Aggregate surviving events into a per-type list with counts,
    nearest-to-focus offsets and (labs under F3) the highest deviation."""
    survivors = surviving_events(patient, tab, episodes, focus, sig)
    layers = layers_of(patient)
    needle = normalize_term(term_substring) if term_substring else ""
    by_type: dict[str, list[TimelineEvent]] = {}
    for ev in survivors:
        by_type.setdefault(ev.event_type, []).append(ev)

    summaries = []
    for event_type, events in by_type.items():
        if needle and needle not in normalize_term(event_type):
            continue
        nearest = None
        if focus is not None:
            nearest = min(abs(ev.day - focus.focus_day_for(layer_for_day(layers, ev.day).ordinal)) for ev in events)
        max_dev = None
        if sig is not None and tab == "labs":
            flagged = [ev for ev in events if ev.deviation_pct is not None]
            if flagged:
                best = max(flagged, key=lambda ev: (abs(ev.deviation_pct), -ev.day))
                max_dev = (best.deviation_pct, best.day)
        summaries.append(TypeSummary(event_type=event_type, count=len(events), nearest_offset=nearest, max_deviation=max_dev))
    summaries.sort(key=lambda s: (-s.count, normalize_term(s.event_type), s.event_type))
    return summaries


def nearest_event_hints(
    patient: PatientRecord, focus: FocusState, events: list[TimelineEvent]
) -> tuple[int | None, int | None]:
    """Smallest distance to an event strictly before / strictly after the
    focus point of its layer (events exactly at the focus count for
    neither side), minimized across layers."""
    layers = layers_of(patient)
    before = None
    after = None
    for ev in events:
        fd = focus.focus_day_for(layer_for_day(layers, ev.day).ordinal)
        if ev.day < fd:
            dist = fd - ev.day
            before = dist if before is None else min(before, dist)
        elif ev.day > fd:
            dist = ev.day - fd
            after = dist if after is None else min(after, dist)
    return before, after


@dataclass(frozen=True)
class SeriesPoint:
    x: int
    y: float | None = None
    label: str | None = None


@dataclass(frozen=True)
class FlaggedPoint:
    x: int
    y: float
    deviation_pct: float


@dataclass(frozen=True)
class TypeSeries:
    event_type: str
    tab: str
    points: tuple[SeriesPoint, ...]
    baseline_points: tuple[SeriesPoint, ...] = ()
    flags: tuple[FlaggedPoint, ...] = ()


@dataclass(frozen=True)
class TimelineLayer:
    ordinal: int
    focus_day: int
    series: tuple[TypeSeries, ...]


@dataclass(frozen=True)
class TimelineSeries:
    layers: tuple[TimelineLayer, ...]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "ordinal": layer.ordinal,
                    "focus_day": layer.focus_day,
                    "series": [
                        {
                            "type": s.event_type,
                            "kind": s.tab,
                            "points": [
                                {"x": p.x, **({"y": p.y} if p.y is not None else {}), **({"label": p.label} if p.label else {})}
                                for p in s.points
                            ],
                            **(
                                {"baseline": [{"x": p.x, "y": p.y} for p in s.baseline_points]}
                                if s.baseline_points
                                else {}
                            ),
                            "flags": [{"x": f.x, "y": f.y, "deviation_pct": f.deviation_pct} for f in s.flags],
                        }
                        for s in layer.series
                    ],
                }
                for layer in self.layers
            ]
        }


@dataclass(frozen=True)
class TimelineFilters:
    """Filter activation for the chart: F1 via episodes, F2 via the focus
    range flag, F3 via significance params (flags only; the chart keeps
    unflagged points so the line stays drawable)."""

    episodes: tuple[Episode, ...] | None = None
    use_focus_range: bool = False
    significance: SignificanceParams | None = None


def build_timeline(
    patient: PatientRecord,
    selected_types: list[tuple[str, str]],
    focus: FocusState,
    filters: TimelineFilters = TimelineFilters(),
    include_baselines: bool = False,
) -> TimelineSeries:
    """Chart data: one layer per transplantation (first at the bottom),
    x = day - layer focus day. Selected types with no surviving events
    keep an empty series so the legend still lists them."""
    if not selected_types:
        raise ValueError("selected_types must be nonempty")
    layers = layers_of(patient)
    episodes = list(filters.episodes) if filters.episodes is not None else None
    range_focus = focus if filters.use_focus_range else None
    sig = filters.significance

    lab_series = _lab_series(patient)
    survivors_by_tab = {
        tab: surviving_events(patient, tab, episodes, range_focus, None)
        for tab in {tab for tab, _ in selected_types}
    }
    # deviations for flags are always computed on the raw series
    dev_by_key: dict[tuple[str, int, float], float] = {}
    if sig is not None:
        for ev in _all_events(patient, "labs", sig):
            if ev.deviation_pct is not None and ev.value is not None:
                dev_by_key[(ev.event_type, ev.day, ev.value)] = ev.deviation_pct

    out_layers = []
    for layer in layers:
        fd = focus.focus_day_for(layer.ordinal)
        series_list = []
        for tab, event_type in selected_types:
            events = [
                ev
                for ev in survivors_by_tab[tab]
                if ev.event_type == event_type and layer.start_day <= ev.day < layer.end_day
            ]
            events.sort(key=lambda ev: ev.day)
            points = []
            flags = []
            for ev in events:
                x = ev.day - fd
                if tab == "labs":
                    points.append(SeriesPoint(x=x, y=ev.value))
                    if sig is not None and ev.value is not None:
                        dev = dev_by_key.get((ev.event_type, ev.day, ev.value))
                        if dev is not None and abs(dev) >= sig.threshold_pct:
                            flags.append(FlaggedPoint(x=x, y=ev.value, deviation_pct=dev))
                else:
                    points.append(SeriesPoint(x=x, label=ev.event_type))
            baseline_points = ()
            if include_baselines and tab == "labs" and event_type in lab_series:
                window = (sig or SignificanceParams()).window_days
                pts = []
                for ev in events:
                    base = baseline(lab_series[event_type], ev.day, window)
                    if base is not None:
                        pts.append(SeriesPoint(x=ev.day - fd, y=base))
                baseline_points = tuple(pts)
            series_list.append(
                TypeSeries(
                    event_type=event_type,
                    tab=tab,
                    points=tuple(points),
                    baseline_points=baseline_points,
                    flags=tuple(flags),
                )
            )
        out_layers.append(TimelineLayer(ordinal=layer.ordinal, focus_day=fd, series=tuple(series_list)))
    return TimelineSeries(layers=tuple(out_layers))
