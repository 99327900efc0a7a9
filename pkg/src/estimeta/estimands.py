"""Typed treatment-effect definitions and alignment logic.

A trial-level estimand bundles the five attributes that pin down which
treatment effect a trial targeted: population, treatments, endpoint,
population-level summary measure, and one handling strategy per
intercurrent event.  A meta-analytical estimand is the same bundle plus a
matching policy (timepoint tolerance, strict/lenient mode) used to decide
which trial results are allowed into a pooled analysis.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

_WS = re.compile(r"\s+")


def canonical(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return _WS.sub(" ", text.strip()).lower()


def normalize_id(text: str) -> str:
    """Trim and collapse whitespace, preserving case for display."""
    return _WS.sub(" ", text.strip())


class IntercurrentEventStrategy(enum.Enum):
    """The five recognised strategies for handling an intercurrent event."""

    TREATMENT_POLICY = "treatment_policy"
    HYPOTHETICAL = "hypothetical"
    COMPOSITE = "composite"
    WHILE_ON_TREATMENT = "while_on_treatment"
    PRINCIPAL_STRATUM = "principal_stratum"

    @classmethod
    def parse(cls, token: str) -> "IntercurrentEventStrategy":
        key = canonical(token).replace("-", "_").replace(" ", "_")
        for member in cls:
            if key == member.value:
                return member
        known = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown intercurrent-event strategy {token!r} (known: {known})")


class SummaryMeasure(enum.Enum):
    """Population-level summary measures; only mean difference is supported."""

    MEAN_DIFFERENCE = "mean_difference"

    @classmethod
    def parse(cls, token: str) -> "SummaryMeasure":
        key = canonical(token).replace("-", "_").replace(" ", "_")
        for member in cls:
            if key == member.value:
                return member
        raise ValueError(f"unknown summary measure {token!r}")


class Direction(enum.Enum):
    LOWER_IS_BETTER = "lower_is_better"
    HIGHER_IS_BETTER = "higher_is_better"


class MatchingMode(enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class IntercurrentEventHandling:
    """One intercurrent event and the strategy declared for it."""

    event_name: str
    strategy: IntercurrentEventStrategy

    def __post_init__(self) -> None:
        name = canonical(self.event_name)
        if not name:
            raise ValueError("intercurrent event name is empty after canonicalization")
        object.__setattr__(self, "event_name", name)


@dataclass(frozen=True)
class EndpointSpec:
    """An endpoint variable: what was measured, in what units, when."""

    name: str
    units: str
    timepoint_weeks: int
    direction: Direction = Direction.LOWER_IS_BETTER

    def __post_init__(self) -> None:
        if not canonical(self.name):
            raise ValueError("endpoint name must be nonempty")
        if not self.units.strip():
            raise ValueError("endpoint units must be nonempty")
        if self.timepoint_weeks <= 0:
            raise ValueError(f"timepoint_weeks must be positive, got {self.timepoint_weeks}")

    @property
    def key(self) -> str:
        """Canonical name used to group contrasts and arm summaries."""
        return canonical(self.name)


def _freeze_handlings(
    handlings: Iterable[IntercurrentEventHandling],
) -> tuple[IntercurrentEventHandling, ...]:
    out = tuple(handlings)
    seen: set[str] = set()
    for h in out:
        if h.event_name in seen:
            raise ValueError(f"duplicate intercurrent event {h.event_name!r}")
        seen.add(h.event_name)
    return out


@dataclass(frozen=True)
class Estimand:
    """A trial-level treatment-effect definition (five attributes)."""

    label: str
    population: str
    treatments: frozenset[str]
    endpoint: EndpointSpec
    summary_measure: SummaryMeasure
    ie_handlings: tuple[IntercurrentEventHandling, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "treatments", frozenset(normalize_id(t) for t in self.treatments))
        if len(self.treatments) < 2:
            raise ValueError("a comparative estimand needs at least two treatments")
        object.__setattr__(self, "ie_handlings", _freeze_handlings(self.ie_handlings))

    def strategy_for(self, event_name: str) -> Optional[IntercurrentEventStrategy]:
        """Declared strategy for an event, or None if the trial never declared it."""
        key = canonical(event_name)
        if not key:
            raise ValueError("intercurrent event name is empty after canonicalization")
        for h in self.ie_handlings:
            if h.event_name == key:
                return h.strategy
        return None

    @property
    def events(self) -> Mapping[str, IntercurrentEventStrategy]:
        return {h.event_name: h.strategy for h in self.ie_handlings}


@dataclass(frozen=True)
class MetaEstimand(Estimand):
    """A target estimand at the meta-analytical level, with matching policy."""

    timepoint_tolerance_weeks: int = 4
    matching_mode: MatchingMode = MatchingMode.LENIENT

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.timepoint_tolerance_weeks < 0:
            raise ValueError("timepoint tolerance must be nonnegative")

    @classmethod
    def from_estimand(
        cls,
        estimand: Estimand,
        *,
        tolerance_weeks: int = 0,
        mode: MatchingMode = MatchingMode.STRICT,
        label: str | None = None,
    ) -> "MetaEstimand":
        return cls(
            label=label if label is not None else estimand.label,
            population=estimand.population,
            treatments=estimand.treatments,
            endpoint=estimand.endpoint,
            summary_measure=estimand.summary_measure,
            ie_handlings=estimand.ie_handlings,
            timepoint_tolerance_weeks=tolerance_weeks,
            matching_mode=mode,
        )


class Verdict(enum.Enum):
    IDENTICAL = "identical"
    OVERLAPPING = "overlapping"
    DISJOINT = "disjoint"


@dataclass(frozen=True)
class EventDiff:
    """Event-level differences between two estimands' IE handlings."""

    only_in_a: tuple[str, ...]
    only_in_b: tuple[str, ...]
    strategy_conflicts: tuple[tuple[str, IntercurrentEventStrategy, IntercurrentEventStrategy], ...]

    @property
    def empty(self) -> bool:
        return not (self.only_in_a or self.only_in_b or self.strategy_conflicts)


@dataclass(frozen=True)
class AttributeDiff:
    """Per-attribute comparison of two estimands."""

    population: Verdict
    treatments: Verdict
    endpoint: Verdict
    summary_measure: Verdict
    intercurrent_events: Verdict
    event_diff: EventDiff
    notes: tuple[str, ...] = ()

    @property
    def identical(self) -> bool:
        return all(
            v is Verdict.IDENTICAL
            for v in (
                self.population,
                self.treatments,
                self.endpoint,
                self.summary_measure,
                self.intercurrent_events,
            )
        )


def _text_verdict(a: str, b: str) -> Verdict:
    ca, cb = canonical(a), canonical(b)
    if ca == cb:
        return Verdict.IDENTICAL
    if set(ca.split()) & set(cb.split()):
        return Verdict.OVERLAPPING
    return Verdict.DISJOINT


def _set_verdict(a: frozenset[str], b: frozenset[str]) -> Verdict:
    ca = {canonical(x) for x in a}
    cb = {canonical(x) for x in b}
    if ca == cb:
        return Verdict.IDENTICAL
    if ca & cb:
        return Verdict.OVERLAPPING
    return Verdict.DISJOINT


def compare_estimands(a: Estimand, b: Estimand) -> AttributeDiff:
    """Attribute-by-attribute diff of two trial-level estimands.

    Endpoint names and units compare exactly (after canonicalization);
    timepoints compare numerically.  The IE verdict is driven by the
    event-level diff: identical handlings, partially agreeing handlings,
    or no event handled the same way in both.
    """
    notes: list[str] = []

    if a.endpoint.key == b.endpoint.key and canonical(a.endpoint.units) == canonical(b.endpoint.units):
        if a.endpoint.timepoint_weeks == b.endpoint.timepoint_weeks:
            endpoint = Verdict.IDENTICAL
        else:
            endpoint = Verdict.OVERLAPPING
            notes.append(
                f"endpoint timepoint differs ({a.endpoint.timepoint_weeks} vs {b.endpoint.timepoint_weeks} weeks)"
            )
    else:
        endpoint = Verdict.DISJOINT

    ev_a, ev_b = a.events, b.events
    only_a = tuple(sorted(set(ev_a) - set(ev_b)))
    only_b = tuple(sorted(set(ev_b) - set(ev_a)))
    conflicts = tuple(
        (name, ev_a[name], ev_b[name])
        for name in sorted(set(ev_a) & set(ev_b))
        if ev_a[name] is not ev_b[name]
    )
    diff = EventDiff(only_a, only_b, conflicts)
    agreeing = [n for n in set(ev_a) & set(ev_b) if ev_a[n] is ev_b[n]]
    if diff.empty:
        ie = Verdict.IDENTICAL
    elif agreeing:
        ie = Verdict.OVERLAPPING
    else:
        ie = Verdict.DISJOINT
    for name in only_b:
        notes.append(f"event {name!r} declared only in {b.label}")
    for name in only_a:
        notes.append(f"event {name!r} declared only in {a.label}")
    for name, sa, sb in conflicts:
        notes.append(f"event {name!r}: {sa.value} vs {sb.value}")

    return AttributeDiff(
        population=_text_verdict(a.population, b.population),
        treatments=_set_verdict(a.treatments, b.treatments),
        endpoint=endpoint,
        summary_measure=Verdict.IDENTICAL if a.summary_measure is b.summary_measure else Verdict.DISJOINT,
        intercurrent_events=ie,
        event_diff=diff,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class AttributeCheck:
    """Outcome of one attribute in a trial-vs-meta match: ok, warn or fail."""

    status: str
    detail: str = ""


@dataclass(frozen=True)
class MatchVerdict:
    """Whether a trial estimand may contribute to a meta-analytical estimand."""

    compatible: bool
    blockers: tuple[str, ...]
    warnings: tuple[str, ...]
    attributes: Mapping[str, AttributeCheck] = field(default_factory=dict)

    @property
    def reasons(self) -> tuple[str, ...]:
        return self.blockers + self.warnings


def matches_meta(trial_estimand: Estimand, meta: MetaEstimand) -> MatchVerdict:
    """Decide whether a trial estimand is admissible under a meta-estimand.

    Blocking rules: summary measure must agree; endpoint name and units
    must agree with the timepoint within the meta's tolerance; every event
    the meta declares must be declared by the trial with the same strategy.
    Events the trial declares beyond the meta are warnings in lenient mode;
    in strict mode they block unless handled by a strategy the meta already
    uses.  Population and treatment differences never block -- they are
    screened qualitatively and surface as warnings only.
    """
    blockers: list[str] = []
    warnings: list[str] = []
    attrs: dict[str, AttributeCheck] = {}

    if trial_estimand.summary_measure is meta.summary_measure:
        attrs["summary_measure"] = AttributeCheck("ok")
    else:
        detail = (
            f"summary measure {trial_estimand.summary_measure.value} vs {meta.summary_measure.value}"
        )
        attrs["summary_measure"] = AttributeCheck("fail", detail)
        blockers.append(detail)

    te, me = trial_estimand.endpoint, meta.endpoint
    if te.key != me.key or canonical(te.units) != canonical(me.units):
        detail = f"endpoint {te.name!r} [{te.units}] vs {me.name!r} [{me.units}]"
        attrs["endpoint"] = AttributeCheck("fail", detail)
        blockers.append(detail)
    elif abs(te.timepoint_weeks - me.timepoint_weeks) > meta.timepoint_tolerance_weeks:
        detail = (
            f"timepoint {te.timepoint_weeks} vs {me.timepoint_weeks} weeks exceeds "
            f"tolerance {meta.timepoint_tolerance_weeks}"
        )
        attrs["endpoint"] = AttributeCheck("fail", detail)
        blockers.append(detail)
    else:
        attrs["endpoint"] = AttributeCheck("ok")

    trial_events, meta_events = trial_estimand.events, meta.events
    ie_blockers: list[str] = []
    ie_warnings: list[str] = []
    for name, strategy in meta_events.items():
        declared = trial_events.get(name)
        if declared is None:
            ie_blockers.append(f"event not declared: {name}")
        elif declared is not strategy:
            ie_blockers.append(
                f"strategy mismatch for {name}: trial {declared.value} vs meta {strategy.value}"
            )
    meta_strategies = set(meta_events.values())
    for name in sorted(set(trial_events) - set(meta_events)):
        strategy = trial_events[name]
        message = f"extra event: {name} ({strategy.value})"
        if meta.matching_mode is MatchingMode.STRICT and strategy not in meta_strategies:
            ie_blockers.append(message)
        else:
            ie_warnings.append(message)
    if ie_blockers:
        attrs["intercurrent_events"] = AttributeCheck("fail", "; ".join(ie_blockers))
    elif ie_warnings:
        attrs["intercurrent_events"] = AttributeCheck("warn", "; ".join(ie_warnings))
    else:
        attrs["intercurrent_events"] = AttributeCheck("ok")
    blockers.extend(ie_blockers)
    warnings.extend(ie_warnings)

    if canonical(trial_estimand.population) != canonical(meta.population):
        detail = f"population differs: {trial_estimand.population!r} vs {meta.population!r}"
        attrs["population"] = AttributeCheck("warn", detail)
        warnings.append(detail)
    else:
        attrs["population"] = AttributeCheck("ok")

    trial_treatments = {canonical(t) for t in trial_estimand.treatments}
    meta_treatments = {canonical(t) for t in meta.treatments}
    if not trial_treatments <= meta_treatments:
        extra = sorted(trial_treatments - meta_treatments)
        detail = "treatments outside meta scope: " + ", ".join(extra)
        attrs["treatments"] = AttributeCheck("warn", detail)
        warnings.append(detail)
    else:
        attrs["treatments"] = AttributeCheck("ok")

    return MatchVerdict(
        compatible=not blockers,
        blockers=tuple(blockers),
        warnings=tuple(warnings),
        attributes=attrs,
    )


ALIGNMENT_COLUMNS = (
    "population",
    "treatments",
    "endpoint",
    "summary_measure",
    "intercurrent_events",
)


@dataclass(frozen=True)
class AlignmentRow:
    label: str
    verdict: MatchVerdict

    def cell(self, attribute: str) -> AttributeCheck:
        return self.verdict.attributes.get(attribute, AttributeCheck("ok"))


@dataclass(frozen=True)
class AlignmentReport:
    """One row per trial estimand, one column per attribute, vs one meta-estimand."""

    meta_label: str
    rows: tuple[AlignmentRow, ...]

    @property
    def feasible(self) -> bool:
        return all(row.verdict.compatible for row in self.rows)


def heterogeneity_matrix(
    estimands: Sequence[tuple[str, Estimand]] | Sequence[Estimand],
    meta: MetaEstimand,
) -> AlignmentReport:
    """Cross-trial alignment table against a target meta-estimand.

    Accepts either bare estimands (rows named by their labels) or
    (row_name, estimand) pairs for callers that want trial-qualified names.
    """
    items = list(estimands)
    if not items:
        raise ValueError("heterogeneity_matrix needs at least one estimand")
    rows = []
    for item in items:
        if isinstance(item, Estimand):
            name, estimand = item.label, item
        else:
            name, estimand = item
        rows.append(AlignmentRow(label=name, verdict=matches_meta(estimand, meta)))
    return AlignmentReport(meta_label=meta.label, rows=tuple(rows))
