"""Evidence-base ingestion: parsing, derivation, and validation.

Accepts a section-tagged CSV or a nested JSON document describing trials,
trial-level estimands, relative-effect contrasts, and per-arm summaries.
Uncertainty is completed at parse time: a contrast may carry a reported
standard error, a confidence interval (SE back-calculated from its width),
or nothing at all, in which case the SE is derived from the two arms'
confidence intervals.  The precedence is reported > interval > arms.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Mapping, Optional, Sequence, Union

from .estimands import (
    Direction,
    EndpointSpec,
    Estimand,
    IntercurrentEventHandling,
    IntercurrentEventStrategy,
    SummaryMeasure,
    canonical,
    normalize_id,
)
from .normal import z_for_level


class EvidenceFormatError(ValueError):
    """Schema or invariant violation in an evidence file."""

    def __init__(self, message: str, *, locator: str | None = None):
        self.locator = locator
        super().__init__(f"{locator}: {message}" if locator else message)


def se_from_ci(lower: float, upper: float, level: float = 0.95) -> float:
    """Back-calculate a standard error from a normal-based confidence interval.

    se = (upper - lower) / (2 z), with z the standard-normal quantile at
    (1 + level) / 2.
    """
    if not (math.isfinite(lower) and math.isfinite(upper)):
        raise ValueError(f"confidence bounds must be finite, got ({lower!r}, {upper!r})")
    if lower >= upper:
        raise ValueError(f"ci_lower must be below ci_upper, got ({lower!r}, {upper!r})")
    return (upper - lower) / (2.0 * z_for_level(level))


class UncertaintySource(enum.Enum):
    REPORTED_SE = "reported_se"
    FROM_CI = "from_ci"
    FROM_ARMS = "from_arms"


@dataclass(frozen=True)
class ArmSummary:
    """One arm's mean change from baseline with its confidence interval."""

    trial_id: str
    treatment: str
    n_randomized: int
    endpoint: str
    estimand_label: str
    mean_change: float
    ci_lower: float
    ci_upper: float
    ci_level: float = 0.95

    def __post_init__(self) -> None:
        object.__setattr__(self, "trial_id", normalize_id(self.trial_id))
        object.__setattr__(self, "treatment", normalize_id(self.treatment))
        object.__setattr__(self, "endpoint", canonical(self.endpoint))
        object.__setattr__(self, "estimand_label", normalize_id(self.estimand_label))
        if self.n_randomized < 1:
            raise ValueError(f"n_randomized must be >= 1, got {self.n_randomized}")
        if not math.isfinite(self.mean_change):
            raise ValueError("mean_change must be finite")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if not (math.isfinite(self.ci_lower) and math.isfinite(self.ci_upper)):
            raise ValueError("confidence bounds must be finite")
        if self.ci_lower >= self.ci_upper:
            raise ValueError(f"ci_lower must be below ci_upper, got ({self.ci_lower}, {self.ci_upper})")

    @property
    def se(self) -> float:
        return se_from_ci(self.ci_lower, self.ci_upper, self.ci_level)

    @property
    def variance(self) -> float:
        return self.se**2


@dataclass(frozen=True)
class ContrastEstimate:
    """One trial's relative effect (treatment minus comparator) with its SE."""

    trial_id: str
    treatment: str
    comparator: str
    endpoint: str
    estimand_label: str
    md: float
    se: float
    source: UncertaintySource
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    ci_level: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "trial_id", normalize_id(self.trial_id))
        object.__setattr__(self, "treatment", normalize_id(self.treatment))
        object.__setattr__(self, "comparator", normalize_id(self.comparator))
        object.__setattr__(self, "endpoint", canonical(self.endpoint))
        object.__setattr__(self, "estimand_label", normalize_id(self.estimand_label))
        if canonical(self.treatment) == canonical(self.comparator):
            raise ValueError(f"contrast compares {self.treatment!r} with itself")
        if not math.isfinite(self.md):
            raise ValueError("md must be finite")
        if not (math.isfinite(self.se) and self.se > 0.0):
            raise ValueError(f"se must be a positive finite number, got {self.se!r}")

    @property
    def key(self) -> tuple[str, str, str, str, str]:
        return (
            self.trial_id,
            canonical(self.treatment),
            canonical(self.comparator),
            self.endpoint,
            canonical(self.estimand_label),
        )


def contrast_from_arms(a: ArmSummary, b: ArmSummary) -> ContrastEstimate:
    """Derive a contrast (a minus b) from two arm summaries of the same trial."""
    if a.trial_id != b.trial_id:
        raise ValueError(f"arms belong to different trials: {a.trial_id!r} vs {b.trial_id!r}")
    if a.endpoint != b.endpoint:
        raise ValueError(f"arms report different endpoints: {a.endpoint!r} vs {b.endpoint!r}")
    if canonical(a.estimand_label) != canonical(b.estimand_label):
        raise ValueError(
            f"arms report different estimands: {a.estimand_label!r} vs {b.estimand_label!r}"
        )
    if canonical(a.treatment) == canonical(b.treatment):
        raise ValueError(f"both arms are {a.treatment!r}")
    return ContrastEstimate(
        trial_id=a.trial_id,
        treatment=a.treatment,
        comparator=b.treatment,
        endpoint=a.endpoint,
        estimand_label=a.estimand_label,
        md=a.mean_change - b.mean_change,
        se=math.hypot(a.se, b.se),
        source=UncertaintySource.FROM_ARMS,
    )


@dataclass(frozen=True)
class TrialRecord:
    """A trial's randomized arms and its declared estimands."""

    trial_id: str
    arms: tuple[str, ...]
    estimands: Mapping[tuple[str, str], Estimand]  # (label key, endpoint key)

    def estimand_for(self, label: str, endpoint_key: str) -> Optional[Estimand]:
        return self.estimands.get((canonical(label), canonical(endpoint_key)))

    @property
    def labels(self) -> tuple[str, ...]:
        seen: dict[str, str] = {}
        for est in self.estimands.values():
            seen.setdefault(canonical(est.label), est.label)
        return tuple(seen.values())

    def arm_set(self) -> frozenset[str]:
        return frozenset(canonical(a) for a in self.arms)


@dataclass(frozen=True)
class EvidenceBase:
    """Validated collection of trials, estimands, contrasts, and arm summaries."""

    trials: Mapping[str, TrialRecord]
    contrasts: tuple[ContrastEstimate, ...]
    arm_summaries: tuple[ArmSummary, ...]

    def arm_summary(
        self, trial_id: str, estimand_label: str, endpoint_key: str, treatment: str
    ) -> Optional[ArmSummary]:
        label, key, treat = canonical(estimand_label), canonical(endpoint_key), canonical(treatment)
        for arm in self.arm_summaries:
            if (
                arm.trial_id == trial_id
                and canonical(arm.estimand_label) == label
                and arm.endpoint == key
                and canonical(arm.treatment) == treat
            ):
                return arm
        return None

    def endpoint_keys(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for trial in self.trials.values():
            for est in trial.estimands.values():
                seen.setdefault(est.endpoint.key)
        return tuple(seen)

    def endpoint_specs(self, endpoint_key: str) -> tuple[EndpointSpec, ...]:
        key = canonical(endpoint_key)
        out = []
        for trial in self.trials.values():
            for est in trial.estimands.values():
                if est.endpoint.key == key:
                    out.append(est.endpoint)
        return tuple(out)

    def treatments(self) -> tuple[str, ...]:
        seen: dict[str, str] = {}
        for trial in self.trials.values():
            for arm in trial.arms:
                seen.setdefault(canonical(arm), arm)
        return tuple(seen.values())

    def estimand_of(self, contrast: ContrastEstimate) -> Optional[Estimand]:
        trial = self.trials.get(contrast.trial_id)
        if trial is None:
            return None
        return trial.estimand_for(contrast.estimand_label, contrast.endpoint)


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" or "warning"
    message: str


# --- parsing ---------------------------------------------------------------

_SECTION_HEADERS = {
    "trials": ["trial_id", "arms"],
    "estimands": [
        "trial_id",
        "label",
        "population",
        "endpoint_name",
        "units",
        "timepoint_weeks",
        "summary_measure",
        "ie_handlings",
    ],
    "contrasts": [
        "trial_id",
        "estimand_label",
        "endpoint_name",
        "treatment",
        "comparator",
        "md",
        "se",
        "ci_lower",
        "ci_upper",
        "ci_level",
    ],
    "arms": [
        "trial_id",
        "estimand_label",
        "endpoint_name",
        "treatment",
        "n",
        "mean_change",
        "ci_lower",
        "ci_upper",
        "ci_level",
    ],
}


def _parse_float(text: str, field: str, locator: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise EvidenceFormatError(f"field {field!r} is not a number: {text!r}", locator=locator) from None
    if not math.isfinite(value):
        raise EvidenceFormatError(f"field {field!r} must be finite: {text!r}", locator=locator)
    return value


def _parse_int(text: str, field: str, locator: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise EvidenceFormatError(f"field {field!r} is not an integer: {text!r}", locator=locator) from None


def _parse_handlings(text: str, locator: str) -> tuple[IntercurrentEventHandling, ...]:
    handlings = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise EvidenceFormatError(
                f"intercurrent-event entry {chunk!r} is not of the form event:strategy",
                locator=locator,
            )
        event, strategy = chunk.rsplit(":", 1)
        try:
            handlings.append(
                IntercurrentEventHandling(event, IntercurrentEventStrategy.parse(strategy))
            )
        except ValueError as exc:
            raise EvidenceFormatError(str(exc), locator=locator) from None
    return tuple(handlings)


class _Builder:
    """Accumulates raw records and assembles a validated EvidenceBase."""

    def __init__(self) -> None:
        self.trials: dict[str, TrialRecord] = {}
        self.estimands: dict[str, dict[tuple[str, str], Estimand]] = {}
        self.arm_rows: list[ArmSummary] = []
        self.contrast_rows: list[tuple[dict, str]] = []  # raw fields + locator

    def add_trial(self, trial_id: str, arms: Sequence[str], locator: str) -> None:
        trial_id = normalize_id(trial_id)
        if not trial_id:
            raise EvidenceFormatError("trial_id is empty", locator=locator)
        if trial_id in self.trials:
            raise EvidenceFormatError(f"duplicate trial {trial_id!r}", locator=locator)
        cleaned = tuple(normalize_id(a) for a in arms if normalize_id(a))
        if len(cleaned) < 2:
            raise EvidenceFormatError(f"trial {trial_id!r} needs at least two arms", locator=locator)
        if len({canonical(a) for a in cleaned}) != len(cleaned):
            raise EvidenceFormatError(f"trial {trial_id!r} lists a duplicate arm", locator=locator)
        self.trials[trial_id] = TrialRecord(trial_id=trial_id, arms=cleaned, estimands={})
        self.estimands[trial_id] = {}

    def add_estimand(
        self,
        trial_id: str,
        label: str,
        population: str,
        endpoint: EndpointSpec,
        summary: SummaryMeasure,
        handlings: tuple[IntercurrentEventHandling, ...],
        locator: str,
    ) -> None:
        trial_id = normalize_id(trial_id)
        if trial_id not in self.trials:
            raise EvidenceFormatError(f"estimand references unknown trial {trial_id!r}", locator=locator)
        key = (canonical(label), endpoint.key)
        if key in self.estimands[trial_id]:
            raise EvidenceFormatError(
                f"duplicate estimand {label!r} for endpoint {endpoint.name!r} in trial {trial_id!r}",
                locator=locator,
            )
        try:
            estimand = Estimand(
                label=normalize_id(label),
                population=population.strip(),
                treatments=frozenset(self.trials[trial_id].arms),
                endpoint=endpoint,
                summary_measure=summary,
                ie_handlings=handlings,
            )
        except ValueError as exc:
            raise EvidenceFormatError(str(exc), locator=locator) from None
        self.estimands[trial_id][key] = estimand

    def add_arm(self, arm: ArmSummary, locator: str) -> None:
        trial = self.trials.get(arm.trial_id)
        if trial is None:
            raise EvidenceFormatError(f"arm references unknown trial {arm.trial_id!r}", locator=locator)
        if canonical(arm.treatment) not in trial.arm_set():
            raise EvidenceFormatError(
                f"arm treatment {arm.treatment!r} is not in trial {arm.trial_id!r}", locator=locator
            )
        dup_key = (arm.trial_id, canonical(arm.estimand_label), arm.endpoint, canonical(arm.treatment))
        for existing in self.arm_rows:
            if (
                existing.trial_id,
                canonical(existing.estimand_label),
                existing.endpoint,
                canonical(existing.treatment),
            ) == dup_key:
                raise EvidenceFormatError(
                    f"duplicate arm summary for {arm.treatment!r} in trial {arm.trial_id!r}",
                    locator=locator,
                )
        self.arm_rows.append(arm)

    def add_contrast(self, fields: dict, locator: str) -> None:
        self.contrast_rows.append((fields, locator))

    def _lookup_arm(self, trial_id: str, label: str, endpoint: str, treatment: str) -> Optional[ArmSummary]:
        for arm in self.arm_rows:
            if (
                arm.trial_id == trial_id
                and canonical(arm.estimand_label) == canonical(label)
                and arm.endpoint == canonical(endpoint)
                and canonical(arm.treatment) == canonical(treatment)
            ):
                return arm
        return None

    def _resolve_contrast(self, fields: dict, locator: str) -> ContrastEstimate:
        trial_id = normalize_id(fields["trial_id"])
        trial = self.trials.get(trial_id)
        if trial is None:
            raise EvidenceFormatError(f"contrast references unknown trial {trial_id!r}", locator=locator)
        label = fields["estimand_label"]
        endpoint_key = canonical(fields["endpoint_name"])
        estimand = self.estimands[trial_id].get((canonical(label), endpoint_key))
        if estimand is None:
            raise EvidenceFormatError(
                f"contrast references undeclared estimand {label!r} / {fields['endpoint_name']!r} "
                f"in trial {trial_id!r}",
                locator=locator,
            )
        for role in ("treatment", "comparator"):
            if canonical(fields[role]) not in trial.arm_set():
                raise EvidenceFormatError(
                    f"{role} {fields[role]!r} is not an arm of trial {trial_id!r}", locator=locator
                )

        md = fields["md"]
        se, lo, hi, level = fields.get("se"), fields.get("ci_lower"), fields.get("ci_upper"), fields.get("ci_level")
        try:
            if se is not None:
                source, resolved = UncertaintySource.REPORTED_SE, se
            elif lo is not None and hi is not None:
                level = 0.95 if level is None else level
                source, resolved = UncertaintySource.FROM_CI, se_from_ci(lo, hi, level)
            else:
                arm_t = self._lookup_arm(trial_id, label, endpoint_key, fields["treatment"])
                arm_c = self._lookup_arm(trial_id, label, endpoint_key, fields["comparator"])
                if arm_t is None or arm_c is None:
                    raise EvidenceFormatError(
                        "contrast carries no se and no confidence interval, and arm summaries "
                        "for both treatments are unavailable",
                        locator=locator,
                    )
                source, resolved = UncertaintySource.FROM_ARMS, math.hypot(arm_t.se, arm_c.se)
            return ContrastEstimate(
                trial_id=trial_id,
                treatment=fields["treatment"],
                comparator=fields["comparator"],
                endpoint=endpoint_key,
                estimand_label=label,
                md=md,
                se=resolved,
                source=source,
                ci_lower=lo,
                ci_upper=hi,
                ci_level=level if (lo is not None and hi is not None) else None,
            )
        except EvidenceFormatError:
            raise
        except ValueError as exc:
            raise EvidenceFormatError(str(exc), locator=locator) from None

    def build(self) -> EvidenceBase:
        contrasts: list[ContrastEstimate] = []
        seen: set[tuple] = set()
        for fields, locator in self.contrast_rows:
            contrast = self._resolve_contrast(fields, locator)
            if contrast.key in seen:
                raise EvidenceFormatError(
                    f"duplicate contrast {contrast.treatment!r} vs {contrast.comparator!r} "
                    f"in trial {contrast.trial_id!r}",
                    locator=locator,
                )
            seen.add(contrast.key)
            contrasts.append(contrast)
        trials = {
            tid: replace(record, estimands=dict(self.estimands[tid]))
            for tid, record in self.trials.items()
        }
        return EvidenceBase(
            trials=trials, contrasts=tuple(contrasts), arm_summaries=tuple(self.arm_rows)
        )


def _optional_float(text: str, field: str, locator: str) -> Optional[float]:
    return None if text.strip() == "" else _parse_float(text, field, locator)


def _parse_csv(stream: IO[str]) -> EvidenceBase:
    builder = _Builder()
    reader = csv.reader(stream)
    section: str | None = None
    header_seen = False
    for row in reader:
        locator = f"line {reader.line_num}"
        if not row or all(not cell.strip() for cell in row):
            continue
        first = row[0].strip()
        if first.startswith("#"):
            tag = first.lstrip("#").strip().lower()
            if tag in _SECTION_HEADERS:
                section, header_seen = tag, False
            continue  # any other #-line is a comment
        if section is None:
            raise EvidenceFormatError(f"data before any section tag: {first!r}", locator=locator)
        expected = _SECTION_HEADERS[section]
        if not header_seen:
            got = [cell.strip().lower() for cell in row]
            if got != expected:
                raise EvidenceFormatError(
                    f"section #{section} header must be {expected}, got {got}", locator=locator
                )
            header_seen = True
            continue
        if len(row) > len(expected):
            raise EvidenceFormatError(
                f"row has {len(row)} fields, section #{section} allows {len(expected)}",
                locator=locator,
            )
        cells = dict(zip(expected, list(row) + [""] * (len(expected) - len(row))))
        _dispatch_row(builder, section, cells, locator)
    return builder.build()


def _dispatch_row(builder: _Builder, section: str, cells: dict[str, str], locator: str) -> None:
    if section == "trials":
        builder.add_trial(cells["trial_id"], cells["arms"].split(";"), locator)
    elif section == "estimands":
        try:
            endpoint = EndpointSpec(
                name=normalize_id(cells["endpoint_name"]),
                units=cells["units"].strip(),
                timepoint_weeks=_parse_int(cells["timepoint_weeks"], "timepoint_weeks", locator),
            )
            summary = SummaryMeasure.parse(cells["summary_measure"])
        except EvidenceFormatError:
            raise
        except ValueError as exc:
            raise EvidenceFormatError(str(exc), locator=locator) from None
        builder.add_estimand(
            cells["trial_id"],
            cells["label"],
            cells["population"],
            endpoint,
            summary,
            _parse_handlings(cells["ie_handlings"], locator),
            locator,
        )
    elif section == "contrasts":
        fields = {
            "trial_id": cells["trial_id"],
            "estimand_label": normalize_id(cells["estimand_label"]),
            "endpoint_name": cells["endpoint_name"],
            "treatment": normalize_id(cells["treatment"]),
            "comparator": normalize_id(cells["comparator"]),
            "md": _parse_float(cells["md"], "md", locator),
            "se": _optional_float(cells["se"], "se", locator),
            "ci_lower": _optional_float(cells["ci_lower"], "ci_lower", locator),
            "ci_upper": _optional_float(cells["ci_upper"], "ci_upper", locator),
            "ci_level": _optional_float(cells["ci_level"], "ci_level", locator),
        }
        builder.add_contrast(fields, locator)
    elif section == "arms":
        try:
            arm = ArmSummary(
                trial_id=cells["trial_id"],
                treatment=cells["treatment"],
                n_randomized=_parse_int(cells["n"], "n", locator),
                endpoint=cells["endpoint_name"],
                estimand_label=cells["estimand_label"],
                mean_change=_parse_float(cells["mean_change"], "mean_change", locator),
                ci_lower=_parse_float(cells["ci_lower"], "ci_lower", locator),
                ci_upper=_parse_float(cells["ci_upper"], "ci_upper", locator),
                ci_level=_optional_float(cells["ci_level"], "ci_level", locator) or 0.95,
            )
        except EvidenceFormatError:
            raise
        except ValueError as exc:
            raise EvidenceFormatError(str(exc), locator=locator) from None
        builder.add_arm(arm, locator)


def _get(record: Mapping, field: str, locator: str):
    if field not in record:
        raise EvidenceFormatError(f"missing field {field!r}", locator=locator)
    return record[field]


def _parse_json(stream: IO[str]) -> EvidenceBase:
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise EvidenceFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise EvidenceFormatError("top level must be an object")
    builder = _Builder()
    for i, rec in enumerate(doc.get("trials", [])):
        loc = f"trials[{i}]"
        builder.add_trial(_get(rec, "trial_id", loc), list(_get(rec, "arms", loc)), loc)
    for i, rec in enumerate(doc.get("estimands", [])):
        loc = f"estimands[{i}]"
        try:
            endpoint = EndpointSpec(
                name=normalize_id(_get(rec, "endpoint_name", loc)),
                units=str(_get(rec, "units", loc)).strip(),
                timepoint_weeks=int(_get(rec, "timepoint_weeks", loc)),
                direction=Direction(rec.get("direction", Direction.LOWER_IS_BETTER.value)),
            )
            summary = SummaryMeasure.parse(_get(rec, "summary_measure", loc))
            handlings = tuple(
                IntercurrentEventHandling(
                    _get(h, "event_name", loc), IntercurrentEventStrategy.parse(_get(h, "strategy", loc))
                )
                for h in _get(rec, "ie_handlings", loc)
            )
        except EvidenceFormatError:
            raise
        except (ValueError, TypeError) as exc:
            raise EvidenceFormatError(str(exc), locator=loc) from None
        builder.add_estimand(
            _get(rec, "trial_id", loc),
            _get(rec, "label", loc),
            str(_get(rec, "population", loc)),
            endpoint,
            summary,
            handlings,
            loc,
        )
    for i, rec in enumerate(doc.get("arms", [])):
        loc = f"arms[{i}]"
        try:
            arm = ArmSummary(
                trial_id=_get(rec, "trial_id", loc),
                treatment=_get(rec, "treatment", loc),
                n_randomized=int(_get(rec, "n", loc)),
                endpoint=_get(rec, "endpoint_name", loc),
                estimand_label=_get(rec, "estimand_label", loc),
                mean_change=float(_get(rec, "mean_change", loc)),
                ci_lower=float(_get(rec, "ci_lower", loc)),
                ci_upper=float(_get(rec, "ci_upper", loc)),
                ci_level=float(rec.get("ci_level", 0.95)),
            )
        except EvidenceFormatError:
            raise
        except (ValueError, TypeError) as exc:
            raise EvidenceFormatError(str(exc), locator=loc) from None
        builder.add_arm(arm, loc)
    for i, rec in enumerate(doc.get("contrasts", [])):
        loc = f"contrasts[{i}]"
        fields = {
            "trial_id": _get(rec, "trial_id", loc),
            "estimand_label": normalize_id(_get(rec, "estimand_label", loc)),
            "endpoint_name": _get(rec, "endpoint_name", loc),
            "treatment": normalize_id(_get(rec, "treatment", loc)),
            "comparator": normalize_id(_get(rec, "comparator", loc)),
            "md": float(_get(rec, "md", loc)),
            "se": None if rec.get("se") is None else float(rec["se"]),
            "ci_lower": None if rec.get("ci_lower") is None else float(rec["ci_lower"]),
            "ci_upper": None if rec.get("ci_upper") is None else float(rec["ci_upper"]),
            "ci_level": None if rec.get("ci_level") is None else float(rec["ci_level"]),
        }
        builder.add_contrast(fields, loc)
    return builder.build()


Source = Union[str, Path, IO[str]]


def parse_evidence(source: Source, format: str | None = None) -> EvidenceBase:
    """Parse an evidence file (format auto-detected from the extension)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
        with open(path, "r", encoding="utf-8", newline="") as handle:
            return _parse_json(handle) if fmt == "json" else _parse_csv(handle)
    if format is None:
        raise ValueError("format must be given when parsing from a stream")
    return _parse_json(source) if format == "json" else _parse_csv(source)


def parse_evidence_text(text: str, format: str = "csv") -> EvidenceBase:
    return parse_evidence(io.StringIO(text), format=format)


# --- serialization ----------------------------------------------------------


def _handlings_text(estimand: Estimand) -> str:
    return ";".join(f"{h.event_name}:{h.strategy.value}" for h in estimand.ie_handlings)


def _num(value) -> str:
    return "" if value is None else repr(value)


def serialize_evidence(base: EvidenceBase, format: str = "csv") -> str:
    """Render an evidence base back into its file format (round-trip safe)."""
    if format == "json":
        return json.dumps(evidence_to_dict(base), indent=2) + "\n"
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["#trials"])
    writer.writerow(_SECTION_HEADERS["trials"])
    for trial in base.trials.values():
        writer.writerow([trial.trial_id, ";".join(trial.arms)])
    writer.writerow(["#estimands"])
    writer.writerow(_SECTION_HEADERS["estimands"])
    for trial in base.trials.values():
        for est in trial.estimands.values():
            writer.writerow(
                [
                    trial.trial_id,
                    est.label,
                    est.population,
                    est.endpoint.name,
                    est.endpoint.units,
                    est.endpoint.timepoint_weeks,
                    est.summary_measure.value,
                    _handlings_text(est),
                ]
            )
    writer.writerow(["#contrasts"])
    writer.writerow(_SECTION_HEADERS["contrasts"])
    for c in base.contrasts:
        se_text = _num(c.se) if c.source is UncertaintySource.REPORTED_SE else ""
        writer.writerow(
            [
                c.trial_id,
                c.estimand_label,
                c.endpoint,
                c.treatment,
                c.comparator,
                _num(c.md),
                se_text,
                _num(c.ci_lower),
                _num(c.ci_upper),
                _num(c.ci_level),
            ]
        )
    writer.writerow(["#arms"])
    writer.writerow(_SECTION_HEADERS["arms"])
    for a in base.arm_summaries:
        writer.writerow(
            [
                a.trial_id,
                a.estimand_label,
                a.endpoint,
                a.treatment,
                a.n_randomized,
                _num(a.mean_change),
                _num(a.ci_lower),
                _num(a.ci_upper),
                _num(a.ci_level),
            ]
        )
    return out.getvalue()


def evidence_to_dict(base: EvidenceBase) -> dict:
    doc: dict = {"trials": [], "estimands": [], "contrasts": [], "arms": []}
    for trial in base.trials.values():
        doc["trials"].append({"trial_id": trial.trial_id, "arms": list(trial.arms)})
        for est in trial.estimands.values():
            doc["estimands"].append(
                {
                    "trial_id": trial.trial_id,
                    "label": est.label,
                    "population": est.population,
                    "endpoint_name": est.endpoint.name,
                    "units": est.endpoint.units,
                    "timepoint_weeks": est.endpoint.timepoint_weeks,
                    "direction": est.endpoint.direction.value,
                    "summary_measure": est.summary_measure.value,
                    "ie_handlings": [
                        {"event_name": h.event_name, "strategy": h.strategy.value}
                        for h in est.ie_handlings
                    ],
                }
            )
    for c in base.contrasts:
        doc["contrasts"].append(
            {
                "trial_id": c.trial_id,
                "estimand_label": c.estimand_label,
                "endpoint_name": c.endpoint,
                "treatment": c.treatment,
                "comparator": c.comparator,
                "md": c.md,
                "se": c.se if c.source is UncertaintySource.REPORTED_SE else None,
                "ci_lower": c.ci_lower,
                "ci_upper": c.ci_upper,
                "ci_level": c.ci_level,
            }
        )
    for a in base.arm_summaries:
        doc["arms"].append(
            {
                "trial_id": a.trial_id,
                "estimand_label": a.estimand_label,
                "endpoint_name": a.endpoint,
                "treatment": a.treatment,
                "n": a.n_randomized,
                "mean_change": a.mean_change,
                "ci_lower": a.ci_lower,
                "ci_upper": a.ci_upper,
                "ci_level": a.ci_level,
            }
        )
    return doc


# --- validation -------------------------------------------------------------


def _multi_arm_groups(base: EvidenceBase) -> dict[tuple[str, str, str], list[ContrastEstimate]]:
    groups: dict[tuple[str, str, str], list[ContrastEstimate]] = {}
    for c in base.contrasts:
        groups.setdefault((c.trial_id, canonical(c.estimand_label), c.endpoint), []).append(c)
    return {k: v for k, v in groups.items() if len(v) >= 2}


def validate_evidence(base: EvidenceBase) -> list[Issue]:
    """Re-check invariants and flag analysis hazards; issues are data, not errors."""
    issues: list[Issue] = []

    seen: set[tuple] = set()
    for c in base.contrasts:
        trial = base.trials.get(c.trial_id)
        if trial is None:
            issues.append(Issue("error", f"contrast references unknown trial {c.trial_id!r}"))
            continue
        for role, treatment in (("treatment", c.treatment), ("comparator", c.comparator)):
            if canonical(treatment) not in trial.arm_set():
                issues.append(
                    Issue("error", f"contrast {role} {treatment!r} is not an arm of {c.trial_id!r}")
                )
        if base.estimand_of(c) is None:
            issues.append(
                Issue(
                    "error",
                    f"contrast references undeclared estimand {c.estimand_label!r} "
                    f"({c.endpoint}) in trial {c.trial_id!r}",
                )
            )
        if c.key in seen:
            issues.append(
                Issue("error", f"duplicate contrast {c.treatment!r} vs {c.comparator!r} in {c.trial_id!r}")
            )
        seen.add(c.key)

    for arm in base.arm_summaries:
        trial = base.trials.get(arm.trial_id)
        if trial is None:
            issues.append(Issue("error", f"arm summary references unknown trial {arm.trial_id!r}"))
        elif canonical(arm.treatment) not in trial.arm_set():
            issues.append(
                Issue("error", f"arm treatment {arm.treatment!r} is not an arm of {arm.trial_id!r}")
            )

    for (trial_id, label, endpoint), group in _multi_arm_groups(base).items():
        arms_involved = {canonical(c.treatment) for c in group} | {canonical(c.comparator) for c in group}
        missing = sorted(
            a for a in arms_involved if base.arm_summary(trial_id, label, endpoint, a) is None
        )
        if missing:
            issues.append(
                Issue(
                    "warning",
                    f"shared-arm variance unidentifiable for trial {trial_id!r} "
                    f"({label} / {endpoint}): no arm summaries for {', '.join(missing)}",
                )
            )

    for key in base.endpoint_keys():
        timepoints = sorted({spec.timepoint_weeks for spec in base.endpoint_specs(key)})
        if len(timepoints) > 1:
            listed = ", ".join(str(t) for t in timepoints)
            issues.append(Issue("warning", f"endpoint timepoints differ for {key}: {listed}"))

    issues.extend(_strategy_coverage_issues(base))
    return issues


def _strategy_coverage_issues(base: EvidenceBase) -> list[Issue]:
    """Warn when a pure intercurrent-event strategy is available in some trials only."""
    issues: list[Issue] = []
    for key in base.endpoint_keys():
        per_trial: dict[str, list[Estimand]] = {}
        for tid, trial in base.trials.items():
            ests = [e for e in trial.estimands.values() if e.endpoint.key == key]
            if ests:
                per_trial[tid] = ests
        if len(per_trial) < 2:
            continue
        event_sets = [set().union(*(e.events.keys() for e in ests)) for ests in per_trial.values()]
        common_events = set.intersection(*event_sets)
        if not common_events:
            continue
        strategies = {
            e.events[ev]
            for ests in per_trial.values()
            for e in ests
            for ev in common_events
            if ev in e.events
        }
        for strategy in sorted(strategies, key=lambda s: s.value):
            supporting = [
                tid
                for tid, ests in per_trial.items()
                if any(all(e.events.get(ev) is strategy for ev in common_events) for e in ests)
            ]
            if supporting and len(supporting) < len(per_trial):
                missing = sorted(set(per_trial) - set(supporting))
                issues.append(
                    Issue(
                        "warning",
                        f"no {strategy.value} estimand for {key} in trials: {', '.join(missing)}",
                    )
                )
    return issues
