"""Orchestration: restrict the evidence by a target meta-estimand, assess
feasibility, run per-slice analyses, and compare strategies side by side.

A slice is one (meta-estimand, endpoint) pair.  Restriction keeps exactly
the contrasts whose trial-level estimand is admissible under the target;
every input contrast lands in the provenance exactly once, either used or
excluded with reasons.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional

from .engine import (
    ComparisonResult,
    CovarianceError,
    NmaResult,
    assemble_gls,
    comparison,
    solve_fixed_effects,
)
from .estimands import (
    AlignmentReport,
    EndpointSpec,
    Estimand,
    IntercurrentEventHandling,
    IntercurrentEventStrategy,
    MatchingMode,
    MetaEstimand,
    SummaryMeasure,
    canonical,
    heterogeneity_matrix,
    matches_meta,
)
from .ingest import ContrastEstimate, EvidenceBase
from .network import EvidenceNetwork, build_network, connected_components, is_connected

_WARNING_CODES = {
    "population": "population_differs",
    "treatments": "treatment_scope",
    "intercurrent_events": "extra_event",
}


class InfeasibleAnalysisError(RuntimeError):
    """Raised when a slice fails feasibility and force mode cannot help."""

    def __init__(self, report: "FeasibilityReport"):
        self.report = report
        blockers = "; ".join(r.message for r in report.reasons if r.severity == "error")
        super().__init__(f"analysis infeasible: {blockers or report.verdict.value}")


@dataclass(frozen=True)
class Reason:
    code: str
    severity: str  # "error" or "warning"
    message: str


@dataclass(frozen=True)
class ExcludedContrast:
    contrast: ContrastEstimate
    reasons: tuple[str, ...]


@dataclass(frozen=True)
class Restriction:
    """Result of narrowing an evidence base to one slice."""

    base: EvidenceBase
    used: tuple[ContrastEstimate, ...]
    excluded: tuple[ExcludedContrast, ...]
    warnings: tuple[Reason, ...]


@dataclass(frozen=True)
class Provenance:
    meta_label: str
    endpoint: str
    used: tuple[ContrastEstimate, ...]
    excluded: tuple[ExcludedContrast, ...]


class FeasibilityVerdict(enum.Enum):
    FEASIBLE = "feasible"
    FEASIBLE_WITH_WARNINGS = "feasible_with_warnings"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class FeasibilityReport:
    verdict: FeasibilityVerdict
    reasons: tuple[Reason, ...]
    alignment: AlignmentReport
    restriction: Restriction
    network: Optional[EvidenceNetwork]


def restrict_evidence(base: EvidenceBase, meta: MetaEstimand, endpoint: str) -> Restriction:
    """Keep the contrasts admissible under the meta-estimand for one endpoint."""
    key = canonical(endpoint)
    used: list[ContrastEstimate] = []
    excluded: list[ExcludedContrast] = []
    warnings: dict[tuple[str, str], None] = {}
    for contrast in base.contrasts:
        if contrast.endpoint != key:
            excluded.append(
                ExcludedContrast(contrast, (f"endpoint mismatch: {contrast.endpoint} vs {key}",))
            )
            continue
        estimand = base.estimand_of(contrast)
        if estimand is None:
            excluded.append(
                ExcludedContrast(
                    contrast,
                    (f"no estimand {contrast.estimand_label!r} declared for {contrast.trial_id!r}",),
                )
            )
            continue
        verdict = matches_meta(estimand, meta)
        if not verdict.compatible:
            excluded.append(ExcludedContrast(contrast, verdict.blockers))
            continue
        used.append(contrast)
        for attr, check in verdict.attributes.items():
            if check.status == "warn":
                code = _WARNING_CODES.get(attr, "estimand_warning")
                warnings.setdefault((code, f"{contrast.trial_id}: {check.detail}"))

    used_trials = {c.trial_id for c in used}
    used_groups = {(c.trial_id, canonical(c.estimand_label), c.endpoint) for c in used}
    slice_base = EvidenceBase(
        trials={tid: rec for tid, rec in base.trials.items() if tid in used_trials},
        contrasts=tuple(used),
        arm_summaries=tuple(
            a
            for a in base.arm_summaries
            if (a.trial_id, canonical(a.estimand_label), a.endpoint) in used_groups
        ),
    )
    return Restriction(
        base=slice_base,
        used=tuple(used),
        excluded=tuple(excluded),
        warnings=tuple(Reason(code, "warning", message) for code, message in warnings),
    )


def _alignment_for(base: EvidenceBase, meta: MetaEstimand, endpoint_key: str) -> AlignmentReport:
    rows: list[tuple[str, Estimand]] = []
    for trial_id, trial in base.trials.items():
        for estimand in trial.estimands.values():
            if estimand.endpoint.key == endpoint_key:
                rows.append((f"{trial_id}: {estimand.label}", estimand))
    if not rows:
        return AlignmentReport(meta_label=meta.label, rows=())
    return heterogeneity_matrix(rows, meta)


def feasibility_report(base: EvidenceBase, meta: MetaEstimand, endpoint: str) -> FeasibilityReport:
    """Compose alignment, restriction, connectivity, and covariance checks."""
    key = canonical(endpoint)
    restriction = restrict_evidence(base, meta, endpoint)
    alignment = _alignment_for(base, meta, key)
    reasons: list[Reason] = list(restriction.warnings)
    net: Optional[EvidenceNetwork] = None

    if not restriction.used:
        reasons.append(
            Reason("no_evidence", "error", f"no contrasts match {meta.label!r} for endpoint {key!r}")
        )
    else:
        net = build_network(restriction.used)
        if not is_connected(net):
            parts = connected_components(net)
            listed = "; ".join("{" + ", ".join(p) + "}" for p in parts)
            reasons.append(
                Reason("disconnected", "error", f"evidence network is disconnected: {listed}")
            )
        else:
            try:
                assemble_gls(net, restriction.base, net.nodes[0])
            except CovarianceError as exc:
                reasons.append(Reason("covariance_unidentifiable", "error", str(exc)))

        timepoints = sorted(
            {
                est.endpoint.timepoint_weeks
                for c in restriction.used
                for est in (restriction.base.estimand_of(c),)
                if est is not None
            }
        )
        if len(timepoints) > 1:
            listed = ", ".join(str(t) for t in timepoints)
            reasons.append(
                Reason("timepoint_spread", "warning", f"endpoint timepoints differ: {listed}")
            )

    if any(r.severity == "error" for r in reasons):
        verdict = FeasibilityVerdict.INFEASIBLE
    elif reasons:
        verdict = FeasibilityVerdict.FEASIBLE_WITH_WARNINGS
    else:
        verdict = FeasibilityVerdict.FEASIBLE
    return FeasibilityReport(
        verdict=verdict,
        reasons=tuple(reasons),
        alignment=alignment,
        restriction=restriction,
        network=net,
    )


def default_reference(net: EvidenceNetwork) -> str:
    return min(net.nodes, key=canonical)


def run_analysis(
    base: EvidenceBase,
    meta: MetaEstimand,
    endpoint: str,
    reference: str | None = None,
    ci_level: float = 0.95,
    *,
    force: bool = False,
) -> NmaResult:
    """Restrict, build, assemble and solve one slice, with provenance attached.

    Force mode downgrades a missing multi-arm covariance to an
    independence approximation; it cannot rescue an empty or disconnected
    slice.
    """
    report = feasibility_report(base, meta, endpoint)
    if report.verdict is FeasibilityVerdict.INFEASIBLE:
        hard = [
            r
            for r in report.reasons
            if r.severity == "error" and r.code != "covariance_unidentifiable"
        ]
        if hard or not force:
            raise InfeasibleAnalysisError(report)

    net = report.network
    assert net is not None
    ref = reference if reference is not None else default_reference(net)
    system = assemble_gls(net, report.restriction.base, ref, independence_fallback=force)
    result = solve_fixed_effects(system, ci_level)

    notes = list(result.notes)
    for reason in report.reasons:
        notes.append(f"{reason.code}: {reason.message}")
    if force and any(r.code == "covariance_unidentifiable" for r in report.reasons):
        notes.append("forced: multi-arm correlation ignored (independence fallback)")
    provenance = Provenance(
        meta_label=meta.label,
        endpoint=canonical(endpoint),
        used=report.restriction.used,
        excluded=report.restriction.excluded,
    )
    return replace(result, notes=tuple(notes), provenance=provenance)


@dataclass(frozen=True)
class StrategyRow:
    treatment: str
    comparator: str
    by_label: Mapping[str, ComparisonResult]
    attenuation: bool


@dataclass(frozen=True)
class StrategyComparison:
    endpoint: str
    labels: tuple[str, ...]
    baseline_label: str
    attenuated_label: str
    rows: tuple[StrategyRow, ...]


def compare_strategies(
    results: Mapping[str, NmaResult], endpoint: str
) -> StrategyComparison:
    """Side-by-side comparison table across meta-estimand labels.

    The attenuation flag asks whether the treatment-policy-style estimate
    sits closer to the null than its counterpart: with exactly two labels,
    the one mentioning "policy" is tested against the other; otherwise the
    second label is tested against the first.
    """
    labels = list(results)
    if len(labels) < 2:
        raise ValueError("compare_strategies needs at least two results")
    treatment_sets = [
        frozenset(canonical(t) for t in res.treatments) for res in results.values()
    ]
    if len(set(treatment_sets)) != 1:
        raise ValueError("results cover different treatment sets")

    baseline, attenuated = labels[0], labels[1]
    if len(labels) == 2:
        policy = [lab for lab in labels if "policy" in canonical(lab)]
        if len(policy) == 1:
            attenuated = policy[0]
            baseline = labels[0] if labels[1] == attenuated else labels[1]

    first = results[labels[0]]
    rows = []
    for a in first.treatments:
        for b in first.treatments:
            if canonical(a) == canonical(b):
                continue
            by_label = {label: comparison(results[label], a, b) for label in labels}
            rows.append(
                StrategyRow(
                    treatment=a,
                    comparator=b,
                    by_label=by_label,
                    attenuation=abs(by_label[attenuated].md) < abs(by_label[baseline].md),
                )
            )
    return StrategyComparison(
        endpoint=canonical(endpoint),
        labels=tuple(labels),
        baseline_label=baseline,
        attenuated_label=attenuated,
        rows=tuple(rows),
    )


def feasibility_to_dict(report: FeasibilityReport) -> dict:
    """Machine-readable feasibility report: verdict, reasons, alignment, provenance."""
    return {
        "verdict": report.verdict.value,
        "reasons": [
            {"code": r.code, "severity": r.severity, "message": r.message}
            for r in report.reasons
        ],
        "alignment": {
            "meta_label": report.alignment.meta_label,
            "feasible": report.alignment.feasible,
            "rows": [
                {
                    "label": row.label,
                    "compatible": row.verdict.compatible,
                    "attributes": {
                        name: {"status": check.status, "detail": check.detail}
                        for name, check in row.verdict.attributes.items()
                    },
                }
                for row in report.alignment.rows
            ],
        },
        "used": [
            {"trial_id": c.trial_id, "treatment": c.treatment, "comparator": c.comparator}
            for c in report.restriction.used
        ],
        "excluded": [
            {
                "trial_id": e.contrast.trial_id,
                "treatment": e.contrast.treatment,
                "comparator": e.contrast.comparator,
                "estimand_label": e.contrast.estimand_label,
                "reasons": list(e.reasons),
            }
            for e in report.restriction.excluded
        ],
    }


def strategy_comparison_to_dict(table: StrategyComparison) -> dict:
    """Machine-readable side-by-side strategy table."""
    return {
        "endpoint": table.endpoint,
        "labels": list(table.labels),
        "baseline_label": table.baseline_label,
        "attenuated_label": table.attenuated_label,
        "rows": [
            {
                "treatment": row.treatment,
                "comparator": row.comparator,
                "attenuation": row.attenuation,
                **{
                    label: {
                        "md": c.md,
                        "se": c.se,
                        "ci_lower": c.ci_lower,
                        "ci_upper": c.ci_upper,
                        "ci_level": c.ci_level,
                    }
                    for label, c in row.by_label.items()
                },
            }
            for row in table.rows
        ],
    }


# --- meta-estimand construction ----------------------------------------------


def synthesize_meta(
    base: EvidenceBase,
    endpoint: str,
    strategy: IntercurrentEventStrategy,
    *,
    label: str | None = None,
    tolerance_weeks: int = 4,
    mode: MatchingMode = MatchingMode.LENIENT,
) -> MetaEstimand:
    """Build the pure-strategy target estimand implied by the evidence base.

    Its events are those declared, with the requested strategy, in every
    trial reporting the endpoint; population, timepoint and summary measure
    are the modal values across those trials.
    """
    key = canonical(endpoint)
    per_trial: dict[str, list[Estimand]] = {}
    for trial_id, trial in base.trials.items():
        ests = [e for e in trial.estimands.values() if e.endpoint.key == key]
        if ests:
            per_trial[trial_id] = ests
    if not per_trial:
        raise ValueError(f"no estimands are declared for endpoint {endpoint!r}")

    event_sets = []
    for ests in per_trial.values():
        covered: set[str] = set()
        for est in ests:
            covered.update(ev for ev, s in est.events.items() if s is strategy)
        event_sets.append(covered)
    common = set.intersection(*event_sets)
    if not common:
        raise ValueError(
            f"no intercurrent event is handled by {strategy.value} in every trial "
            f"reporting {endpoint!r}"
        )

    all_estimands = [e for ests in per_trial.values() for e in ests]
    population = _modal(canonical(e.population) for e in all_estimands)
    display_population = next(
        e.population for e in all_estimands if canonical(e.population) == population
    )
    timepoints = Counter(e.endpoint.timepoint_weeks for e in all_estimands)
    top = max(timepoints.values())
    timepoint = max(t for t, n in timepoints.items() if n == top)
    units = _modal(e.endpoint.units for e in all_estimands)
    name = all_estimands[0].endpoint.name
    summary = _modal_value(Counter(e.summary_measure for e in all_estimands))
    treatments = frozenset(arm for tid in per_trial for arm in base.trials[tid].arms)

    return MetaEstimand(
        label=label if label is not None else strategy.value,
        population=display_population,
        treatments=treatments,
        endpoint=EndpointSpec(name=name, units=units, timepoint_weeks=timepoint),
        summary_measure=summary,
        ie_handlings=tuple(
            IntercurrentEventHandling(ev, strategy) for ev in sorted(common)
        ),
        timepoint_tolerance_weeks=tolerance_weeks,
        matching_mode=mode,
    )


def _modal(values) -> str:
    counts = Counter(values)
    top = max(counts.values())
    return sorted(v for v, n in counts.items() if n == top)[0]


def _modal_value(counts: Counter):
    top = max(counts.values())
    return sorted((v for v, n in counts.items() if n == top), key=lambda v: v.value)[0]


def resolve_meta(
    base: EvidenceBase,
    endpoint: str,
    label: str,
    *,
    config: Optional["AnalysisConfig"] = None,
    tolerance_weeks: int = 4,
    mode: MatchingMode = MatchingMode.LENIENT,
) -> MetaEstimand:
    """Find a configured meta-estimand by label, or synthesize a pure-strategy one."""
    if config is not None:
        meta = config.meta_for(label, endpoint)
        if meta is not None:
            return meta
    try:
        strategy = IntercurrentEventStrategy.parse(label)
    except ValueError:
        known = sorted({m.label for m in config.meta_estimands}) if config else []
        hint = f" (configured: {', '.join(known)})" if known else ""
        raise ValueError(
            f"unknown meta-estimand {label!r}: not configured and not a strategy token{hint}"
        ) from None
    return synthesize_meta(
        base, endpoint, strategy, label=label, tolerance_weeks=tolerance_weeks, mode=mode
    )


@dataclass(frozen=True)
class AnalysisConfig:
    """Declarative plan: which meta-estimands over which endpoints."""

    meta_estimands: tuple[MetaEstimand, ...]
    endpoints: tuple[str, ...]
    reference: Optional[str] = None
    ci_level: float = 0.95

    def __post_init__(self) -> None:
        if not self.meta_estimands:
            raise ValueError("config declares no meta-estimands")
        if not self.endpoints:
            raise ValueError("config declares no endpoints")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError(f"ci_level must lie in (0, 1), got {self.ci_level}")

    def meta_for(self, label: str, endpoint: str) -> Optional[MetaEstimand]:
        key, lab = canonical(endpoint), canonical(label)
        for meta in self.meta_estimands:
            if canonical(meta.label) == lab and meta.endpoint.key == key:
                return meta
        return None


def load_config(source: str | Path | dict, base: EvidenceBase) -> AnalysisConfig:
    """Load an analysis config; shorthand entries carrying only a strategy are
    synthesized against the evidence base for every configured endpoint."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    else:
        doc = source
    endpoints = tuple(canonical(e) for e in doc.get("endpoints", base.endpoint_keys()))
    metas: list[MetaEstimand] = []
    for record in doc.get("meta_estimands", []):
        label = record.get("label")
        tolerance = int(record.get("timepoint_tolerance_weeks", 4))
        mode = MatchingMode(record.get("matching_mode", "lenient"))
        if "ie_handlings" in record:
            handlings = tuple(
                IntercurrentEventHandling(
                    h["event_name"], IntercurrentEventStrategy.parse(h["strategy"])
                )
                for h in record["ie_handlings"]
            )
            metas.append(
                MetaEstimand(
                    label=label,
                    population=record.get("population", ""),
                    treatments=frozenset(record["treatments"]),
                    endpoint=EndpointSpec(
                        name=record["endpoint_name"],
                        units=record["units"],
                        timepoint_weeks=int(record["timepoint_weeks"]),
                    ),
                    summary_measure=SummaryMeasure.parse(
                        record.get("summary_measure", "mean_difference")
                    ),
                    ie_handlings=handlings,
                    timepoint_tolerance_weeks=tolerance,
                    matching_mode=mode,
                )
            )
        else:
            strategy = IntercurrentEventStrategy.parse(record["strategy"])
            for endpoint in endpoints:
                metas.append(
                    synthesize_meta(
                        base,
                        endpoint,
                        strategy,
                        label=label or strategy.value,
                        tolerance_weeks=tolerance,
                        mode=mode,
                    )
                )
    return AnalysisConfig(
        meta_estimands=tuple(metas),
        endpoints=endpoints,
        reference=doc.get("reference"),
        ci_level=float(doc.get("ci_level", 0.95)),
    )
