"""Fixed-effects network meta-analysis by generalized least squares.

Contrasts are stacked into y = X theta + error with a block-diagonal
covariance, one block per trial.  Two-arm trials contribute a 1x1 block
[se^2]; a k-arm trial contributes a block built from per-arm variances
(diagonal v_t + v_c, off-diagonal the shared arms' variance), so that
correlated treatment effects within multi-arm trials are accounted for.
The solve whitens with a Cholesky factor and uses QR on the whitened
design; no explicit inverse of the covariance is formed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .estimands import canonical
from .ingest import ContrastEstimate, EvidenceBase
from .network import EvidenceNetwork, is_connected
from .normal import z_for_level

CONDITION_ERROR = 1e12
CONDITION_WARNING = 1e8


class EngineError(ValueError):
    pass


class DisconnectedNetworkError(EngineError):
    pass


class CovarianceError(EngineError):
    pass


class NumericalError(RuntimeError):
    """Conditioning or factorization failure; carries a diagnostic message."""


def trial_covariance(
    contrasts: Sequence[ContrastEstimate],
    arm_variances: Mapping[str, float] | None = None,
    explicit: np.ndarray | None = None,
) -> np.ndarray:
    """Within-trial covariance block for one trial's contrasts.

    A single contrast yields [se^2].  With two or more contrasts an
    explicit covariance (validated for symmetry and positive definiteness)
    passes through; otherwise per-arm variances must be supplied, keyed by
    canonical treatment id, and the block is assembled from them.
    """
    if not contrasts:
        raise CovarianceError("trial has no contrasts")
    m = len(contrasts)
    if explicit is not None:
        block = np.asarray(explicit, dtype=float)
        if block.shape != (m, m):
            raise CovarianceError(f"explicit covariance has shape {block.shape}, expected {(m, m)}")
        if not np.allclose(block, block.T, rtol=1e-10, atol=1e-12):
            raise CovarianceError("explicit covariance is not symmetric")
        _require_positive_definite(block, "explicit covariance")
        return block
    if m == 1:
        return np.array([[contrasts[0].se ** 2]])
    if arm_variances is None:
        raise CovarianceError(
            "shared-arm variance unidentifiable: multi-arm trial needs arm-level variances "
            "or an explicit covariance"
        )
    signs = []
    for c in contrasts:
        t, comp = canonical(c.treatment), canonical(c.comparator)
        for arm in (t, comp):
            if arm not in arm_variances:
                raise CovarianceError(
                    f"shared-arm variance unidentifiable: no arm variance for {arm!r} "
                    f"in trial {c.trial_id!r}"
                )
        signs.append({t: 1.0, comp: -1.0})
    block = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            block[i, j] = sum(
                v * signs[i].get(arm, 0.0) * signs[j].get(arm, 0.0)
                for arm, v in arm_variances.items()
            )
    _require_positive_definite(block, f"covariance of trial {contrasts[0].trial_id!r}")
    return block


def _require_positive_definite(matrix: np.ndarray, what: str) -> None:
    eigenvalues = np.linalg.eigvalsh(matrix)
    floor = -abs(eigenvalues).max() * 1e-10 if eigenvalues.size else 0.0
    if eigenvalues.size and eigenvalues.min() <= max(floor, 0.0):
        raise CovarianceError(f"{what} is not positive definite (min eigenvalue {eigenvalues.min():g})")


@dataclass(frozen=True, eq=False)
class GlsSystem:
    """Stacked contrast system over basic parameters vs one reference."""

    y: np.ndarray
    design: np.ndarray
    sigma: np.ndarray
    reference: str
    treatments: tuple[str, ...]  # full node order, reference included
    parameters: tuple[str, ...]  # design columns (non-reference treatments)
    contrasts: tuple[ContrastEstimate, ...]


def assemble_gls(
    net: EvidenceNetwork,
    base: EvidenceBase,
    reference: str,
    *,
    independence_fallback: bool = False,
) -> GlsSystem:
    """Build y, X and the block-diagonal covariance for a network slice.

    Row order is the network's deterministic contrast order (trial id,
    treatment, comparator).  With `independence_fallback`, a multi-arm
    trial without arm-level data degrades to a diagonal block instead of
    failing; the shared-arm correlation is then ignored.
    """
    if not is_connected(net):
        raise DisconnectedNetworkError("evidence network is disconnected")
    ref_idx = net.node_index(reference)
    reference = net.nodes[ref_idx]
    parameters = tuple(node for i, node in enumerate(net.nodes) if i != ref_idx)
    columns = {canonical(node): j for j, node in enumerate(parameters)}

    contrasts = net.contrasts
    if len(contrasts) != len(net.edges):
        raise EngineError("network does not carry its contrast slice")
    m, p = len(contrasts), len(parameters)
    y = np.array([c.md for c in contrasts])
    design = np.zeros((m, p))
    for i, c in enumerate(contrasts):
        t, comp = canonical(c.treatment), canonical(c.comparator)
        if t in columns:
            design[i, columns[t]] = 1.0
        if comp in columns:
            design[i, columns[comp]] = -1.0

    sigma = np.zeros((m, m))
    row = 0
    for trial_id, group in _group_by_trial(contrasts):
        labels = {canonical(c.estimand_label) for c in group}
        if len(labels) > 1:
            raise EngineError(
                f"trial {trial_id!r} contributes contrasts under several estimands: {sorted(labels)}"
            )
        block = _block_for_trial(group, base, independence_fallback)
        k = len(group)
        sigma[row : row + k, row : row + k] = block
        row += k
    return GlsSystem(
        y=y,
        design=design,
        sigma=sigma,
        reference=reference,
        treatments=net.nodes,
        parameters=parameters,
        contrasts=contrasts,
    )


def _group_by_trial(
    contrasts: Sequence[ContrastEstimate],
) -> list[tuple[str, list[ContrastEstimate]]]:
    groups: list[tuple[str, list[ContrastEstimate]]] = []
    for c in contrasts:
        if groups and groups[-1][0] == c.trial_id:
            groups[-1][1].append(c)
        else:
            groups.append((c.trial_id, [c]))
    return groups


def _block_for_trial(
    group: Sequence[ContrastEstimate], base: EvidenceBase, independence_fallback: bool
) -> np.ndarray:
    if len(group) == 1:
        return trial_covariance(group)
    sample = group[0]
    arms = {canonical(c.treatment) for c in group} | {canonical(c.comparator) for c in group}
    variances: dict[str, float] = {}
    for arm in arms:
        summary = base.arm_summary(sample.trial_id, sample.estimand_label, sample.endpoint, arm)
        if summary is None:
            if independence_fallback:
                return np.diag([c.se**2 for c in group])
            raise CovarianceError(
                f"shared-arm variance unidentifiable: trial {sample.trial_id!r} lacks an arm "
                f"summary for {arm!r} ({sample.estimand_label} / {sample.endpoint})"
            )
        variances[arm] = summary.variance
    return trial_covariance(group, arm_variances=variances)


@dataclass(frozen=True)
class ComparisonResult:
    treatment: str
    comparator: str
    md: float
    se: float
    ci_lower: float
    ci_upper: float
    ci_level: float


@dataclass(frozen=True, eq=False)
class NmaResult:
    """Basic-parameter estimates vs a reference, with derived comparisons."""

    reference: str
    treatments: tuple[str, ...]
    parameters: tuple[str, ...]
    estimates: np.ndarray
    covariance: np.ndarray
    ci_level: float
    comparisons: Mapping[tuple[str, str], ComparisonResult]
    condition_number: float
    notes: tuple[str, ...] = ()
    provenance: Optional[Any] = None

    def basic_estimate(self, treatment: str) -> float:
        """Effect of a treatment vs the reference (zero for the reference itself)."""
        return _contrast_vector(self, treatment, self.reference) @ self.estimates


def solve_fixed_effects(system: GlsSystem, ci_level: float = 0.95) -> NmaResult:
    """Solve theta = (X' Sigma^-1 X)^-1 X' Sigma^-1 y with its covariance.

    Whitens by the Cholesky factor of Sigma, then QR-factorizes the
    whitened design.  Conditioning of X' Sigma^-1 X is checked: above 1e8 a
    note is recorded, above 1e12 the solve is refused.
    """
    try:
        chol = np.linalg.cholesky(system.sigma)
    except np.linalg.LinAlgError:
        raise CovarianceError("covariance matrix is not positive definite") from None
    design_w = np.linalg.solve(chol, system.design)
    y_w = np.linalg.solve(chol, system.y)
    q, r = np.linalg.qr(design_w)
    singular_values = np.linalg.svd(r, compute_uv=False)
    if singular_values[-1] == 0.0:
        raise NumericalError("design matrix is rank deficient (disconnected network?)")
    condition = float((singular_values[0] / singular_values[-1]) ** 2)
    if condition > CONDITION_ERROR:
        raise NumericalError(
            f"normal equations too ill-conditioned: condition number {condition:.3e} "
            f"exceeds {CONDITION_ERROR:.0e}"
        )
    notes: tuple[str, ...] = ()
    if condition > CONDITION_WARNING:
        notes = (f"ill-conditioned normal equations (condition number {condition:.3e})",)

    estimates = np.linalg.solve(r, q.T @ y_w)
    r_inv = np.linalg.inv(r)
    covariance = r_inv @ r_inv.T
    covariance = (covariance + covariance.T) / 2.0

    result = NmaResult(
        reference=system.reference,
        treatments=system.treatments,
        parameters=system.parameters,
        estimates=estimates,
        covariance=covariance,
        ci_level=ci_level,
        comparisons={},
        condition_number=condition,
        notes=notes,
    )
    table = league_table(result, ci_level)
    return replace(result, comparisons={(c.treatment, c.comparator): c for c in table})


def _contrast_vector(result: NmaResult, a: str, b: str) -> np.ndarray:
    vector = np.zeros(len(result.parameters))
    columns = {canonical(node): j for j, node in enumerate(result.parameters)}
    for node, sign in ((a, 1.0), (b, -1.0)):
        key = canonical(node)
        if key in columns:
            vector[columns[key]] += sign
        elif key != canonical(result.reference):
            raise EngineError(f"unknown treatment {node!r}")
    return vector


def comparison(result: NmaResult, a: str, b: str, level: float | None = None) -> ComparisonResult:
    """Pooled comparison a minus b with its normal-based confidence interval."""
    level = result.ci_level if level is None else level
    vector = _contrast_vector(result, a, b)
    md = float(vector @ result.estimates)
    variance = float(vector @ result.covariance @ vector)
    se = float(np.sqrt(max(variance, 0.0)))
    z = z_for_level(level)
    return ComparisonResult(
        treatment=a,
        comparator=b,
        md=md,
        se=se,
        ci_lower=md - z * se,
        ci_upper=md + z * se,
        ci_level=level,
    )


def league_table(result: NmaResult, level: float | None = None) -> tuple[ComparisonResult, ...]:
    """Every ordered pair of distinct treatments, in deterministic node order."""
    rows = []
    for a in result.treatments:
        for b in result.treatments:
            if canonical(a) != canonical(b):
                rows.append(comparison(result, a, b, level))
    return tuple(rows)


def comparison_rows(result: NmaResult, level: float | None = None) -> list[dict]:
    """Plot-ready rows: treatment, comparator, md, ci_lower, ci_upper, se."""
    return [
        {
            "treatment": c.treatment,
            "comparator": c.comparator,
            "md": c.md,
            "ci_lower": c.ci_lower,
            "ci_upper": c.ci_upper,
            "se": c.se,
        }
        for c in league_table(result, level)
    ]


def result_to_dict(result: NmaResult) -> dict:
    """Structured form mirroring the result type."""
    return {
        "reference": result.reference,
        "treatments": list(result.treatments),
        "ci_level": result.ci_level,
        "basic_estimates": {
            t: float(result.estimates[j]) for j, t in enumerate(result.parameters)
        },
        "covariance": [[float(v) for v in row] for row in result.covariance],
        "condition_number": result.condition_number,
        "notes": list(result.notes),
        "comparisons": comparison_rows(result),
    }
