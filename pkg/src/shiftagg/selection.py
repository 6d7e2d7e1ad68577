"""Single-model selection baselines and the method comparison table.

Selection picks one model from the trained sequence by a validation score
and discards the rest; it can never beat the best sequence member. Two
rules are provided: plain source risk, and importance-weighted validation
(source risk reweighted by the density ratio, the standard estimate of
target risk under covariate shift). ``compare_methods`` tabulates these
against the aggregation and its oracle variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import (
    _weighted_sq_risk,
    aggregate_predict,
    empirical_risk,
    importance_weighted_risk,
    oracle_aggregate,
    resolve_beta,
    run_aggregation,
)
from .data import PredictionBundle
from .errors import ConfigInvalid, IllConditioned
from .serialize import aligned_table, fmt_float

__all__ = [
    "SelectionOutcome",
    "MethodRow",
    "ComparisonReport",
    "select_source_risk",
    "select_iwv",
    "compare_methods",
    "RESERVED_METHOD_NAMES",
]

# Baselines that need ingredients absent from the bundle format (feature
# embeddings, training internals). Their method-name slots are reserved in
# the report schema so downstream tooling can merge externally computed rows.
RESERVED_METHOD_NAMES = (
    "select_deep_embedded_validation",
    "select_balancing_principle",
)


@dataclass(frozen=True)
class SelectionOutcome:
    """Result of scoring every model and picking the argmin."""

    method: str
    selected_index: int
    scores: tuple[float, ...]
    tie_broken: bool

    def __post_init__(self):
        if self.method not in ("source_risk", "importance_weighted"):
            raise ConfigInvalid(f"unknown selection method {self.method!r}")
        scores = tuple(float(s) for s in self.scores)
        object.__setattr__(self, "scores", scores)
        idx = min(range(len(scores)), key=scores.__getitem__)
        if idx != self.selected_index:
            raise ConfigInvalid("selected_index must be the lowest-index argmin")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "selected_index": self.selected_index,
            "scores": list(self.scores),
            "tie_broken": self.tie_broken,
        }


def _argmin_tie(scores: list[float]) -> tuple[int, bool]:
    idx = min(range(len(scores)), key=scores.__getitem__)
    tie = any(scores[j] == scores[idx] for j in range(len(scores)) if j != idx)
    return idx, tie


def select_source_risk(bundle: PredictionBundle) -> SelectionOutcome:
    """Pick the model with the lowest plain source risk (naive baseline)."""
    scores = [
        empirical_risk(bundle.source_preds[k], bundle.source.labels)
        for k in range(bundle.model_count)
    ]
    idx, tie = _argmin_tie(scores)
    return SelectionOutcome(
        method="source_risk", selected_index=idx, scores=tuple(scores), tie_broken=tie
    )


def select_iwv(bundle: PredictionBundle, beta) -> SelectionOutcome:
    """Importance-weighted validation: argmin of ratio-weighted source risk."""
    beta = np.asarray(beta, dtype=np.float64)
    scores = [
        importance_weighted_risk(bundle.source_preds[k], bundle.source.labels, beta)
        for k in range(bundle.model_count)
    ]
    idx, tie = _argmin_tie(scores)
    return SelectionOutcome(
        method="importance_weighted",
        selected_index=idx,
        scores=tuple(scores),
        tie_broken=tie,
    )


@dataclass(frozen=True)
class MethodRow:
    """One comparison-table row; risk fields are None when unavailable."""

    method: str
    estimated_score: float | None = None
    true_target_risk: float | None = None
    risk_ratio_vs_oracle: float | None = None
    detail: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "estimated_score": self.estimated_score,
            "true_target_risk": self.true_target_risk,
            "risk_ratio_vs_oracle": self.risk_ratio_vs_oracle,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ComparisonReport:
    """Rows for every method, sorted by method name."""

    rows: tuple[MethodRow, ...]

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def method_names(self) -> tuple[str, ...]:
        return tuple(r.method for r in self.rows)

    def to_json_dict(self) -> dict:
        return {"rows": [r.to_json_dict() for r in self.rows]}

    def format_table(self) -> str:
        def cell(v):
            return "-" if v is None else fmt_float(v)

        rows = [
            [r.method, cell(r.estimated_score), cell(r.true_target_risk),
             cell(r.risk_ratio_vs_oracle)]
            for r in self.rows
        ]
        return aligned_table(
            ["method", "estimated_score", "true_target_risk", "vs_oracle"], rows
        )


def _true_risk(bundle: PredictionBundle, preds: np.ndarray) -> float | None:
    if bundle.target.oracle_labels is None:
        return None
    return _weighted_sq_risk(preds, bundle.target.oracle_labels, None)


def build_method_rows(
    bundle: PredictionBundle,
    beta_by_name: dict[str, object],
    lam: float | None,
) -> list[MethodRow]:
    """Rows for all models, selection rules, and aggregations.

    ``beta_by_name`` maps a suffix (e.g. ``"analytic"``, ``"ulsif"`` or
    ``""`` for unsuffixed rows) to a ratio model or weight vector; each
    entry yields one IWV row and one aggregation row.
    """
    rows: list[MethodRow] = []
    oracle_true: float | None = None

    for k, name in enumerate(bundle.model_names):
        rows.append(
            MethodRow(
                method=f"model:{name}",
                estimated_score=empirical_risk(
                    bundle.source_preds[k], bundle.source.labels
                ),
                true_target_risk=_true_risk(bundle, bundle.target_preds[k]),
            )
        )

    sel = select_source_risk(bundle)
    rows.append(
        MethodRow(
            method="select_source",
            estimated_score=sel.scores[sel.selected_index],
            true_target_risk=_true_risk(
                bundle, bundle.target_preds[sel.selected_index]
            ),
            detail={"selected_index": sel.selected_index, "tie_broken": sel.tie_broken},
        )
    )

    if bundle.target.oracle_labels is not None:
        try:
            ores = oracle_aggregate(bundle)
            agg = aggregate_predict(bundle.target_preds, ores.coefficients)
            oracle_true = _true_risk(bundle, agg)
            rows.append(
                MethodRow(
                    method="aggregate_oracle",
                    true_target_risk=oracle_true,
                    detail={
                        "coefficients": list(ores.coefficients),
                        "tikhonov": ores.tikhonov,
                        "condition_estimate": ores.condition_estimate,
                    },
                )
            )
        except IllConditioned as exc:
            rows.append(
                MethodRow(method="aggregate_oracle", detail={"error": str(exc)})
            )

    for suffix, ratio in beta_by_name.items():
        tag = f"_{suffix}" if suffix else ""
        beta, _ = resolve_beta(bundle, ratio)
        sel_iwv = select_iwv(bundle, beta)
        rows.append(
            MethodRow(
                method=f"select_iwv{tag}",
                estimated_score=sel_iwv.scores[sel_iwv.selected_index],
                true_target_risk=_true_risk(
                    bundle, bundle.target_preds[sel_iwv.selected_index]
                ),
                detail={
                    "selected_index": sel_iwv.selected_index,
                    "tie_broken": sel_iwv.tie_broken,
                },
            )
        )
        result = run_aggregation(bundle, beta, lam)
        agg_t = aggregate_predict(bundle.target_preds, result.coefficients)
        est = importance_weighted_risk(
            aggregate_predict(bundle.source_preds, result.coefficients),
            bundle.source.labels,
            beta,
        )
        rows.append(
            MethodRow(
                method=f"aggregate{tag}",
                estimated_score=est,
                true_target_risk=_true_risk(bundle, agg_t),
                detail={
                    "coefficients": list(result.coefficients),
                    "tikhonov": result.tikhonov,
                    "condition_estimate": result.condition_estimate,
                    "lambda_escalations": result.diagnostics["lambda_escalations"],
                },
            )
        )

    rows.sort(key=lambda r: r.method)
    if oracle_true is not None and oracle_true > 0:
        rows = [
            MethodRow(
                method=r.method,
                estimated_score=r.estimated_score,
                true_target_risk=r.true_target_risk,
                risk_ratio_vs_oracle=(
                    None
                    if r.true_target_risk is None
                    else r.true_target_risk / oracle_true
                ),
                detail=r.detail,
            )
            for r in rows
        ]
    return rows


def compare_methods(
    bundle: PredictionBundle, ratio=None, lam: float | None = None
) -> ComparisonReport:
    """Tabulate single models, both selection rules, and aggregations.

    ``ratio`` is a ratio model or precomputed weight vector; without it the
    ratio-dependent rows (IWV selection, aggregation) are omitted. True
    target risks appear whenever the bundle carries oracle labels.
    """
    betas = {} if ratio is None else {"": ratio}
    return ComparisonReport(rows=tuple(build_method_rows(bundle, betas, lam)))
