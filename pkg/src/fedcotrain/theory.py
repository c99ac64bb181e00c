"""Generalization-bound toolkit for pseudolabel retraining.

Implements the PAC-style arithmetic relating a locally trained model (error
bound ``base_error`` on ``labeled_size`` examples) to its retrained version
after absorbing ``pseudo_size`` pseudolabels produced by a helper ensemble
(error bound ``helper_error``):

* ``labeled_risk_budget(p, e)`` is the quantity that ``labeled_size *
  base_error`` must stay below for the guarantee to apply. With u = p * e it
  evaluates (u!)^(1/u) * e_nat - u and is continued to non-integer u through
  the Gamma function (u! -> Gamma(u + 1)); it increases monotonically on
  u in (0, inf).
* ``retrained_error_bound`` is the retrained model's error bound:
  max(base_error + (pseudo_size / labeled_size) *
  (helper_error - helper_disagreement), 0). Larger disagreement between the
  helper and the retrained model tightens the bound.

These are calculators over supplied or measured quantities; no probabilistic
claim is verified. ``analyze_round`` applies them descriptively to a finished
federation round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TheoryError(ValueError):
    """Parameters outside the calculator's domain."""


@dataclass(frozen=True)
class TheoryParams:
    """Inputs to the retraining-bound arithmetic.

    ``pseudo_size`` may be zero (no pseudolabels were absorbed), in which case
    the retrained bound degenerates to ``base_error``; the budget condition is
    only defined for a positive pseudolabel mass.
    """

    labeled_size: int
    pseudo_size: int
    base_error: float
    helper_error: float
    confidence: float
    helper_disagreement: float

    def __post_init__(self):
        if self.labeled_size < 1:
            raise TheoryError("labeled_size must be >= 1")
        if self.pseudo_size < 0:
            raise TheoryError("pseudo_size must be >= 0")
        if not 0.0 < self.base_error < 0.5:
            raise TheoryError("base_error must lie in (0, 1/2)")
        if not 0.0 < self.helper_error < 0.5:
            raise TheoryError("helper_error must lie in (0, 1/2)")
        if not 0.0 < self.confidence < 1.0:
            raise TheoryError("confidence must lie in (0, 1)")
        if not 0.0 <= self.helper_disagreement <= 1.0:
            raise TheoryError("helper_disagreement must lie in [0, 1]")


def empirical_disagreement(h1, h2, data) -> float:
    """Fraction of instances on which two classifiers disagree.

    A pseudo-metric over any evaluation set: non-negative, symmetric, and
    zero for a classifier against itself.
    """
    X = data.features if hasattr(data, "features") else np.asarray(data, dtype=np.float64)
    if len(X) == 0:
        raise TheoryError("cannot measure disagreement on an empty dataset")
    return float(np.mean(h1.predict_batch(X) != h2.predict_batch(X)))


def prediction_disagreement(a: np.ndarray, b: np.ndarray) -> float:
    """Disagreement between two already-computed prediction vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or len(a) == 0:
        raise TheoryError("prediction vectors must be non-empty and aligned")
    return float(np.mean(a != b))


def labeled_risk_budget(pseudo_size: float, helper_error: float) -> float:
    """Upper bound on labeled_size * base_error for the guarantee to apply.

    Evaluates (u!)^(1/u) * e - u at u = pseudo_size * helper_error via the
    log-Gamma function, which agrees with the exact factorial at integer u and
    continues it in between.
    """
    u = pseudo_size * helper_error
    if u <= 0:
        raise TheoryError("pseudo_size * helper_error must be > 0")
    return math.exp(math.lgamma(u + 1.0) / u) * math.e - u


def retrained_error_bound(params: TheoryParams) -> float:
    """Error bound of the model retrained on labeled data plus pseudolabels."""
    correction = (params.pseudo_size / params.labeled_size) * (
        params.helper_error - params.helper_disagreement
    )
    return max(params.base_error + correction, 0.0)


def guarantee_condition_holds(params: TheoryParams) -> bool:
    """Whether labeled_size * base_error stays inside the budget.

    False when no pseudolabel mass is available (the condition is vacuous).
    """
    if params.pseudo_size * params.helper_error <= 0:
        return False
    return params.labeled_size * params.base_error < labeled_risk_budget(
        params.pseudo_size, params.helper_error
    )


@dataclass(frozen=True)
class ParticipantAnalysis:
    participant: int
    labeled_size: int
    pseudo_size: int
    base_error: float
    helper_error: float
    helper_disagreement: float
    retrained_bound: float
    budget: float | None
    condition_holds: bool


@dataclass(frozen=True)
class RoundAnalysis:
    participants: tuple[ParticipantAnalysis, ...]
    pairwise_disagreement: tuple[tuple[float, ...], ...]

    def to_records(self) -> list[dict]:
        records = []
        for p in self.participants:
            records.append({
                "record": "analysis",
                "participant": p.participant,
                "labeled_size": p.labeled_size,
                "pseudo_size": p.pseudo_size,
                "base_error": p.base_error,
                "helper_error": p.helper_error,
                "helper_disagreement": p.helper_disagreement,
                "retrained_bound": p.retrained_bound,
                "budget": p.budget,
                "condition_holds": p.condition_holds,
            })
        records.append({
            "record": "pairwise_disagreement",
            "matrix": [list(row) for row in self.pairwise_disagreement],
        })
        return records


# Error rates are clipped into the open interval TheoryParams accepts, so a
# participant with perfect (or abysmal) measured accuracy still yields a
# well-defined descriptive bound.
_EPS = 1e-6


def _clip_error(value: float) -> float:
    return min(max(value, _EPS), 0.5 - _EPS)


def analyze_round(artifacts, helper_error: float | None = None,
                  confidence: float = 0.05) -> RoundAnalysis:
    """Descriptive bound arithmetic over a finished round's artifacts.

    Per participant, measures the base error as one minus the retrained local
    baseline's test accuracy and the helper disagreement as the fraction of
    bundled public instances where the federated model departs from its
    bundle's labels. ``helper_error`` defaults to the mean measured base error
    across participants, standing in for the unobservable ensemble error.
    """
    if artifacts is None:
        raise TheoryError("round artifacts are required for analysis")
    n = len(artifacts.bundles)
    local_errors = [1.0 - acc for acc in artifacts.local_accuracies]
    if helper_error is None:
        helper_error = float(np.mean(local_errors))
    helper_error = _clip_error(helper_error)

    participants = []
    for i in range(n):
        bundle = artifacts.bundles[i]
        pseudo_size = len(bundle)
        if pseudo_size > 0:
            rows = []
            labels = []
            for entry in bundle.entries:
                rows.extend(entry.indices)
                labels.extend([entry.category] * len(entry.indices))
            fed_preds = artifacts.federated_classifiers[i].predict_batch(
                artifacts.unlabeled.features[np.array(rows, dtype=np.int64)]
            )
            disagreement = float(np.mean(fed_preds != np.array(labels, dtype=np.int64)))
        else:
            disagreement = 0.0
        params = TheoryParams(
            labeled_size=artifacts.train_sizes[i],
            pseudo_size=pseudo_size,
            base_error=_clip_error(local_errors[i]),
            helper_error=helper_error,
            confidence=confidence,
            helper_disagreement=disagreement,
        )
        budget = (labeled_risk_budget(pseudo_size, helper_error)
                  if pseudo_size > 0 else None)
        participants.append(ParticipantAnalysis(
            participant=i,
            labeled_size=params.labeled_size,
            pseudo_size=pseudo_size,
            base_error=params.base_error,
            helper_error=helper_error,
            helper_disagreement=disagreement,
            retrained_bound=retrained_error_bound(params),
            budget=budget,
            condition_holds=guarantee_condition_holds(params),
        ))

    matrix = tuple(
        tuple(prediction_disagreement(artifacts.predictions[i], artifacts.predictions[j])
              if i != j else 0.0
              for j in range(n))
        for i in range(n)
    )
    return RoundAnalysis(participants=tuple(participants), pairwise_disagreement=matrix)
