"""Choice-based sampling corrections for balance-forced crossover stacks.

A stacked design puts event rows and non-event rows in fixed proportions,
so the label prior of the data (``sample_prior``) differs from that of the
population a forecaster faces (``population_prior``).  Manski-Lerman weights
``P/P*`` for events and ``(1-P)/(1-P*)`` for non-events restore the
population prior.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diagnostics import ConfusionReport, confusion
from .errors import DegeneratePriorError
from .forest import ForestParams, fit, oob_predictions, predicted_labels


@dataclass(frozen=True)
class PriorSpec:
    population_prior: float
    sample_prior: float

    def __post_init__(self):
        for name in ("population_prior", "sample_prior"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DegeneratePriorError(f"{name} must lie strictly between 0 and 1, got {v}")

    def to_dict(self) -> dict:
        return {"population_prior": self.population_prior, "sample_prior": self.sample_prior}


@dataclass
class WeightVector:
    weights: np.ndarray
    class_weights: tuple[float, float]

    @property
    def w1(self) -> float:
        return self.class_weights[0]

    @property
    def w0(self) -> float:
        return self.class_weights[1]

    def to_dict(self) -> dict:
        return {"w1": self.w1, "w0": self.w0, "weights": self.weights.tolist()}


def manski_lerman_weights(labels, prior: PriorSpec) -> WeightVector:
    """Per-row weights ``P/P*`` (label 1) and ``(1-P)/(1-P*)`` (label 0).

    Raises
    ------
    DegeneratePriorError
        Only one class present.
    """
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise DegeneratePriorError("weights need both classes present")
    w1 = prior.population_prior / prior.sample_prior
    w0 = (1.0 - prior.population_prior) / (1.0 - prior.sample_prior)
    return WeightVector(np.where(y == 1, w1, w0).astype(float), (w1, w0))


def scenario_prior(data, days_in_month: int, event_days: int) -> PriorSpec:
    """Population prior from the event's share of days; sample prior from
    the share of event rows in ``data``."""
    if not 0 <= event_days <= days_in_month or days_in_month <= 0:
        raise ValueError("need 0 <= event_days <= days_in_month")
    y = np.asarray(data.labels)
    return PriorSpec(event_days / days_in_month, float(y.mean()))


@dataclass
class RefitReport:
    unweighted: ConfusionReport
    weighted: ConfusionReport
    prior: PriorSpec
    class_weights: tuple[float, float]

    @property
    def cost_ratio_shift(self) -> tuple[float | None, float | None]:
        """``cost_ratio_fp_to_fn`` before and after weighting."""
        return self.unweighted.cost_ratio_fp_to_fn, self.weighted.cost_ratio_fp_to_fn

    @property
    def implied_cost_shift(self) -> tuple[float | None, float | None]:
        """``implied_cost_fp_to_fn`` before and after weighting."""
        return self.unweighted.implied_cost_fp_to_fn, self.weighted.implied_cost_fp_to_fn

    def to_dict(self) -> dict:
        return {
            "prior": self.prior.to_dict(),
            "class_weights": {"w1": self.class_weights[0], "w0": self.class_weights[1]},
            "unweighted": self.unweighted.to_dict(),
            "weighted": self.weighted.to_dict(),
            "cost_ratio_fp_to_fn": list(self.cost_ratio_shift),
            "implied_cost_fp_to_fn": list(self.implied_cost_shift),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _oob_confusion(forest, data) -> ConfusionReport:
    p1, n_oob = oob_predictions(forest, data)
    ok = n_oob > 0
    return confusion(predicted_labels(p1[ok]), np.asarray(data.labels)[ok])


def weighted_refit_report(data, prior: PriorSpec, params: ForestParams = ForestParams(),
                          threads: int = 1) -> RefitReport:
    """Fit the classifier with unit and with Manski-Lerman weights and
    compare their OOB confusion tables.  Both fits share ``params.seed``."""
    wv = manski_lerman_weights(data.labels, prior)
    plain = fit(data, params, threads=threads)
    weighted = fit(data, params, weights=wv.weights, threads=threads)
    return RefitReport(_oob_confusion(plain, data), _oob_confusion(weighted, data), prior, wv.class_weights)
