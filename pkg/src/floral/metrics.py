"""Evaluation metrics for ensembles of generated fields against references.

All norms are root-mean-square over grid entries, so values are comparable
across resolutions.  Per-sample metrics compare the ensemble mean of the
generated fields with the reference field; the predictive spread is the
pointwise population standard deviation across ensemble members, averaged
over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, mean_square_norm


@dataclass
class SampleMetrics:
    rmse: float
    nrmse: float
    crmse: float
    l2_error: float
    pred_std: float

    def as_row(self) -> list:
        return [self.rmse, self.nrmse, self.crmse, self.l2_error, self.pred_std]


@dataclass
class EvalReport:
    """Per-sample metrics plus set-level aggregates.

    Squared-error metrics aggregate in quadrature (the set-level RMSE is the
    root of the mean squared error over all samples and grid points, which is
    the RMS of per-sample RMSEs); ratio and mean metrics aggregate by plain
    averaging.
    """

    samples: list

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean([s.rmse**2 for s in self.samples])))

    @property
    def nrmse(self) -> float:
        return float(np.mean([s.nrmse for s in self.samples]))

    @property
    def crmse(self) -> float:
        return float(np.sqrt(np.mean([s.crmse**2 for s in self.samples])))

    @property
    def mean_l2_error(self) -> float:
        return float(np.mean([s.l2_error for s in self.samples]))

    @property
    def mean_predictive_std(self) -> float:
        return float(np.mean([s.pred_std for s in self.samples]))


def ensemble_mean(members: list[GridFunction]) -> GridFunction:
    if not members:
        raise ValueError("empty ensemble")
    first = members[0]
    values = np.mean([m.values for m in members], axis=0)
    return GridFunction(first.domain, first.shape, first.channels, values)


def ensemble_std(members: list[GridFunction]) -> GridFunction:
    """Pointwise population standard deviation across ensemble members."""
    if not members:
        raise ValueError("empty ensemble")
    first = members[0]
    values = np.std([m.values for m in members], axis=0, ddof=0)
    return GridFunction(first.domain, first.shape, first.channels, values)


def rmse(prediction: np.ndarray, reference: np.ndarray) -> float:
    return mean_square_norm(np.asarray(prediction) - np.asarray(reference))


def nrmse(prediction: np.ndarray, reference: np.ndarray) -> float:
    """RMSE normalized by the RMS magnitude of the reference field."""
    denom = mean_square_norm(reference)
    if denom == 0.0:
        raise ValueError("reference field is identically zero")
    return rmse(prediction, reference) / denom


def crmse(prediction: np.ndarray, reference: np.ndarray) -> float:
    """RMSE between per-channel spatial means (a conservation-style check)."""
    p = np.asarray(prediction)
    r = np.asarray(reference)
    axes = tuple(range(1, p.ndim))
    return mean_square_norm(p.mean(axis=axes) - r.mean(axis=axes))


def evaluate_sample(members: list[GridFunction],
                    reference: GridFunction) -> SampleMetrics:
    """Metrics for one reference field and its generated ensemble."""
    mean = ensemble_mean(members)
    if mean.shape != reference.shape or mean.channels != reference.channels:
        raise ValueError("ensemble and reference grids do not match")
    return SampleMetrics(
        rmse=rmse(mean.values, reference.values),
        nrmse=nrmse(mean.values, reference.values),
        crmse=crmse(mean.values, reference.values),
        l2_error=mean_square_norm(mean.values - reference.values),
        pred_std=float(np.mean(ensemble_std(members).values)),
    )


def evaluate_set(ensembles: list[list[GridFunction]],
                 references: list[GridFunction]) -> EvalReport:
    if len(ensembles) != len(references):
        raise ValueError("number of ensembles and references differ")
    return EvalReport([evaluate_sample(m, r)
                       for m, r in zip(ensembles, references)])
