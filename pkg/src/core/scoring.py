"""
Point and probabilistic prediction scores: MAPE, RMSPE and the sample CRPS.
"""

import logging
import numpy as np
import pandas as pd

from dataclasses import dataclass

from src.core.exceptions import InvalidArgumentError

_logger = logging.getLogger(__name__)

_CRPS_BLOCK_ELEMENTS = 2**22


@dataclass(frozen=True)
class ScoreReport:
    """
    Attributes:
        mape (float): Mean absolute error of the predictive mean.
        rmspe (float): Root mean squared error of the predictive mean.
        crps (float): Mean sample CRPS over the target points.
        m (int): Number of target points.
        draws (int): Predictive draws per point.
    """

    mape: float
    rmspe: float
    crps: float
    m: int
    draws: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"metric": ["mape", "rmspe", "crps"], "value": [self.mape, self.rmspe, self.crps]}
        )


def crps_ensemble(pred_draws: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """
    Sample CRPS per point, ``mean|X - y| - 0.5 mean|X - X'|`` with the second
    mean over all ordered draw pairs.

    Args:
        pred_draws: ``m x D`` predictive draws, ``D >= 2``.
        truth: ``m`` realized values.
    """
    pred_draws, truth = _check(pred_draws, truth)
    m, D = pred_draws.shape
    accuracy = np.mean(np.abs(pred_draws - truth[:, None]), axis=1)
    spread = np.empty(m)
    block = max(1, _CRPS_BLOCK_ELEMENTS // (D * D))
    for start in range(0, m, block):
        x = pred_draws[start : start + block]
        spread[start : start + block] = np.mean(np.abs(x[:, :, None] - x[:, None, :]), axis=(1, 2))
    return accuracy - 0.5 * spread


def _check(pred_draws, truth):
    pred_draws = np.asarray(pred_draws, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred_draws.ndim != 2 or pred_draws.shape[0] != truth.size:
        raise InvalidArgumentError(
            f"Draws of shape {pred_draws.shape} do not match {truth.size} target points"
        )
    if pred_draws.shape[1] < 2:
        raise InvalidArgumentError("CRPS needs at least 2 draws per point")
    return pred_draws, truth


def score(pred_draws: np.ndarray, truth: np.ndarray) -> ScoreReport:
    """
    Score predictive draws against realized values.

    Args:
        pred_draws: ``m x D`` draws, one row per target point.
        truth: ``m`` realized values.

    Raises:
        InvalidArgumentError: On a size mismatch or fewer than 2 draws.
    """
    pred_draws, truth = _check(pred_draws, truth)
    error = pred_draws.mean(axis=1) - truth
    report = ScoreReport(
        mape=float(np.mean(np.abs(error))),
        rmspe=float(np.sqrt(np.mean(error**2))),
        crps=float(np.mean(crps_ensemble(pred_draws, truth))),
        m=int(truth.size),
        draws=int(pred_draws.shape[1]),
    )
    _logger.info("MAPE %.4f, RMSPE %.4f, CRPS %.4f over %d points", report.mape, report.rmspe, report.crps, report.m)
    return report
