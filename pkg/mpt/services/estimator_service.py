from __future__ import annotations

import logging
from typing import Sequence, Tuple

import numpy as np

from mpt.models.errors import ConfigError
from mpt.models.interfaces import DisturbanceEstimator
from mpt.models.schemas import EstimatorSpec
from mpt.services.mdp_service import ZeroEstimator
from mpt.utils.numerics import state_difference, to_vector

logger = logging.getLogger(__name__)


class ConstantEstimator:
    """A fixed, state-independent disturbance estimate."""

    def __init__(self, vector: Sequence[float]) -> None:
        self._d = to_vector(vector, name="estimate")

    def update(self, observed_state: np.ndarray, predicted_state: np.ndarray, action: np.ndarray, time: int) -> None:
        return None

    def estimate(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self._d.copy()


class ExponentialMovingAverageEstimator:
    """Tracks the mean one-step residual between observed and nominal-predicted states."""

    def __init__(self, state_dim: int, rate: float, angle_indices: Tuple[int, ...] = ()) -> None:
        if not 0.0 < rate <= 1.0:
            raise ConfigError(f"estimator rate must lie in (0, 1], got {rate}.")
        self.rate = rate
        self.angle_indices = angle_indices
        self._d = np.zeros(state_dim)
        self.updates = 0

    def update(self, observed_state: np.ndarray, predicted_state: np.ndarray, action: np.ndarray, time: int) -> None:
        residual = state_difference(observed_state, predicted_state, self.angle_indices)
        self._d = (1.0 - self.rate) * self._d + self.rate * residual
        self.updates += 1
        logger.debug("estimator update k=%d residual=%s", time, residual.tolist())

    def estimate(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self._d.copy()


def build_estimator(spec: EstimatorSpec, state_dim: int, angle_indices: Tuple[int, ...] = ()) -> DisturbanceEstimator:
    if spec.kind == "zero":
        return ZeroEstimator(state_dim)
    if spec.kind == "constant":
        return ConstantEstimator(to_vector(spec.vector, state_dim, name="estimator vector"))
    if spec.kind == "ema":
        return ExponentialMovingAverageEstimator(state_dim, spec.rate, angle_indices)
    raise ConfigError(f"Unknown estimator kind: {spec.kind!r}.")
