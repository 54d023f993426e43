from __future__ import annotations

from typing import Protocol, Tuple, runtime_checkable

import numpy as np

from mpt.models.schemas import PlanStep


@runtime_checkable
class DynamicsModel(Protocol):

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class AnalyticJacobians(Protocol):

    def jacobians(self, state: np.ndarray, action: np.ndarray) -> Tuple[np.ndarray, np.ndarray]: ...


@runtime_checkable
class ContactAware(Protocol):

    def contact_flag(self, state: np.ndarray, action: np.ndarray) -> bool: ...


@runtime_checkable
class DisturbanceEstimator(Protocol):

    def update(self, observed_state: np.ndarray, predicted_state: np.ndarray, action: np.ndarray, time: int) -> None: ...

    def estimate(self, state: np.ndarray, action: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class DisturbanceModel(Protocol):
    """The unknown real-world term d(x, u, k)."""

    def __call__(self, state: np.ndarray, action: np.ndarray, k: int) -> np.ndarray: ...


@runtime_checkable
class Planner(Protocol):

    name: str
    rollouts: int

    def plan(self, state: np.ndarray, rng: np.random.Generator) -> PlanStep: ...

    def commit(self, measured_state: np.ndarray, tau: float) -> bool: ...
