"""
Locally linearized Riccati tracking controller and its contraction bounds.

The DARE solution M doubles as the contraction metric of the closed loop
A - B K; the bound calculators below turn (M, Q) into tracking-error
guarantees.
"""

from __future__ import annotations

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from mpt.models.errors import ContactResolutionError, InvalidStateError, RiccatiConvergenceError
from mpt.models.interfaces import AnalyticJacobians, ContactAware, DynamicsModel
from mpt.models.schemas import Box, ControllerParams, DisturbanceBoundParams, RiccatiSolution
from mpt.utils.numerics import state_difference, symmetrize

logger = logging.getLogger(__name__)

CONTRACTION_SLACK = 1e-8
RESIDUAL_TOL = 1e-9
_DIVERGENCE_NORM = 1e14


#Linearization
def _difference(a: np.ndarray, b: np.ndarray, angle_indices: Sequence[int]) -> np.ndarray:
    return state_difference(a, b, angle_indices)


def jacobians_fd(
    dynamics: DynamicsModel,
    x: np.ndarray,
    u: np.ndarray,
    h: float,
    angle_indices: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians; one-sided where the stencil straddles a contact event."""
    if isinstance(dynamics, AnalyticJacobians):
        A, B = dynamics.jacobians(x, u)
        return np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)
    if h <= 0.0:
        raise InvalidStateError(f"Finite-difference step must be > 0, got {h}.")

    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    angles = tuple(angle_indices) if angle_indices is not None else tuple(getattr(dynamics, "angle_indices", ()))
    contact_aware = isinstance(dynamics, ContactAware)

    f0 = np.asarray(dynamics.step(x, u), dtype=np.float64)
    flag0 = bool(dynamics.contact_flag(x, u)) if contact_aware else False

    def column(perturb_state: bool, i: int) -> np.ndarray:
        base = x if perturb_state else u
        e = np.zeros_like(base)
        e[i] = h
        if perturb_state:
            args_p, args_m = (x + e, u), (x - e, u)
        else:
            args_p, args_m = (x, u + e), (x, u - e)
        fp = np.asarray(dynamics.step(*args_p), dtype=np.float64)
        fm = np.asarray(dynamics.step(*args_m), dtype=np.float64)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise InvalidStateError(f"Non-finite dynamics while differentiating at x={x.tolist()}, u={u.tolist()}.")
        if contact_aware:
            flag_p, flag_m = bool(dynamics.contact_flag(*args_p)), bool(dynamics.contact_flag(*args_m))
            if flag_p != flag0 and flag_m == flag0:
                return _difference(f0, fm, angles) / h
            if flag_m != flag0 and flag_p == flag0:
                return _difference(fp, f0, angles) / h
        return _difference(fp, fm, angles) / (2.0 * h)

    A = np.column_stack([column(True, i) for i in range(x.shape[0])])
    B = np.column_stack([column(False, i) for i in range(u.shape[0])])
    return A, B


#Riccati equation
def dare_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R_cost: np.ndarray, M: np.ndarray) -> float:
    BtMA = B.T @ M @ A
    S = R_cost + B.T @ M @ B
    resid = A.T @ M @ A - BtMA.T @ la.solve(S, BtMA, assume_a="sym") + Q - M
    return float(np.linalg.norm(resid))


def _solve_iteration(A, B, Q, R_cost, tol: float, max_iters: int) -> np.ndarray:
    M = Q.copy()
    for it in range(max_iters):
        BtMA = B.T @ M @ A
        S = R_cost + B.T @ M @ B
        M_next = symmetrize(A.T @ M @ A - BtMA.T @ la.solve(S, BtMA, assume_a="sym") + Q)
        if not np.all(np.isfinite(M_next)) or np.linalg.norm(M_next) > _DIVERGENCE_NORM:
            raise RiccatiConvergenceError(f"Riccati recursion diverged after {it + 1} iterations.")
        if np.linalg.norm(M_next - M) <= tol * max(1.0, np.linalg.norm(M_next)):
            return M_next
        M = M_next
    raise RiccatiConvergenceError(f"Riccati recursion did not converge in {max_iters} iterations.")


def _solve_doubling(A, B, Q, R_cost, tol: float, max_iters: int) -> np.ndarray:
    n = A.shape[0]
    eye = np.eye(n)
    Ak = A.copy()
    Gk = B @ la.solve(R_cost, B.T, assume_a="sym")
    Hk = Q.copy()
    for it in range(max_iters):
        W = eye + Gk @ Hk
        W_inv_A = np.linalg.solve(W, Ak)
        W_inv_G = np.linalg.solve(W, Gk)
        A_next = Ak @ W_inv_A
        G_next = symmetrize(Gk + Ak @ W_inv_G @ Ak.T)
        H_next = symmetrize(Hk + Ak.T @ Hk @ W_inv_A)
        if not np.all(np.isfinite(H_next)) or np.linalg.norm(H_next) > _DIVERGENCE_NORM:
            raise RiccatiConvergenceError(f"Doubling iteration diverged after {it + 1} steps.")
        if np.linalg.norm(H_next - Hk) <= tol * max(1.0, np.linalg.norm(H_next)):
            return H_next
        Ak, Gk, Hk = A_next, G_next, H_next
    raise RiccatiConvergenceError(f"Doubling iteration did not converge in {max_iters} steps.")


def solve_dare(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R_cost: np.ndarray,
    method: str = "doubling",
    tol: float = 1e-12,
    max_iters: int = 100_000,
) -> np.ndarray:
    A, B = np.atleast_2d(np.asarray(A, dtype=np.float64)), np.atleast_2d(np.asarray(B, dtype=np.float64))
    Q, R_cost = np.atleast_2d(np.asarray(Q, dtype=np.float64)), np.atleast_2d(np.asarray(R_cost, dtype=np.float64))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R_cost.shape != (m, m):
        raise InvalidStateError(f"Inconsistent shapes A{A.shape}, B{B.shape}, Q{Q.shape}, R{R_cost.shape}.")

    if method == "iteration":
        M = _solve_iteration(A, B, Q, R_cost, tol, max_iters)
    elif method == "doubling":
        M = _solve_doubling(A, B, Q, R_cost, tol, max_iters)
    else:
        raise InvalidStateError(f"Unknown DARE method: {method!r}.")

    residual = dare_residual(A, B, Q, R_cost, M)
    if residual > RESIDUAL_TOL * max(1.0, np.linalg.norm(M)):
        raise RiccatiConvergenceError(
            f"DARE residual {residual:.3e} too large; (A, B) stabilizability or (A, Q^1/2) observability may fail."
        )
    M = symmetrize(M)
    _check_stabilizing(A, B, R_cost, M)
    return M


def _check_stabilizing(A: np.ndarray, B: np.ndarray, R_cost: np.ndarray, M: np.ndarray) -> None:
    """Accept only the positive-definite root whose gain stabilizes A - B K."""
    if not np.all(np.isfinite(M)):
        raise RiccatiConvergenceError("DARE solution has non-finite entries.")
    eig_min = float(np.linalg.eigvalsh(M).min())
    if eig_min <= 0.0:
        raise RiccatiConvergenceError(f"DARE solution is not positive definite (min eigenvalue {eig_min:.3e}).")
    K = feedback_gain(A, B, M, R_cost)
    radius = float(np.abs(np.linalg.eigvals(A - B @ K)).max())
    if radius >= 1.0:
        raise RiccatiConvergenceError(f"DARE solution does not stabilize A - B K (spectral radius {radius:.3e}).")


def feedback_gain(A: np.ndarray, B: np.ndarray, M: np.ndarray, R_cost: np.ndarray) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    M, R_cost = np.atleast_2d(M), np.atleast_2d(R_cost)
    return la.solve(R_cost + B.T @ M @ B, B.T @ M @ A, assume_a="sym")


def control_law(
    x: np.ndarray,
    x_d: np.ndarray,
    u_d: np.ndarray,
    riccati: RiccatiSolution,
    action_bounds: Optional[Box] = None,
    angle_indices: Sequence[int] = (),
) -> np.ndarray:
    error = state_difference(np.asarray(x, dtype=np.float64), np.asarray(x_d, dtype=np.float64), angle_indices)
    u = np.asarray(u_d, dtype=np.float64) - np.atleast_2d(riccati.K_gain) @ error
    return action_bounds.clip(u) if action_bounds is not None else u


#Contraction analysis
def contraction_rate(Q: np.ndarray, m_upper: float) -> float:
    lam_min = float(np.linalg.eigvalsh(np.atleast_2d(Q)).min())
    if m_upper <= 0.0:
        raise InvalidStateError(f"m_upper must be > 0, got {m_upper}.")
    if lam_min > m_upper * (1.0 + 1e-12):
        raise InvalidStateError(
            f"lambda_min(Q) = {lam_min} exceeds m_upper = {m_upper}; the metric bounds are inconsistent."
        )
    return math.sqrt(max(0.0, 1.0 - lam_min / m_upper))


def contraction_slack(A_cl: np.ndarray, M: np.ndarray, alpha: float) -> float:
    A_cl, M = np.atleast_2d(A_cl), np.atleast_2d(M)
    return float(np.linalg.eigvalsh(symmetrize(A_cl.T @ M @ A_cl - alpha**2 * M)).max())


def verify_contraction(A_cl: np.ndarray, M: np.ndarray, alpha: float) -> bool:
    return contraction_slack(A_cl, M, alpha) <= CONTRACTION_SLACK


def _check_rate(alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise InvalidStateError(f"alpha must lie in [0, 1), got {alpha}.")


def tracking_error_bound(
    k: int,
    e0: float,
    sigma_bar: float,
    alpha: float,
    m_lower: float,
    m_upper: float,
) -> float:
    _check_rate(alpha)
    ratio = math.sqrt(m_upper / m_lower)
    decay = alpha**k
    return decay * ratio * e0 + (sigma_bar / (1.0 - alpha)) * ratio * (1.0 - decay)


def steady_state_error_bound(
    K_depth: int,
    eta: float,
    eps_est: float,
    alpha: float,
    m_lower: float,
    m_upper: float,
) -> float:
    _check_rate(alpha)
    return math.sqrt(m_upper / m_lower) * ((K_depth + 1) * eta + eps_est) / (1.0 - alpha)


def disturbance_steady_state_bound(
    K_depth: int,
    disturbance: DisturbanceBoundParams,
    alpha: float,
    m_lower: float,
    m_upper: float,
) -> float:
    return steady_state_error_bound(K_depth, disturbance.eta, disturbance.eps_est, alpha, m_lower, m_upper)


#Controller
class MetricBoundsTracker:
    """Running min / max eigenvalue of the metrics seen so far."""

    def __init__(self) -> None:
        self.m_lower = math.inf
        self.m_upper = 0.0
        self.samples = 0

    def observe(self, M: np.ndarray) -> Tuple[float, float]:
        eig = np.linalg.eigvalsh(symmetrize(np.atleast_2d(M)))
        self.m_lower = min(self.m_lower, float(eig.min()))
        self.m_upper = max(self.m_upper, float(eig.max()))
        self.samples += 1
        return self.m_lower, self.m_upper

    @property
    def condition(self) -> float:
        return math.sqrt(self.m_upper / self.m_lower) if self.samples else math.nan


def riccati_solution(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R_cost: np.ndarray,
    method: str = "doubling",
    tol: float = 1e-12,
    max_iters: int = 100_000,
    tracker: Optional[MetricBoundsTracker] = None,
) -> RiccatiSolution:
    M = solve_dare(A, B, Q, R_cost, method=method, tol=tol, max_iters=max_iters)
    K = feedback_gain(A, B, M, R_cost)
    eig = np.linalg.eigvalsh(M)
    m_lower, m_upper = float(eig.min()), float(eig.max())
    if tracker is not None and tracker.samples:
        m_lower, m_upper = min(m_lower, tracker.m_lower), max(m_upper, tracker.m_upper)
    alpha = contraction_rate(Q, m_upper)
    solution = RiccatiSolution(M=M, K_gain=K, A_cl=A - B @ K, alpha=alpha, m_lower=m_lower, m_upper=m_upper)
    # the running bounds only see metrics that produced a valid solution
    if tracker is not None:
        tracker.observe(M)
    return solution


class RiccatiTracker:
    """The tracking controller C(x, x_d, u_d; F_hat)."""

    def __init__(
        self,
        params: ControllerParams,
        action_bounds: Box,
        angle_indices: Sequence[int] = (),
        reduced_states: Sequence[int] = (0, 1, 2),
    ) -> None:
        self.params = params
        self.action_bounds = action_bounds
        self.angle_indices = tuple(angle_indices)
        self.reduced_states = tuple(reduced_states)
        self.tracker = MetricBoundsTracker()
        self.last_solution: Optional[RiccatiSolution] = None
        self.modes: Dict[str, int] = {"full": 0, "reduced": 0, "feedforward": 0, "exact": 0}
        self._reduced_warned = False

    def _solve(self, A: np.ndarray, B: np.ndarray, Q: np.ndarray) -> RiccatiSolution:
        p = self.params
        return riccati_solution(
            A, B, Q, p.R_matrix, method=p.dare_method, tol=p.dare_tol, max_iters=p.dare_max_iters, tracker=self.tracker
        )

    def gain(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        n, m = A.shape[0], B.shape[1]
        Q = self.params.Q_matrix
        if self.params.feedback_states == "full":
            try:
                sol = self._solve(A, B, Q)
                self.last_solution = sol
                self.modes["full"] += 1
                return sol.K_gain
            except (RiccatiConvergenceError, InvalidStateError) as exc:
                if self._reduced_warned:
                    logger.debug("Full-state DARE failed (%s); using car-only feedback.", exc)
                else:
                    logger.warning(
                        "Full-state DARE failed (%s); using car-only feedback. Repeats are logged at debug level.", exc
                    )
                    self._reduced_warned = True
        idx = [i for i in self.reduced_states if i < n]
        try:
            sol = self._solve(A[np.ix_(idx, idx)], B[idx, :], Q[np.ix_(idx, idx)])
            self.last_solution = sol
            self.modes["reduced"] += 1
            K = np.zeros((m, n))
            K[:, idx] = sol.K_gain
            return K
        except (RiccatiConvergenceError, InvalidStateError) as exc:
            logger.warning("Riccati feedback unavailable (%s); applying feed-forward input.", exc)
            self.modes["feedforward"] += 1
            return np.zeros((m, n))

    def __call__(self, x: np.ndarray, x_d: np.ndarray, u_d: np.ndarray, dynamics: DynamicsModel) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        x_d = np.asarray(x_d, dtype=np.float64)
        u_d = np.asarray(u_d, dtype=np.float64)
        error = state_difference(x, x_d, self.angle_indices)
        if not np.any(error):
            self.modes["exact"] += 1
            return self.action_bounds.clip(u_d)
        point = x_d if self.params.linearize_at == "desired" else x
        try:
            A, B = jacobians_fd(dynamics, point, u_d, self.params.jacobian_step, self.angle_indices)
        except (InvalidStateError, ContactResolutionError) as exc:
            logger.warning("Linearization failed (%s); applying feed-forward input.", exc)
            self.modes["feedforward"] += 1
            return self.action_bounds.clip(u_d)
        K = self.gain(A, B)
        return self.action_bounds.clip(u_d - K @ error)
