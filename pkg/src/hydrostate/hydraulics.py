"""Hazen-Williams steady-state hydraulics.

The pipe law used throughout is q = (sigma * dh)**0.54 where dh is the head
drop along the pipe and sigma the pipe conductivity; its inverse
dh = tau * q**(1/0.54) is the friction head loss.  The 0.54 exponent is
definitional here, so flows, demands, the steady-state solver, and the
measurement map are all mutually consistent.

Sign conventions
----------------
* ``structural_incidence`` (source -> sink as listed) is the fixed
  orientation for the solver; flows in it are signed.
* ``build_incidence(net, h)`` orients each row downhill for the given heads,
  so head differences are nonnegative and flows in it are too.
* Nodal demand is c = -M^T q: positive where water is consumed, negative at
  the supplying reservoirs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .network import Network, SensorConfig, structural_incidence

FLOW_EXP = 0.54  # q = (sigma*dh)**FLOW_EXP
HW_EXP = 1.852  # head-loss exponent in the conductivity formula

DEFAULT_MASS_TOL = 1e-9  # m3/s
# Pipe law linearized through the origin below this head difference.  Kept
# far below any physically meaningful drop so converged states stay on the
# pure power law (the measurement map never linearizes).
DEFAULT_DH_EPS = 1e-9  # m


class SolverError(RuntimeError):
    """Steady-state solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Conductivity:
    sigma: np.ndarray  # per-pipe conductivity, SI
    tau: np.ndarray  # elementwise reciprocal


def conductivity(net: Network) -> Conductivity:
    """Per-pipe conductivity sigma = mu^1.852 * delta^4.87 / (10.67 * rho)."""
    mu = net.roughnesses()
    delta = net.diameters()
    rho = net.lengths()
    sigma = mu**HW_EXP * delta**4.87 / (10.67 * rho)
    return Conductivity(sigma=sigma, tau=1.0 / sigma)


def flows_from_heads(sigma, h, M) -> np.ndarray:
    """Pipe flows (sigma * max(M h, 0))**0.54 in the orientation of M.

    Meant for an M oriented by the heads themselves, where M h >= 0 up to
    rounding; small negatives are clamped to zero.
    """
    dh = np.maximum(M @ np.asarray(h, dtype=float), 0.0)
    return (np.asarray(sigma) * dh) ** FLOW_EXP


def signed_flows(sigma, dh) -> np.ndarray:
    """Odd extension of the pipe law: sign(dh) * (sigma*|dh|)**0.54."""
    dh = np.asarray(dh, dtype=float)
    return np.sign(dh) * (np.asarray(sigma) * np.abs(dh)) ** FLOW_EXP


def demands_from_flows(M, q) -> np.ndarray:
    """Nodal demands c = -M^T q (all nodes; reservoir entries are negative inflows)."""
    return -(M.T @ np.asarray(q, dtype=float))


def _pipe_law(sigma, dh, dh_eps):
    """Signed pipe law with linearization through the origin below dh_eps.

    Returns (q, dq_ddh).  The linear segment matches the power law at
    |dh| = dh_eps, keeping q continuous; the derivative jumps by 1/0.54
    there, which damped Newton tolerates.
    """
    s54 = sigma**FLOW_EXP
    a = np.abs(dh)
    lin = a < dh_eps
    slope0 = s54 * dh_eps ** (FLOW_EXP - 1.0)
    q = np.where(lin, slope0 * dh, np.sign(dh) * s54 * np.where(lin, 1.0, a) ** FLOW_EXP)
    grad = np.where(lin, slope0, FLOW_EXP * s54 * np.where(lin, 1.0, a) ** (FLOW_EXP - 1.0))
    return q, grad


def solve_steady_state(
    net: Network,
    cond: Conductivity,
    junction_demands,
    *,
    mass_tol: float = DEFAULT_MASS_TOL,
    max_iter: int = 200,
    dh_eps: float = DEFAULT_DH_EPS,
    initial_heads=None,
) -> np.ndarray:
    """Solve nodal heads so junction mass balance matches the given demands.

    ``junction_demands`` is ordered like ``net.junction_indices`` (m3/s,
    positive consumption).  Reservoir heads are fixed.  Damped Newton on the
    junction heads; raises SolverError carrying the last residual on
    non-convergence.
    """
    jun = net.junction_indices
    res = net.reservoir_indices
    if res.size == 0:
        raise SolverError("network has no reservoir to anchor heads")
    demands = np.asarray(junction_demands, dtype=float)
    if demands.shape != (jun.size,):
        raise SolverError(f"expected {jun.size} junction demands, got shape {demands.shape}")

    M0 = structural_incidence(net)
    M0j = sparse.csr_array(M0[:, jun])
    sigma = cond.sigma

    h = np.empty(net.n_nodes)
    h[res] = net.reservoir_heads
    h[jun] = float(np.mean(net.reservoir_heads)) if initial_heads is None else np.asarray(initial_heads, float)[jun]

    def residual(hvec):
        q, grad = _pipe_law(sigma, M0 @ hvec, dh_eps)
        return -(M0j.T @ q) - demands, grad

    f, grad = residual(h)
    norm = np.linalg.norm(f, np.inf)
    for _ in range(max_iter):
        if norm < mass_tol:
            return h
        # Jacobian of junction balance wrt junction heads: -(M0j^T G M0j)
        J = -(M0j.T @ sparse.diags_array(grad) @ M0j).toarray()
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            raise SolverError("singular Jacobian in steady-state solve", residual=norm) from None

        t = 1.0
        for _ in range(30):
            trial = h.copy()
            trial[jun] = h[jun] + t * step
            f_new, grad_new = residual(trial)
            norm_new = np.linalg.norm(f_new, np.inf)
            if norm_new < norm:
                h, f, grad, norm = trial, f_new, grad_new, norm_new
                break
            t *= 0.5
        else:
            raise SolverError("line search stalled in steady-state solve", residual=norm)

    raise SolverError(f"no convergence after {max_iter} iterations (residual {norm:.3e} m3/s)",
                      residual=norm)


def measurement_g(h, S, M_a, M, tau) -> np.ndarray:
    """Stacked measurement prediction [S h; -M_a^T (T^-1 max(M h, 0))^0.54].

    The demand part equals the nodal demands at the AMR nodes when M is
    oriented by h itself (positive consumption).
    """
    h = np.asarray(h, dtype=float)
    y_h = S @ h
    dh = np.maximum(M @ h, 0.0)
    q = (dh / np.asarray(tau)) ** FLOW_EXP
    y_d = -(M_a.T @ q)
    return np.concatenate([y_h, y_d])


@dataclass(frozen=True)
class MeasurementContext:
    """Precomputed operators for evaluating the measurement map on many states.

    Uses the fixed structural incidence with signed flows, which is
    algebraically identical to rebuilding the downhill-oriented incidence
    for every state.
    """

    pressure_nodes: np.ndarray
    amr_nodes: np.ndarray
    M0_dense: np.ndarray  # |E| x n
    Ma0_dense: np.ndarray  # |E| x n_ca, AMR columns of M0
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.pressure_nodes.size + self.amr_nodes.size

    @staticmethod
    def build(net: Network, sensors: SensorConfig, cond: Conductivity) -> "MeasurementContext":
        sensors.validate_against(net)
        M0 = structural_incidence(net).toarray()
        amr = np.array(sensors.amr_nodes, dtype=int)
        return MeasurementContext(
            pressure_nodes=np.array(sensors.pressure_nodes, dtype=int),
            amr_nodes=amr,
            M0_dense=M0,
            Ma0_dense=M0[:, amr] if amr.size else np.zeros((net.n_pipes, 0)),
            sigma=cond.sigma,
        )

    def predict(self, points: np.ndarray) -> np.ndarray:
        """Measurement map applied to a batch of head vectors, shape (m, n)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        y_h = points[:, self.pressure_nodes]
        dh = points @ self.M0_dense.T
        q = np.sign(dh) * (self.sigma * np.abs(dh)) ** FLOW_EXP
        y_d = -(q @ self.Ma0_dense)
        return np.concatenate([y_h, y_d], axis=1)

    def predict_one(self, h) -> np.ndarray:
        return self.predict(np.asarray(h)[None, :])[0]
