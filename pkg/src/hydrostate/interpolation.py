"""Graph-based head interpolation: smoothing estimator and its
physics-weighted residual variant.

Two estimators live here.  The first spreads sensed heads over the whole
graph by minimizing the Laplacian smoothness energy subject to the sensor
equalities and per-pipe directionality inequalities (a small dense QP,
solved by a primal active-set method).  The second interpolates the
*residual* between a leak-free reference and leak measurements under a
physics-derived weighting of the graph, which only needs an
equality-constrained solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .hydraulics import FLOW_EXP, Conductivity
from .network import Network, adjacency_from_edge_values, smoothing_operator

GAMMA_MIN = 1e-9  # closed-set stand-in for the strict slack positivity
DEFAULT_GAMMA_WEIGHT = 10.0
DEFAULT_EPSILON_H = 1e-4  # m; floor on head differences in the analytic weights

WEIGHT_EXP = FLOW_EXP - 1.0  # -0.46, exponent on head differences in the weights


class QpError(RuntimeError):
    """Quadratic program could not be solved to tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class WeightPair:
    """Symmetric weighted adjacency and its degree diagonal.

    ``phi`` holds the row sums of ``omega``; the diffusion operator
    Phi^-1 Omega is row-stochastic by construction.
    """

    omega: sparse.csr_array
    phi: np.ndarray

    def __post_init__(self):
        if np.any(self.phi <= 0):
            raise ValueError("degree diagonal must be positive")

    def diffuse(self, points: np.ndarray) -> np.ndarray:
        """Phi^-1 Omega applied to one state (n,) or a batch (m, n)."""
        return (points @ self.omega.T) / self.phi


def weight_pair(net: Network, edge_values) -> WeightPair:
    omega = adjacency_from_edge_values(net, edge_values)
    phi = np.asarray(omega.sum(axis=1)).ravel()
    return WeightPair(omega=omega, phi=phi)


def gsi_weights(net: Network) -> WeightPair:
    """Inverse-length weights, the plain smoothing-graph choice."""
    return weight_pair(net, 1.0 / net.lengths())


def aw_edge_values(cond: Conductivity, dh_abs, epsilon_h=DEFAULT_EPSILON_H) -> np.ndarray:
    """Per-pipe analytic weight sigma^0.54 * max(|dh|, eps)^-0.46."""
    dh = np.maximum(np.abs(np.asarray(dh_abs, dtype=float)), epsilon_h)
    return cond.sigma**FLOW_EXP * dh**WEIGHT_EXP


def aw_weights(net: Network, cond: Conductivity, h_ref, epsilon_h=DEFAULT_EPSILON_H) -> WeightPair:
    """Analytic weights from the linearized pipe law at the reference heads.

    The weight grows as the reference head difference across a pipe shrinks
    (a flat pipe couples its endpoints tightly); the ``epsilon_h`` floor caps
    the singularity at equal heads so the graph pattern is preserved.
    """
    h_ref = np.asarray(h_ref, dtype=float)
    src = np.array([p.source for p in net.pipes])
    snk = np.array([p.sink for p in net.pipes])
    return weight_pair(net, aw_edge_values(cond, h_ref[src] - h_ref[snk], epsilon_h))


# ---------------------------------------------------------------------------
# Smoothing estimator (inequality-constrained QP)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GsiProblem:
    """Smoothness QP data: operator, sensors, measured heads, directionality."""

    Ld: sparse.csr_array
    S: sparse.csr_array
    h_s: np.ndarray
    B_hat: sparse.csr_array
    gamma_weight: float = DEFAULT_GAMMA_WEIGHT


@dataclass(frozen=True)
class GsiSolution:
    h: np.ndarray
    gamma: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray  # one per B_hat row, then the slack bound
    iterations: int


def gsi_estimate(problem: GsiProblem) -> GsiSolution:
    """Minimize 0.5*(h' Ld h + w*gamma^2) s.t. S h = h_s, B_hat h <= gamma, gamma >= GAMMA_MIN.

    Returns a verified KKT point; raises QpError if the active-set iteration
    limit is hit or the sensor equalities are inconsistent.
    """
    Ld = problem.Ld.toarray() if sparse.issparse(problem.Ld) else np.asarray(problem.Ld)
    S = problem.S.toarray() if sparse.issparse(problem.S) else np.asarray(problem.S)
    B = problem.B_hat.toarray() if sparse.issparse(problem.B_hat) else np.asarray(problem.B_hat)
    h_s = np.asarray(problem.h_s, dtype=float)
    if problem.gamma_weight <= 0:
        raise QpError("gamma_weight must be positive")

    n = Ld.shape[0]
    m = B.shape[0]

    # Variables x = [h; gamma].
    H = np.zeros((n + 1, n + 1))
    H[:n, :n] = 0.5 * (Ld + Ld.T)
    H[n, n] = problem.gamma_weight
    A_eq = np.hstack([S, np.zeros((S.shape[0], 1))])
    G = np.zeros((m + 1, n + 1))
    G[:m, :n] = B
    G[:m, n] = -1.0
    G[m, n] = -1.0
    g = np.zeros(m + 1)
    g[m] = -GAMMA_MIN

    x, eq_mult, ineq_mult, iters = _active_set_qp(H, A_eq, h_s, G, g)
    return GsiSolution(h=x[:n], gamma=float(x[n]),
                       eq_multipliers=eq_mult, ineq_multipliers=ineq_mult,
                       iterations=iters)


def _eqp_kkt(H, A, b):
    """Solve min 0.5 x'Hx s.t. Ax=b by the dense KKT system; returns (x, multipliers)."""
    n = H.shape[0]
    k = A.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    rhs = np.concatenate([np.zeros(n), b])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n], sol[n:]


def _active_set_qp(H, A_eq, b_eq, G, g, tol=1e-10):
    """Primal active-set method for min 0.5 x'Hx s.t. A_eq x=b_eq, Gx<=g.

    H only needs to be positive definite on the null space of A_eq.  Starts
    from the equality-only minimizer with the slack variable lifted to
    feasibility, which assumes the last column of G is the slack's (true for
    the smoothing QP; this helper is not exposed).
    """
    n = H.shape[0]
    m = G.shape[0]

    try:
        x_eq, _ = _eqp_kkt(H, A_eq, b_eq)
    except np.linalg.LinAlgError:
        raise QpError("singular equality KKT system (inconsistent or duplicate sensors)") from None
    x = x_eq.copy()
    # every G row carries -1 in the slack column, so lifting the slack
    # variable by the worst violation restores feasibility
    viol = np.max(G @ x - g)
    if viol > 0:
        x[n - 1] += viol + 1.0
    if np.max(G @ x - g) > tol:
        raise QpError("could not construct a feasible starting point")

    work: list[int] = []
    max_iter = 10 * (m + n) + 50
    for it in range(max_iter):
        A_w = np.vstack([A_eq] + [G[i : i + 1] for i in work]) if work else A_eq
        b_w = np.concatenate([b_eq, g[work]]) if work else b_eq
        try:
            x_star, mult = _eqp_kkt(H, A_w, b_w)
        except np.linalg.LinAlgError:
            raise QpError("singular KKT system in active-set iteration",
                          residuals={"working_set": list(work)}) from None

        p = x_star - x
        if np.linalg.norm(p, np.inf) <= tol * max(1.0, np.linalg.norm(x, np.inf)):
            lam = mult[A_eq.shape[0] :]
            if lam.size == 0 or np.min(lam) >= -tol:
                ineq_mult = np.zeros(m)
                ineq_mult[work] = np.maximum(lam, 0.0) if lam.size else 0.0
                return x_star, mult[: A_eq.shape[0]], ineq_mult, it + 1
            work.pop(int(np.argmin(lam)))
            continue

        # largest step along p keeping the non-working inequalities feasible
        alpha = 1.0
        blocking = -1
        Gp = G @ p
        slack = g - G @ x
        for i in range(m):
            if i in work or Gp[i] <= tol:
                continue
            a_i = slack[i] / Gp[i]
            if a_i < alpha:
                alpha = max(a_i, 0.0)
                blocking = i
        x = x + alpha * p
        if blocking >= 0:
            work.append(blocking)

    raise QpError(f"active-set iteration limit ({max_iter}) exceeded",
                  residuals={"infeasibility": float(np.max(G @ x - g))})


def gsi_kkt_residuals(problem: GsiProblem, sol: GsiSolution) -> dict[str, float]:
    """Stationarity, feasibility, and complementarity residuals of a solution."""
    Ld = problem.Ld.toarray() if sparse.issparse(problem.Ld) else np.asarray(problem.Ld)
    S = problem.S.toarray() if sparse.issparse(problem.S) else np.asarray(problem.S)
    B = problem.B_hat.toarray() if sparse.issparse(problem.B_hat) else np.asarray(problem.B_hat)
    n = Ld.shape[0]
    m = B.shape[0]
    x = np.concatenate([sol.h, [sol.gamma]])
    G = np.zeros((m + 1, n + 1))
    G[:m, :n] = B
    G[:m, n] = -1.0
    G[m, n] = -1.0
    g = np.zeros(m + 1)
    g[m] = -GAMMA_MIN
    grad = np.concatenate([Ld @ sol.h, [problem.gamma_weight * sol.gamma]])
    stat = grad + np.hstack([S, np.zeros((S.shape[0], 1))]).T @ sol.eq_multipliers
    stat = stat + G.T @ sol.ineq_multipliers
    ineq_gap = G @ x - g
    return {
        "stationarity": float(np.linalg.norm(stat, np.inf)),
        "eq_feasibility": float(np.linalg.norm(S @ sol.h - problem.h_s, np.inf)),
        "ineq_feasibility": float(max(np.max(ineq_gap), 0.0)),
        "complementarity": float(np.linalg.norm(sol.ineq_multipliers * ineq_gap, np.inf)),
    }


# ---------------------------------------------------------------------------
# Residual estimator (equality-constrained QP)
# ---------------------------------------------------------------------------


def awgsi_estimate(Ld_aw, S, dh_s) -> np.ndarray:
    """Minimize 0.5 * dh' Ld_aw dh subject to S dh = dh_s.

    Solved through the ridge-stabilized KKT system; the ridge is scaled off
    the operator trace so the argmin is unchanged at working precision.
    """
    L = Ld_aw.toarray() if sparse.issparse(Ld_aw) else np.asarray(Ld_aw, dtype=float)
    Sd = S.toarray() if sparse.issparse(S) else np.asarray(S, dtype=float)
    dh_s = np.asarray(dh_s, dtype=float)
    n = L.shape[0]
    k = Sd.shape[0]
    ridge = 1e-10 * np.trace(L) / n
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = L + ridge * np.eye(n)
    kkt[:n, n:] = Sd.T
    kkt[n:, :n] = Sd
    rhs = np.concatenate([np.zeros(n), dh_s])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        raise QpError("singular KKT system in residual interpolation") from None
    return sol[:n]


@dataclass(frozen=True)
class AwgsiResult:
    h0: np.ndarray  # interpolated heads for the measured (leak) state
    residual: np.ndarray  # interpolated head-drop field
    weights: WeightPair  # the analytic weights used, for filter initialization
    Ld_aw: sparse.csr_array


def awgsi_heads(net: Network, cond: Conductivity, h_nom_estimate, S, h_s_leak,
                epsilon_h=DEFAULT_EPSILON_H) -> AwgsiResult:
    """Leak-state heads as reference minus interpolated residual.

    ``h_nom_estimate`` is the leak-free reference state (estimated or
    solved); the residual measured at the sensors, S h_nom - h_s_leak, is
    spread over the graph under the analytic weighting built at the
    reference.
    """
    h_nom_estimate = np.asarray(h_nom_estimate, dtype=float)
    weights = aw_weights(net, cond, h_nom_estimate, epsilon_h)
    Ld_aw = smoothing_operator(weights.omega)
    dh_s = S @ h_nom_estimate - np.asarray(h_s_leak, dtype=float)
    residual = awgsi_estimate(Ld_aw, S, dh_s)
    return AwgsiResult(h0=h_nom_estimate - residual, residual=residual,
                       weights=weights, Ld_aw=Ld_aw)
