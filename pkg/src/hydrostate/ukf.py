"""Unscented Kalman filter over nodal heads.

Each iteration assimilates one time instant's measurements (correction) and
then applies the graph-diffusion prediction, in that order.  The prediction
blends the current state with its diffusion over a weighted adjacency; the
blend factor defaults to the fraction of nodes carrying demand meters, so
information-rich configurations keep the state and sparse ones spread it.

Two run modes: a fixed weighting ("static" runs), and a dynamic mode that
re-derives the analytic weights from the current estimate every
``update_interval`` iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hydraulics import Conductivity, MeasurementContext
from .interpolation import DEFAULT_EPSILON_H, WeightPair, aw_weights
from .network import Network


class FilterError(RuntimeError):
    """Filter iteration failed (singular innovation or non-finite state)."""


@dataclass(frozen=True)
class SigmaParams:
    """Scaled unscented-transform spread parameters.

    alpha = 1 keeps every covariance weight nonnegative, which makes the
    corrected covariance a Schur complement of a Gram matrix and therefore
    positive semidefinite by construction.  Smaller spreads put a huge
    negative weight on the centre point and can produce indefinite
    innovation covariances under the strongly curved demand measurement
    map, so they are not the default here.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0


@dataclass(frozen=True)
class UkfConfig:
    iterations: int = 50
    update_interval: int = 5
    process_noise: float | np.ndarray = 3e-3  # diagonal of Q
    measurement_noise: float | np.ndarray = 1e-4  # diagonal of R
    initial_covariance: float | np.ndarray = 0.1  # diagonal of P0
    sigma_params: SigmaParams = field(default_factory=SigmaParams)
    blend: float | None = None  # prediction blend; None = n_amr / n

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.update_interval < 1:
            raise ValueError("update_interval must be at least 1")
        if self.blend is not None and not (0.0 <= self.blend <= 1.0):
            raise ValueError("blend must lie in [0, 1]")
        for name in ("process_noise", "measurement_noise", "initial_covariance"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v <= 0):
                raise ValueError(f"{name} diagonal must be positive")


@dataclass(frozen=True)
class UkfState:
    h: np.ndarray  # mean
    P: np.ndarray  # covariance
    k: int
    weights: WeightPair
    innovation_norm: float = math.nan  # from the correction that produced this state
    h_corrected: np.ndarray | None = None  # post-correction mean of the last step


def _as_diag(value, size) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return np.full(size, float(v))
    if v.shape != (size,):
        raise ValueError(f"expected scalar or length-{size} diagonal, got shape {v.shape}")
    return v.copy()


def _chol_with_jitter(P):
    sym = 0.5 * (P + P.T)
    for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(sym + jitter * np.eye(sym.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise FilterError("covariance is not positive semidefinite (jitter repair failed)")


def sigma_points(mean, cov, params: SigmaParams):
    """Scaled unscented points and their mean/covariance weights.

    Returns (points, wm, wc) with points of shape (2n+1, n); points[0] is
    the mean and the rest are mean +/- sqrt((n+lambda) P) columns.
    """
    mean = np.asarray(mean, dtype=float)
    n = mean.size
    lam = params.alpha**2 * (n + params.kappa) - n
    c = n + lam
    if c <= 0:
        raise FilterError("sigma-point scaling is nonpositive; increase alpha or kappa")
    L = _chol_with_jitter(np.asarray(cov, dtype=float)) * math.sqrt(c)
    points = np.empty((2 * n + 1, n))
    points[0] = mean
    points[1 : n + 1] = mean + L.T
    points[n + 1 :] = mean - L.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * c))
    wc = wm.copy()
    wm[0] = lam / c
    wc[0] = lam / c + (1.0 - params.alpha**2 + params.beta)
    return points, wm, wc


def predict_f(h, weights: WeightPair, blend: float):
    """Prediction map: blend*h + (1-blend) * Phi^-1 Omega h.

    Accepts a single state (n,) or a batch (m, n).  Row-stochastic diffusion
    preserves constant vectors exactly.
    """
    h = np.asarray(h, dtype=float)
    return blend * h + (1.0 - blend) * weights.diffuse(h)


def update_weights(net: Network, h, omega_prev: WeightPair, k: int, update_interval: int,
                   cond: Conductivity, epsilon_h=DEFAULT_EPSILON_H) -> WeightPair:
    """Refresh the analytic weights from the current heads every
    ``update_interval`` iterations; otherwise carry the previous pair over."""
    if k % update_interval != 0:
        return omega_prev
    return aw_weights(net, cond, h, epsilon_h)


def _resolve_blend(cfg: UkfConfig, ctx: MeasurementContext, n: int) -> float:
    if cfg.blend is not None:
        return cfg.blend
    return ctx.amr_nodes.size / n


def ukf_step(state: UkfState, y, cfg: UkfConfig, ctx: MeasurementContext,
             blend: float | None = None) -> UkfState:
    """One correction-then-prediction iteration.

    The returned state carries the post-correction mean and the innovation
    norm as diagnostics; its weights are unchanged (dynamic refreshes are
    composed by the run loops).
    """
    y = np.asarray(y, dtype=float)
    n = state.h.size
    if blend is None:
        blend = _resolve_blend(cfg, ctx, n)
    r_diag = _as_diag(cfg.measurement_noise, y.size)
    q_diag = _as_diag(cfg.process_noise, n)

    # correction
    points, wm, wc = sigma_points(state.h, state.P, cfg.sigma_params)
    Y = ctx.predict(points)
    y_hat = wm @ Y
    dY = Y - y_hat
    dX = points - state.h
    Pyy = (dY * wc[:, None]).T @ dY + np.diag(r_diag)
    Pxy = (dX * wc[:, None]).T @ dY
    try:
        gain = np.linalg.solve(Pyy, Pxy.T).T
    except np.linalg.LinAlgError:
        raise FilterError("singular innovation covariance") from None
    innovation = y - y_hat
    h_corr = state.h + gain @ innovation
    P_corr = state.P - gain @ Pyy @ gain.T
    P_corr = 0.5 * (P_corr + P_corr.T)

    # prediction
    points2, wm2, wc2 = sigma_points(h_corr, P_corr, cfg.sigma_params)
    X = predict_f(points2, state.weights, blend)
    h_next = wm2 @ X
    dXp = X - h_next
    P_next = (dXp * wc2[:, None]).T @ dXp + np.diag(q_diag)
    P_next = 0.5 * (P_next + P_next.T)

    if not (np.all(np.isfinite(h_next)) and np.all(np.isfinite(P_next))):
        raise FilterError(f"non-finite state at iteration {state.k}")

    return UkfState(h=h_next, P=P_next, k=state.k + 1, weights=state.weights,
                    innovation_norm=float(np.linalg.norm(innovation)),
                    h_corrected=h_corr)


@dataclass(frozen=True)
class IterationRecord:
    k: int
    rmse: float  # vs truth if supplied, else nan
    innovation_norm: float
    trace_p: float
    weights_updated: bool

    def as_row(self) -> dict:
        return {"k": self.k, "rmse": self.rmse, "innovation_norm": self.innovation_norm,
                "trace_p": self.trace_p, "weights_updated": int(self.weights_updated)}


@dataclass(frozen=True)
class UkfRun:
    heads: np.ndarray
    records: tuple[IterationRecord, ...]

    @property
    def rmse_trace(self) -> np.ndarray:
        return np.array([r.rmse for r in self.records])


def _rmse_or_nan(truth, h):
    if truth is None:
        return math.nan
    d = np.asarray(truth) - h
    return float(np.sqrt(np.mean(d * d)))


def _run(net, cond, h0, y, cfg, w0, ctx, truth, dynamic, epsilon_h):
    h0 = np.asarray(h0, dtype=float)
    n = h0.size
    state = UkfState(h=h0, P=np.diag(_as_diag(cfg.initial_covariance, n)), k=0, weights=w0)
    blend = _resolve_blend(cfg, ctx, n)
    records = [IterationRecord(0, _rmse_or_nan(truth, h0), math.nan,
                               float(np.trace(state.P)), False)]
    for k in range(cfg.iterations):
        state = ukf_step(state, y, cfg, ctx, blend=blend)
        updated = False
        if dynamic:
            new_w = update_weights(net, state.h_corrected, state.weights, k + 1,
                                   cfg.update_interval, cond, epsilon_h)
            updated = new_w is not state.weights
            state = replace(state, weights=new_w)
        records.append(IterationRecord(k + 1, _rmse_or_nan(truth, state.h),
                                       state.innovation_norm, float(np.trace(state.P)),
                                       updated))
    return UkfRun(heads=state.h, records=tuple(records))


def run_ukf_gsi(h0, y, cfg: UkfConfig, static_weights: WeightPair, ctx: MeasurementContext,
                truth=None) -> UkfRun:
    """Filter run with a fixed diffusion weighting."""
    return _run(None, None, h0, y, cfg, static_weights, ctx, truth,
                dynamic=False, epsilon_h=DEFAULT_EPSILON_H)


def run_ukf_awgsi(net: Network, cond: Conductivity, h0, y, cfg: UkfConfig, w0: WeightPair,
                  ctx: MeasurementContext, truth=None,
                  epsilon_h=DEFAULT_EPSILON_H) -> UkfRun:
    """Filter run with dynamically refreshed analytic weights.

    ``w0`` is the weight pair that produced ``h0`` (the residual
    interpolator exposes it); refreshes fire at iterations that are
    multiples of ``cfg.update_interval``, recomputed from the
    post-correction mean.
    """
    return _run(net, cond, h0, y, cfg, w0, ctx, truth, dynamic=True, epsilon_h=epsilon_h)
