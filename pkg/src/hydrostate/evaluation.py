"""Experiment harness: method comparison, summary statistics,
initial-guess sensitivity, and localization artifacts.

``compare_methods`` runs the three estimators over every instant of a
generated bundle and produces per-iteration RMSE traces, per-instant RMSE
vectors, summary statistics, and percentage reductions against the
non-iterating baseline.  ``initial_guess_study`` reruns the dynamic filter
from degenerate starting points on one instant.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import localization
from .hydraulics import MeasurementContext, conductivity, solve_steady_state
from .interpolation import (
    DEFAULT_EPSILON_H,
    DEFAULT_GAMMA_WEIGHT,
    GsiProblem,
    awgsi_heads,
    gsi_estimate,
)
from .network import build_approx_incidence, build_gsi_adjacency, build_selection, structural_incidence
from .scenario import ScenarioBundle, rmse, summarize
from .ukf import SigmaParams, UkfConfig, run_ukf_awgsi, run_ukf_gsi

BASELINE = "awgsi"
UKF_STATIC = "ukf-gsi"
UKF_DYNAMIC = "ukf-awgsi"
METHODS = (BASELINE, UKF_STATIC, UKF_DYNAMIC)

# relative tolerance for "the trace moved" when classifying up-ticks and
# visible drops in an RMSE trace
TREND_TOL = 1e-3


def build_ukf_config(doc: dict | None, n_pressure: int, n_amr: int) -> UkfConfig:
    """UKF configuration from a JSON-style dict.

    Accepts short aliases (K, K_u, Q, R, P0).  The measurement noise may be
    a scalar (applied to every component), a {"head": .., "demand": ..}
    pair, or a full diagonal list.
    """
    doc = dict(doc or {})

    def pick(*names, default=None):
        for name in names:
            if name in doc:
                return doc[name]
        return default

    r = pick("measurement_noise", "R", default={"head": 1e-4, "demand": 1e-8})
    if isinstance(r, dict):
        r_diag = np.concatenate([
            np.full(n_pressure, float(r.get("head", 1e-4))),
            np.full(n_amr, float(r.get("demand", 1e-8))),
        ])
    elif np.ndim(r) == 0:
        r_diag = np.full(n_pressure + n_amr, float(r))
    else:
        r_diag = np.asarray(r, dtype=float)

    sig = pick("sigma", default={})
    sigma_params = SigmaParams(
        alpha=float(sig.get("alpha", sig.get("a", 1.0))),
        beta=float(sig.get("beta", sig.get("b", 2.0))),
        kappa=float(sig.get("kappa", sig.get("k", 0.0))),
    )
    q = pick("process_noise", "Q", default=3e-3)
    p0 = pick("initial_covariance", "P0", default=0.1)
    return UkfConfig(
        iterations=int(pick("iterations", "K", default=50)),
        update_interval=int(pick("update_interval", "K_u", default=5)),
        process_noise=q if np.ndim(q) == 0 else np.asarray(q, dtype=float),
        measurement_noise=r_diag,
        initial_covariance=p0 if np.ndim(p0) == 0 else np.asarray(p0, dtype=float),
        sigma_params=sigma_params,
        blend=(None if pick("blend") is None else float(pick("blend"))),
    )


def ukf_config_to_json(cfg: UkfConfig) -> dict:
    def as_jsonable(v):
        return v if np.ndim(v) == 0 else list(np.asarray(v, dtype=float))

    return {
        "iterations": cfg.iterations,
        "update_interval": cfg.update_interval,
        "process_noise": as_jsonable(cfg.process_noise),
        "measurement_noise": as_jsonable(cfg.measurement_noise),
        "initial_covariance": as_jsonable(cfg.initial_covariance),
        "sigma": {"alpha": cfg.sigma_params.alpha, "beta": cfg.sigma_params.beta,
                  "kappa": cfg.sigma_params.kappa},
        "blend": cfg.blend,
    }


@dataclass(frozen=True)
class EstimationContext:
    """Everything the estimators need that depends only on network + sensors."""

    net: object
    sensors: object
    cond: object
    S: object
    Ld: object
    meas_ctx: MeasurementContext
    gamma_weight: float = DEFAULT_GAMMA_WEIGHT
    epsilon_h: float = DEFAULT_EPSILON_H
    _model_cache: dict = field(default_factory=dict)

    @staticmethod
    def build(net, sensors, gamma_weight=DEFAULT_GAMMA_WEIGHT,
              epsilon_h=DEFAULT_EPSILON_H) -> "EstimationContext":
        cond = conductivity(net)
        S, _ = build_selection(net, sensors, structural_incidence(net))
        return EstimationContext(net=net, sensors=sensors, cond=cond, S=S,
                                 Ld=build_gsi_adjacency(net).Ld,
                                 meas_ctx=MeasurementContext.build(net, sensors, cond),
                                 gamma_weight=gamma_weight, epsilon_h=epsilon_h)

    @property
    def n_pressure(self):
        return len(self.sensors.pressure_nodes)

    def model_reference(self, hour: int) -> np.ndarray:
        """Leak-free heads from the nominal model at the given hour."""
        if hour not in self._model_cache:
            jun = self.net.junction_indices
            self._model_cache[hour] = solve_steady_state(
                self.net, self.cond, self.net.demand_at_hour(hour)[jun])
        return self._model_cache[hour]

    def gsi_nominal(self, hour: int, h_s_nominal) -> np.ndarray:
        """Leak-free heads interpolated from nominal pressure measurements."""
        B = build_approx_incidence(self.net, self.model_reference(hour))
        problem = GsiProblem(self.Ld, self.S, np.asarray(h_s_nominal), B, self.gamma_weight)
        return gsi_estimate(problem).h

    def nominal_reference(self, hour: int, h_s_nominal, mode: str) -> np.ndarray:
        if mode == "gsi":
            return self.gsi_nominal(hour, h_s_nominal)
        if mode == "model":
            return self.model_reference(hour)
        raise ValueError(f"unknown nominal reference mode {mode!r}")


@dataclass(frozen=True)
class MethodResult:
    name: str
    rmse: np.ndarray  # per instant, vs leak truth
    traces: tuple[np.ndarray, ...]  # per instant, length K+1 (baseline: flat)
    leak_estimates: np.ndarray  # (T, n)
    nominal_estimates: np.ndarray  # (T, n)


@dataclass(frozen=True)
class Comparison:
    methods: dict[str, MethodResult]
    hours: tuple[int, ...]
    worst_instant: int
    reductions: dict[str, np.ndarray]  # per ukf method, % vs baseline per instant
    summary: dict[str, dict[str, float]]


def _compare_one_instant(ectx, cfg, hour, h_s_nom, y_nom, h_s_leak, y_leak, truth_leak,
                         nominal_mode):
    h_nom_est = ectx.nominal_reference(hour, h_s_nom, nominal_mode)
    net, cond, S = ectx.net, ectx.cond, ectx.S
    eps = ectx.epsilon_h

    aw_leak = awgsi_heads(net, cond, h_nom_est, S, h_s_leak, eps)
    aw_nom = awgsi_heads(net, cond, h_nom_est, S, h_s_nom, eps)

    # truth enters the filter runs only as a trace diagnostic
    runs = {BASELINE: (aw_leak.h0, None, aw_nom.h0)}
    st_leak = run_ukf_gsi(aw_leak.h0, y_leak, cfg, aw_leak.weights, ectx.meas_ctx,
                          truth=truth_leak)
    st_nom = run_ukf_gsi(aw_nom.h0, y_nom, cfg, aw_nom.weights, ectx.meas_ctx)
    runs[UKF_STATIC] = (st_leak.heads, st_leak, st_nom.heads)
    dy_leak = run_ukf_awgsi(net, cond, aw_leak.h0, y_leak, cfg, aw_leak.weights,
                            ectx.meas_ctx, truth=truth_leak, epsilon_h=eps)
    dy_nom = run_ukf_awgsi(net, cond, aw_nom.h0, y_nom, cfg, aw_nom.weights,
                           ectx.meas_ctx, epsilon_h=eps)
    runs[UKF_DYNAMIC] = (dy_leak.heads, dy_leak, dy_nom.heads)
    return runs


def compare_methods(bundle: ScenarioBundle, cfg_doc: dict | None = None,
                    nominal_mode: str = "gsi", jobs: int = 1) -> Comparison:
    """Run the baseline and both filter variants on every instant.

    The bundle must hold paired nominal and leak series.  Estimation only
    sees measurements and the nominal pipe parameters; the stored true
    heads are used for scoring.
    """
    if bundle.leak is None:
        raise ValueError("bundle has no leak series; generate with a leak to compare methods")
    ectx = EstimationContext.build(bundle.net, bundle.sensors)
    cfg = build_ukf_config(cfg_doc, ectx.n_pressure, len(bundle.sensors.amr_nodes))
    ns = ectx.n_pressure
    T = len(bundle.leak.hours)
    K = cfg.iterations

    def work(t):
        return _compare_one_instant(
            ectx, cfg, bundle.leak.hours[t],
            bundle.nominal.measurements[t, :ns], bundle.nominal.measurements[t],
            bundle.leak.measurements[t, :ns], bundle.leak.measurements[t],
            bundle.leak.true_heads[t], nominal_mode)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_instant = list(pool.map(work, range(T)))
    else:
        per_instant = [work(t) for t in range(T)]

    methods = {}
    for name in METHODS:
        rmses = np.empty(T)
        traces = []
        leak_est = np.empty((T, bundle.net.n_nodes))
        nom_est = np.empty((T, bundle.net.n_nodes))
        for t, runs in enumerate(per_instant):
            heads, run, nom_heads = runs[name]
            rmses[t] = rmse(bundle.leak.true_heads[t], heads)
            traces.append(np.full(K + 1, rmses[t]) if run is None else run.rmse_trace)
            leak_est[t] = heads
            nom_est[t] = nom_heads
        methods[name] = MethodResult(name=name, rmse=rmses, traces=tuple(traces),
                                     leak_estimates=leak_est, nominal_estimates=nom_est)

    base = methods[BASELINE].rmse
    reductions = {name: 100.0 * (1.0 - methods[name].rmse / base)
                  for name in (UKF_STATIC, UKF_DYNAMIC)}
    return Comparison(
        methods=methods,
        hours=tuple(bundle.leak.hours),
        worst_instant=int(np.argmax(base)),
        reductions=reductions,
        summary={name: summarize(m.rmse) for name, m in methods.items()},
    )


def trace_upticks(trace, tol: float = TREND_TOL) -> int:
    """Number of iterations where the RMSE trace rises by more than tol
    (relative)."""
    t = np.asarray(trace, dtype=float)
    return int(np.sum(t[1:] > t[:-1] * (1.0 + tol)))


def update_point_drops(trace, update_interval: int, tol: float = TREND_TOL):
    """(drops, total): update-point iterations where the trace visibly falls."""
    t = np.asarray(trace, dtype=float)
    points = [k for k in range(update_interval, len(t) - 1, update_interval)]
    drops = sum(1 for k in points if t[k + 1] < t[k] * (1.0 - tol))
    return drops, len(points)


INITIAL_GUESS_MODES = ("awgsi", "zero", "randomized")


def initial_guess_study(bundle: ScenarioBundle, cfg_doc: dict | None = None,
                        instant: int | None = None, seed: int = 0,
                        nominal_mode: str = "gsi") -> dict[str, dict]:
    """Rerun the dynamic filter from degenerate initial guesses.

    Modes: the interpolated guess itself, the zero vector, and a random
    vector matched to the interpolated guess's mean and spread.  Only the
    starting point differs; weights and measurements are shared.
    """
    if bundle.leak is None:
        raise ValueError("bundle has no leak series")
    ectx = EstimationContext.build(bundle.net, bundle.sensors)
    cfg = build_ukf_config(cfg_doc, ectx.n_pressure, len(bundle.sensors.amr_nodes))
    ns = ectx.n_pressure

    if instant is None:
        instant = compare_methods(bundle, cfg_doc, nominal_mode).worst_instant
    hour = bundle.leak.hours[instant]
    truth = bundle.leak.true_heads[instant]
    y = bundle.leak.measurements[instant]
    h_nom_est = ectx.nominal_reference(hour, bundle.nominal.measurements[instant, :ns],
                                       nominal_mode)
    aw = awgsi_heads(bundle.net, ectx.cond, h_nom_est, ectx.S, y[:ns], ectx.epsilon_h)

    rng = np.random.default_rng(seed)
    guesses = {
        "awgsi": aw.h0,
        "zero": np.zeros(bundle.net.n_nodes),
        "randomized": aw.h0.mean() + aw.h0.std() * rng.uniform(-1.0, 1.0, bundle.net.n_nodes),
    }
    out = {}
    for mode, h0 in guesses.items():
        run = run_ukf_awgsi(bundle.net, ectx.cond, h0, y, cfg, aw.weights, ectx.meas_ctx,
                            truth=truth, epsilon_h=ectx.epsilon_h)
        tr = run.rmse_trace
        out[mode] = {"instant": instant, "hour": hour, "seed": seed,
                     "rmse_initial": float(tr[0]), "rmse_final": float(tr[-1]),
                     "trace": tr}
    return out


# ---------------------------------------------------------------------------
# Artifact emission
# ---------------------------------------------------------------------------


def write_traces_csv(path, comparison: Comparison) -> None:
    lines = ["instant,hour,method,k,rmse"]
    for name, m in comparison.methods.items():
        for t, trace in enumerate(m.traces):
            for k, v in enumerate(trace):
                lines.append(f"{t},{comparison.hours[t]},{name},{k},{v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(path, comparison: Comparison) -> None:
    lines = ["method,mean,std,max,min"]
    for name in METHODS:
        s = comparison.summary[name]
        lines.append(f"{name},{s['mean']:.17g},{s['std']:.17g},{s['max']:.17g},{s['min']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_reductions_csv(path, comparison: Comparison) -> None:
    lines = ["instant,hour,method,reduction_pct"]
    for name, vals in comparison.reductions.items():
        for t, v in enumerate(vals):
            lines.append(f"{t},{comparison.hours[t]},{name},{v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_initial_guess_csv(path, study: dict) -> None:
    lines = ["mode,instant,hour,seed,rmse_initial,rmse_final"]
    for mode, rec in study.items():
        lines.append(f"{mode},{rec['instant']},{rec['hour']},{rec['seed']},"
                     f"{rec['rmse_initial']:.17g},{rec['rmse_final']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def localization_scores(comparison: Comparison) -> dict[str, localization.LeakScore]:
    """Leak scores per method from its paired nominal/leak estimates."""
    return {
        name: localization.lcsm_score(m.nominal_estimates, m.leak_estimates)
        for name, m in comparison.methods.items()
    }


def write_evaluation_artifacts(out_dir, bundle: ScenarioBundle, comparison: Comparison,
                               study: dict | None = None) -> dict:
    """All delimited outputs for one evaluation run; returns a summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_traces_csv(out / "traces.csv", comparison)
    write_summary_csv(out / "summary.csv", comparison)
    write_reductions_csv(out / "reductions.csv", comparison)
    if study is not None:
        write_initial_guess_csv(out / "initial_guess.csv", study)

    scores = localization_scores(comparison)
    localization.write_ranking_csv(out / "localization_ranking.csv", bundle.net,
                                   scores[UKF_DYNAMIC])
    localization.write_colormap_json(out / "colormap.json", bundle.net, scores[UKF_DYNAMIC])

    info = {
        "summary": comparison.summary,
        "worst_instant": comparison.worst_instant,
        "worst_hour": comparison.hours[comparison.worst_instant],
        "mean_reduction_pct": {k: float(np.mean(v)) for k, v in comparison.reductions.items()},
    }
    if bundle.spec.leak_node is not None:
        adj = bundle.net.adjacency_lists()
        info["over_ranked"] = {
            name: localization.over_ranked_count(score, bundle.spec.leak_node, adj)
            for name, score in scores.items()
        }
    (out / "evaluation.json").write_text(json.dumps(info, indent=2))
    return info
