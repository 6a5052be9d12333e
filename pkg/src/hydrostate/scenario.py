"""Synthetic evaluation data: daily demand cycles, leak injection,
uncertainty corruption, sensor sampling, and the RMSE metric.

A scenario covers a set of hours of one operating day.  For each hour the
junction demands follow the network's pattern with a per-node random
perturbation, an optional leak adds extra demand at one junction, heads are
solved from the (independently perturbed) pipe parameters, and measurements
are the sensed values plus bounded uniform noise.

All randomness is drawn up-front in a leak-independent order from one seeded
generator, so the same seed yields the same world with and without the leak.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .hydraulics import Conductivity, HW_EXP, signed_flows, solve_steady_state
from .network import (
    Network,
    lps_to_m3s,
    m3s_to_lps,
    SensorConfig,
    parse_network,
    serialize_network,
    structural_incidence,
)


@dataclass(frozen=True)
class Uncertainty:
    pressure_noise_m: float = 0.01  # +/- bound on head readings
    demand_noise_m3s: float = 1e-5  # +/- bound on AMR readings (0.01 l/s)
    pipe_param_rel: float = 0.01  # relative bound on diameter and roughness
    demand_pattern_rel: float = 0.01  # relative bound on hourly demands

    def __post_init__(self):
        for name in ("pipe_param_rel", "demand_pattern_rel"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.1:
                raise ValueError(f"{name} must lie in [0, 0.1]")
        for name in ("pressure_noise_m", "demand_noise_m3s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


NO_UNCERTAINTY = Uncertainty(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ScenarioSpec:
    hours: tuple[int, ...]
    seed: int
    leak_node: int | None = None  # junction index
    leak_m3s: float = 0.0
    uncertainty: Uncertainty = Uncertainty()

    def __post_init__(self):
        if self.leak_m3s < 0:
            raise ValueError("leak size must be nonnegative")
        if not self.hours:
            raise ValueError("at least one hour is required")


def every_two_hours() -> tuple[int, ...]:
    """The evaluation protocol's instants: one hour out of every two."""
    return tuple(range(0, 24, 2))


@dataclass(frozen=True)
class TimeSeriesData:
    """Per-hour truth and measurements; rows follow ``hours``."""

    hours: tuple[int, ...]
    true_heads: np.ndarray  # (T, n)
    true_demands: np.ndarray  # (T, n), reservoir entries are negative inflows
    measurements: np.ndarray  # (T, n_s + n_ca), stacked [heads; demands]


def perturbed_conductivity(net: Network, diameter_factor, roughness_factor) -> Conductivity:
    sigma = (net.roughnesses() * roughness_factor) ** HW_EXP \
        * (net.diameters() * diameter_factor) ** 4.87 / (10.67 * net.lengths())
    return Conductivity(sigma=sigma, tau=1.0 / sigma)


def generate(net: Network, sensors: SensorConfig, spec: ScenarioSpec) -> TimeSeriesData:
    """Simulate the scenario; fully deterministic for a fixed seed."""
    sensors.validate_against(net)
    jun = net.junction_indices
    if spec.leak_node is not None and spec.leak_node not in set(jun.tolist()):
        raise ValueError(f"leak node {spec.leak_node} is not a junction index")

    T = len(spec.hours)
    n = net.n_nodes
    u = spec.uncertainty
    rng = np.random.default_rng(spec.seed)
    # one draw block per effect, shaped independently of the leak settings
    diameter_factor = 1.0 + u.pipe_param_rel * rng.uniform(-1.0, 1.0, net.n_pipes)
    roughness_factor = 1.0 + u.pipe_param_rel * rng.uniform(-1.0, 1.0, net.n_pipes)
    demand_wiggle = rng.uniform(-1.0, 1.0, (T, n))
    pressure_noise = rng.uniform(-1.0, 1.0, (T, len(sensors.pressure_nodes)))
    demand_noise = rng.uniform(-1.0, 1.0, (T, len(sensors.amr_nodes)))

    cond_true = perturbed_conductivity(net, diameter_factor, roughness_factor)
    M0 = structural_incidence(net)
    res = net.reservoir_indices

    heads = np.empty((T, n))
    demands = np.empty((T, n))
    meas = np.empty((T, len(sensors.pressure_nodes) + len(sensors.amr_nodes)))
    p_idx = np.array(sensors.pressure_nodes, dtype=int)
    a_idx = np.array(sensors.amr_nodes, dtype=int)

    for t, hour in enumerate(spec.hours):
        d_full = net.demand_at_hour(hour) * (1.0 + u.demand_pattern_rel * demand_wiggle[t])
        if spec.leak_node is not None:
            d_full[spec.leak_node] += spec.leak_m3s
        d_j = d_full[jun]
        try:
            h = solve_steady_state(net, cond_true, d_j)
        except Exception as exc:
            raise RuntimeError(f"hydraulic solve failed at hour {hour}: {exc}") from exc

        c = d_full.copy()
        c[res] = -(M0.T @ signed_flows(cond_true.sigma, M0 @ h))[res]  # net reservoir inflows
        heads[t] = h
        demands[t] = c
        meas[t, : p_idx.size] = h[p_idx] + u.pressure_noise_m * pressure_noise[t]
        meas[t, p_idx.size :] = c[a_idx] + u.demand_noise_m3s * demand_noise[t]

    return TimeSeriesData(hours=tuple(spec.hours), true_heads=heads,
                          true_demands=demands, measurements=meas)


def generate_pair(net: Network, sensors: SensorConfig, spec: ScenarioSpec):
    """Leak-free and leak datasets for the same seed (identical world,
    leak demand being the only difference)."""
    nominal = generate(net, sensors, replace(spec, leak_node=None, leak_m3s=0.0))
    leak = generate(net, sensors, spec)
    return nominal, leak


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rmse(h_true, h_est) -> float:
    """Root-mean-square difference over all nodes, in meters."""
    a = np.asarray(h_true, dtype=float)
    b = np.asarray(h_est, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(d @ d / a.size))


def summarize(values) -> dict[str, float]:
    """Sample statistics of an RMSE vector (std with the N-1 divisor)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot summarize an empty vector")
    return {
        "mean": float(np.mean(v)),
        "std": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
        "max": float(np.max(v)),
        "min": float(np.min(v)),
    }


# ---------------------------------------------------------------------------
# Bundle serialization
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header: list[str], hours, rows: np.ndarray) -> None:
    lines = [",".join(["hour"] + header)]
    for hour, row in zip(hours, rows):
        lines.append(",".join([str(hour)] + [f"{x:.17g}" for x in row]))
    path.write_text("\n".join(lines) + "\n")


def _read_csv(path: Path):
    lines = path.read_text().strip().splitlines()
    hours = []
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        hours.append(int(parts[0]))
        rows.append([float(x) for x in parts[1:]])
    return tuple(hours), np.array(rows)


def write_series(out_dir, net: Network, sensors: SensorConfig, data: TimeSeriesData) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    node_ids = [nd.id for nd in net.nodes]
    meas_cols = [f"h:{net.nodes[i].id}" for i in sensors.pressure_nodes]
    meas_cols += [f"c:{net.nodes[i].id}" for i in sensors.amr_nodes]
    _write_csv(out / "heads.csv", node_ids, data.hours, data.true_heads)
    _write_csv(out / "demands.csv", node_ids, data.hours, data.true_demands)
    _write_csv(out / "measurements.csv", meas_cols, data.hours, data.measurements)


def read_series(in_dir) -> TimeSeriesData:
    src = Path(in_dir)
    hours, heads = _read_csv(src / "heads.csv")
    _, demands = _read_csv(src / "demands.csv")
    _, meas = _read_csv(src / "measurements.csv")
    return TimeSeriesData(hours=hours, true_heads=heads, true_demands=demands,
                          measurements=meas)


@dataclass(frozen=True)
class ScenarioBundle:
    """A generated dataset on disk: network, sensors, spec, and the series."""

    net: Network
    sensors: SensorConfig
    spec: ScenarioSpec
    nominal: TimeSeriesData
    leak: TimeSeriesData | None


def spec_to_json(net: Network, sensors: SensorConfig, spec: ScenarioSpec) -> dict:
    return {
        "hours": list(spec.hours),
        "seed": spec.seed,
        "leak_node": None if spec.leak_node is None else net.nodes[spec.leak_node].id,
        "leak_lps": m3s_to_lps(spec.leak_m3s),
        "uncertainty": {
            "pressure_noise_m": spec.uncertainty.pressure_noise_m,
            "demand_noise_lps": m3s_to_lps(spec.uncertainty.demand_noise_m3s),
            "pipe_param_rel": spec.uncertainty.pipe_param_rel,
            "demand_pattern_rel": spec.uncertainty.demand_pattern_rel,
        },
        "sensors": {
            "pressure": [net.nodes[i].id for i in sensors.pressure_nodes],
            "amr": [net.nodes[i].id for i in sensors.amr_nodes],
        },
    }


def spec_from_json(doc: dict, net: Network) -> tuple[ScenarioSpec, SensorConfig]:
    hours = doc.get("hours")
    if hours in (None, "every_two"):
        hours = every_two_hours() if hours == "every_two" else tuple(range(24))
    unc = doc.get("uncertainty", {})
    uncertainty = Uncertainty(
        pressure_noise_m=float(unc.get("pressure_noise_m", 0.01)),
        demand_noise_m3s=lps_to_m3s(float(unc.get("demand_noise_lps", 0.01))),
        pipe_param_rel=float(unc.get("pipe_param_rel", 0.01)),
        demand_pattern_rel=float(unc.get("demand_pattern_rel", 0.01)),
    )
    leak_node = doc.get("leak_node")
    if isinstance(leak_node, str):
        leak_node = net.node_index(leak_node)
    spec = ScenarioSpec(
        hours=tuple(int(h) for h in hours),
        seed=int(doc.get("seed", 0)),
        leak_node=leak_node,
        leak_m3s=lps_to_m3s(float(doc.get("leak_lps", 0.0))),
        uncertainty=uncertainty,
    )
    sensors_doc = doc.get("sensors", {})
    sensors = SensorConfig.from_ids(net, sensors_doc.get("pressure", []),
                                    sensors_doc.get("amr", []))
    return spec, sensors


def write_bundle(out_dir, net: Network, sensors: SensorConfig, spec: ScenarioSpec,
                 nominal: TimeSeriesData, leak: TimeSeriesData | None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "network.json").write_text(serialize_network(net))
    (out / "scenario.json").write_text(json.dumps(spec_to_json(net, sensors, spec), indent=2))
    write_series(out / "nominal", net, sensors, nominal)
    if leak is not None:
        write_series(out / "leak", net, sensors, leak)


def read_bundle(in_dir) -> ScenarioBundle:
    src = Path(in_dir)
    net, _ = parse_network((src / "network.json").read_text(), "json")
    doc = json.loads((src / "scenario.json").read_text())
    spec, sensors = spec_from_json(doc, net)
    nominal = read_series(src / "nominal")
    leak_dir = src / "leak"
    leak = read_series(leak_dir) if leak_dir.exists() else None
    return ScenarioBundle(net=net, sensors=sensors, spec=spec, nominal=nominal, leak=leak)
