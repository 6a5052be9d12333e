"""Command-line interface.

Subcommands: ``generate`` (simulate a scenario bundle), ``estimate`` (run one
estimator over a bundle), ``localize`` (rank leak candidates from paired
estimate runs), ``evaluate`` (full method comparison with figures),
``pipeline`` (all stages chained), and ``fixture`` (write a built-in
benchmark to disk).

Exit codes: 0 success, 2 bad arguments, 3 input parse failure, 4 numerical
failure.  Every run writes a ``manifest.json`` recording inputs, seeds, and
configuration; rerunning with the same manifest inputs reproduces the
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, benchmarks, evaluation, figures, localization, scenario
from .hydraulics import SolverError, conductivity
from .interpolation import QpError, WeightPair, awgsi_heads
from .network import (
    Network,
    NetworkError,
    ParseError,
    SensorConfig,
    load_network,
    serialize_network,
)
from .scenario import ScenarioBundle, read_bundle, spec_from_json, write_bundle
from .ukf import FilterError, run_ukf_awgsi, run_ukf_gsi
from scipy import sparse

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_NUMERIC = 4

METHOD_NAMES = ("gsi", "awgsi", "ukf-gsi", "ukf-awgsi")


class UsageError(ValueError):
    """Bad arguments or inconsistent inputs."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, argv, inputs: dict, config_echo=None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs.values() if Path(p).is_file()},
        "config": config_echo,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None


def _load_network_checked(path) -> Network:
    try:
        net, warnings = load_network(path)
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    for w in warnings:
        print(f"hydrostate: warning: {path}: {w}", file=sys.stderr)
    return net


def _sensors_from_json(doc: dict, net: Network) -> SensorConfig:
    return SensorConfig.from_ids(net, doc.get("pressure", []), doc.get("amr", []))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args, argv) -> int:
    net = _load_network_checked(args.network)
    doc = _read_json(args.spec)
    spec, sensors = spec_from_json(doc, net)
    out = Path(args.out)
    if spec.leak_node is not None:
        nominal, leak = scenario.generate_pair(net, sensors, spec)
    else:
        nominal, leak = scenario.generate(net, sensors, spec), None
    write_bundle(out, net, sensors, spec, nominal, leak)
    _write_manifest(out, "generate", argv,
                    {"network": args.network, "spec": args.spec}, config_echo=doc)
    print(f"wrote bundle with {len(spec.hours)} instants to {out}")
    return EXIT_OK


def _write_estimates_csv(path, net, hours, estimates) -> None:
    lines = [",".join(["hour"] + [nd.id for nd in net.nodes])]
    for hour, row in zip(hours, estimates):
        lines.append(",".join([str(hour)] + [f"{x:.17g}" for x in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_estimates_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    ids = lines[0].split(",")[1:]
    hours, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        hours.append(int(parts[0]))
        rows.append([float(x) for x in parts[1:]])
    return ids, tuple(hours), np.array(rows)


def _save_weights(path, weights: WeightPair) -> None:
    coo = weights.omega.tocoo()
    np.savez(path, row=coo.row, col=coo.col, data=coo.data, n=coo.shape[0])


def _load_weights(path) -> WeightPair:
    z = np.load(path)
    n = int(z["n"])
    omega = sparse.coo_array((z["data"], (z["row"], z["col"])), shape=(n, n)).tocsr()
    return WeightPair(omega=omega, phi=np.asarray(omega.sum(axis=1)).ravel())


def _estimate_series(method, bundle: ScenarioBundle, ectx, cfg, series_name, series,
                     h0_from=None):
    """One estimator over one measurement series; returns (estimates, artifacts)."""
    net, cond, S = bundle.net, ectx.cond, ectx.S
    ns = ectx.n_pressure
    T = len(series.hours)
    estimates = np.empty((T, net.n_nodes))
    artifacts = {}
    h0s = np.empty((T, net.n_nodes))
    weights_per_instant = []
    diagnostics = []

    for t, hour in enumerate(series.hours):
        h_s = series.measurements[t, :ns]
        y = series.measurements[t]
        if method == "gsi":
            estimates[t] = ectx.gsi_nominal(hour, h_s)
            continue

        if h0_from is not None:
            h0, weights = h0_from[0][t], h0_from[1][t]
        else:
            h_nom_est = ectx.gsi_nominal(hour, bundle.nominal.measurements[t, :ns])
            aw = awgsi_heads(net, cond, h_nom_est, S, h_s, ectx.epsilon_h)
            h0, weights = aw.h0, aw.weights
        h0s[t] = h0
        weights_per_instant.append(weights)

        if method == "awgsi":
            estimates[t] = h0
        elif method == "ukf-gsi":
            run = run_ukf_gsi(h0, y, cfg, weights, ectx.meas_ctx)
            estimates[t] = run.heads
            diagnostics.append((t, hour, run))
        elif method == "ukf-awgsi":
            run = run_ukf_awgsi(net, cond, h0, y, cfg, weights, ectx.meas_ctx,
                                epsilon_h=ectx.epsilon_h)
            estimates[t] = run.heads
            diagnostics.append((t, hour, run))
        else:
            raise UsageError(f"unknown method {method!r}")

    if method != "gsi":
        artifacts["h0"] = h0s
        artifacts["weights"] = weights_per_instant
    if diagnostics:
        artifacts["diagnostics"] = diagnostics
    return estimates, artifacts


def _write_diagnostics_csv(path, diagnostics) -> None:
    lines = ["instant,hour,k,rmse,innovation_norm,trace_p,weights_updated"]
    for t, hour, run in diagnostics:
        for rec in run.records:
            lines.append(f"{t},{hour},{rec.k},{rec.rmse:.17g},{rec.innovation_norm:.17g},"
                         f"{rec.trace_p:.17g},{int(rec.weights_updated)}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_estimate(args, argv) -> int:
    bundle = read_bundle(args.data)
    sensors = _sensors_from_json(_read_json(args.sensors), bundle.net)
    if sensors != bundle.sensors:
        raise UsageError("--sensors does not match the sensor set the bundle was "
                         "generated with")
    cfg_doc = _read_json(args.config) if args.config else None
    cfg = evaluation.build_ukf_config(cfg_doc, len(sensors.pressure_nodes),
                                      len(sensors.amr_nodes))
    ectx = evaluation.EstimationContext.build(bundle.net, sensors)
    out = Path(args.out)

    series_map = {"nominal": bundle.nominal}
    if bundle.leak is not None:
        series_map["leak"] = bundle.leak

    h0_artifacts = None
    if args.h0_from:
        h0_artifacts = {}
        for name in series_map:
            src = Path(args.h0_from) / name
            _, _, h0s = read_estimates_csv(src / "h0.csv")
            weights = [_load_weights(src / f"weights_{t:02d}.npz")
                       for t in range(h0s.shape[0])]
            h0_artifacts[name] = (h0s, weights)

    for name, series in series_map.items():
        sdir = out / name
        sdir.mkdir(parents=True, exist_ok=True)
        estimates, artifacts = _estimate_series(
            args.method, bundle, ectx, cfg, name, series,
            h0_from=h0_artifacts.get(name) if h0_artifacts else None)
        _write_estimates_csv(sdir / "estimates.csv", bundle.net, series.hours, estimates)
        (sdir / "network.json").write_text(serialize_network(bundle.net))
        if "h0" in artifacts:
            _write_estimates_csv(sdir / "h0.csv", bundle.net, series.hours, artifacts["h0"])
            for t, w in enumerate(artifacts["weights"]):
                _save_weights(sdir / f"weights_{t:02d}.npz", w)
        if "diagnostics" in artifacts:
            _write_diagnostics_csv(sdir / "diagnostics.csv", artifacts["diagnostics"])

    _write_manifest(out, "estimate", argv,
                    {"sensors": args.sensors, **({"config": args.config} if args.config else {})},
                    config_echo=evaluation.ukf_config_to_json(cfg))
    print(f"estimated {args.method} over {list(series_map)} -> {out}")
    return EXIT_OK


def cmd_localize(args, argv) -> int:
    ids_n, hours_n, nom = read_estimates_csv(Path(args.nom) / "estimates.csv")
    ids_l, hours_l, leak = read_estimates_csv(Path(args.leak) / "estimates.csv")
    if ids_n != ids_l:
        raise UsageError("nominal and leak estimates cover different node sets")
    if nom.shape != leak.shape:
        raise UsageError("nominal and leak estimates differ in shape")
    net, _ = load_network(Path(args.leak) / "network.json")
    score = localization.lcsm_score(nom, leak)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    localization.write_ranking_csv(out / "localization_ranking.csv", net, score)
    localization.write_colormap_json(out / "colormap.json", net, score)
    figures.save_localization_bars(out / "localization.png", net, {"estimates": score})
    _write_manifest(out, "localize", argv, {"nom": str(Path(args.nom) / "estimates.csv"),
                                            "leak": str(Path(args.leak) / "estimates.csv")})
    top = [net.nodes[v].id for v in score.candidates[:5]]
    print(f"ranked {len(score.candidates)} candidates; top: {', '.join(top) or '(none)'}")
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    bundle = read_bundle(args.data)
    if bundle.leak is None:
        raise UsageError("evaluation needs a bundle generated with a leak")
    cfg_doc = _read_json(args.config) if args.config else None
    comparison = evaluation.compare_methods(bundle, cfg_doc,
                                            nominal_mode=args.nominal_reference,
                                            jobs=args.jobs)
    study = evaluation.initial_guess_study(bundle, cfg_doc,
                                           instant=comparison.worst_instant,
                                           seed=bundle.spec.seed,
                                           nominal_mode=args.nominal_reference)
    out = Path(args.out)
    info = evaluation.write_evaluation_artifacts(out, bundle, comparison, study)

    cfg = evaluation.build_ukf_config(cfg_doc, len(bundle.sensors.pressure_nodes),
                                      len(bundle.sensors.amr_nodes))
    figures.save_rmse_traces(out / "rmse_traces.png", comparison,
                             update_interval=cfg.update_interval)
    figures.save_summary_bars(out / "summary.png", comparison)
    figures.save_localization_bars(out / "localization.png", bundle.net,
                                   evaluation.localization_scores(comparison),
                                   leak_node=bundle.spec.leak_node)
    _write_manifest(out, "evaluate", argv,
                    {**({"config": args.config} if args.config else {})},
                    config_echo=evaluation.ukf_config_to_json(cfg))
    for name in evaluation.METHODS:
        s = comparison.summary[name]
        print(f"{name}: rmse {s['mean']:.3f} +/- {s['std']:.3f} m "
              f"(max {s['max']:.3f}, min {s['min']:.3f})")
    return EXIT_OK


def cmd_pipeline(args, argv) -> int:
    doc = _read_json(args.spec)
    spec_dir = Path(args.spec).parent
    out = Path(args.out)

    net_ref = doc.get("network")
    if not net_ref:
        raise UsageError("pipeline spec must name a network file")
    net_path = Path(net_ref)
    if not net_path.is_absolute():
        net_path = spec_dir / net_path
    net = _load_network_checked(net_path)
    spec, sensors = spec_from_json(doc.get("scenario", {}), net)
    cfg_doc = doc.get("ukf", {})

    # generate
    data_dir = out / "data"
    if spec.leak_node is not None:
        nominal, leak = scenario.generate_pair(net, sensors, spec)
    else:
        nominal, leak = scenario.generate(net, sensors, spec), None
    write_bundle(data_dir, net, sensors, spec, nominal, leak)
    bundle = ScenarioBundle(net=net, sensors=sensors, spec=spec, nominal=nominal, leak=leak)

    # estimate each method, reusing the interpolation artifacts for the filters
    ectx = evaluation.EstimationContext.build(net, sensors)
    cfg = evaluation.build_ukf_config(cfg_doc, len(sensors.pressure_nodes),
                                      len(sensors.amr_nodes))
    series_map = {"nominal": bundle.nominal}
    if leak is not None:
        series_map["leak"] = bundle.leak
    shared_h0 = {}
    for method in METHOD_NAMES:
        mdir = out / "estimate" / method
        for name, series in series_map.items():
            sdir = mdir / name
            sdir.mkdir(parents=True, exist_ok=True)
            estimates, artifacts = _estimate_series(method, bundle, ectx, cfg, name, series,
                                                    h0_from=shared_h0.get(name))
            _write_estimates_csv(sdir / "estimates.csv", net, series.hours, estimates)
            (sdir / "network.json").write_text(serialize_network(net))
            if method == "awgsi":
                shared_h0[name] = (artifacts["h0"], artifacts["weights"])
                _write_estimates_csv(sdir / "h0.csv", net, series.hours, artifacts["h0"])
                for t, w in enumerate(artifacts["weights"]):
                    _save_weights(sdir / f"weights_{t:02d}.npz", w)
            if "diagnostics" in artifacts:
                _write_diagnostics_csv(sdir / "diagnostics.csv", artifacts["diagnostics"])

    # localize from the dynamic filter's estimates
    if leak is not None:
        loc_dir = out / "localize"
        loc_dir.mkdir(parents=True, exist_ok=True)
        _, _, nom_est = read_estimates_csv(out / "estimate" / "ukf-awgsi" / "nominal" / "estimates.csv")
        _, _, leak_est = read_estimates_csv(out / "estimate" / "ukf-awgsi" / "leak" / "estimates.csv")
        score = localization.lcsm_score(nom_est, leak_est)
        localization.write_ranking_csv(loc_dir / "localization_ranking.csv", net, score)
        localization.write_colormap_json(loc_dir / "colormap.json", net, score)
        figures.save_localization_bars(loc_dir / "localization.png", net,
                                       {"ukf-awgsi": score}, leak_node=spec.leak_node)

        # evaluate
        eval_dir = out / "evaluate"
        comparison = evaluation.compare_methods(bundle, cfg_doc, jobs=args.jobs)
        study = evaluation.initial_guess_study(bundle, cfg_doc,
                                               instant=comparison.worst_instant,
                                               seed=spec.seed)
        evaluation.write_evaluation_artifacts(eval_dir, bundle, comparison, study)
        figures.save_rmse_traces(eval_dir / "rmse_traces.png", comparison,
                                 update_interval=cfg.update_interval)
        figures.save_summary_bars(eval_dir / "summary.png", comparison)
        figures.save_localization_bars(eval_dir / "localization.png", net,
                                       evaluation.localization_scores(comparison),
                                       leak_node=spec.leak_node)
        for name in evaluation.METHODS:
            s = comparison.summary[name]
            print(f"{name}: rmse {s['mean']:.3f} +/- {s['std']:.3f} m")

    _write_manifest(out, "pipeline", argv, {"spec": args.spec, "network": net_path},
                    config_echo=doc)
    print(f"pipeline artifacts in {out}")
    return EXIT_OK


_FIXTURES = {
    "small": (benchmarks.small_network, benchmarks.small_sensors),
    "loaded-small": (benchmarks.loaded_small_network, benchmarks.small_sensors),
    "desk": (benchmarks.desk_network, benchmarks.desk_sensors),
    "modena-like": (benchmarks.modena_like, benchmarks.modena_like_sensors),
}


def cmd_fixture(args, argv) -> int:
    try:
        net_fn, sens_fn = _FIXTURES[args.name]
    except KeyError:
        raise UsageError(f"unknown fixture {args.name!r} (choose from {sorted(_FIXTURES)})")
    net = net_fn()
    sensors = sens_fn(net)
    leak = benchmarks.remote_leak_node(net, sensors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "network.json").write_text(serialize_network(net))
    scenario_doc = {
        "hours": "every_two",
        "seed": args.seed,
        "leak_node": net.nodes[leak].id,
        "leak_lps": 4.5,
        "uncertainty": {"pressure_noise_m": 0.01, "demand_noise_lps": 0.01,
                        "pipe_param_rel": 0.01, "demand_pattern_rel": 0.01},
        "sensors": {"pressure": [net.nodes[i].id for i in sensors.pressure_nodes],
                    "amr": [net.nodes[i].id for i in sensors.amr_nodes]},
    }
    (out / "scenario.json").write_text(json.dumps(scenario_doc, indent=2))
    (out / "sensors.json").write_text(json.dumps(scenario_doc["sensors"], indent=2))
    cfg = evaluation.build_ukf_config(None, len(sensors.pressure_nodes),
                                      len(sensors.amr_nodes))
    cfg_doc = evaluation.ukf_config_to_json(cfg)
    cfg_doc["measurement_noise"] = {"head": 1e-4, "demand": 1e-8}
    (out / "config.json").write_text(json.dumps(cfg_doc, indent=2))
    (out / "pipeline.json").write_text(json.dumps(
        {"network": "network.json", "scenario": scenario_doc, "ukf": cfg_doc}, indent=2))
    print(f"fixture {args.name} written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrostate",
                                description="Hydraulic head estimation and leak "
                                            "localization for water networks")
    p.add_argument("--version", action="version", version=f"hydrostate {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a measurement bundle")
    g.add_argument("--network", required=True)
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="run one estimator over a bundle")
    e.add_argument("--method", required=True, choices=METHOD_NAMES)
    e.add_argument("--data", required=True)
    e.add_argument("--sensors", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--h0-from", default=None,
                   help="reuse h0 and weights from a previous awgsi estimate dir")
    e.set_defaults(func=cmd_estimate)

    l = sub.add_parser("localize", help="rank leak candidates from paired estimates")
    l.add_argument("--nom", required=True)
    l.add_argument("--leak", required=True)
    l.add_argument("--out", required=True)
    l.set_defaults(func=cmd_localize)

    v = sub.add_parser("evaluate", help="method comparison with figures")
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--config", default=None)
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--nominal-reference", choices=("gsi", "model"), default="gsi")
    v.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("pipeline", help="generate, estimate, localize, evaluate")
    pl.add_argument("--spec", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--jobs", type=int, default=1)
    pl.set_defaults(func=cmd_pipeline)

    f = sub.add_parser("fixture", help="write a built-in benchmark network to disk")
    f.add_argument("--name", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=2)
    f.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"hydrostate: error code={EXIT_USAGE} kind=args: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, NetworkError, FileNotFoundError) as exc:
        print(f"hydrostate: error code={EXIT_PARSE} kind=parse: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SolverError, QpError, FilterError, np.linalg.LinAlgError) as exc:
        print(f"hydrostate: error code={EXIT_NUMERIC} kind=numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
