"""Command-line entry points.

Every subcommand reads its parameters from a JSON config document passed with
--config; --seed overrides the config's seed and --out chooses the output
directory.  Outputs are CSV tables plus SVG charts, written atomically and
byte-identical across runs with the same config and seed.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import NumericalError, ValidationError
from .calibration import (
    SnapshotSeries,
    fit_diffusion_constants,
    learn_supra_operator,
    write_fit_report,
    write_operator_csv,
)
from .diffusion import (
    NoiseModel,
    SimulationConfig,
    default_step,
    ensemble_statistics,
    propagate_closed,
    simulate_ensemble,
    write_ensemble_summary_csv,
    write_simulation_csv,
)
from .harness import (
    experiment_config_from_dict,
    run_experiment,
)
from .kalman import (
    ObservationModel,
    run_filter,
    sample_observation_mask,
    write_filter_trace_csv,
    write_mask_csv,
)
from .network import assemble_supra_laplacian, load_network, save_network
from .spectral import connectivity_sweep, write_sweep_csv
from .states import node_label, read_states_csv, write_states_csv
from .svgplot import line_chart
from .synthetic import generate_synthetic, synthetic_spec_from_dict


def _read_config(args) -> dict:
    if not args.config:
        return {}
    with open(args.config) as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {args.config} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError("config document must be a JSON object")
    return data


def _seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


def _outpath(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ValidationError(f"config is missing the required field {key!r}")
    return cfg[key]


def _load_series(cfg: dict, network) -> SnapshotSeries:
    snapshots = read_states_csv(_require(cfg, "snapshots"), network)
    train_count = cfg.get("train_count")
    return SnapshotSeries(
        snapshots=tuple(snapshots),
        train_count=int(train_count) if train_count is not None else None,
    )


def _write_json(path, payload: dict):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    os.replace(tmp, path)


def _done(path) -> None:
    print(f"wrote {path}")


def cmd_generate(args) -> int:
    cfg = _read_config(args)
    spec = synthetic_spec_from_dict(cfg)
    seed = _seed(args, cfg)
    network, series, truth = generate_synthetic(spec, seed)
    net_path = _outpath(args, "network.json")
    save_network(net_path, network, truth.constants)
    _done(net_path)
    states_path = _outpath(args, "snapshots.csv")
    write_states_csv(states_path, series.snapshots, network.node_order)
    _done(states_path)
    truth_path = _outpath(args, "truth.json")
    _write_json(
        truth_path,
        {
            "seed": truth.seed,
            "attempts": truth.attempts,
            "sigma_ratio": truth.sigma_ratio,
            "sigma_frobenius": float(np.linalg.norm(truth.sigma)),
            "train_count": series.train_count,
            "constants": {
                "intra": {str(k): v for k, v in sorted(truth.constants.intra.items())},
                "inter": {f"{a},{b}": v for (a, b), v in sorted(truth.constants.inter.items())},
            },
        },
    )
    _done(truth_path)
    return 0


def cmd_build(args) -> int:
    cfg = _read_config(args)
    network, constants = load_network(_require(cfg, "network"))
    if constants is None:
        raise ValidationError("the network file declares no diffusion constants")
    supra = assemble_supra_laplacian(network, constants)
    matrix_path = _outpath(args, "supra_laplacian.csv")
    tmp = f"{matrix_path}.tmp"
    with open(tmp, "w") as handle:
        n = supra.n_nodes
        handle.write(f"# rows={n} cols={n}\n")
        for row in supra.matrix:
            handle.write(",".join(repr(float(v)) for v in row) + "\n")
    os.replace(tmp, matrix_path)
    _done(matrix_path)
    summary_path = _outpath(args, "build_summary.json")
    _write_json(
        summary_path,
        {
            "n_nodes": supra.n_nodes,
            "n_layers": len(supra.layer_ids),
            "max_abs_row_sum": float(np.abs(supra.matrix.sum(axis=1)).max()),
            "symmetric": bool(np.abs(supra.matrix - supra.matrix.T).max(initial=0.0) < 1e-12),
        },
    )
    _done(summary_path)
    return 0


def cmd_simulate(args) -> int:
    cfg = _read_config(args)
    network, constants = load_network(_require(cfg, "network"))
    if constants is None:
        raise ValidationError("the network file declares no diffusion constants")
    supra = assemble_supra_laplacian(network, constants)
    snapshots = read_states_csv(_require(cfg, "states"), network)
    x0 = snapshots[0]
    if "sigma_file" in cfg:
        sigma = read_states_csv(cfg["sigma_file"], network)[0].matrix
    else:
        sigma = float(cfg.get("sigma", 0.0)) * np.ones(x0.matrix.shape)
    noise = NoiseModel(sigma=sigma, seed=_seed(args, cfg))
    dt = float(cfg["dt"]) if cfg.get("dt") is not None else default_step(supra)
    config = SimulationConfig(
        dt=dt,
        horizon=float(_require(cfg, "horizon")),
        ensemble_size=int(cfg.get("paths", 1)),
    )
    paths = simulate_ensemble(x0, supra, noise, config)
    sim_path = _outpath(args, "simulation.csv")
    write_simulation_csv(sim_path, paths, network.node_order)
    _done(sim_path)
    if len(paths) >= 2:
        mean, var = ensemble_statistics(paths)
        summary_path = _outpath(args, "ensemble_summary.csv")
        write_ensemble_summary_csv(summary_path, paths[0].times, mean, var, network.node_order)
        _done(summary_path)
    return 0


def cmd_predict(args) -> int:
    cfg = _read_config(args)
    network, constants = load_network(_require(cfg, "network"))
    if constants is None:
        raise ValidationError("the network file declares no diffusion constants")
    supra = assemble_supra_laplacian(network, constants)
    snapshots = read_states_csv(_require(cfg, "states"), network)
    delta_t = float(_require(cfg, "delta_t"))
    predicted = propagate_closed(snapshots[-1], supra, delta_t)
    out_path = _outpath(args, "prediction.csv")
    write_states_csv(out_path, [predicted], network.node_order)
    _done(out_path)
    return 0


def cmd_fit(args) -> int:
    cfg = _read_config(args)
    network, _ = load_network(_require(cfg, "network"))
    series = _load_series(cfg, network)
    fit = fit_diffusion_constants(
        series, network, max_sweeps=int(cfg.get("max_sweeps", 60))
    )
    report_path = _outpath(args, "fit_report.json")
    write_fit_report(report_path, fit)
    _done(report_path)
    return 0


def _learn_operator(cfg, network, series):
    fit = fit_diffusion_constants(
        series, network, max_sweeps=int(cfg.get("fit_max_sweeps", 12))
    )
    supra = assemble_supra_laplacian(network, fit.constants)
    return learn_supra_operator(
        series,
        supra,
        gain=float(cfg["gain"]) if cfg.get("gain") is not None else None,
        threshold=float(cfg["eta"]) if cfg.get("eta") is not None else None,
        max_iters=int(cfg.get("max_iters", 200)),
    )


def cmd_learn(args) -> int:
    cfg = _read_config(args)
    network, _ = load_network(_require(cfg, "network"))
    series = _load_series(cfg, network)
    op = _learn_operator(cfg, network, series)
    op_path = _outpath(args, "operator.csv")
    write_operator_csv(op_path, op)
    _done(op_path)
    report_path = _outpath(args, "learn_report.json")
    _write_json(
        report_path,
        {
            "iterations": op.iterations,
            "converged": op.converged,
            "gain": op.gain,
            "threshold": op.threshold,
            "initial_error": op.initial_error,
            "final_error": op.final_error,
        },
    )
    _done(report_path)
    return 0


def cmd_kalman(args) -> int:
    cfg = _read_config(args)
    network, _ = load_network(_require(cfg, "network"))
    series = _load_series(cfg, network)
    fraction = float(_require(cfg, "fraction"))
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    op = _learn_operator(cfg, network, series)
    seed = _seed(args, cfg)
    observed = sample_observation_mask(network.n_nodes, fraction, seed)
    model = ObservationModel.build(
        n_nodes=network.n_nodes,
        n_topics=series.n_topics,
        observed_nodes=observed,
        r_observed=float(cfg.get("r", 1e-6)),
        q_diag=op.residual_variance,
    )
    result = run_filter(series, op, model)
    trace_path = _outpath(args, "filter_trace.csv")
    write_filter_trace_csv(trace_path, result)
    _done(trace_path)
    mask_path = _outpath(args, "mask.csv")
    labels = [node_label(key) for key in network.node_order]
    write_mask_csv(mask_path, observed, labels)
    _done(mask_path)
    return 0


def cmd_spectral(args) -> int:
    cfg = _read_config(args)
    network, constants = load_network(_require(cfg, "network"))
    if constants is None:
        raise ValidationError("the network file declares no diffusion constants")
    epsilons = [float(e) for e in _require(cfg, "epsilons")]
    points = connectivity_sweep(network, constants, epsilons)
    sweep_path = _outpath(args, "lambda2_sweep.csv")
    write_sweep_csv(sweep_path, points)
    _done(sweep_path)
    line_chart(
        _outpath(args, "lambda2_sweep.svg"),
        [
            ("actual", [p.epsilon for p in points], [p.lambda2_actual for p in points]),
            ("estimate", [p.epsilon for p in points], [p.lambda2_estimate for p in points]),
        ],
        title="Algebraic connectivity vs. inter-layer strength",
        x_label="epsilon",
        y_label="lambda_2",
    )
    _done(_outpath(args, "lambda2_sweep.svg"))
    return 0


def cmd_experiment(args) -> int:
    cfg = _read_config(args)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    config = experiment_config_from_dict(cfg)
    os.makedirs(args.out, exist_ok=True)
    result = run_experiment(config, out_dir=args.out)
    for name in config.methods:
        print(f"{name}: mean error {result.mean_errors[name]:.6g}")
    _done(os.path.join(args.out, "errors.csv"))
    _done(os.path.join(args.out, "summary.csv"))
    return 0


_COMMANDS = (
    ("generate", cmd_generate, "generate a synthetic dataset from a spec"),
    ("build", cmd_build, "assemble and dump the supra-Laplacian of a network file"),
    ("simulate", cmd_simulate, "simulate open-system paths from an initial state"),
    ("predict", cmd_predict, "closed-system prediction from the latest snapshot"),
    ("fit", cmd_fit, "fit diffusion constants and the noise scale to snapshots"),
    ("learn", cmd_learn, "learn the dense one-step operator from snapshots"),
    ("kalman", cmd_kalman, "run the partial-observation Kalman filter"),
    ("spectral", cmd_spectral, "sweep algebraic connectivity against its estimate"),
    ("experiment", cmd_experiment, "run a multi-method prediction experiment"),
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the JSON config document")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--out", default="out", help="output directory")
    parser = argparse.ArgumentParser(
        prog="supraflow",
        description="Topic-state diffusion over interconnected multilayer networks",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler, help_text in _COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(func=handler)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
