"""Experiment orchestration: metrics, method comparison, and parameter sweeps.

Experiments score one-step-ahead prediction over the test range of a snapshot
series, on the first agent layer's block of the state (the prediction target).
Four methods are compared:

* ``single_layer``    -- diffusion on the first agent layer alone, with its
  constant fitted on the training range;
* ``multilayer``      -- diffusion on the full interconnected operator with
  all constants fitted on the training range;
* ``learned_operator``-- the dense operator learned from the training pairs,
  initialized from the fitted multilayer operator;
* ``kalman:<f>``      -- sequential Kalman refinement of the learned operator
  observing the fraction f of nodes.

The relative-change series of the true states upper-bounds any reasonable
predictor (it is the error of predicting "no change").  Every run is a pure
function of (config, seed); CSV tables are the interface of record and SVG
charts are conveniences.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .calibration import (
    DiffusionFit,
    LearnedOperator,
    SnapshotSeries,
    fit_diffusion_constants,
    learn_supra_operator,
    one_step_predict_learned,
)
from .diffusion import propagate_closed
from .kalman import ObservationModel, nested_masks, run_filter
from .network import (
    DiffusionConstants,
    InterconnectedNetwork,
    LayerKind,
    assemble_supra_laplacian,
    load_network,
    scale_inter_layer,
)
from .states import StateMatrix, read_states_csv
from .svgplot import line_chart
from .synthetic import SyntheticSpec, generate_synthetic, synthetic_spec_from_dict

METHOD_KINDS = ("single_layer", "multilayer", "learned_operator", "kalman")


def error_measure(x_hat, x_true) -> float:
    """Relative Frobenius prediction error against the ground truth."""
    a = x_hat.matrix if isinstance(x_hat, StateMatrix) else np.asarray(x_hat, float)
    b = x_true.matrix if isinstance(x_true, StateMatrix) else np.asarray(x_true, float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    den = float(np.linalg.norm(b))
    if den == 0:
        raise ValidationError("ground truth has zero norm")
    return float(np.linalg.norm(a - b) / den)


def upper_bound_series(snapshots: Sequence[StateMatrix]) -> np.ndarray:
    """Relative change between consecutive true states: the no-change error."""
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ValidationError("the upper bound needs at least 2 snapshots")
    return np.array([error_measure(a.matrix, b.matrix) for a, b in zip(snaps, snaps[1:])])


def parse_method(name: str) -> tuple[str, float | None]:
    if name.startswith("kalman:"):
        fraction = float(name.split(":", 1)[1])
        if not 0 < fraction <= 1:
            raise ValidationError(f"kalman fraction must lie in (0, 1], got {fraction}")
        return "kalman", fraction
    if name == "kalman":
        raise ValidationError("kalman method needs a fraction, e.g. 'kalman:0.25'")
    if name not in METHOD_KINDS:
        raise ValidationError(f"unknown method {name!r}")
    return name, None


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...]
    synthetic: SyntheticSpec | None = None
    network_file: str | None = None
    snapshots_file: str | None = None
    train_count: int | None = None
    seed: int = 0
    gain: float | None = None
    learn_threshold: float | None = None
    max_iters: int = 200
    fit_max_sweeps: int = 12
    kalman_r: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ValidationError("an experiment needs at least one method")
        for name in self.methods:
            parse_method(name)
        if self.synthetic is None and (self.network_file is None or self.snapshots_file is None):
            raise ValidationError("config needs either a synthetic spec or network+snapshot files")


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    synthetic = None
    if "synthetic" in data:
        synthetic = synthetic_spec_from_dict(data["synthetic"])
    return ExperimentConfig(
        methods=tuple(data.get("methods", ())),
        synthetic=synthetic,
        network_file=data.get("network"),
        snapshots_file=data.get("snapshots"),
        train_count=int(data["train_count"]) if data.get("train_count") is not None else None,
        seed=int(data.get("seed", 0)),
        gain=float(data["gain"]) if data.get("gain") is not None else None,
        learn_threshold=(
            float(data["learn_threshold"]) if data.get("learn_threshold") is not None else None
        ),
        max_iters=int(data.get("max_iters", 200)),
        fit_max_sweeps=int(data.get("fit_max_sweeps", 12)),
        kalman_r=float(data.get("kalman_r", 1e-6)),
    )


@dataclass
class ExperimentResult:
    times: np.ndarray
    upper_bound: np.ndarray
    curves: dict[str, np.ndarray]
    mean_errors: dict[str, float]
    improvements: dict[str, float]
    diagnostics: dict[str, object]


def _evaluation_layer(network: InterconnectedNetwork) -> int:
    for layer in network.layers:
        if layer.kind is LayerKind.AGENT:
            return layer.layer_id
    return network.layers[0].layer_id


def _single_layer_network(network: InterconnectedNetwork, layer_id: int) -> InterconnectedNetwork:
    return InterconnectedNetwork(
        layers=(network.layer(layer_id),), couplings=(), symmetric=network.symmetric
    )


def _block_series(
    series: SnapshotSeries, network: InterconnectedNetwork, layer_id: int
) -> tuple[InterconnectedNetwork, SnapshotSeries]:
    sub = _single_layer_network(network, layer_id)
    sl = network.layer_slices[layer_id]
    snaps = tuple(
        StateMatrix(matrix=s.matrix[sl], node_index=dict(sub.node_index), timestamp=s.timestamp)
        for s in series.snapshots
    )
    return sub, SnapshotSeries(snapshots=snaps, train_count=series.train_count)


def _pair_errors(predictions: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([error_measure(p, t) for p, t in zip(predictions, targets)])


def _load_inputs(config: ExperimentConfig):
    if config.synthetic is not None:
        network, series, truth = generate_synthetic(config.synthetic, config.seed)
    else:
        network, _ = load_network(config.network_file)
        snaps = read_states_csv(config.snapshots_file, network)
        series = SnapshotSeries(snapshots=tuple(snaps), train_count=config.train_count)
        truth = None
    if config.train_count is not None and series.train_count != config.train_count:
        series = SnapshotSeries(snapshots=series.snapshots, train_count=config.train_count)
    return network, series, truth


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every configured method and collect per-step and time-averaged errors."""
    network, series, _ = _load_inputs(config)
    if len(series.train_snapshots()) < 2:
        raise ValidationError("experiments need at least 2 training snapshots")
    test_pairs = series.test_pairs()
    if not test_pairs:
        raise ValidationError("experiments need at least 1 test transition")

    layer_id = _evaluation_layer(network)
    block = network.layer_slices[layer_id]
    times = np.array([b.timestamp for _, b, _ in test_pairs])
    block_targets = [b.matrix[block] for _, b, _ in test_pairs]
    bound = np.array(
        [error_measure(a.matrix[block], b.matrix[block]) for a, b, _ in test_pairs]
    )

    curves: dict[str, np.ndarray] = {}
    diagnostics: dict[str, object] = {}
    multilayer_fit: DiffusionFit | None = None
    learned: LearnedOperator | None = None

    def ensure_multilayer_fit() -> DiffusionFit:
        nonlocal multilayer_fit
        if multilayer_fit is None:
            multilayer_fit = fit_diffusion_constants(
                series, network, max_sweeps=config.fit_max_sweeps
            )
            diagnostics["multilayer_fit"] = multilayer_fit
        return multilayer_fit

    def ensure_learned() -> LearnedOperator:
        nonlocal learned
        if learned is None:
            fit = ensure_multilayer_fit()
            supra = assemble_supra_laplacian(network, fit.constants)
            threshold = config.learn_threshold
            if threshold is None:
                # Stop the rank-1 updates at the noise floor instead of
                # chasing the Brownian innovations in the training pairs.
                mean_dt = float(np.mean([dt for _, _, dt in series.train_pairs()]))
                noise_floor = 1.5 * float(np.linalg.norm(fit.sigma)) * np.sqrt(mean_dt)
                inputs_norm = float(
                    np.mean([np.linalg.norm(a.matrix) for a, _, _ in series.train_pairs()])
                )
                threshold = max(1e-3 * inputs_norm, noise_floor)
            learned = learn_supra_operator(
                series,
                supra,
                gain=config.gain,
                threshold=threshold,
                max_iters=config.max_iters,
            )
            diagnostics["learned_operator"] = learned
        return learned

    kalman_fractions = [parse_method(m)[1] for m in config.methods if m.startswith("kalman")]
    masks = nested_masks(network.n_nodes, kalman_fractions, config.seed) if kalman_fractions else {}

    for name in config.methods:
        kind, fraction = parse_method(name)
        if kind == "single_layer":
            sub, sub_series = _block_series(series, network, layer_id)
            fit = fit_diffusion_constants(sub_series, sub, max_sweeps=config.fit_max_sweeps)
            diagnostics["single_layer_fit"] = fit
            supra = assemble_supra_laplacian(sub, fit.constants)
            predictions = [
                propagate_closed(a.matrix[block], supra, dt) for a, _, dt in test_pairs
            ]
            curves[name] = _pair_errors(predictions, block_targets)
        elif kind == "multilayer":
            supra = assemble_supra_laplacian(network, ensure_multilayer_fit().constants)
            predictions = [
                propagate_closed(a.matrix, supra, dt)[block] for a, _, dt in test_pairs
            ]
            curves[name] = _pair_errors(predictions, block_targets)
        elif kind == "learned_operator":
            op = ensure_learned()
            predictions = [one_step_predict_learned(op, a.matrix)[block] for a, _, _ in test_pairs]
            curves[name] = _pair_errors(predictions, block_targets)
        else:
            op = ensure_learned()
            model = ObservationModel.build(
                n_nodes=network.n_nodes,
                n_topics=series.n_topics,
                observed_nodes=masks[fraction],
                r_observed=config.kalman_r,
                q_diag=op.residual_variance,
            )
            # The filter starts from the exactly-known boundary snapshot, so
            # its initial covariance is zero; uncertainty then grows by Q per
            # step.
            result = run_filter(series, op, model, pi0=0.0)
            diagnostics[name] = result
            predictions = [p[block] for p in result.predictions]
            curves[name] = _pair_errors(predictions, block_targets)

    mean_errors = {name: float(c.mean()) for name, c in curves.items()}
    improvements: dict[str, float] = {}
    if "single_layer" in mean_errors and mean_errors["single_layer"] > 0:
        base = mean_errors["single_layer"]
        improvements = {
            name: float((base - err) / base)
            for name, err in mean_errors.items()
            if name != "single_layer"
        }

    result = ExperimentResult(
        times=times,
        upper_bound=bound,
        curves=curves,
        mean_errors=mean_errors,
        improvements=improvements,
        diagnostics=diagnostics,
    )
    if out_dir is not None:
        write_experiment_outputs(out_dir, config, result)
    return result


def write_experiment_outputs(out_dir, config: ExperimentConfig, result: ExperimentResult):
    os.makedirs(out_dir, exist_ok=True)
    errors_path = os.path.join(out_dir, "errors.csv")
    tmp = f"{errors_path}.tmp"
    with open(tmp, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "t", "upper_bound"] + list(config.methods))
        for i, t in enumerate(result.times):
            row = [i + 1, repr(float(t)), repr(float(result.upper_bound[i]))]
            row += [repr(float(result.curves[m][i])) for m in config.methods]
            writer.writerow(row)
    os.replace(tmp, errors_path)

    summary_path = os.path.join(out_dir, "summary.csv")
    tmp = f"{summary_path}.tmp"
    with open(tmp, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "mean_error", "improvement_vs_single_layer"])
        writer.writerow(["upper_bound", repr(float(result.upper_bound.mean())), ""])
        for name in config.methods:
            improvement = result.improvements.get(name)
            writer.writerow(
                [
                    name,
                    repr(result.mean_errors[name]),
                    "" if improvement is None else repr(improvement),
                ]
            )
    os.replace(tmp, summary_path)

    replot_errors_csv(errors_path, os.path.join(out_dir, "errors.svg"))


def replot_errors_csv(csv_path, svg_path):
    """Rebuild the error chart from an errors.csv table.

    Plotting from the re-read table (rather than in-memory arrays) keeps the
    CSV the interface of record: re-reading and re-plotting reproduces the
    SVG byte for byte.
    """
    with open(csv_path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [row for row in reader if row]
    if header[:3] != ["step", "t", "upper_bound"]:
        raise ValidationError(f"{csv_path} is not an experiment errors table")
    times = [float(row[1]) for row in rows]
    series = [
        (name, times, [float(row[col]) for row in rows])
        for col, name in enumerate(header[2:], start=2)
    ]
    line_chart(
        svg_path,
        series,
        title="Prediction error by method",
        x_label="time",
        y_label="relative error",
    )


# --- Parameter sweeps -------------------------------------------------------------


def external_influence_sweep(
    specs: Sequence[SyntheticSpec], seed: int, out_dir=None, fit_max_sweeps: int = 8
) -> list[tuple[int, float]]:
    """Fitted noise-to-state ratio across network sizes (fixed noise source)."""
    if len(specs) < 2:
        raise ValidationError("the size sweep needs at least 2 sizes")
    rows = []
    for spec in specs:
        network, series, _ = generate_synthetic(spec, seed)
        fit = fit_diffusion_constants(series, network, max_sweeps=fit_max_sweeps)
        x0 = series.snapshots[0].matrix
        ratio = float(np.linalg.norm(fit.sigma) / np.linalg.norm(x0))
        rows.append((network.n_nodes, ratio))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "external_influence.csv")
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["n_nodes", "fitted_sigma_ratio"])
            for n, ratio in rows:
                writer.writerow([n, repr(ratio)])
        os.replace(tmp, path)
        line_chart(
            os.path.join(out_dir, "external_influence.svg"),
            [("fitted ratio", [float(n) for n, _ in rows], [r for _, r in rows])],
            title="External influence vs. network size",
            x_label="nodes",
            y_label="|sigma| / |X0|",
        )
    return rows


def coupling_strength_sweep(
    spec: SyntheticSpec, epsilons: Sequence[float], seed: int, out_dir=None
) -> list[tuple[float, float, float]]:
    """Multilayer prediction error as the inter-layer coupling is rescaled.

    Data are planted at full coupling; the predictor scales the inter-layer
    part by each epsilon.  At epsilon 0 the multilayer predictor degenerates
    to independent layers and matches the single-layer error exactly.
    """
    network, series, truth = generate_synthetic(spec, seed)
    supra = assemble_supra_laplacian(network, truth.constants)
    layer_id = _evaluation_layer(network)
    block = network.layer_slices[layer_id]
    test_pairs = series.test_pairs()
    if not test_pairs:
        raise ValidationError("the coupling sweep needs at least 1 test transition")
    block_targets = [b.matrix[block] for _, b, _ in test_pairs]

    sub = _single_layer_network(network, layer_id)
    sub_constants = DiffusionConstants(
        intra={layer_id: truth.constants.intra_for(layer_id)}, inter={}, symmetric=True
    )
    sub_supra = assemble_supra_laplacian(sub, sub_constants)
    single_error = float(
        _pair_errors(
            [propagate_closed(a.matrix[block], sub_supra, dt) for a, _, dt in test_pairs],
            block_targets,
        ).mean()
    )

    rows = []
    for epsilon in epsilons:
        scaled = scale_inter_layer(supra, epsilon)
        predictions = [propagate_closed(a.matrix, scaled, dt)[block] for a, _, dt in test_pairs]
        rows.append(
            (float(epsilon), float(_pair_errors(predictions, block_targets).mean()), single_error)
        )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "coupling_strength.csv")
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epsilon", "multilayer_error", "single_layer_error"])
            for eps, multi, single in rows:
                writer.writerow([repr(eps), repr(multi), repr(single)])
        os.replace(tmp, path)
        line_chart(
            os.path.join(out_dir, "coupling_strength.svg"),
            [
                ("multilayer", [r[0] for r in rows], [r[1] for r in rows]),
                ("single layer", [r[0] for r in rows], [r[2] for r in rows]),
            ],
            title="Prediction error vs. inter-layer strength",
            x_label="epsilon",
            y_label="relative error",
        )
    return rows
