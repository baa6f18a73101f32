"""Fitting diffusion constants and learning the full diffusion operator.

Two calibration routes work from snapshot histories:

* ``fit_diffusion_constants`` minimizes the summed squared Frobenius mismatch
  between each snapshot and the closed-system propagation of its predecessor,
  over the (few) nonnegative intra/inter constants, by coordinate descent with
  golden-section line searches.  The Brownian scale is then estimated from the
  per-pair residuals.
* ``learn_supra_operator`` learns a dense PT x PT operator for the vectorized
  one-step map x(t+1) ~ e^{A} x(t), starting from the Kronecker lift of the
  assembled supra-Laplacian and applying the rank-1 correction
  A <- A + gain * (x(t+1) - x_hat(t+1)) x(t)^T per training pair.  The learned
  operator is kept fully general, not projected back to Kronecker structure.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .diffusion import matrix_exponential, _state_array
from .network import DiffusionConstants, InterconnectedNetwork, SupraLaplacian, assemble_supra_laplacian
from .states import StateMatrix

#: Largest vectorized dimension (node count x topic count) for which the dense
#: operator exponential stays tractable at desk scale.
MAX_LEARN_DIM = 4000

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SnapshotSeries:
    """Time-ordered state snapshots with a training/test split marker.

    The first ``train_count`` snapshots form the learning range; the test
    range starts at the last training snapshot, which serves as the known
    initial state for test-time prediction.
    """

    snapshots: tuple[StateMatrix, ...]
    train_count: int | None = None

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        object.__setattr__(self, "snapshots", snaps)
        if not snaps:
            raise ValidationError("a snapshot series needs at least one snapshot")
        shape = snaps[0].matrix.shape
        for a, b in zip(snaps, snaps[1:]):
            if b.timestamp <= a.timestamp:
                raise ValidationError("snapshot timestamps must be strictly increasing")
            if b.matrix.shape != shape:
                raise ValidationError("snapshots must share one P x T shape")
        count = len(snaps) if self.train_count is None else int(self.train_count)
        if not 1 <= count <= len(snaps):
            raise ValidationError(f"train_count {count} out of range for {len(snaps)} snapshots")
        object.__setattr__(self, "train_count", count)

    @property
    def n_nodes(self) -> int:
        return self.snapshots[0].n_nodes

    @property
    def n_topics(self) -> int:
        return self.snapshots[0].n_topics

    def train_snapshots(self) -> tuple[StateMatrix, ...]:
        return self.snapshots[: self.train_count]

    def test_snapshots(self) -> tuple[StateMatrix, ...]:
        return self.snapshots[self.train_count - 1 :]

    def train_pairs(self) -> list[tuple[StateMatrix, StateMatrix, float]]:
        return _pairs(self.train_snapshots())

    def test_pairs(self) -> list[tuple[StateMatrix, StateMatrix, float]]:
        return _pairs(self.test_snapshots())


def _pairs(snaps: Sequence[StateMatrix]):
    return [
        (a, b, b.timestamp - a.timestamp) for a, b in zip(snaps, snaps[1:])
    ]


def vectorize(x) -> np.ndarray:
    """Column-stack a P x T state matrix into a length-PT vector."""
    return _state_array(x).flatten(order="F")


def devectorize(v, n_nodes: int, n_topics: int) -> np.ndarray:
    """Inverse of ``vectorize``: restore the P x T matrix."""
    vec = np.asarray(v, dtype=float)
    if vec.size != n_nodes * n_topics:
        raise ValidationError(
            f"vector of length {vec.size} cannot form a {n_nodes} x {n_topics} matrix"
        )
    return vec.reshape((n_nodes, n_topics), order="F")


# --- Diffusion-constant fitting -------------------------------------------------


@dataclass
class DiffusionFit:
    """Result of a diffusion-constant fit."""

    constants: DiffusionConstants
    sigma: np.ndarray
    objective: float
    objective_trace: tuple[float, ...]
    sweeps: int
    converged: bool
    identifiable: bool


def _golden_min(f: Callable[[float], float], lo: float, hi: float, xtol: float) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _free_parameters(network: InterconnectedNetwork) -> list[tuple]:
    keys: list[tuple] = [("intra", layer.layer_id) for layer in network.layers]
    for coupling in network.couplings:
        pair = (coupling.from_layer, coupling.to_layer)
        if network.symmetric:
            pair = tuple(sorted(pair))
        key = ("inter", pair)
        if key not in keys:
            keys.append(key)
    return keys


def _constants_from_vector(keys: Sequence[tuple], values, symmetric: bool) -> DiffusionConstants:
    intra: dict[int, float] = {}
    inter: dict[tuple[int, int], float] = {}
    for key, value in zip(keys, values):
        if key[0] == "intra":
            intra[key[1]] = float(value)
        else:
            inter[key[1]] = float(value)
    return DiffusionConstants(intra=intra, inter=inter, symmetric=symmetric)


def fit_diffusion_constants(
    series: SnapshotSeries,
    network: InterconnectedNetwork,
    *,
    d_max: float = 10.0,
    min_sweeps: int = 2,
    max_sweeps: int = 60,
    init_value: float = 1.0,
) -> DiffusionFit:
    """Fit nonnegative diffusion constants to a training snapshot series.

    Coordinate descent sweeps each constant with a golden-section search on
    [0, d_max], accepting a move only when it lowers the objective; the
    objective value is therefore non-increasing across sweeps.  On a flat
    (zero) objective the initialization is returned and the fit is flagged
    non-identifiable.  The Brownian scale entry (p, j) is estimated as the
    standard deviation over pairs of residual(p, j) / sqrt(dt).
    """
    pairs = series.train_pairs()
    if len(pairs) < 1:
        raise ValidationError("fitting needs at least 2 training snapshots")
    if series.n_nodes != network.n_nodes:
        raise ValidationError("series and network disagree on the node count")

    keys = _free_parameters(network)
    values = np.full(len(keys), float(init_value))
    groups: dict[float, list[tuple[np.ndarray, np.ndarray]]] = {}
    for a, b, dt in pairs:
        groups.setdefault(round(dt, 12), []).append((a.matrix, b.matrix))

    def objective(vals) -> float:
        constants = _constants_from_vector(keys, vals, network.symmetric)
        supra = assemble_supra_laplacian(network, constants)
        total = 0.0
        for dt, members in groups.items():
            propagator = matrix_exponential(-supra.matrix * dt)
            for xa, xb in members:
                diff = xb - propagator @ xa
                total += float((diff * diff).sum())
        if not np.isfinite(total):
            raise NumericalError(
                f"diffusion-constant objective is non-finite at {dict(zip(keys, vals))}"
            )
        return total

    scale = sum(float((b.matrix**2).sum()) for _, b, _ in pairs)
    current = objective(values)
    trace = [current]
    identifiable = True
    converged = False
    sweeps = 0
    if current <= 1e-15 * max(scale, 1.0):
        # Nothing to fit: the data are already reproduced for the initial
        # constants, so every constant choice is equally good.
        identifiable = False
        converged = True
    else:
        xtol = 1e-10 * d_max
        for sweep in range(max_sweeps):
            before = current
            for idx in range(len(values)):
                def along(v, idx=idx):
                    trial = values.copy()
                    trial[idx] = v
                    return objective(trial)

                best_v, best_f = _golden_min(along, 0.0, d_max, xtol)
                if best_f < current:
                    values[idx] = best_v
                    current = best_f
            sweeps = sweep + 1
            trace.append(current)
            if current <= 1e-18 * max(scale, 1.0):
                converged = True
                break
            if sweeps >= min_sweeps and before - current <= 1e-14 * max(scale, 1.0):
                converged = True
                break

    constants = _constants_from_vector(keys, values, network.symmetric)
    supra = assemble_supra_laplacian(network, constants)
    residuals = np.stack(
        [
            (b.matrix - matrix_exponential(-supra.matrix * dt) @ a.matrix) / math.sqrt(dt)
            for a, b, dt in pairs
        ]
    )
    if len(pairs) > 1:
        sigma = residuals.std(axis=0, ddof=1)
    else:
        # A single zero-mean observation: its magnitude is the scale estimate.
        sigma = np.abs(residuals[0])
    return DiffusionFit(
        constants=constants,
        sigma=sigma,
        objective=current,
        objective_trace=tuple(trace),
        sweeps=sweeps,
        converged=converged,
        identifiable=identifiable,
    )


# --- Operator learning -----------------------------------------------------------


@dataclass
class LearnedOperator:
    """Dense one-step operator learned on the vectorized state.

    ``lambda_hat`` is PT x PT; the one-step prediction is
    e^{lambda_hat} @ vectorize(X).  ``iteration_log`` records the pair error
    measured just before each rank-1 update (or the initial evaluation when
    the fit converges immediately); ``residual_variance`` holds per-coordinate
    variances of the final training residuals, used downstream as the default
    process-noise diagonal.
    """

    lambda_hat: np.ndarray
    gain: float
    threshold: float
    iteration_log: tuple[float, ...]
    n_nodes: int
    n_topics: int
    iterations: int
    converged: bool
    initial_error: float
    final_error: float
    residual_variance: np.ndarray

    @cached_property
    def transition(self) -> np.ndarray:
        """Cached e^{lambda_hat}."""
        return matrix_exponential(self.lambda_hat)


def kronecker_lift(supra: SupraLaplacian, n_topics: int) -> np.ndarray:
    """PT x PT generator acting like -L on every topic column of the state."""
    return np.kron(np.eye(int(n_topics)), -supra.matrix)


def learn_supra_operator(
    series: SnapshotSeries,
    init: SupraLaplacian,
    gain: float | None = None,
    threshold: float | None = None,
    max_iters: int = 500,
) -> LearnedOperator:
    """Learn the dense one-step operator from training pairs by rank-1 updates.

    Starts from the Kronecker lift of ``init``.  Each iteration predicts one
    pair with the current operator exponential and adds
    gain * outer(target - prediction, input).  The loop stops once every
    training pair's error norm falls below the threshold, or at ``max_iters``
    updates.  Defaults: gain = 1e-3 / mean squared input norm, threshold =
    1e-3 * mean input norm.
    """
    pairs = series.train_pairs()
    if not pairs:
        raise ValidationError("operator learning needs at least 2 training snapshots")
    n_nodes, n_topics = series.n_nodes, series.n_topics
    if init.n_nodes != n_nodes:
        raise ValidationError("initial operator and series disagree on the node count")
    dim = n_nodes * n_topics
    if dim > MAX_LEARN_DIM:
        raise ValidationError(
            f"vectorized dimension {dim} exceeds the dense learning cap {MAX_LEARN_DIM}"
        )

    inputs = [vectorize(a) for a, _, _ in pairs]
    targets = [vectorize(b) for _, b, _ in pairs]
    mean_sq = float(np.mean([v @ v for v in inputs]))
    if gain is None:
        gain = 1e-3 / max(mean_sq, 1e-12)
    gain = float(gain)
    if not gain >= 0:
        raise ValidationError("gain must be >= 0")
    if threshold is None:
        threshold = 1e-3 * float(np.mean([np.linalg.norm(v) for v in inputs]))
    threshold = float(threshold)

    lam = kronecker_lift(init, n_topics)

    def pair_errors(operator: np.ndarray) -> np.ndarray:
        propagator = matrix_exponential(operator)
        return np.array(
            [np.linalg.norm(t - propagator @ x) for x, t in zip(inputs, targets)]
        )

    def checked_errors(operator: np.ndarray, at_iteration: int) -> np.ndarray:
        try:
            return pair_errors(operator)
        except NumericalError as exc:
            raise NumericalError(
                f"operator update diverged at iteration {at_iteration}; "
                f"reduce the gain ({exc})"
            ) from None

    log: list[float] = []
    iterations = 0
    converged = False
    initial_error = None
    while True:
        errors = checked_errors(lam, iterations)
        if initial_error is None:
            initial_error = float(errors.max())
        if errors.max() < threshold:
            converged = True
            if not log:
                log.append(float(errors.max()))
            break
        if iterations >= max_iters:
            break
        for x, t in zip(inputs, targets):
            try:
                prediction = matrix_exponential(lam) @ x
            except NumericalError as exc:
                raise NumericalError(
                    f"operator update diverged at iteration {iterations}; "
                    f"reduce the gain ({exc})"
                ) from None
            residual = t - prediction
            log.append(float(np.linalg.norm(residual)))
            lam = lam + gain * np.outer(residual, x)
            iterations += 1
            if not np.isfinite(lam).all():
                raise NumericalError(
                    f"operator update diverged at iteration {iterations}; reduce the gain"
                )
            if iterations >= max_iters:
                break

    try:
        final_propagator = matrix_exponential(lam)
    except NumericalError as exc:
        raise NumericalError(
            f"operator update diverged at iteration {iterations}; reduce the gain ({exc})"
        ) from None
    final_residuals = np.stack(
        [t - final_propagator @ x for x, t in zip(inputs, targets)]
    )
    final_error = float(np.linalg.norm(final_residuals, axis=1).max())
    ddof = 1 if len(pairs) > 1 else 0
    residual_variance = final_residuals.var(axis=0, ddof=ddof)
    return LearnedOperator(
        lambda_hat=lam,
        gain=gain,
        threshold=threshold,
        iteration_log=tuple(log),
        n_nodes=n_nodes,
        n_topics=n_topics,
        iterations=iterations,
        converged=converged,
        initial_error=initial_error,
        final_error=final_error,
        residual_variance=residual_variance,
    )


def one_step_predict_learned(op: LearnedOperator, x):
    """Predict the next snapshot with the learned operator exponential."""
    arr = _state_array(x)
    if arr.shape != (op.n_nodes, op.n_topics):
        raise ValidationError(
            f"state shape {arr.shape} does not match the learned operator "
            f"({op.n_nodes} x {op.n_topics})"
        )
    predicted = devectorize(op.transition @ vectorize(arr), op.n_nodes, op.n_topics)
    if isinstance(x, StateMatrix):
        return StateMatrix(matrix=predicted, node_index=dict(x.node_index), timestamp=x.timestamp + 1.0)
    return predicted


# --- Reports ---------------------------------------------------------------------


def write_fit_report(path, fit: DiffusionFit):
    report = {
        "constants": {
            "intra": {str(k): v for k, v in sorted(fit.constants.intra.items())},
            "inter": {f"{a},{b}": v for (a, b), v in sorted(fit.constants.inter.items())},
            "symmetric": fit.constants.symmetric,
        },
        "sigma_summary": {
            "frobenius_norm": float(np.linalg.norm(fit.sigma)),
            "max": float(fit.sigma.max(initial=0.0)),
            "mean": float(fit.sigma.mean()) if fit.sigma.size else 0.0,
        },
        "objective": fit.objective,
        "objective_trace": list(fit.objective_trace),
        "iterations": fit.sweeps,
        "converged": fit.converged,
        "identifiable": fit.identifiable,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
    os.replace(tmp, path)


def write_operator_csv(path, op: LearnedOperator):
    """Dense dump with a shape header line: `# rows=<n> cols=<n>`."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as handle:
        rows, cols = op.lambda_hat.shape
        handle.write(f"# rows={rows} cols={cols}\n")
        for row in op.lambda_hat:
            handle.write(",".join(repr(float(v)) for v in row) + "\n")
    os.replace(tmp, path)


def read_operator_matrix(path) -> np.ndarray:
    with open(path) as handle:
        header = handle.readline().strip()
        if not header.startswith("# rows="):
            raise ValidationError(f"operator file {path} is missing its shape header")
        data = [
            [float(v) for v in line.split(",")] for line in handle if line.strip()
        ]
    return np.asarray(data, dtype=float)
