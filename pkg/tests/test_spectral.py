import numpy as np
import pytest

from supraflow import (
    DiffusionConstants,
    InterconnectedNetwork,
    InterLayerCoupling,
    LayerGraph,
    ValidationError,
    assemble_supra_laplacian,
    connectivity_sweep,
    kernel_rayleigh_quotients,
    lambda2_perturbation_estimate,
    scale_inter_layer,
    spectrum,
)
from supraflow.spectral import write_sweep_csv
from conftest import connected_adjacency, single_layer_supra


from conftest import heterogeneous_network


def two_layer_multiplex(n, rng=None, adjacency=None, coupling_weight=1.0):
    if adjacency is None:
        adjacency = connected_adjacency(rng, n)
    l1 = LayerGraph(1, "agent", tuple(f"a{i}" for i in range(n)), adjacency)
    l2 = LayerGraph(2, "agent", tuple(f"a{i}" for i in range(n)), adjacency)
    network = InterconnectedNetwork(
        layers=(l1, l2),
        couplings=(InterLayerCoupling(1, 2, coupling_weight * np.eye(n)),),
    )
    constants = DiffusionConstants(intra={1: 1.0, 2: 1.0}, inter={(1, 2): 1.0})
    return network, constants


class TestSpectrum:
    def test_path_graph_eigenvalues(self):
        _, supra = single_layer_supra([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        summary = spectrum(supra)
        assert np.abs(summary.eigenvalues - np.array([0.0, 1.0, 3.0])).max() < 1e-12
        assert summary.lambda2 == pytest.approx(1.0)
        assert summary.kernel_dim == 1

    def test_complete_graph_lambda2(self):
        for n in (3, 5, 8):
            _, supra = single_layer_supra(np.ones((n, n)) - np.eye(n))
            assert spectrum(supra).lambda2 == pytest.approx(n, abs=1e-9)

    def test_disconnected_layers_have_kernel_dim_two(self):
        network, constants = two_layer_multiplex(3, rng=np.random.default_rng(0))
        supra = assemble_supra_laplacian(network, constants)
        decoupled = scale_inter_layer(supra, 0.0)
        assert spectrum(decoupled).kernel_dim == 2

    def test_null_basis_spans_intra_kernel(self):
        rng = np.random.default_rng(1)
        network, constants = two_layer_multiplex(4, rng=rng)
        supra = assemble_supra_laplacian(network, constants)
        summary = spectrum(supra)
        assert summary.null_basis.shape == (8, 2)
        assert np.abs(supra.intra_part @ summary.null_basis).max() < 1e-9

    def test_rejects_non_symmetric(self):
        rng = np.random.default_rng(2)
        w = rng.random((4, 4))
        np.fill_diagonal(w, 0.0)
        _, supra = single_layer_supra(w)
        with pytest.raises(ValidationError, match="symmetric"):
            spectrum(supra)


class TestPerturbationEstimate:
    def test_zero_epsilon(self):
        network, constants = two_layer_multiplex(2, adjacency=[[0, 1], [1, 0]])
        supra = assemble_supra_laplacian(network, constants)
        assert lambda2_perturbation_estimate(supra, 0.0) == 0.0

    def test_two_layer_toy_matches_direct_eigendecomposition(self):
        network, constants = two_layer_multiplex(2, adjacency=[[0, 1], [1, 0]])
        supra = assemble_supra_laplacian(network, constants)
        for epsilon in (0.01, 0.005, 0.001):
            estimate = lambda2_perturbation_estimate(supra, epsilon)
            actual = np.linalg.eigvalsh(scale_inter_layer(supra, epsilon).matrix)[1]
            assert abs(estimate - actual) / actual < 0.05

    def test_linear_in_epsilon(self):
        rng = np.random.default_rng(3)
        network, constants = two_layer_multiplex(4, rng=rng)
        supra = assemble_supra_laplacian(network, constants)
        one = lambda2_perturbation_estimate(supra, 1e-3)
        two = lambda2_perturbation_estimate(supra, 2e-3)
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_first_order_error_shrinks_with_epsilon(self):
        rng = np.random.default_rng(4)
        network, constants = heterogeneous_network(rng)
        supra = assemble_supra_laplacian(network, constants)
        ratios = []
        for epsilon in (1e-2, 1e-3, 1e-4):
            actual = np.linalg.eigvalsh(scale_inter_layer(supra, epsilon).matrix)[1]
            estimate = lambda2_perturbation_estimate(supra, epsilon)
            ratios.append(abs(actual - estimate) / epsilon)
        assert ratios[0] > ratios[1] > ratios[2]

    def test_rayleigh_quotients_match_projection_diagonal(self):
        rng = np.random.default_rng(5)
        network, constants = two_layer_multiplex(3, rng=rng)
        supra = assemble_supra_laplacian(network, constants)
        quotients = kernel_rayleigh_quotients(supra, 0.5)
        n = 3
        u1 = np.concatenate([np.ones(n), np.zeros(n)]) / np.sqrt(n)
        u2 = np.concatenate([np.zeros(n), np.ones(n)]) / np.sqrt(n)
        expected = 0.5 * np.array(
            [u1 @ supra.inter_part @ u1, u2 @ supra.inter_part @ u2]
        )
        assert np.abs(quotients - expected).max() < 1e-12

    def test_disconnected_intra_layer_rejected(self):
        l1 = LayerGraph(1, "agent", ("a", "b"), np.zeros((2, 2)))
        l2 = LayerGraph(2, "agent", ("a", "b"), [[0, 1], [1, 0]])
        network = InterconnectedNetwork(
            layers=(l1, l2), couplings=(InterLayerCoupling(1, 2, np.eye(2)),)
        )
        constants = DiffusionConstants(intra={1: 1.0, 2: 1.0}, inter={(1, 2): 1.0})
        supra = assemble_supra_laplacian(network, constants)
        with pytest.raises(ValidationError, match="connected"):
            lambda2_perturbation_estimate(supra, 0.01)

    def test_single_layer_rejected(self):
        _, supra = single_layer_supra([[0, 1], [1, 0]])
        with pytest.raises(ValidationError, match="2 layers"):
            lambda2_perturbation_estimate(supra, 0.01)


class TestConnectivitySweep:
    def test_zero_grid(self):
        network, constants = two_layer_multiplex(2, adjacency=[[0, 1], [1, 0]])
        points = connectivity_sweep(network, constants, [0.0])
        assert points[0].lambda2_actual == pytest.approx(0.0, abs=1e-12)
        assert points[0].lambda2_estimate == 0.0
        assert points[0].rel_error == 0.0

    def test_small_epsilon_grid_accuracy(self):
        rng = np.random.default_rng(6)
        network, constants = two_layer_multiplex(4, rng=rng)
        grid = np.linspace(0.001, 0.01, 10)
        points = connectivity_sweep(network, constants, grid)
        assert max(p.rel_error for p in points) < 0.05

    def test_actual_lambda2_monotone_in_epsilon(self):
        rng = np.random.default_rng(7)
        network, constants = two_layer_multiplex(4, rng=rng)
        grid = np.linspace(0.0, 0.5, 8)
        points = connectivity_sweep(network, constants, grid)
        actual = [p.lambda2_actual for p in points]
        assert all(a <= b + 1e-12 for a, b in zip(actual, actual[1:]))

    def test_csv_output(self, tmp_path):
        network, constants = two_layer_multiplex(2, adjacency=[[0, 1], [1, 0]])
        points = connectivity_sweep(network, constants, [0.0, 0.001, 0.01])
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, points)
        lines = path.read_text().splitlines()
        assert lines[0] == "epsilon,lambda2_actual,lambda2_estimate,rel_error"
        assert len(lines) == 4
