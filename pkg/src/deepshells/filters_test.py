import logging
import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from scipy.spatial import cKDTree

from deepshells.errors import CacheFormatError, DimensionMismatchError, NonFiniteError
from deepshells.filters import (
    Activation,
    BankShape,
    FilterBank,
    apply_filters,
    build_frequency_basis,
    extract_features,
    init_filter_stack,
    init_filterbank,
    read_filterbanks,
    write_filterbanks,
)
from deepshells.mesh import normalize_mesh
from deepshells.mesh.synthetic import make_icosphere
from deepshells.numerics import as_tensor
from deepshells.shot import FeatureMap
from deepshells.spectral import SpectralBasis, build_laplacian, eigendecompose

T = 2e4


@pytest.fixture(scope="module")
def blob_basis(tiny_blob):
    return eigendecompose(build_laplacian(tiny_blob), tiny_blob.n_vertices)


def random_features(n, channels, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureMap(as_tensor(rng.normal(size=(n, channels))))


def test_frequency_basis_closed_form():
    B = build_frequency_basis([0, T / 2, T], J=2, T=T).values.numpy()
    assert B == pytest.approx(np.array([[1, 1], [1, 0], [1, -1]]), abs=1e-12)


def test_single_cosine_is_all_ones():
    B = build_frequency_basis([0, 10, 300], J=1, T=T).values
    assert torch.equal(B, torch.ones(3, 1, dtype=torch.float64))


def test_third_harmonic_at_a_third():
    B = build_frequency_basis([T / 3], J=4, T=T).values
    assert float(B[0, 3]) == pytest.approx(-1, abs=1e-12)


@pytest.mark.parametrize(
    ("eigenvalues", "extent"),
    (([0, 1], 0), ([0, 1], -5), ([-1, 2], T), ([0, 1.6 * T], T)),
)
def test_frequency_basis_rejects(eigenvalues, extent):
    with pytest.raises(ValueError):
        build_frequency_basis(eigenvalues, J=4, T=extent)


def test_eigenvalues_beyond_extent_warn(caplog):
    with caplog.at_level(logging.WARNING):
        build_frequency_basis([0, 1.2 * T], J=4, T=T)
    assert "exceed" in caplog.text


def test_zero_weights_give_zero(tiny_blob, blob_basis):
    bank = FilterBank(torch.zeros(5, 3, 4, dtype=torch.float64), k_conv=20)
    features = random_features(tiny_blob.n_vertices, 3)
    G = apply_filters(bank, blob_basis, tiny_blob.vertex_areas, features)
    assert G.values.shape == (tiny_blob.n_vertices, 5)
    assert torch.count_nonzero(G.values) == 0


def test_constant_filter_is_a_low_pass(tiny_blob, blob_basis):
    weights = torch.zeros(1, 1, 3, dtype=torch.float64)
    weights[0, 0, 0] = 1
    bank = FilterBank(weights, activation=Activation.IDENTITY, k_conv=10)
    features = random_features(tiny_blob.n_vertices, 1)
    G = apply_filters(bank, blob_basis, tiny_blob.vertex_areas, features).values
    phi = blob_basis.phi(10)
    weighted = as_tensor(tiny_blob.vertex_areas)[:, None] * features.values
    expected = phi @ (phi.T @ weighted)
    assert G.numpy() == pytest.approx(expected.numpy(), abs=1e-12)


def test_matches_explicit_loops():
    n, L_in, L_out, J = 30, 4, 3, 4
    rng = np.random.default_rng(7)
    eigenvalues = np.sort(rng.uniform(0, T, n))
    basis = SpectralBasis(eigenvalues, rng.normal(size=(n, n)))
    mass = rng.uniform(0.5, 1.5, n)
    F = rng.normal(size=(n, L_in))
    gamma = rng.normal(size=(L_out, L_in, J))
    bank = FilterBank(as_tensor(gamma), activation=Activation.IDENTITY, k_conv=n)

    G = apply_filters(bank, basis, mass, FeatureMap(as_tensor(F))).values.numpy()

    phi = basis.eigenvectors
    expected = np.zeros((n, L_out))
    for o in range(L_out):
        for l in range(L_in):
            for i in range(n):
                response = sum(
                    math.cos(eigenvalues[i] * math.pi * j / T) * gamma[o, l, j]
                    for j in range(J)
                )
                coefficient = sum(phi[v, i] * mass[v] * F[v, l] for v in range(n))
                for x in range(n):
                    expected[x, o] += phi[x, i] * response * coefficient
    assert np.abs(G - expected).max() <= 1e-10 * max(1.0, np.abs(expected).max())


def test_linear_before_activation(tiny_blob, blob_basis):
    n = tiny_blob.n_vertices
    mass = tiny_blob.vertex_areas
    first = init_filterbank(1, BankShape(4, 6, 5, T, Activation.IDENTITY, 30))
    second = init_filterbank(2, BankShape(4, 6, 5, T, Activation.IDENTITY, 30))
    F1, F2 = random_features(n, 6, 1), random_features(n, 6, 2)

    def run(bank, F):
        return apply_filters(bank, blob_basis, mass, F).values

    combined = run(first, FeatureMap(F1.values + 2 * F2.values))
    assert torch.allclose(combined, run(first, F1) + 2 * run(first, F2), atol=1e-10)
    summed_bank = first.with_weights(first.weights + second.weights)
    assert torch.allclose(
        run(summed_bank, F1), run(first, F1) + run(second, F1), atol=1e-10
    )


def test_relu_output_is_nonnegative(tiny_blob, blob_basis):
    bank = init_filterbank(0, BankShape(8, 6, 4, T, Activation.RELU, 30))
    features = random_features(tiny_blob.n_vertices, 6)
    G = apply_filters(bank, blob_basis, tiny_blob.vertex_areas, features).values
    assert bool((G >= 0).all())
    assert bool((G > 0).any())


def test_dimension_checks(tiny_blob, blob_basis):
    bank = init_filterbank(0, BankShape(2, 3, 4, T, Activation.RELU, 20))
    mass = tiny_blob.vertex_areas
    with pytest.raises(DimensionMismatchError):
        apply_filters(bank, blob_basis, mass, random_features(tiny_blob.n_vertices, 4))
    with pytest.raises(DimensionMismatchError):
        apply_filters(bank, blob_basis, mass, random_features(10, 3))


def test_wide_banks_use_the_available_eigenfunctions(tiny_blob, blob_basis, caplog):
    wide = init_filterbank(0, BankShape(2, 3, 4, T, Activation.RELU, 97))
    fitting = replace(wide, k_conv=blob_basis.K)
    mass = tiny_blob.vertex_areas
    features = random_features(tiny_blob.n_vertices, 3)
    with caplog.at_level(logging.WARNING):
        G = apply_filters(wide, blob_basis, mass, features).values
    assert "k_conv=97" in caplog.text
    expected = apply_filters(fitting, blob_basis, mass, features).values
    assert torch.equal(G, expected)


def test_non_finite_weights_rejected(tiny_blob, blob_basis):
    weights = torch.zeros(2, 3, 4, dtype=torch.float64)
    weights[1, 2, 0] = float("nan")
    with pytest.raises(NonFiniteError):
        apply_filters(
            FilterBank(weights, k_conv=10),
            blob_basis,
            tiny_blob.vertex_areas,
            random_features(tiny_blob.n_vertices, 3),
        )


def test_init_is_deterministic_and_bounded():
    shape = BankShape()
    first, second = init_filterbank(3, shape), init_filterbank(3, shape)
    assert torch.equal(first.weights, second.weights)
    assert first.weights.shape == (120, 352, 16)
    assert shape.init_bound == pytest.approx(0.0282, abs=1e-4)
    assert float(first.weights.abs().max()) <= shape.init_bound
    assert not torch.equal(first.weights, init_filterbank(4, shape).weights)


def test_filter_stack_chains(tiny_blob, blob_basis):
    shapes = [
        BankShape(5, 3, 4, T, Activation.RELU, 20),
        BankShape(2, 5, 4, T, Activation.IDENTITY, 20),
    ]
    banks = init_filter_stack(0, shapes)
    features = random_features(tiny_blob.n_vertices, 3)
    G = extract_features(banks, blob_basis, tiny_blob.vertex_areas, features)
    assert G.channels == 2
    with pytest.raises(DimensionMismatchError):
        init_filter_stack(0, shapes[::-1])


def test_discretization_robustness():
    coarse, fine = normalize_mesh(make_icosphere(3)), normalize_mesh(make_icosphere(4))
    # all spherical harmonics up to degree 4
    bank = init_filterbank(5, BankShape(4, 6, 4, T, Activation.IDENTITY, 25))

    def run(mesh):
        basis = eigendecompose(build_laplacian(mesh), 25)
        x, y, z = (mesh.vertices / np.abs(mesh.vertices).max()).T
        F = np.stack([x, y, z, x * x - y * y, x * y, z * z], axis=1)
        return apply_filters(bank, basis, mesh.vertex_areas, FeatureMap(as_tensor(F)))

    coarse_values = run(coarse).values.numpy()
    fine_values = run(fine).values.numpy()
    _, nearest = cKDTree(fine.vertices).query(coarse.vertices)
    difference = coarse_values - fine_values[nearest]
    relative_rms = np.sqrt((difference**2).mean() / (coarse_values**2).mean())
    assert relative_rms <= 0.1


def test_checkpoint_round_trip(tmp_path):
    banks = init_filter_stack(
        9,
        [
            BankShape(4, 6, 3, T, Activation.RELU, 30),
            BankShape(2, 4, 5, 1e4, Activation.IDENTITY, 12),
        ],
    )
    path = tmp_path / "weights.dshl"
    write_filterbanks(path, banks)
    raw = path.read_bytes()
    assert raw[:4] == b"DSHL"
    header = 4 + 4 * 4 + 8 + 1 + 4
    assert len(raw) == 2 * header + 4 * (4 * 6 * 3 + 2 * 4 * 5)

    restored = read_filterbanks(path)
    assert [bank.shape for bank in restored] == [bank.shape for bank in banks]
    for original, loaded in zip(banks, restored):
        assert torch.equal(loaded.weights, original.weights.float().double())


def test_checkpoint_with_bad_magic(tmp_path):
    path = tmp_path / "weights.dshl"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(CacheFormatError):
        read_filterbanks(path)
