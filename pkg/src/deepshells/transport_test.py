import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from deepshells import settings as deepshells_settings
from deepshells.errors import DimensionMismatchError, NonFiniteError, UserError
from deepshells.transport import (
    CostMatrix,
    MarginalWeights,
    coupling_apply,
    embedding_cost,
    extract_map,
    read_dense_coupling,
    sinkhorn,
    transport_dual,
    transport_energy,
    write_dense_coupling,
)


def tensor(values):
    return torch.tensor(values, dtype=torch.float64)


def random_problem(seed, n_x, n_y, scale=1.0):
    rng = np.random.default_rng(seed)
    cost = CostMatrix(tensor(scale * rng.uniform(size=(n_x, n_y))))
    marginals = MarginalWeights.from_areas(
        rng.uniform(0.5, 1.5, n_x), rng.uniform(0.5, 1.5, n_y)
    )
    return cost, marginals


SWAP = CostMatrix(tensor([[0.0, 1.0], [1.0, 0.0]]))


def permutation_coupling(permutation, lam=0.01):
    n = len(permutation)
    cost = torch.ones(n, n, dtype=torch.float64)
    cost[np.arange(n), permutation] = 0
    return sinkhorn(CostMatrix(cost), MarginalWeights.uniform(n, n), lam, converge=True)


######################################### Costs ########################################


def test_cost_of_unit_vectors():
    unit = torch.eye(2, dtype=torch.float64)
    cost = embedding_cost(unit, unit)
    assert torch.equal(cost.values, tensor([[0, 2], [2, 0]]))


def test_equal_rows_cost_nothing():
    EY = tensor([[0.3, -1.0, 2.0], [1.5, 0.25, -0.75]])
    cost = embedding_cost(EY[1:], EY)
    assert float(cost.values[0, 1]) == 0


def test_cost_matches_triple_loop():
    rng = np.random.default_rng(0)
    EX, EY = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    expected = np.zeros((5, 7))
    for i in range(5):
        for j in range(7):
            for d in range(3):
                expected[i, j] += (EX[i, d] - EY[j, d]) ** 2
    cost = embedding_cost(tensor(EX), tensor(EY))
    assert np.abs(cost.values.numpy() - expected).max() <= 1e-12
    flipped = embedding_cost(tensor(EY), tensor(EX))
    assert torch.equal(flipped.values, cost.values.T)


def test_cost_shape_checks():
    with pytest.raises(DimensionMismatchError):
        embedding_cost(torch.zeros(3, 2), torch.zeros(3, 4))
    with pytest.raises(ValueError):
        embedding_cost(torch.zeros(3, 0), torch.zeros(3, 0))


def test_marginals_are_normalized_areas(blob):
    marginals = MarginalWeights.from_meshes(blob, blob)
    assert float(marginals.a.sum()) == pytest.approx(1, abs=1e-12)
    assert marginals.a.numpy() == pytest.approx(blob.vertex_areas / blob.total_area)


def test_marginals_must_be_positive():
    with pytest.raises(ValueError):
        MarginalWeights(tensor([1.0, 0.0]), tensor([0.5, 0.5]))


####################################### Sinkhorn #######################################


@pytest.mark.parametrize("iters", (1, 3, 10))
def test_zero_cost_gives_product_coupling(iters):
    zero = CostMatrix(torch.zeros(2, 2, dtype=torch.float64))
    corr = sinkhorn(zero, MarginalWeights.uniform(2, 2), lam=0.12, iters=iters)
    assert corr.dense().numpy() == pytest.approx(np.full((2, 2), 0.25), abs=1e-15)


def test_small_entropy_recovers_the_permutation():
    corr = sinkhorn(SWAP, MarginalWeights.uniform(2, 2), lam=0.01, iters=200)
    pi = corr.dense().numpy()
    assert np.diag(pi) == pytest.approx([0.5, 0.5], abs=1e-8)
    assert pi[0, 1] < 1e-8 and pi[1, 0] < 1e-8
    assert list(extract_map(corr)) == [0, 1]


@pytest.mark.parametrize("seed", range(20))
def test_converged_mode_meets_the_marginals(seed):
    rng = np.random.default_rng(seed)
    n_x, n_y = rng.integers(2, 300), rng.integers(2, 400)
    cost, marginals = random_problem(seed, n_x, n_y)
    corr = sinkhorn(cost, marginals, lam=0.12, converge=True)
    assert corr.iterations <= 500
    assert corr.marginal_residual() <= 1e-6
    pi = corr.dense()
    assert bool((pi >= 0).all()) and bool((pi <= 1).all())


def test_fixed_iterations_run_exactly():
    cost, marginals = random_problem(1, 30, 40)
    assert sinkhorn(cost, marginals, lam=0.12, iters=10).iterations == 10


def test_log_domain_survives_extreme_costs():
    cost, marginals = random_problem(2, 50, 60, scale=1e6)
    corr = sinkhorn(cost, marginals, lam=1e-3, iters=10)
    assert bool(torch.isfinite(corr.f).all()) and bool(torch.isfinite(corr.g).all())
    assert bool(torch.isfinite(corr.dense()).all())


def test_cost_shift_leaves_the_coupling_alone():
    cost, marginals = random_problem(3, 20, 25)
    shifted = CostMatrix(cost.values + 5.0)
    original = sinkhorn(cost, marginals, lam=0.12).dense()
    moved = sinkhorn(shifted, marginals, lam=0.12).dense()
    assert float((original - moved).abs().max()) <= 1e-10


@settings(max_examples=10)
@given(seed=st.integers(0, 2**16), iters=st.integers(1, 15))
def test_swapping_sides_transposes_the_coupling(seed, iters):
    cost, marginals = random_problem(seed, 12, 17)
    forward = sinkhorn(cost, marginals, lam=0.12, iters=iters)
    backward = sinkhorn(
        cost.T, marginals.transposed(), lam=0.12, iters=iters, start="y"
    )
    assert float((forward.dense() - backward.dense().T).abs().max()) <= 1e-10


def test_large_entropy_approaches_the_product_coupling():
    cost, marginals = random_problem(4, 15, 18)
    lam = 1e4 * float(cost.values.max())
    pi = sinkhorn(cost, marginals, lam=lam).dense()
    product = marginals.a[:, None] * marginals.b[None, :]
    assert float(((pi - product) / product).abs().max()) <= 1e-3


@pytest.mark.parametrize(("lam", "iters"), ((0, 10), (-1, 10), (0.1, 0)))
def test_invalid_parameters(lam, iters):
    cost, marginals = random_problem(5, 3, 4)
    with pytest.raises(ValueError):
        sinkhorn(cost, marginals, lam=lam, iters=iters)


def test_non_finite_cost_rejected():
    cost = torch.zeros(2, 2, dtype=torch.float64)
    cost[0, 1] = float("inf")
    with pytest.raises(NonFiniteError):
        sinkhorn(CostMatrix(cost), MarginalWeights.uniform(2, 2), lam=0.1)


def test_marginal_sizes_must_match_cost():
    cost, _ = random_problem(6, 3, 4)
    with pytest.raises(DimensionMismatchError):
        sinkhorn(cost, MarginalWeights.uniform(4, 3), lam=0.1)


################################### Applying couplings #################################


def test_permutation_coupling_reorders_the_signal():
    permutation = np.array([2, 0, 3, 1])
    corr = permutation_coupling(permutation)
    signal = tensor(np.random.default_rng(0).normal(size=(4, 3)))
    moved = coupling_apply(corr, signal)
    assert float((moved - signal[permutation]).abs().max()) <= 1e-10
    assert list(extract_map(corr)) == list(permutation)


def test_uniform_coupling_averages():
    zero = CostMatrix(torch.zeros(3, 4, dtype=torch.float64))
    marginals = MarginalWeights.from_areas(
        tensor([1.0, 2.0, 3.0]), tensor([1.0, 1.0, 2.0, 4.0])
    )
    corr = sinkhorn(zero, marginals, lam=0.5)
    signal = tensor(np.arange(8.0).reshape(4, 2))
    mean = marginals.b @ signal
    assert coupling_apply(corr, signal).numpy() == pytest.approx(
        np.tile(mean.numpy(), (3, 1)), abs=1e-12
    )


def test_coupling_apply_matches_dense_product():
    cost, marginals = random_problem(7, 40, 55)
    corr = sinkhorn(cost, marginals, lam=0.12, converge=True)
    signal = tensor(np.random.default_rng(7).normal(size=(55, 4)))
    pi = corr.dense()
    expected = (pi @ signal) / pi.sum(dim=1, keepdim=True)
    assert float((coupling_apply(corr, signal) - expected).abs().max()) <= 1e-10


def test_uniform_ties_go_to_the_first_target():
    zero = CostMatrix(torch.zeros(4, 3, dtype=torch.float64))
    corr = sinkhorn(zero, MarginalWeights.uniform(4, 3), lam=0.2)
    assert list(extract_map(corr)) == [0, 0, 0, 0]


######################################## Energy ########################################


def test_energy_of_the_product_coupling():
    zero = CostMatrix(torch.zeros(2, 2, dtype=torch.float64))
    energy = transport_energy(sinkhorn(zero, MarginalWeights.uniform(2, 2), lam=0.12))
    assert float(energy.data_term) == 0
    assert float(energy.entropy) == pytest.approx(1, abs=1e-15)
    assert float(energy.total) == pytest.approx(-0.12, abs=1e-15)


def test_energy_of_the_sharp_permutation():
    corr = sinkhorn(SWAP, MarginalWeights.uniform(2, 2), lam=0.01, iters=200)
    energy = transport_energy(corr)
    assert float(energy.data_term) < 1e-8
    assert float(energy.total) == pytest.approx(
        float(energy.data_term - 0.01 * energy.entropy), abs=1e-15
    )


def test_energy_matches_dense_formula():
    cost, marginals = random_problem(8, 9, 11)
    corr = sinkhorn(cost, marginals, lam=0.3, iters=4)
    pi = corr.dense()
    product = marginals.a[:, None] * marginals.b[None, :]
    entropy = -(pi * (torch.log(pi / product) - 1)).sum()
    energy = transport_energy(corr)
    assert float(energy.data_term) == pytest.approx(float((pi * cost.values).sum()))
    assert float(energy.entropy) == pytest.approx(float(entropy), rel=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_more_iterations_never_lower_the_dual(seed):
    cost, marginals = random_problem(seed, 30, 40)
    values = [
        float(transport_dual(sinkhorn(cost, marginals, lam=0.12, iters=iters)))
        for iters in range(1, 16)
    ]
    for earlier, later in zip(values, values[1:]):
        assert later >= earlier - 1e-12 * max(1.0, abs(earlier))


def test_dual_meets_the_energy_at_convergence():
    cost, marginals = random_problem(11, 12, 15)
    corr = sinkhorn(cost, marginals, lam=0.5, converge=True, tolerance=1e-11)
    assert corr.marginal_residual() <= 1e-11
    energy = transport_energy(corr)
    assert float(transport_dual(corr)) == pytest.approx(float(energy.total), abs=1e-9)


def test_dual_bounds_the_converged_energy_from_below():
    cost, marginals = random_problem(12, 12, 15)
    optimum = transport_energy(
        sinkhorn(cost, marginals, lam=0.5, converge=True, tolerance=1e-11)
    )
    for iters in (1, 2, 5):
        early = sinkhorn(cost, marginals, lam=0.5, iters=iters)
        assert float(transport_dual(early)) <= float(optimum.total) + 1e-9


##################################### Dense export #####################################


def test_dense_export_round_trip(tmp_path):
    cost, marginals = random_problem(9, 6, 8)
    corr = sinkhorn(cost, marginals, lam=0.12)
    write_dense_coupling(tmp_path / "pi.dspi", corr)
    raw = (tmp_path / "pi.dspi").read_bytes()
    assert raw[:4] == b"DSPI" and len(raw) == 4 + 16 + 4 * 48
    restored = read_dense_coupling(tmp_path / "pi.dspi")
    assert restored == pytest.approx(corr.dense().numpy(), rel=1e-6)


def test_dense_export_is_size_limited(tmp_path, monkeypatch):
    monkeypatch.setattr(deepshells_settings, "DENSE_EXPORT_LIMIT", 10)
    cost, marginals = random_problem(10, 4, 4)
    corr = sinkhorn(cost, marginals, lam=0.12)
    with pytest.raises(UserError):
        write_dense_coupling(tmp_path / "pi.dspi", corr)
