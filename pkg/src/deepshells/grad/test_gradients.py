"""
Reverse-mode gradients against finite differences.
"""

from dataclasses import replace

import numpy as np
import pytest
import torch
from torch.autograd import gradcheck

from deepshells.filters import Activation, BankShape, apply_filters, init_filterbank
from deepshells.grad import Tape, graph_leaves
from deepshells.mesh import normalize_mesh
from deepshells.mesh.synthetic import deform_lowfreq
from deepshells.preprocess import Shape
from deepshells.shells import Schedule, ShellsConfig, match_pair, matching_loss
from deepshells.shells.deformation import solve_deformation, solve_normal_equations
from deepshells.shot import FeatureMap
from deepshells.spectral import build_laplacian, eigendecompose, smooth_embed
from deepshells.transport import (
    CostMatrix,
    MarginalWeights,
    embedding_cost,
    sinkhorn,
)

TINY = ShellsConfig(sinkhorn_iters=3, converge_final=False)
TINY_SCHEDULE = Schedule.of([4, 6])
BANK = BankShape(L_out=4, L_in=6, J=3, activation=Activation.IDENTITY, k_conv=20)


def random_features(n, channels, seed):
    values = np.random.default_rng(seed).normal(scale=0.5, size=(n, channels))
    return FeatureMap(torch.tensor(values), label="random")


@pytest.fixture(scope="module")
def tiny_pair(tiny_blob):
    deformed = normalize_mesh(
        deform_lowfreq(
            tiny_blob, seed=1, amplitude=0.05 * np.sqrt(tiny_blob.total_area)
        )
    )
    features = random_features(tiny_blob.n_vertices, BANK.L_in, seed=2)
    return tuple(
        Shape(mesh, eigendecompose(build_laplacian(mesh), 20), features)
        for mesh in (tiny_blob, deformed)
    )


def test_filters(tiny_pair):
    X, _ = tiny_pair
    shape = replace(BANK, k_conv=10)
    bank = init_filterbank(seed=3, shape=shape)
    weights = bank.weights.clone().requires_grad_()

    def outputs(w):
        return apply_filters(
            bank.with_weights(w), X.basis, X.mesh.vertex_areas, X.features
        ).values

    assert gradcheck(outputs, (weights,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_sinkhorn_with_respect_to_the_cost():
    rng = np.random.default_rng(4)
    cost = torch.tensor(rng.uniform(size=(6, 7)), requires_grad=True)
    marginals = MarginalWeights.from_areas(
        rng.uniform(0.5, 1.5, 6), rng.uniform(0.5, 1.5, 7)
    )

    def coupling(c):
        return sinkhorn(CostMatrix(c), marginals, lam=0.5, iters=3).dense()

    assert gradcheck(coupling, (cost,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_linear_solve_adjoint():
    rng = np.random.default_rng(5)
    factor = rng.normal(size=(8, 8))
    A = torch.tensor(factor @ factor.T + 8 * np.eye(8), requires_grad=True)
    rhs = torch.tensor(rng.normal(size=(8, 3)), requires_grad=True)

    def solve(A, rhs):
        return solve_normal_equations(A, rhs, 8)

    assert gradcheck(solve, (A, rhs), eps=1e-6, atol=1e-6, rtol=1e-6)


def test_deformation_with_respect_to_the_coupling(tiny_pair):
    X, Y = tiny_pair
    k = 6
    target = smooth_embed(Y.mesh, Y.basis, k)
    source = smooth_embed(X.mesh, X.basis, k)
    marginals = MarginalWeights.from_meshes(X.mesh, Y.mesh)
    cost = embedding_cost(source.coords, target.coords)
    corr = sinkhorn(cost, marginals, lam=0.12, iters=3)
    f = corr.f.detach().clone().requires_grad_()

    def deformation(f):
        deform = solve_deformation(X.basis, X.mesh, target, replace(corr, f=f), k)
        return torch.cat([deform.C, deform.tau], dim=1)

    assert gradcheck(deformation, (f,), eps=1e-6, atol=1e-8, rtol=1e-4)


def pipeline_loss(X, Y, bank, weights):
    _, state = match_pair(X, Y, [bank.with_weights(weights)], TINY_SCHEDULE, TINY)
    return matching_loss(state)


def test_full_pipeline_matches_finite_differences(tiny_pair):
    X, Y = tiny_pair
    bank = init_filterbank(seed=6, shape=BANK)
    tape = Tape()
    weights = tape.watch("bank", bank.weights)
    with tape.recording():
        loss = pipeline_loss(X, Y, bank, weights)
    gradient = tape.backward(loss)["bank"]
    scale = float(gradient.abs().max())
    assert scale > 0

    rng = np.random.default_rng(7)
    flat = rng.choice(gradient.numel(), size=25, replace=False)
    step = 1e-4
    with torch.no_grad():
        for index in flat:
            entry = np.unravel_index(index, tuple(gradient.shape))
            plus, minus = bank.weights.clone(), bank.weights.clone()
            plus[entry] += step
            minus[entry] -= step
            difference = (
                pipeline_loss(X, Y, bank, plus) - pipeline_loss(X, Y, bank, minus)
            ) / (2 * step)
            reverse = float(gradient[entry])
            assert abs(float(difference) - reverse) <= 1e-4 * max(
                abs(reverse), 1e-3 * scale
            )


def test_only_filter_weights_are_leaves(tiny_pair):
    X, Y = tiny_pair
    bank = init_filterbank(seed=8, shape=BANK)
    tape = Tape()
    weights = tape.watch("bank", bank.weights)
    with tape.recording():
        loss = pipeline_loss(X, Y, bank, weights)
    assert [id(leaf) for leaf in graph_leaves(loss)] == [id(weights)]


def test_pipeline_backward_is_linear(tiny_pair):
    X, Y = tiny_pair
    bank = init_filterbank(seed=9, shape=BANK)

    def gradient_of(*pairs):
        tape = Tape()
        weights = tape.watch("bank", bank.weights)
        with tape.recording():
            loss = sum(pipeline_loss(a, b, bank, weights) for a, b in pairs)
        return tape.backward(loss)["bank"]

    forward, backward = (X, Y), (Y, X)
    combined = gradient_of(forward, backward)
    separate = gradient_of(forward) + gradient_of(backward)
    scale = float(combined.abs().max())
    assert float((combined - separate).abs().max()) <= 1e-12 * max(1.0, scale)
