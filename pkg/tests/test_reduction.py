import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from rtrom.hydro import FomConfig, LagrangianHydro
from rtrom.reduction import (POD, DEIMSampler, SamplingError, energy_rank, gappy_reconstruction,
                             oversampled_size, pod, sampled_pinv, select_sampling_indices,
                             sns_basis)


def test_energy_rank_examples():
    assert energy_rank([3.0, 1.0], 0.3) == 1
    assert energy_rank([3.0, 1.0], 0.2) == 2
    assert energy_rank([0.0, 0.0], 1e-4) == 0


def test_rank_one_matrix():
    c = np.arange(1.0, 7.0)
    b = pod(np.column_stack([c, c, c]), 1e-4)
    assert b.n_rom == 1
    assert np.allclose(b.vectors[:, 0], c / np.linalg.norm(c), rtol=0, atol=1e-15)
    assert np.sum(b.singular_values > 1e-12 * b.singular_values[0]) == 1


def test_zero_matrix_gives_empty_basis():
    assert pod(np.zeros((5, 3))).n_rom == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.integers(1, 15), st.floats(0.0, 0.5), st.integers(0, 2**31))
def test_pod_properties(n, m, delta, seed):
    S = np.random.default_rng(seed).standard_normal((n, m))
    b = pod(S, delta)
    U = b.vectors
    assert np.max(np.abs(U.T @ U - np.eye(b.n_rom))) <= 1e-12
    resid = np.linalg.norm(S - U @ (U.T @ S))
    assert abs(resid - b.truncation_error()) <= 1e-10 * max(1.0, np.linalg.norm(S))
    rows = np.argmax(np.abs(U), axis=0)
    assert np.all(U[rows, np.arange(b.n_rom)] > 0)


def test_sklearn_pod_transformer():
    X = np.random.default_rng(0).standard_normal((12, 30))
    est = POD(delta_sigma=0.0).fit(X)
    assert np.allclose(est.inverse_transform(est.transform(X)), X, atol=1e-12)
    assert clone(est).get_params() == {"delta_sigma": 0.0}


def test_identity_columns_select_their_rows():
    assert list(select_sampling_indices(np.eye(6)[:, :2], 2)) == [0, 1]


def test_sampling_is_scale_invariant():
    B = np.random.default_rng(2).standard_normal((30, 4))
    a = select_sampling_indices(B, 10)
    b = select_sampling_indices(sns_basis(2.0 * np.eye(30), B), 10)
    assert np.array_equal(a, b)
    assert np.array_equal(sns_basis(np.eye(30), B), B)


def test_sampling_ties_go_to_smallest_index():
    B = np.ones((5, 1))
    assert list(select_sampling_indices(B, 3)) == [0, 1, 2]


def test_sampling_respects_candidates():
    B = np.random.default_rng(4).standard_normal((20, 3))
    idx = select_sampling_indices(B, 6, candidates=np.arange(10, 20))
    assert np.all(idx >= 10) and len(set(idx)) == 6


def test_gappy_exact_on_span():
    rng = np.random.default_rng(5)
    B = rng.standard_normal((60, 6))
    for m in (6, 12, 60):
        idx = select_sampling_indices(B, m)
        f = B @ rng.standard_normal(6)
        assert np.linalg.norm(gappy_reconstruction(B, idx, f) - f) <= 1e-12 * np.linalg.norm(f)


def test_rank_deficient_sampling_fails():
    B = np.zeros((6, 2))
    B[0, 0] = B[1, 1] = 1.0
    with pytest.raises(SamplingError, match="window 3"):
        sampled_pinv(B, np.array([0, 2]), "window 3")


def test_oversampled_size_clamps():
    assert oversampled_size(100, 7, 2.0) == 14
    assert oversampled_size(10, 7, 2.0) == 10
    with pytest.raises(ValueError):
        oversampled_size(10, 3, 0.5)


def test_deim_estimator():
    rng = np.random.default_rng(6)
    B = rng.standard_normal((40, 5))
    d = DEIMSampler(oversampling=2.0).fit(B)
    assert len(d.indices_) == 10
    f = B @ rng.standard_normal(5)
    assert np.allclose(d.reconstruct(f), f, atol=1e-12)
    assert d.error_constant() >= 1.0 - 1e-12


def test_mass_image_of_constant_is_row_sums():
    h = LagrangianHydro(FomConfig(refinement_level=0, kin_degree=1, thermo_degree=0))
    one = np.ones((h.n_kin, 1))
    B = sns_basis(h.mass.apply_M_v, one)
    M = h.mass.M_v.toarray()
    assert np.allclose(B[:, 0], M.sum(axis=1), rtol=1e-14)
    # each component's row sums integrate the density over the domain
    n = h.n_nodes
    assert np.isclose(B[:n, 0].sum(), (h.config.density_ratio + 1) / 2, rtol=1e-14)
