from dataclasses import replace
from math import comb

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcfprod import dgp, features, gcf
from gcfprod.features import FeatureSpec, hermite_basis


def spec_for(data, degree, names=None):
    data = np.asarray(data, dtype=float).reshape(len(data), -1)
    names = names or tuple(f"x{j}" for j in range(data.shape[1]))
    return FeatureSpec.fit(names, degree, data)


@pytest.mark.parametrize("m", range(1, 9))
@pytest.mark.parametrize("d", range(0, 7))
def test_basis_cardinality(m, d):
    idx = features.multi_indices(m, d)
    assert len(idx) == comb(m + d, d) == features.basis_size(m, d)
    assert len(set(idx)) == len(idx)
    assert all(sum(e) <= d and min(e) >= 0 for e in idx)


def test_six_variables_degree_four():
    data = np.random.default_rng(0).standard_normal((500, 6))
    B = hermite_basis(spec_for(data, 4), data)
    assert B.values.shape == (500, 210)
    assert len(B.selected) == 210


def test_columns_ordered_by_degree():
    degs = [sum(e) for e in features.multi_indices(3, 4)]
    assert degs == sorted(degs)
    assert features.multi_indices(3, 4)[0] == (0, 0, 0)


def test_he2_at_zero():
    spec = FeatureSpec(("x",), 2, ((0.0, 1.0),))
    B = hermite_basis(spec, np.array([[0.0], [1.0], [2.0]]), select=False)
    col = B.labels.index((2,))
    assert B.values[0, col] == -1.0
    assert np.allclose(B.values[:, col], [-1.0, 0.0, 3.0])


def test_degree_zero_is_constant():
    data = np.random.default_rng(1).standard_normal((20, 3))
    B = hermite_basis(spec_for(data, 0), data)
    assert B.values.shape == (20, 1)
    assert np.all(B.values == 1.0)


def test_standardization_uses_sample_moments():
    x = np.array([1.0, 3.0, 5.0, 7.0])
    spec = spec_for(x, 1)
    B = hermite_basis(spec, x[:, None])
    assert np.allclose(B.values[:, 1], (x - 4) / x.std())


def test_hermite_recurrence():
    x = np.linspace(-4, 4, 81)
    spec = FeatureSpec(("x",), 6, ((0.0, 1.0),))
    B = hermite_basis(spec, x[:, None], select=False)
    H = B.values  # column n is He_n for one variable
    for n in range(1, 6):
        assert np.max(np.abs(H[:, n + 1] - (x * H[:, n] - n * H[:, n - 1]))) < 1e-9


def test_product_structure():
    rng = np.random.default_rng(2)
    data = rng.standard_normal((30, 2))
    spec = FeatureSpec(("a", "b"), 3, ((0.0, 1.0), (0.0, 1.0)))
    B = hermite_basis(spec, data, select=False)
    a, b = data.T
    assert np.allclose(B.values[:, B.labels.index((1, 2))], a * (b**2 - 1))
    assert np.allclose(B.values[:, B.labels.index((2, 1))], (a**2 - 1) * b)


def test_zero_variance_names_variable():
    data = np.column_stack([np.arange(10.0), np.ones(10)])
    with pytest.raises(ValueError, match="'flat'"):
        FeatureSpec.fit(("ok", "flat"), 2, data)


def test_wrong_column_count():
    spec = FeatureSpec(("x",), 2, ((0.0, 1.0),))
    with pytest.raises(ValueError):
        hermite_basis(spec, np.zeros((5, 2)))


# -- projection ---------------------------------------------------------------

def test_projection_of_column_span_member():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((200, 3))
    B = hermite_basis(spec_for(data, 3), data)
    y = B.columns @ rng.standard_normal(len(B.selected))
    assert np.max(np.abs(features.project(B, y) - y)) < 1e-10 * np.max(np.abs(y))


def test_constant_basis_gives_mean():
    y = np.random.default_rng(4).standard_normal(100)
    B = hermite_basis(spec_for(y, 0), y[:, None])
    assert np.allclose(features.project(B, y), y.mean(), atol=1e-14)


def test_projection_residual_orthogonal():
    rng = np.random.default_rng(5)
    data = rng.standard_normal((300, 4))
    B = hermite_basis(spec_for(data, 3), data)
    y = np.sin(data).sum(axis=1) + rng.standard_normal(300)
    e = features.residualize(B, y)
    X = B.columns
    assert np.max(np.abs(X.T @ e) / np.linalg.norm(X, axis=0)) < 1e-8 * np.linalg.norm(y)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_idempotent(seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((80, 2))
    B = hermite_basis(spec_for(data, 3), data)
    y = rng.standard_normal((80, 2))
    p = features.project(B, y)
    assert np.max(np.abs(features.project(B, p) - p)) < 1e-10 * max(1, np.abs(p).max())


def test_projection_matches_high_precision_normal_equations():
    rng = np.random.default_rng(6)
    data = rng.standard_normal((40, 2))
    B = hermite_basis(spec_for(data, 2), data)
    X = B.columns
    y = rng.standard_normal(40)
    mpmath.mp.dps = 50
    Xm = mpmath.matrix(X.tolist())
    ym = mpmath.matrix(y.tolist())
    beta = mpmath.lu_solve(Xm.T * Xm, Xm.T * ym)
    fitted = np.array((Xm * beta).tolist(), dtype=float).ravel()
    assert np.max(np.abs(features.project(B, y) - fitted)) < 1e-8


def test_projection_row_mismatch():
    data = np.random.default_rng(7).standard_normal((10, 1))
    B = hermite_basis(spec_for(data, 1), data)
    with pytest.raises(ValueError):
        features.project(B, np.zeros(11))


# -- greedy selection ------------------------------------------------------------

def test_identity_all_selected():
    assert features.greedy_rank_select(np.eye(6)) == list(range(6))


def test_exact_dependence_excluded():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((50, 4))
    A = np.column_stack([A[:, :2], A[:, 0] + A[:, 1], A[:, 2:]])
    assert features.greedy_rank_select(A) == [0, 1, 3, 4]


def test_zero_column_excluded():
    A = np.random.default_rng(9).standard_normal((30, 3))
    A[:, 1] = 0.0
    assert features.greedy_rank_select(A) == [0, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_selection_invariant_to_duplicates(seed, dup):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((40, 5))
    base = features.greedy_rank_select(A)
    A2 = np.column_stack([A] + [A[:, [j]] for j in dup])
    assert features.greedy_rank_select(A2) == base


def test_selected_columns_full_rank():
    rng = np.random.default_rng(10)
    A = rng.standard_normal((60, 6)) @ rng.standard_normal((6, 12))
    sel = features.greedy_rank_select(A)
    assert len(sel) == 6
    assert np.linalg.matrix_rank(A[:, sel]) == 6


def test_residual_columns_of_control_only_terms_excluded():
    panel = dgp.simulate_panel(replace(dgp.DGPConfig(), n_firms=200, seed=4))
    plan = gcf.InstrumentPlan()
    proj = gcf.build_projections(gcf.build_lagged_frame(panel, plan), plan)
    s = plan.z_vars.index("pV")
    involves_special = {j for j, e in enumerate(proj.phi_labels) if e[s] > 0}
    assert set(proj.selected) == involves_special
    assert proj.n_moments == 210 - comb(5 + 4, 4)
