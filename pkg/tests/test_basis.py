import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcha.basis import (
    BasisSpec,
    OracleCapError,
    build_kernel_matrix,
    build_kernel_matrix_closed_form,
    design_matrix,
    eval_basis_row,
    kernel_cross,
    scale_to_unit_cube,
    subsets,
)


def test_scaling_examples():
    X, smap = scale_to_unit_cube(np.array([[2.0, 3.0], [4.0, 3.0], [6.0, 3.0]]))
    assert np.allclose(X[:, 0], [0.0, 0.5, 1.0])
    assert np.allclose(X[:, 1], 0.5)
    assert smap.apply(np.array([[8.0, 10.0]]))[0, 0] == 1.0
    assert smap.apply(np.array([[0.0, 10.0]]))[0, 0] == 0.0


def test_scaling_rejects_empty():
    with pytest.raises(ValueError):
        scale_to_unit_cube(np.empty((0, 2)))


def test_scaling_round_trip_dict():
    _, smap = scale_to_unit_cube(np.arange(12.0).reshape(4, 3))
    again = type(smap).from_dict(smap.to_dict())
    assert np.array_equal(again.lo, smap.lo) and np.array_equal(again.hi, smap.hi)


def test_subset_order_and_count():
    assert subsets(3) == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
    assert len(subsets(5)) == 2 ** 5 - 1
    assert subsets(4, max_degree=1) == [(0,), (1,), (2,), (3,)]


def test_basis_count():
    spec = BasisSpec(np.random.default_rng(0).random((7, 3)))
    assert spec.N == 7 * 7


def test_eval_basis_row_examples():
    spec = BasisSpec(np.array([[0.2], [0.5]]))
    assert eval_basis_row(spec, [0.3]).tolist() == [1, 0]
    assert eval_basis_row(spec, [0.5]).tolist() == [1, 1]
    spec2 = BasisSpec(np.array([[0.5, 0.5]]))
    assert eval_basis_row(spec2, [0.6, 0.4]).tolist() == [1, 0, 0]


def test_eval_basis_row_knot_major():
    spec = BasisSpec(np.array([[0.1, 0.9], [0.3, 0.2]]))
    row = eval_basis_row(spec, [0.5, 0.5])
    # knot 0: {1}:1 {2}:0 {1,2}:0 ; knot 1: {1}:1 {2}:1 {1,2}:1
    assert row.tolist() == [1, 0, 0, 1, 1, 1]


def test_oracle_cap():
    spec = BasisSpec(np.random.default_rng(1).random((10, 2)), oracle_cap=20)
    with pytest.raises(OracleCapError, match="kernel"):
        eval_basis_row(spec, [0.5, 0.5])
    # kernel operations are unaffected by the cap
    assert build_kernel_matrix(spec).shape == (10, 10)


def test_kernel_examples():
    spec = BasisSpec(np.array([[0.2], [0.5]]))
    assert build_kernel_matrix(spec).tolist() == [[1, 1], [1, 2]]
    assert build_kernel_matrix(BasisSpec(np.array([[0.7]]))).tolist() == [[1]]
    assert kernel_cross(spec, np.array([0.3])).tolist() == [1, 1]


def test_kernel_cross_zero_point():
    spec = BasisSpec(np.random.default_rng(2).random((6, 3)) * 0.9 + 0.05)
    assert not kernel_cross(spec, np.zeros(3)).any()


def test_kernel_dtype_is_int64():
    spec = BasisSpec(np.random.default_rng(3).random((5, 2)))
    assert build_kernel_matrix(spec).dtype == np.int64


@st.composite
def designs(draw, max_n=12, max_d=4):
    n = draw(st.integers(1, max_n))
    d = draw(st.integers(1, max_d))
    # coarse grid values produce ties on purpose
    X = draw(arrays(np.float64, (n, d), elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0,
                                                                   0.1, 0.33, 0.9])))
    deg = draw(st.one_of(st.none(), st.integers(1, d)))
    return X, deg


@given(designs())
def test_kernel_equals_brute_force_gram(case):
    X, deg = case
    spec = BasisSpec(X, max_degree=deg)
    H = design_matrix(spec, X)
    K = build_kernel_matrix(spec)
    assert np.array_equal(K, H @ H.T)
    assert np.array_equal(build_kernel_matrix_closed_form(spec), K)


@given(designs())
def test_kernel_properties(case):
    X, deg = case
    spec = BasisSpec(X, max_degree=deg)
    K = build_kernel_matrix(spec)
    assert np.array_equal(K, K.T)
    diag = np.diag(K)
    assert (diag >= 1).all()
    assert (K <= np.minimum(diag[:, None], diag[None, :])).all()
    # each diagonal entry via the per-knot product formula (full lattice)
    if deg is None:
        expect = [sum(np.prod(1 + (X[l] <= X[i])) - 1 for l in range(X.shape[0]))
                  for i in range(X.shape[0])]
        assert diag.tolist() == [int(v) for v in expect]


@given(designs(), st.randoms(use_true_random=False))
def test_kernel_permutation_equivariance(case, rnd):
    X, deg = case
    perm = np.array(rnd.sample(range(X.shape[0]), X.shape[0]))
    K = build_kernel_matrix(BasisSpec(X, max_degree=deg))
    Kp = build_kernel_matrix(BasisSpec(X[perm], max_degree=deg))
    assert np.array_equal(Kp, K[np.ix_(perm, perm)])


def test_kernel_cross_matches_gram_rows(rng):
    X = rng.random((9, 3))
    spec = BasisSpec(X)
    K = build_kernel_matrix(spec)
    assert np.array_equal(kernel_cross(spec, X), K)
    Xn = rng.random((4, 3))
    H = design_matrix(spec, X)
    Hn = design_matrix(spec, Xn)
    assert np.array_equal(kernel_cross(spec, Xn), Hn @ H.T)


def test_knots_must_be_scaled():
    with pytest.raises(ValueError):
        BasisSpec(np.array([[1.5]]))
    with pytest.raises(ValueError):
        BasisSpec(np.array([[0.5]]), max_degree=0)
