import numpy as np
import pytest

from fdstokes import kron
from fdstokes.errors import FactorizationError, ShapeError, SizeGuardError


def _random_factors(rng, dims, square=True):
    if square:
        return tuple(rng.standard_normal((n, n)) for n in dims[::-1])
    return tuple(rng.standard_normal((rng.integers(1, 5), n)) for n in dims[::-1])


def test_vec_layout_is_direction_one_fastest(rng):
    t = rng.standard_normal((2, 3, 4))
    x = kron.vec(t)
    assert x[1] == t[1, 0, 0]
    assert x[2] == t[0, 1, 0]
    assert x[6] == t[0, 0, 1]
    np.testing.assert_array_equal(kron.unvec(x, (2, 3, 4)), t)


def test_unvec_size_mismatch():
    with pytest.raises(ShapeError):
        kron.unvec(np.zeros(5), (2, 2, 2))


def test_mode_products_match_dense_kronecker(rng):
    worst = 0.0
    for _ in range(200):
        dims = tuple(int(n) for n in rng.integers(1, 6, size=3))
        rectangular = bool(rng.integers(0, 2))
        a3, a2, a1 = _random_factors(rng, dims, square=not rectangular)
        x = rng.standard_normal(int(np.prod(dims)))
        expected = np.kron(a3, np.kron(a2, a1)) @ x
        got = kron.apply_factors((a3, a2, a1), x)
        worst = max(worst, np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-300))
    assert worst <= 1e-13


def test_operator_sum_of_terms(rng):
    dims = (3, 4, 2)
    t1 = _random_factors(rng, dims)
    t2 = _random_factors(rng, dims)
    op = kron.KronOperator.from_factors((2.0, t1), (-0.5, t2))
    x = rng.standard_normal(op.size)
    expected = (2.0 * np.kron(t1[0], np.kron(t1[1], t1[2])) - 0.5 * np.kron(t2[0], np.kron(t2[1], t2[2]))) @ x
    np.testing.assert_allclose(op.matvec(x), expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(op.as_linear_operator() @ x, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(op.diagonal(), np.diag(kron.kron_dense(op)))
    assert op.dims == dims


def test_identity_factors_leave_vector_unchanged(rng):
    op = kron.KronOperator.from_factors((1.0, (np.eye(2), np.eye(3), np.eye(4))))
    x = rng.standard_normal(24)
    np.testing.assert_array_equal(op.matvec(x), x)


def test_operator_rejects_mismatched_factors(rng):
    with pytest.raises(ShapeError):
        kron.KronOperator.from_factors((1.0, (np.eye(2), np.eye(3), np.eye(4))), (1.0, (np.eye(2), np.eye(2), np.eye(4))))
    op = kron.KronOperator.from_factors((1.0, (np.eye(2), np.eye(2), np.eye(2))))
    with pytest.raises(ShapeError):
        op.matvec(np.zeros(7))


def test_mode_product_shape_errors(rng):
    t = rng.standard_normal((2, 3, 4))
    with pytest.raises(ShapeError):
        kron.mode_product(t, np.eye(2), 2)
    with pytest.raises(ShapeError):
        kron.mode_product(t, np.eye(2), 4)


def test_dense_oracle_size_guard():
    op = kron.KronOperator.from_factors((1.0, (np.eye(5), np.eye(5), np.eye(5))))
    with pytest.raises(SizeGuardError):
        kron.kron_dense(op, limit=100)


@pytest.mark.parametrize("banded", [False, True])
def test_kron_inverse_solves(rng, random_spd, banded):
    if banded:
        factors = tuple(
            np.diag(np.full(n, 4.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
            for n in (5, 4, 3)
        )
    else:
        factors = tuple(random_spd(n) for n in (5, 4, 3))
    inverse = kron.KronInverse(factors, banded=banded)
    x = rng.standard_normal(inverse.size)
    dense = np.kron(factors[0], np.kron(factors[1], factors[2]))
    y = inverse.apply(x)
    assert np.linalg.norm(dense @ y - x) <= 1e-12 * np.linalg.norm(x)


def test_kron_inverse_nonsymmetric_factor_uses_lu(rng):
    factors = tuple(rng.standard_normal((n, n)) + n * np.eye(n) for n in (3, 2, 4))
    x = rng.standard_normal(24)
    y = kron.kron_inverse_apply(factors, x)
    dense = np.kron(factors[0], np.kron(factors[1], factors[2]))
    np.testing.assert_allclose(dense @ y, x, atol=1e-10)


def test_singular_factor_raises():
    with pytest.raises(FactorizationError):
        kron.KronInverse((np.eye(2), np.zeros((3, 3)), np.eye(2)))


def test_transpose_law(rng):
    factors = _random_factors(rng, (2, 3, 4))
    op = kron.KronOperator.from_factors((1.0, factors))
    transposed = kron.KronOperator.from_factors((1.0, tuple(f.T for f in factors)))
    np.testing.assert_array_equal(kron.kron_dense(transposed), kron.kron_dense(op).T)


def test_spd_factors_give_spd_operator(rng, random_spd):
    for _ in range(20):
        dims = [int(n) for n in rng.integers(1, 5, size=3)]
        dense = kron.kron_dense(kron.KronOperator.from_factors((1.0, tuple(random_spd(n) for n in dims))))
        np.testing.assert_allclose(dense, dense.T, rtol=1e-12, atol=1e-12)
        assert np.linalg.eigvalsh(dense).min() > 0


def test_grouping_does_not_change_product(rng):
    a3, a2, a1 = _random_factors(rng, (3, 4, 2))
    x = rng.standard_normal(24)
    left = np.kron(np.kron(a3, a2), a1) @ x
    right = np.kron(a3, np.kron(a2, a1)) @ x
    got = kron.apply_factors((a3, a2, a1), x)
    assert np.linalg.norm(got - left) <= 1e-14 * 10 * np.linalg.norm(left)
    assert np.linalg.norm(got - right) <= 1e-14 * 10 * np.linalg.norm(right)


def test_eigenvalues_are_products_of_factor_eigenvalues(random_spd):
    factors = tuple(random_spd(n) for n in (2, 3, 2))
    dense = kron.kron_dense(kron.KronOperator.from_factors((1.0, factors)))
    l3, l2, l1 = (np.linalg.eigvalsh(f) for f in factors)
    products = np.sort(np.einsum("i,j,k->ijk", l3, l2, l1).ravel())
    np.testing.assert_allclose(np.linalg.eigvalsh(dense), products, rtol=1e-10)


def test_explicit_zero_limit_is_honoured():
    op = kron.KronOperator.from_factors((1.0, (np.eye(1), np.eye(1), np.eye(1))))
    with pytest.raises(SizeGuardError):
        kron.kron_dense(op, limit=0)
