import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppann import kinematics as kin
from ppann.errors import DomainError

seeds = st.integers(0, 2**32 - 1)


def _F(seed, n=8):
    return kin.sample_deformation(np.random.default_rng(seed), n)


@given(seeds)
def test_det_and_cofactor_match_linalg(seed):
    F = _F(seed)
    assert np.allclose(kin.det(F), np.linalg.det(F), rtol=1e-12, atol=1e-12)
    expected = np.linalg.det(F)[:, None, None] * np.linalg.inv(F).transpose(0, 2, 1)
    assert np.allclose(kin.cofactor(F), expected, rtol=1e-10, atol=1e-12)


def test_invariants_hand_values():
    # C = diag(4, 1, 1)
    x = kin.invariants(np.diag([2.0, 1.0, 1.0]))
    assert np.allclose(x, [6.0, 9.0, 4.0, -2.0])
    assert np.array_equal(kin.invariants(np.eye(3)), kin.IDENTITY_INVARIANTS)


@given(seeds)
def test_invariants_agree_with_eigenvalue_formulas(seed):
    F = _F(seed)
    lam = np.linalg.eigvalsh(kin.right_cauchy_green(F))
    x = kin.invariants(F)
    assert np.allclose(x[:, 0], lam.sum(1), rtol=1e-12)
    I2 = lam[:, 0] * lam[:, 1] + lam[:, 1] * lam[:, 2] + lam[:, 0] * lam[:, 2]
    assert np.allclose(x[:, 1], I2, rtol=1e-12)
    assert np.allclose(x[:, 2], lam.prod(1), rtol=1e-12)
    assert np.allclose(x[:, 3], -kin.det(F), rtol=1e-12)


@given(seeds)
def test_invariant_gradients_central_differences(seed):
    F = _F(seed, 3)
    G = kin.invariant_gradients(F)
    h = 1e-6
    for i in range(3):
        for j in range(3):
            E = np.zeros((3, 3))
            E[i, j] = h
            fd = (kin.invariants(F + E) - kin.invariants(F - E)) / (2 * h)
            assert np.allclose(G[:, :, i, j], fd, rtol=1e-7, atol=1e-7)


@given(seeds)
def test_poly_invariants_reduce_to_invariants(seed):
    F = _F(seed)
    x = kin.poly_invariants(F, kin.cofactor(F), kin.det(F))
    assert np.allclose(x, kin.invariants(F), rtol=1e-12)


@given(seeds)
def test_random_rotation_is_proper_orthogonal(seed):
    Q = kin.random_rotation(seed, 16)
    assert np.allclose(Q @ Q.transpose(0, 2, 1), np.eye(3), atol=1e-12)
    assert np.allclose(kin.det(Q), 1.0)


def test_sample_deformation_respects_det_range(rng):
    F = kin.sample_deformation(rng, 500, spread=0.6, det_range=(0.5, 1.5))
    J = kin.det(F)
    assert F.shape == (500, 3, 3)
    assert J.min() >= 0.5 and J.max() <= 1.5


@pytest.mark.parametrize("F", [np.diag([1.0, 1.0, -1.0]), np.zeros((3, 3))])
def test_non_positive_determinant_rejected(F):
    with pytest.raises(DomainError):
        kin.invariants(F)
    with pytest.raises(DomainError):
        kin.inv_transpose(F)
