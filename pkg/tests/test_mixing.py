import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfbss.mixing import (
    MixingMatrix,
    SourceBundle,
    complex_to_real8,
    mix,
    project_complex,
    real8_to_complex,
    stack_rails,
    steering_matrix,
    steering_vectors,
    unstack_rails,
)
from rfbss.signalgen import ComplexStream

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
cmat = st.tuples(arrays(float, (4, 4), elements=finite), arrays(float, (4, 4), elements=finite)).map(
    lambda ab: ab[0] + 1j * ab[1]
)


def _streams(Z, fs=1e6):
    return SourceBundle(tuple(ComplexStream.from_complex(Z[:, k], fs) for k in range(Z.shape[1])))


def test_identity_and_j():
    np.testing.assert_array_equal(complex_to_real8(np.eye(4)), np.eye(8))
    R = complex_to_real8(1j * np.eye(4))
    for k in range(4):
        np.testing.assert_array_equal(R[2 * k : 2 * k + 2, 2 * k : 2 * k + 2], [[0, -1], [1, 0]])


def test_shape_checks():
    with pytest.raises(ValueError):
        complex_to_real8(np.eye(3))
    with pytest.raises(ValueError):
        real8_to_complex(np.eye(6))


def test_random_products_homomorphism():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        N = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        np.testing.assert_allclose(
            complex_to_real8(M @ N), complex_to_real8(M) @ complex_to_real8(N), rtol=0, atol=1e-12
        )


@settings(max_examples=200, deadline=None)
@given(cmat, arrays(float, (4,), elements=finite), arrays(float, (4,), elements=finite))
def test_isomorphism_on_vectors(M, xr, xi):
    x = xr + 1j * xi
    lhs = complex_to_real8(M) @ stack_rails(x[None, :])[0]
    rhs = stack_rails((M @ x)[None, :])[0]
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max() * np.abs(x).max()))


@settings(max_examples=200, deadline=None)
@given(cmat)
def test_round_trip_exact(M):
    back, residual = real8_to_complex(complex_to_real8(M))
    np.testing.assert_allclose(back, M, rtol=0, atol=1e-15)
    assert residual == 0.0


def test_identity_round_trip():
    M, residual = real8_to_complex(np.eye(8))
    np.testing.assert_array_equal(M, np.eye(4))
    assert residual == 0.0


def test_residual_grows_with_off_structure_perturbation():
    rng = np.random.default_rng(1)
    R = complex_to_real8(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    R /= np.linalg.norm(R)
    residuals = []
    for eps in np.logspace(-6, 0, 13):
        P = R.copy()
        P[0, 0] += eps
        residuals.append(real8_to_complex(P)[1])
    assert np.all(np.diff(residuals) > 0)


def test_projection_is_idempotent():
    R = np.random.default_rng(2).normal(size=(8, 8))
    P = project_complex(R)
    np.testing.assert_allclose(project_complex(P), P, atol=1e-15)
    assert real8_to_complex(P)[1] < 1e-15


def test_steering_examples():
    A = steering_matrix([30.0, -40.0, 10.0, 60.0], 0.5)
    np.testing.assert_allclose(A.complex_entries[:, 0], [1, 1j, -1, -1j], atol=1e-12)
    A = steering_matrix([-40.0, -10.0, 15.0, 45.0], 0.5)
    assert A.condition_number < 50
    np.testing.assert_allclose(np.abs(A.complex_entries), 1.0, atol=1e-12)
    np.testing.assert_array_equal(A.real_form, complex_to_real8(A.complex_entries))


def test_all_zero_angles_is_ones_but_singular():
    np.testing.assert_array_equal(steering_vectors([0.0, 0.0, 0.0, 0.0]), np.ones((4, 4)))
    # rank one, so it cannot serve as a mixing matrix
    with pytest.raises(ValueError, match="singular"):
        steering_matrix([0.0, 0.0, 0.0, 0.0])


def test_steering_rejects_bad_input():
    with pytest.raises(ValueError):
        steering_matrix([0, 10, 20])
    with pytest.raises(ValueError):
        steering_matrix([0, 10, 20, 90])
    with pytest.raises(ValueError):
        steering_matrix([0, 10, 20, 30], 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (4,), elements=st.floats(-89, 89)), st.floats(0.1, 2.0))
def test_steering_unit_modulus(angles, spacing):
    np.testing.assert_allclose(np.abs(steering_vectors(angles, spacing)), 1.0, atol=1e-12)


def _random_sources(seed, n=64):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 4)) + 1j * rng.normal(size=(n, 4))


def test_mix_identity_and_zero():
    Z = _random_sources(0)
    A = MixingMatrix(np.eye(4))
    np.testing.assert_array_equal(mix(A, _streams(Z)), stack_rails(Z))
    A = steering_matrix([-40.0, -10.0, 15.0, 45.0])
    np.testing.assert_array_equal(mix(A, _streams(np.zeros((16, 4), complex))), 0.0)


def test_mix_single_source_oracle():
    A = steering_matrix([-40.0, -10.0, 15.0, 45.0])
    Z = np.zeros((32, 4), complex)
    Z[:, 2] = _random_sources(3, 32)[:, 0]
    X = unstack_rails(mix(A, _streams(Z)))
    for m in range(4):
        np.testing.assert_allclose(X[:, m], A.complex_entries[m, 2] * Z[:, 2], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 2**31))
def test_mix_linear(alpha, seed):
    A = steering_matrix([-40.0, -10.0, 15.0, 45.0])
    S1, S2 = _random_sources(seed), _random_sources(seed + 1)
    lhs = mix(A, _streams(alpha * S1 + S2))
    rhs = alpha * mix(A, _streams(S1)) + mix(A, _streams(S2))
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_bundle_validation():
    a = ComplexStream.from_complex(np.ones(10), 1e6)
    b = ComplexStream.from_complex(np.ones(11), 1e6)
    c = ComplexStream.from_complex(np.ones(10), 2e6)
    with pytest.raises(ValueError):
        SourceBundle((a, b))
    with pytest.raises(ValueError):
        SourceBundle((a, c))
    with pytest.raises(ValueError):
        mix(steering_matrix([-40.0, -10.0, 15.0, 45.0]), SourceBundle((a, a)))


def test_singular_matrix_rejected():
    with pytest.raises(ValueError, match="singular"):
        MixingMatrix(np.ones((4, 4)))
