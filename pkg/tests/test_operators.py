import numpy as np
import pytest
from scipy.linalg import expm

from qbath.errors import HilbertSpaceError, NonHermitianError
from qbath.operators import (
    PAULI, SYSTEM_SPACE, Eigensystem, HilbertSpace, Operator, SuperSign, bloch_observable, bloch_state,
    eigenprojectors, embed, evolve, partial_trace, pauli, signs_from_string, signs_to_string,
    super_apply, super_apply_matrix, tensor, unitary,
)


def random_hermitian(rng, d):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (X + X.conj().T)


def test_tensor_of_identities():
    a = Operator.identity(HilbertSpace.of(("a", 2)))
    b = Operator.identity(HilbertSpace.of(("b", 2)))
    out = tensor(a, b)
    assert out.space.labels == ("a", "b")
    assert np.allclose(out.matrix, np.eye(4))


def test_tensor_label_collision():
    a = Operator.identity(HilbertSpace.of(("a", 2)))
    with pytest.raises(HilbertSpaceError, match="collision"):
        tensor(a, a)


def test_space_rejects_small_or_duplicate_factors():
    with pytest.raises(HilbertSpaceError):
        HilbertSpace.of(("a", 1))
    with pytest.raises(HilbertSpaceError):
        HilbertSpace.of(("a", 2), ("a", 3))


def test_operator_is_immutable():
    op = pauli("x")
    with pytest.raises(AttributeError):
        op.matrix = np.zeros((2, 2))
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 5


def test_operator_shape_must_match_space():
    with pytest.raises(HilbertSpaceError):
        Operator(SYSTEM_SPACE, np.eye(3))


def test_partial_trace_of_product_state(rng):
    A = Operator(HilbertSpace.of(("a", 2)), bloch_state((0, 0, 1)).matrix)
    B = Operator(HilbertSpace.of(("b", 3)), np.diag([0.5, 0.3, 0.2]))
    joint = tensor(A, B)
    assert partial_trace(joint, ["a"]).allclose(A)
    assert partial_trace(joint, ["b"]).allclose(B)
    assert partial_trace(joint, ["a", "b"]) is joint


def test_partial_trace_unknown_label():
    with pytest.raises(HilbertSpaceError, match="Unknown"):
        partial_trace(pauli("z"), ["B0"])


def test_evolve_at_zero_is_identity(rng):
    space = HilbertSpace.of(("b", 4))
    A = Operator(space, random_hermitian(rng, 4))
    H = Operator(space, random_hermitian(rng, 4))
    assert evolve(A, H, 0.0).allclose(A)


def test_evolve_matches_expm(rng):
    space = HilbertSpace.of(("b", 3))
    A = Operator(space, random_hermitian(rng, 3))
    H = Operator(space, random_hermitian(rng, 3))
    U = expm(-1j * H.matrix * 0.7)
    expected = U.conj().T @ A.matrix @ U
    assert np.allclose(evolve(A, H, 0.7).matrix, expected, atol=1e-10)
    assert np.allclose(unitary(H, 0.7).matrix, U, atol=1e-10)


def test_evolve_many_agrees_with_single_times(rng):
    space = HilbertSpace.of(("b", 4))
    A = random_hermitian(rng, 4)
    eig = Eigensystem(Operator(space, random_hermitian(rng, 4)))
    times = [0.0, 0.3, 1.1]
    stack = eig.evolve_many(A, times)
    for k, t in enumerate(times):
        assert np.allclose(stack[k], eig.evolve_matrix(A, t), atol=1e-12)


def test_non_hermitian_hamiltonian_rejected():
    H = Operator(SYSTEM_SPACE, [[0, 1], [0, 0]])
    with pytest.raises(NonHermitianError):
        evolve(pauli("x"), H, 1.0)


def test_super_apply_trivial_cases(rng):
    X = Operator(SYSTEM_SPACE, random_hermitian(rng, 2))
    I = Operator.identity(SYSTEM_SPACE)
    assert super_apply(SuperSign.MINUS, X, I).is_zero(1e-14)
    assert super_apply(SuperSign.PLUS, I, X).allclose(X)


def test_super_apply_dimension_mismatch():
    big = Operator.identity(HilbertSpace.of(("b", 4)))
    with pytest.raises(HilbertSpaceError):
        super_apply(SuperSign.PLUS, pauli("x"), big)


def test_super_apply_on_stack(rng):
    A = random_hermitian(rng, 3)
    X = np.stack([random_hermitian(rng, 3) for _ in range(4)])
    out = super_apply_matrix(SuperSign.MINUS, A, X)
    for k in range(4):
        assert np.allclose(out[k], -0.5j * (A @ X[k] - X[k] @ A))


def test_commutator_of_product_splits_into_super_operators(rng):
    """-i[AB, C] = 2(A+ B- + A- B+) C for commuting A and B"""
    for _ in range(100):
        a, b = random_hermitian(rng, 2), random_hermitian(rng, 3)
        A = np.kron(a, np.eye(3))
        B = np.kron(np.eye(2), b)
        C = random_hermitian(rng, 6)
        lhs = -1j * (A @ B @ C - C @ A @ B)
        rhs = 2 * (super_apply_matrix(SuperSign.PLUS, A, super_apply_matrix(SuperSign.MINUS, B, C))
                   + super_apply_matrix(SuperSign.MINUS, A, super_apply_matrix(SuperSign.PLUS, B, C)))
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_sign_strings():
    signs = signs_from_string("+-+")
    assert signs == (SuperSign.PLUS, SuperSign.MINUS, SuperSign.PLUS)
    assert signs_to_string(signs) == "+-+"
    assert SuperSign.PLUS.bar is SuperSign.MINUS
    with pytest.raises(ValueError):
        SuperSign.parse("*")


def test_embed_reorders_factors():
    space = HilbertSpace.of(("S", 2), ("B0", 2))
    lifted = embed(pauli("z", "B0"), space)
    assert np.allclose(lifted.matrix, np.kron(np.eye(2), PAULI["z"]))


def test_bloch_state_is_density():
    rho = bloch_state((1, 0, 0))
    assert rho.is_density()
    assert np.isclose(np.trace(rho.matrix @ PAULI["x"]).real, 1.0)


def test_eigenprojectors_of_observable():
    pairs = eigenprojectors(bloch_observable((0, 1, 0)))
    assert [v for v, _ in pairs] == [1.0, -1.0]
    total = pairs[0][1] + pairs[1][1]
    assert total.allclose(Operator.identity(SYSTEM_SPACE))
