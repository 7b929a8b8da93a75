"""
Dense operator algebra on small labeled tensor-product Hilbert spaces.

Matrices are plain complex128 numpy arrays wrapped in an immutable
``Operator`` that remembers which factors it acts on. The system factor comes
first and bath factors after; partial traces always go by label.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import HilbertSpaceError, NonHermitianError

logger = logging.getLogger(__name__)

DEFAULT_ATOL = 1e-10

SYSTEM_LABEL = "S"


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered tensor product of labeled factors"""

    factors: Tuple[Tuple[str, int], ...] = ()

    def __post_init__(self):
        factors = tuple((str(label), int(dim)) for label, dim in self.factors)
        object.__setattr__(self, "factors", factors)
        labels = [label for label, _ in factors]
        if len(set(labels)) != len(labels):
            raise HilbertSpaceError(f"Duplicate factor labels in {labels}")
        for label, dim in factors:
            if dim < 2:
                raise HilbertSpaceError(f"Factor '{label}' has dimension {dim}; need at least 2")

    @classmethod
    def of(cls, *factors: Tuple[str, int]) -> "HilbertSpace":
        return cls(tuple(factors))

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for label, _ in self.factors)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(dim for _, dim in self.factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.factors else 1

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise HilbertSpaceError(f"Unknown factor label '{label}' (have {list(self.labels)})") from None

    def concat(self, other: "HilbertSpace") -> "HilbertSpace":
        clash = set(self.labels) & set(other.labels)
        if clash:
            raise HilbertSpaceError(f"Label collision in tensor product: {sorted(clash)}")
        return HilbertSpace(self.factors + other.factors)

    def restrict(self, labels: Iterable[str]) -> "HilbertSpace":
        """Subspace made of the given labels, kept in this space's order"""
        wanted = set(labels)
        for label in wanted:
            self.index_of(label)
        return HilbertSpace(tuple(f for f in self.factors if f[0] in wanted))


class SuperSign(Enum):
    PLUS = "+"
    MINUS = "-"

    @property
    def bar(self) -> "SuperSign":
        return SuperSign.MINUS if self is SuperSign.PLUS else SuperSign.PLUS

    @classmethod
    def parse(cls, value) -> "SuperSign":
        if isinstance(value, SuperSign):
            return value
        text = str(value).strip().lower()
        if text in ("+", "plus", "p"):
            return cls.PLUS
        if text in ("-", "minus", "m"):
            return cls.MINUS
        raise ValueError(f"Not a superoperator sign: {value!r}")

    def __str__(self) -> str:
        return self.value


def signs_from_string(text: str) -> Tuple[SuperSign, ...]:
    return tuple(SuperSign.parse(c) for c in text)


def signs_to_string(signs: Sequence[SuperSign]) -> str:
    return "".join(s.value for s in signs)


class Operator:
    """Immutable dense operator on a HilbertSpace"""

    __slots__ = ("space", "matrix")

    def __init__(self, space: HilbertSpace, matrix):
        matrix = np.array(matrix, dtype=np.complex128)
        d = space.total_dim
        if matrix.shape != (d, d):
            raise HilbertSpaceError(f"Matrix shape {matrix.shape} does not match space dimension {d}")
        matrix.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "matrix", matrix)

    def __setattr__(self, name, value):
        raise AttributeError("Operator is immutable")

    @classmethod
    def identity(cls, space: HilbertSpace) -> "Operator":
        return cls(space, np.eye(space.total_dim))

    @classmethod
    def zeros(cls, space: HilbertSpace) -> "Operator":
        return cls(space, np.zeros((space.total_dim, space.total_dim)))

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def dagger(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def is_hermitian(self, atol: float = DEFAULT_ATOL) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= atol)

    def is_density(self, atol: float = DEFAULT_ATOL) -> bool:
        if not self.is_hermitian(atol):
            return False
        if abs(self.trace() - 1.0) > atol:
            return False
        return bool(np.min(np.linalg.eigvalsh(self.matrix)) >= -atol)

    def is_zero(self, atol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.matrix), initial=0.0) <= atol)

    def _check_same_space(self, other: "Operator"):
        if self.space != other.space:
            raise HilbertSpaceError(f"Space mismatch: {self.space.factors} vs {other.space.factors}")

    def __add__(self, other: "Operator") -> "Operator":
        self._check_same_space(other)
        return Operator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_same_space(other)
        return Operator(self.space, self.matrix - other.matrix)

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.matrix)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Operator":
        return Operator(self.space, self.matrix / scalar)

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_same_space(other)
        return Operator(self.space, self.matrix @ other.matrix)

    def allclose(self, other: "Operator", atol: float = DEFAULT_ATOL) -> bool:
        return self.space == other.space and bool(np.allclose(self.matrix, other.matrix, rtol=0, atol=atol))

    def __repr__(self) -> str:
        return f"Operator(space={list(self.space.factors)})"


def tensor(*ops: Operator) -> Operator:
    """Kronecker product on the concatenated space"""
    if not ops:
        raise HilbertSpaceError("tensor() needs at least one operator")
    space = ops[0].space
    matrix = ops[0].matrix
    for op in ops[1:]:
        space = space.concat(op.space)
        matrix = np.kron(matrix, op.matrix)
    return Operator(space, matrix)


def _einsum_trace(matrix: np.ndarray, dims: Sequence[int], keep_mask: Sequence[bool]) -> np.ndarray:
    n = len(dims)
    rows = list(range(n))
    cols = [i + n if keep_mask[i] else i for i in range(n)]
    out = [rows[i] for i in range(n) if keep_mask[i]] + [cols[i] for i in range(n) if keep_mask[i]]
    kept = int(np.prod([d for d, k in zip(dims, keep_mask) if k], dtype=np.int64))
    reshaped = matrix.reshape(tuple(dims) + tuple(dims))
    return np.einsum(reshaped, rows + cols, out).reshape(kept, kept)


def partial_trace(A: Operator, keep: Iterable[str]) -> Operator:
    """Trace out every factor whose label is not in ``keep``"""
    keep = set(keep)
    for label in keep:
        A.space.index_of(label)
    mask = [label in keep for label in A.space.labels]
    if all(mask):
        return A
    kept_space = A.space.restrict(keep)
    if not any(mask):
        return Operator(HilbertSpace(()), [[A.trace()]])
    return Operator(kept_space, _einsum_trace(A.matrix, A.space.dims, mask))


def _check_hermitian(H: Operator, atol: float, name: str = "H"):
    residue = float(np.max(np.abs(H.matrix - H.matrix.conj().T), initial=0.0))
    if residue > atol:
        raise NonHermitianError(f"{name} is not Hermitian (max |{name} - {name}^dag| = {residue:.3e})")


class Eigensystem:
    """Cached Hermitian eigendecomposition H = V diag(w) V^dag"""

    def __init__(self, H: Operator, atol: float = DEFAULT_ATOL):
        _check_hermitian(H, atol)
        self.space = H.space
        self.energies, self.vectors = np.linalg.eigh(H.matrix)

    def phases(self, t: float) -> np.ndarray:
        return np.exp(1j * self.energies * t)

    def unitary(self, t: float) -> np.ndarray:
        """Matrix of e^{-iHt}"""
        return (self.vectors * np.exp(-1j * self.energies * t)) @ self.vectors.conj().T

    def evolve_matrix(self, A: np.ndarray, t: float) -> np.ndarray:
        """e^{iHt} A e^{-iHt} for a raw matrix (or a stack of them)"""
        V = self.vectors
        phase = self.phases(t)
        inner = V.conj().T @ A @ V
        return V @ (phase[:, None] * inner * phase.conj()[None, :]) @ V.conj().T

    def evolve_many(self, A: np.ndarray, times: Sequence[float]) -> np.ndarray:
        """Stack of e^{iHt} A e^{-iHt} over ``times``, shape (len(times), d, d)"""
        V = self.vectors
        inner = V.conj().T @ A @ V
        phase = np.exp(1j * np.outer(np.asarray(times, dtype=float), self.energies))
        rotated = phase[:, :, None] * inner[None, :, :] * phase.conj()[:, None, :]
        return V[None] @ rotated @ V.conj().T[None]


def evolve(A: Operator, H: Operator, t: float, atol: float = DEFAULT_ATOL) -> Operator:
    """Interaction picture e^{iHt} A e^{-iHt}"""
    A._check_same_space(H)
    return Operator(A.space, Eigensystem(H, atol).evolve_matrix(A.matrix, t))


def unitary(H: Operator, t: float, atol: float = DEFAULT_ATOL) -> Operator:
    """e^{-iHt} through the Hermitian eigendecomposition"""
    return Operator(H.space, Eigensystem(H, atol).unitary(t))


def super_apply_matrix(sign: SuperSign, A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """A^+ X = (AX + XA)/2 and A^- X = -i(AX - XA)/2; X may be a stack"""
    AX = A @ X
    XA = X @ A
    if sign is SuperSign.PLUS:
        return 0.5 * (AX + XA)
    return -0.5j * (AX - XA)


def super_apply(sign: SuperSign, A: Operator, X: Operator) -> Operator:
    if A.space.total_dim != X.space.total_dim:
        raise HilbertSpaceError(
            f"Dimension mismatch in superoperator action: {A.space.total_dim} vs {X.space.total_dim}")
    A._check_same_space(X)
    return Operator(X.space, super_apply_matrix(sign, A.matrix, X.matrix))


def embed(A: Operator, space: HilbertSpace) -> Operator:
    """Lift A (acting on some factors of ``space``) to the whole of ``space``"""
    for label in A.space.labels:
        space.index_of(label)
    if A.space == space:
        return A
    rest = HilbertSpace(tuple(f for f in space.factors if f[0] not in set(A.space.labels)))
    full = tensor(A, Operator.identity(rest)) if rest.factors else A
    order = [full.space.index_of(label) for label in space.labels]
    n = len(order)
    dims = full.space.dims
    reshaped = full.matrix.reshape(dims + dims)
    permuted = reshaped.transpose(order + [i + n for i in order])
    return Operator(space, permuted.reshape(space.total_dim, space.total_dim))


# Spin-1/2 helpers for the central system

PAULI: Dict[str, np.ndarray] = {
    "i": np.eye(2, dtype=np.complex128),
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}

AXES = ("x", "y", "z")

SYSTEM_SPACE = HilbertSpace(((SYSTEM_LABEL, 2),))


def pauli(axis: str, label: str = SYSTEM_LABEL) -> Operator:
    try:
        matrix = PAULI[axis.lower()]
    except KeyError:
        raise HilbertSpaceError(f"Unknown Pauli axis '{axis}'") from None
    return Operator(HilbertSpace(((label, 2),)), matrix)


def _bloch_combination(vector: Sequence[float]) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"Bloch vector must have 3 components, got {v.shape}")
    return v[0] * PAULI["x"] + v[1] * PAULI["y"] + v[2] * PAULI["z"]


def bloch_state(r: Sequence[float], label: str = SYSTEM_LABEL) -> Operator:
    """Spin-1/2 state (1 + r.sigma)/2"""
    return Operator(HilbertSpace(((label, 2),)), 0.5 * (PAULI["i"] + _bloch_combination(r)))


def bloch_observable(m: Sequence[float], label: str = SYSTEM_LABEL) -> Operator:
    """Spin-1/2 observable m.sigma"""
    return Operator(HilbertSpace(((label, 2),)), _bloch_combination(m))


def eigenprojectors(observable: Operator, atol: float = DEFAULT_ATOL) -> List[Tuple[float, Operator]]:
    """(eigenvalue, projector) pairs of a Hermitian observable, largest first"""
    _check_hermitian(observable, atol, "observable")
    values, vectors = np.linalg.eigh(observable.matrix)
    out = []
    for value in sorted(set(np.round(values, 9)), reverse=True):
        cols = vectors[:, np.abs(values - value) < 1e-8]
        out.append((float(value), Operator(observable.space, cols @ cols.conj().T)))
    return out
