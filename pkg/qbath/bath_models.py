"""
Spin-bath models: bath Hamiltonian, noise fields, thermal state and coupling.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ModelError, NonHermitianError
from .operators import (
    AXES, PAULI, SYSTEM_SPACE, Eigensystem, HilbertSpace, Operator,
    embed, evolve, tensor,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PauliTerm:
    """coefficient * (pauli_0 x pauli_1 x ...), one character i/x/y/z per bath spin"""

    coefficient: float
    paulis: str

    def validate(self, num_spins: int):
        if len(self.paulis) != num_spins:
            raise ModelError(
                f"Pauli string '{self.paulis}' has {len(self.paulis)} sites, bath has {num_spins} spins")
        bad = set(self.paulis.lower()) - set(PAULI)
        if bad:
            raise ModelError(f"Pauli string '{self.paulis}' contains invalid characters {sorted(bad)}")
        if not np.isfinite(self.coefficient) or np.iscomplexobj(self.coefficient):
            raise ModelError(f"Coefficient {self.coefficient!r} must be a finite real number")

    def matrix(self) -> np.ndarray:
        out = np.ones((1, 1), dtype=np.complex128)
        for c in self.paulis.lower():
            out = np.kron(out, PAULI[c])
        return float(self.coefficient) * out

    @classmethod
    def single(cls, coefficient: float, num_spins: int, site: int, axis: str) -> "PauliTerm":
        chars = ["i"] * num_spins
        chars[site] = axis
        return cls(coefficient, "".join(chars))


@dataclass(frozen=True)
class BathSpec:
    num_spins: int
    hamiltonian_terms: Tuple[PauliTerm, ...] = ()
    field_terms: Mapping[str, Tuple[PauliTerm, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.num_spins) < 1:
            raise ModelError("A bath needs at least one spin")
        object.__setattr__(self, "hamiltonian_terms", tuple(self.hamiltonian_terms))
        object.__setattr__(self, "field_terms", {
            axis: tuple(terms) for axis, terms in dict(self.field_terms).items()})
        for axis in self.field_terms:
            if axis not in AXES:
                raise ModelError(f"Unknown field axis '{axis}'")

    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace(tuple((f"B{j}", 2) for j in range(self.num_spins)))


@dataclass(frozen=True)
class SystemSpec:
    coupling_axes: Tuple[str, ...] = AXES
    static_hamiltonian: Optional[Operator] = None

    def __post_init__(self):
        axes = tuple(a.lower() for a in self.coupling_axes)
        for a in axes:
            if a not in AXES:
                raise ModelError(f"Unknown coupling axis '{a}'")
        object.__setattr__(self, "coupling_axes", axes)
        H = self.static_hamiltonian
        if H is not None:
            if H.space != SYSTEM_SPACE:
                raise ModelError("Static system Hamiltonian must act on the central spin only")
            if not H.is_hermitian():
                raise ModelError("Static system Hamiltonian is not Hermitian")
            if not H.is_zero(1e-14):
                logger.warning("Nonzero static system Hamiltonian: experimental, ignored during measurement windows")

    def hamiltonian(self) -> Operator:
        return self.static_hamiltonian if self.static_hamiltonian is not None else Operator.zeros(SYSTEM_SPACE)


@dataclass(frozen=True)
class ThermalParams:
    beta: float = 0.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ModelError(f"Inverse temperature must be >= 0, got {self.beta}")


class BuiltBath:
    """H_B, the noise fields B_a and their interaction-picture evolution"""

    def __init__(self, spec: BathSpec, hamiltonian: Operator, fields: Dict[str, Operator]):
        self.spec = spec
        self.space = hamiltonian.space
        self.hamiltonian = hamiltonian
        self.fields = fields

    def __iter__(self) -> Iterator:
        return iter((self.hamiltonian, self.fields))

    @cached_property
    def eigensystem(self) -> Eigensystem:
        return Eigensystem(self.hamiltonian)

    def field(self, axis: str) -> Operator:
        return self.fields[axis]

    def field_at(self, axis: str, t: float) -> Operator:
        return Operator(self.space, self.eigensystem.evolve_matrix(self.fields[axis].matrix, t))

    def fields_at(self, axis: str, times: Sequence[float]) -> np.ndarray:
        """Raw matrices of B_a(t) stacked over ``times``"""
        return self.eigensystem.evolve_many(self.fields[axis].matrix, times)

    @property
    def active_axes(self) -> Tuple[str, ...]:
        return tuple(a for a in AXES if not self.fields[a].is_zero(1e-14))

    @property
    def is_pure_dephasing(self) -> bool:
        return self.fields["x"].is_zero(1e-14) and self.fields["y"].is_zero(1e-14)

    def __repr__(self) -> str:
        return f"BuiltBath(spins={self.spec.num_spins}, active_axes={self.active_axes})"


def _sum_terms(terms: Sequence[PauliTerm], spec: BathSpec) -> Operator:
    d = 2 ** spec.num_spins
    matrix = np.zeros((d, d), dtype=np.complex128)
    for term in terms:
        term.validate(spec.num_spins)
        matrix = matrix + term.matrix()
    return Operator(spec.space, matrix)


def build_bath(spec: BathSpec) -> BuiltBath:
    """Hermitian H_B and B_x, B_y, B_z on the bath space; missing axes are zero"""
    hamiltonian = _sum_terms(spec.hamiltonian_terms, spec)
    fields = {axis: _sum_terms(spec.field_terms.get(axis, ()), spec) for axis in AXES}
    logger.debug(f"Built bath with {spec.num_spins} spins, {len(spec.hamiltonian_terms)} Hamiltonian terms")
    return BuiltBath(spec, hamiltonian, fields)


def thermal_state(H_B: Operator, params: ThermalParams) -> Operator:
    """e^{-beta H_B}/Z, computed with energies shifted by the ground energy"""
    if not H_B.is_hermitian():
        raise NonHermitianError("Bath Hamiltonian H_B must be Hermitian to define a thermal state")
    energies, vectors = np.linalg.eigh(H_B.matrix)
    weights = np.exp(-params.beta * (energies - energies.min()))
    weights /= weights.sum()
    return Operator(H_B.space, (vectors * weights) @ vectors.conj().T)


def bath_field_at(B: Operator, H_B: Operator, t: float) -> Operator:
    return evolve(B, H_B, t)


def coupling_operator(system: SystemSpec, bath: BuiltBath) -> Operator:
    """V = sum_a S_a (x) B_a with S_a = sigma_a / 2, system factor first"""
    joint = SYSTEM_SPACE.concat(bath.space)
    V = Operator.zeros(joint)
    for axis in system.coupling_axes:
        V = V + tensor(Operator(SYSTEM_SPACE, 0.5 * PAULI[axis]), bath.fields[axis])
    return V


def joint_hamiltonian(system: SystemSpec, bath: BuiltBath) -> Operator:
    """H_S + H_B + V on system (x) bath"""
    joint = SYSTEM_SPACE.concat(bath.space)
    return embed(system.hamiltonian(), joint) + embed(bath.hamiltonian, joint) + coupling_operator(system, bath)


def disjoint_union(first: BathSpec, second: BathSpec) -> BathSpec:
    """Two non-interacting baths side by side; fields add"""
    n1, n2 = first.num_spins, second.num_spins

    def left(term: PauliTerm) -> PauliTerm:
        return PauliTerm(term.coefficient, term.paulis + "i" * n2)

    def right(term: PauliTerm) -> PauliTerm:
        return PauliTerm(term.coefficient, "i" * n1 + term.paulis)

    fields = {}
    for axis in AXES:
        terms = tuple(left(t) for t in first.field_terms.get(axis, ()))
        terms += tuple(right(t) for t in second.field_terms.get(axis, ()))
        if terms:
            fields[axis] = terms
    return BathSpec(
        num_spins=n1 + n2,
        hamiltonian_terms=tuple(left(t) for t in first.hamiltonian_terms)
        + tuple(right(t) for t in second.hamiltonian_terms),
        field_terms=fields,
    )


# Presets

def single_spin_dephasing(g: float = 1.0, omega: float = 1.0, tilt: float = 0.0) -> BathSpec:
    """P1: H_B = (omega/2) sz, B_z = g (cos(tilt) sx + sin(tilt) sz)"""
    field_terms = [PauliTerm(g * np.cos(tilt), "x")]
    if tilt:
        field_terms.append(PauliTerm(g * np.sin(tilt), "z"))
    return BathSpec(1, (PauliTerm(omega / 2, "z"),), {"z": tuple(field_terms)})


def general_coupling(g: float = 1.0, omega: float = 1.0) -> BathSpec:
    """P2: one bath spin, all three fields nonzero"""
    return BathSpec(
        1,
        (PauliTerm(omega / 2, "z"),),
        {"x": (PauliTerm(g, "y"),), "y": (PauliTerm(g, "z"),), "z": (PauliTerm(g, "x"),)},
    )


def ising_cluster(g: float = 1.0, omega: float = 1.0, J: float = 0.3,
                  weights: Sequence[float] = (1.0, 0.8, 0.6),
                  detunings: Sequence[float] = (1.0, 1.3, 0.7)) -> BathSpec:
    """P3: three bath spins with pairwise Ising couplings, dephasing through B_z"""
    n = len(weights)
    if len(detunings) != n:
        raise ModelError("weights and detunings must have the same length")
    terms = [PauliTerm.single(omega * detunings[j] / 2, n, j, "z") for j in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            chars = ["i"] * n
            chars[i] = chars[j] = "z"
            terms.append(PauliTerm(J, "".join(chars)))
    field_z = tuple(PauliTerm.single(g * weights[j], n, j, "x") for j in range(n))
    return BathSpec(n, tuple(terms), {"z": field_z})


def zero_coupling(num_spins: int = 1, omega: float = 1.0) -> BathSpec:
    """A bath with dynamics but no fields"""
    terms = tuple(PauliTerm.single(omega / 2, num_spins, j, "z") for j in range(num_spins))
    return BathSpec(num_spins, terms, {})


PRESETS = {
    "P1": single_spin_dephasing,
    "single_spin_dephasing": single_spin_dephasing,
    "P2": general_coupling,
    "general_coupling": general_coupling,
    "P3": ising_cluster,
    "ising_cluster": ising_cluster,
    "zero": zero_coupling,
    "zero_coupling": zero_coupling,
}


def load_preset(name: str, **params) -> BathSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ModelError(f"Unknown bath preset '{name}' (choose from {sorted(PRESETS)})") from None
    try:
        return factory(**params)
    except TypeError as e:
        raise ModelError(f"Bad parameters for preset '{name}': {e}") from e
