"""
Weak-measurement protocol: Kraus bath maps, exact outcome statistics and
seeded sampling of measurement records.

A slot prepares the central spin in (1 + r.sigma)/2, couples it to the bath for
delta_t and reads out m.sigma. The outcome-conditioned bath map is M_lambda.
Outcome tuples are written earliest slot first.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .bath_models import BuiltBath
from .errors import (
    ConfigValidationError, NumericalInvariantError, TimeOrderingError, ZeroProbabilityBranchError,
)
from .operators import (
    AXES, PAULI, SYSTEM_SPACE, Eigensystem, Operator, SuperSign, bloch_observable, bloch_state,
    super_apply_matrix,
)
from .rng import SCHEDULE_STREAM, CounterRNG

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-10
OUTCOMES = (1, -1)


class ChannelMode(Enum):
    FIRST_ORDER = "first_order"
    EXACT_UNITARY = "exact_unitary"

    @classmethod
    def parse(cls, value) -> "ChannelMode":
        if isinstance(value, ChannelMode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigValidationError(
                f"Unknown channel mode '{value}' (choose first_order or exact_unitary)") from None


@dataclass(frozen=True)
class MeasurementConfig:
    """One weak-measurement slot"""

    time: float
    prep_bloch: Tuple[float, float, float]
    measure_axis: Tuple[float, float, float]
    delta_t: float

    def __post_init__(self):
        r = tuple(float(v) for v in self.prep_bloch)
        m = tuple(float(v) for v in self.measure_axis)
        object.__setattr__(self, "prep_bloch", r)
        object.__setattr__(self, "measure_axis", m)
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "delta_t", float(self.delta_t))
        if len(r) != 3 or abs(np.linalg.norm(r) - 1.0) > UNIT_TOL:
            raise ConfigValidationError(f"Preparation Bloch vector must be a unit 3-vector, got {r}")
        if len(m) != 3 or abs(np.linalg.norm(m) - 1.0) > UNIT_TOL:
            raise ConfigValidationError(f"Measurement axis must be a unit 3-vector, got {m}")
        overlap = float(np.dot(r, m))
        if abs(overlap) > UNIT_TOL:
            raise ConfigValidationError(f"Background condition violated: r.m = {overlap:.3e} (must be 0)")
        if not self.delta_t > 0:
            raise ConfigValidationError(f"delta_t must be positive, got {self.delta_t}")

    def at(self, time: float) -> "MeasurementConfig":
        return replace(self, time=time)

    @property
    def key(self) -> str:
        """Time-free identity of the slot setting, used to match stream slots to variants"""
        r, m = ([round(v, 12) + 0.0 for v in vec] for vec in (self.prep_bloch, self.measure_axis))
        return json.dumps({"r": r, "m": m, "dt": self.delta_t})

    def system_state(self) -> Operator:
        return bloch_state(self.prep_bloch)

    def observable(self) -> Operator:
        return bloch_observable(self.measure_axis)

    def projector(self, outcome: int) -> np.ndarray:
        return 0.5 * (PAULI["i"] + outcome * self.observable().matrix)

    def prep_ket(self) -> np.ndarray:
        """|r>, the +1 eigenvector of r.sigma"""
        values, vectors = np.linalg.eigh(bloch_observable(self.prep_bloch).matrix)
        return vectors[:, np.argmax(values)]

    def outcome_ket(self, outcome: int) -> np.ndarray:
        values, vectors = np.linalg.eigh(self.observable().matrix)
        return vectors[:, np.argmax(values) if outcome == 1 else np.argmin(values)]


class SuperMap:
    """Bath map X -> sum_j L_j X R_j"""

    def __init__(self, terms: Sequence[Tuple[np.ndarray, np.ndarray]]):
        self.terms = [(np.asarray(L, dtype=np.complex128), np.asarray(R, dtype=np.complex128)) for L, R in terms]

    @property
    def dim(self) -> int:
        return self.terms[0][0].shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Act on one matrix or a stack (..., d, d)"""
        out = np.zeros(np.shape(X), dtype=np.complex128)
        for L, R in self.terms:
            out = out + L @ X @ R
        return out

    def __call__(self, X: Operator) -> Operator:
        return Operator(X.space, self.apply(X.matrix))

    def __add__(self, other: "SuperMap") -> "SuperMap":
        return SuperMap(self.terms + other.terms)

    def __sub__(self, other: "SuperMap") -> "SuperMap":
        return SuperMap(self.terms + [(-L, R) for L, R in other.terms])

    def matrix(self) -> np.ndarray:
        """d^2 x d^2 matrix acting on row-major vec(X)"""
        d = self.dim
        out = np.zeros((d * d, d * d), dtype=np.complex128)
        for L, R in self.terms:
            out += np.kron(L, R.T)
        return out

    def choi(self) -> np.ndarray:
        """sum_ij |i><j| (x) M(|i><j|)"""
        d = self.dim
        basis = np.eye(d * d, dtype=np.complex128).reshape(d * d, d, d)
        images = self.apply(basis)
        return images.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)


@dataclass
class KrausPair:
    plus: SuperMap
    minus: SuperMap

    def __getitem__(self, outcome: int) -> SuperMap:
        if outcome == 1:
            return self.plus
        if outcome == -1:
            return self.minus
        raise KeyError(f"Outcome must be +1 or -1, got {outcome}")

    @property
    def averaged(self) -> SuperMap:
        """The idle channel sum_lambda M_lambda"""
        return self.plus + self.minus

    @property
    def difference(self) -> SuperMap:
        return self.plus - self.minus


def _window_unitary(config: MeasurementConfig, bath: BuiltBath, evolve_bath_during_window: bool) -> np.ndarray:
    d = bath.space.total_dim
    t, dt = config.time, config.delta_t
    V = np.zeros((2 * d, 2 * d), dtype=np.complex128)
    if evolve_bath_during_window:
        for axis in AXES:
            V += np.kron(0.5 * PAULI[axis], bath.fields[axis].matrix)
        H = V + np.kron(PAULI["i"], bath.hamiltonian.matrix)
        joint = Eigensystem(Operator(_joint_space(bath), H))
        free = bath.eigensystem
        before = np.kron(PAULI["i"], free.unitary(t))
        after = np.kron(PAULI["i"], free.unitary(-(t + dt)))
        return after @ joint.unitary(dt) @ before
    for axis in AXES:
        V += np.kron(0.5 * PAULI[axis], bath.field_at(axis, t).matrix)
    return Eigensystem(Operator(_joint_space(bath), V)).unitary(dt)


def _joint_space(bath: BuiltBath):
    return SYSTEM_SPACE.concat(bath.space)


def _exact_pair(config: MeasurementConfig, bath: BuiltBath, evolve_bath_during_window: bool) -> KrausPair:
    d = bath.space.total_dim
    U = _window_unitary(config, bath, evolve_bath_during_window).reshape(2, d, 2, d)
    r = config.prep_ket()
    maps = []
    for outcome in OUTCOMES:
        lam = config.outcome_ket(outcome)
        K = np.einsum("s,sapb,p->ab", lam.conj(), U, r)
        maps.append(SuperMap([(K, K.conj().T)]))
    return KrausPair(*maps)


def _plus_terms(B: np.ndarray, c: complex) -> List[Tuple[np.ndarray, np.ndarray]]:
    eye = np.eye(B.shape[0], dtype=np.complex128)
    return [(0.5 * c * B, eye), (eye, 0.5 * c * B)]


def _minus_terms(B: np.ndarray, c: complex) -> List[Tuple[np.ndarray, np.ndarray]]:
    eye = np.eye(B.shape[0], dtype=np.complex128)
    return [(-0.5j * c * B, eye), (eye, 0.5j * c * B)]


def _first_order_pair(config: MeasurementConfig, bath: BuiltBath) -> KrausPair:
    d = bath.space.total_dim
    rho_s = config.system_state().matrix
    maps = []
    for outcome in OUTCOMES:
        P = config.projector(outcome)
        terms = [(float(np.real(np.trace(P @ rho_s))) * np.eye(d, dtype=np.complex128), np.eye(d))]
        for axis in AXES:
            B = bath.field_at(axis, config.time).matrix
            if not np.any(B):
                continue
            S = 0.5 * PAULI[axis]
            a_plus = 2 * np.trace(P @ super_apply_matrix(SuperSign.PLUS, S, rho_s))
            a_minus = 2 * np.trace(P @ super_apply_matrix(SuperSign.MINUS, S, rho_s))
            terms += _minus_terms(B, config.delta_t * a_plus)
            terms += _plus_terms(B, config.delta_t * a_minus)
        maps.append(SuperMap(terms))
    return KrausPair(*maps)


def kraus_pair(config: MeasurementConfig, bath: BuiltBath, mode: ChannelMode = ChannelMode.EXACT_UNITARY,
               evolve_bath_during_window: bool = False) -> KrausPair:
    """(M_{+1}, M_{-1}) for one slot"""
    mode = ChannelMode.parse(mode)
    if mode is ChannelMode.FIRST_ORDER:
        return _first_order_pair(config, bath)
    return _exact_pair(config, bath, evolve_bath_during_window)


@dataclass(frozen=True)
class ScheduledSlot:
    config: MeasurementConfig
    used: bool = True
    config_id: str = ""


SlotLike = Union[MeasurementConfig, ScheduledSlot]


def _as_slots(configs: Sequence[SlotLike]) -> List[ScheduledSlot]:
    slots = [c if isinstance(c, ScheduledSlot) else ScheduledSlot(c, True, f"s{k}") for k, c in enumerate(configs)]
    times = [s.config.time for s in slots]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise TimeOrderingError(f"Measurement slots must have strictly increasing times, got {times}")
    return slots


@dataclass(frozen=True)
class ScheduleSpec:
    """Equally spaced streaming schedule; slot k sits at k * spacing

    Slot k takes the setting pattern[k % len(pattern)] and the flag
    used_mask[k % len(used_mask)]. Idle slots are measured like any other but
    never enter a correlation.
    """

    spacing: float
    num_slots: int
    pattern: Tuple[MeasurementConfig, ...]
    used_mask: Tuple[bool, ...] = (True,)

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(self.pattern))
        object.__setattr__(self, "used_mask", tuple(bool(u) for u in self.used_mask))
        if not self.pattern or not self.used_mask:
            raise ConfigValidationError("Schedule needs a non-empty config pattern and used/idle mask")
        if not any(self.used_mask):
            raise ConfigValidationError("Schedule used/idle mask marks every slot idle")
        if not self.spacing > 0:
            raise ConfigValidationError(f"Schedule spacing tau must be positive, got {self.spacing}")
        dt = max(c.delta_t for c in self.pattern)
        if self.spacing < dt:
            raise ConfigValidationError(
                f"Schedule spacing tau = {self.spacing} is smaller than delta_t = {dt}")
        if self.num_slots < 1:
            raise ConfigValidationError("Schedule needs at least one slot")

    @property
    def period(self) -> int:
        return int(np.lcm(len(self.pattern), len(self.used_mask)))

    def slots(self) -> List[ScheduledSlot]:
        out = []
        for k in range(self.num_slots):
            config = self.pattern[k % len(self.pattern)]
            out.append(ScheduledSlot(config.at(k * self.spacing),
                                     self.used_mask[k % len(self.used_mask)], config.key))
        return out

    def digest(self) -> str:
        payload = {
            "spacing": self.spacing, "num_slots": self.num_slots,
            "pattern": [[c.prep_bloch, c.measure_axis, c.delta_t] for c in self.pattern],
            "used_mask": self.used_mask,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def window_offsets(times: Sequence[float], spacing: float) -> List[int]:
    """Slot offsets of a variant's times relative to its first, on a grid of ``spacing``"""
    offsets = []
    for t in times:
        k = (t - times[0]) / spacing
        if abs(k - round(k)) > 1e-9:
            raise ConfigValidationError(f"Variant time {t} is not on the streaming grid of spacing {spacing}")
        offsets.append(int(round(k)))
    return offsets


def window_fits_mask(offsets: Sequence[int], used_mask: Sequence[bool]) -> bool:
    """Whether some window start puts every offset on a used slot"""
    n = len(used_mask)
    return any(all(used_mask[(j + o) % n] for o in offsets) for j in range(n))


def shared_schedule(variants: Sequence[Sequence[MeasurementConfig]], spacing: float, num_slots: int,
                    seed: int, used_mask: Sequence[bool] = (True,)) -> ScheduleSpec:
    """One stream from which every variant, at every order and timing, is read out

    Each slot takes a setting drawn uniformly from the distinct settings the
    variants use, so any window start whose slots carry a variant's settings at
    its offsets is a sample of that variant. A single setting is simply repeated.
    """
    alphabet: Dict[str, MeasurementConfig] = {}
    for configs in variants:
        offsets = window_offsets([c.time for c in configs], spacing)
        if offsets[-1] >= num_slots:
            raise ConfigValidationError(
                f"Variant spans {offsets[-1] + 1} slots but the schedule has only {num_slots}")
        if not window_fits_mask(offsets, used_mask):
            raise ConfigValidationError(
                f"Variant offsets {offsets} never land on used slots of mask {list(used_mask)}")
        for c in configs:
            alphabet.setdefault(c.key, c.at(0.0))
    if not alphabet:
        raise ConfigValidationError("Shared schedule needs at least one variant")
    settings = list(alphabet.values())
    if len(settings) == 1:
        pattern = tuple(settings)
    else:
        choices = CounterRNG(seed).generator(SCHEDULE_STREAM, 0).integers(len(settings), size=int(num_slots))
        pattern = tuple(settings[i] for i in choices)
    logger.debug(f"Shared schedule: {num_slots} slots over {len(settings)} settings")
    return ScheduleSpec(spacing, int(num_slots), pattern, tuple(used_mask))


def _pairs_for(slots: Sequence[ScheduledSlot], bath: BuiltBath, mode: ChannelMode,
               evolve_bath_during_window: bool) -> List[KrausPair]:
    return [kraus_pair(s.config, bath, mode, evolve_bath_during_window) for s in slots]


def joint_probabilities(configs: Sequence[SlotLike], bath: BuiltBath, rho_B: Operator,
                        mode: ChannelMode = ChannelMode.EXACT_UNITARY,
                        evolve_bath_during_window: bool = False,
                        tolerance: float = 1e-9) -> Dict[Tuple[int, ...], float]:
    """p(lambda_1, ..., lambda_N) over the used slots; idle slots apply the averaged channel"""
    mode = ChannelMode.parse(mode)
    slots = _as_slots(configs)
    pairs = _pairs_for(slots, bath, mode, evolve_bath_during_window)
    states = rho_B.matrix[None]
    outcomes: List[Tuple[int, ...]] = [()]
    for slot, pair in zip(slots, pairs):
        if not slot.used:
            states = pair.averaged.apply(states)
            continue
        states = np.concatenate([pair.plus.apply(states), pair.minus.apply(states)])
        outcomes = [o + (1,) for o in outcomes] + [o + (-1,) for o in outcomes]
    probs = np.real(np.trace(states, axis1=-2, axis2=-1))
    total = float(probs.sum())
    if mode is ChannelMode.FIRST_ORDER:
        if np.any(probs < 0):
            logger.warning(f"First-order probabilities negative down to {probs.min():.3e}; clamped to 0")
            probs = np.clip(probs, 0.0, None)
            probs = probs / probs.sum()
    elif abs(total - 1.0) > tolerance:
        raise NumericalInvariantError(f"Joint probabilities sum to {total!r}, not 1")
    elif probs.min() < -tolerance:
        raise NumericalInvariantError(f"Negative joint probability {probs.min():.3e}")
    return dict(zip(outcomes, probs.tolist()))


def exact_G(configs: Sequence[SlotLike], bath: BuiltBath, rho_B: Operator,
            mode: ChannelMode = ChannelMode.EXACT_UNITARY, evolve_bath_during_window: bool = False,
            tolerance: float = 1e-9) -> float:
    """Noise-free measurement correlation sum_p p * prod(lambda)"""
    probs = joint_probabilities(configs, bath, rho_B, mode, evolve_bath_during_window, tolerance)
    return float(sum(p * np.prod(o) for o, p in probs.items()))


def difference_chain_G(configs: Sequence[SlotLike], bath: BuiltBath, rho_B: Operator,
                       mode: ChannelMode = ChannelMode.EXACT_UNITARY,
                       evolve_bath_during_window: bool = False) -> float:
    """G = Tr[D_N ... D_1 rho_B] with D = M_+ - M_- on used slots"""
    slots = _as_slots(configs)
    X = rho_B.matrix
    for slot, pair in zip(slots, _pairs_for(slots, bath, ChannelMode.parse(mode), evolve_bath_during_window)):
        X = (pair.difference if slot.used else pair.averaged).apply(X)
    return float(np.real(np.trace(X)))


def decoherence_norm(config: MeasurementConfig, bath: BuiltBath, rho_B: Operator,
                     mode: ChannelMode = ChannelMode.EXACT_UNITARY) -> float:
    """Trace distance between rho_B and its image under the idle channel"""
    pair = kraus_pair(config, bath, mode)
    diff = pair.averaged.apply(rho_B.matrix) - rho_B.matrix
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


# Records

@dataclass
class MeasurementRecord:
    """shots x slots outcomes in {+1, -1} with per-slot metadata"""

    outcomes: np.ndarray
    times: Tuple[float, ...]
    config_ids: Tuple[str, ...]
    used: Tuple[bool, ...]
    seed: int = 0
    mode: str = ChannelMode.EXACT_UNITARY.value
    protocol: str = "unit"
    period: int = 0
    schedule_hash: str = ""
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.int8)
        if self.outcomes.ndim != 2 or self.outcomes.shape[1] != len(self.times):
            raise ValueError(f"Outcome array shape {self.outcomes.shape} does not match {len(self.times)} slots")
        if not np.all(np.abs(self.outcomes) == 1):
            raise ValueError("Outcomes must be +1 or -1")
        self.times = tuple(float(t) for t in self.times)
        self.config_ids = tuple(self.config_ids)
        self.used = tuple(bool(u) for u in self.used)

    @property
    def shots(self) -> int:
        return self.outcomes.shape[0]

    @property
    def num_slots(self) -> int:
        return self.outcomes.shape[1]

    def used_slots(self) -> List[int]:
        return [k for k, u in enumerate(self.used) if u]


def _sample_chunk(pairs: Sequence[KrausPair], rho: np.ndarray, n: int, rng: CounterRNG, start: int,
                  first_order: bool, zero_probability: float, drift_limit: float) -> np.ndarray:
    """Outcomes of shots [start, start + n); the conditioned state is renormalized by its own trace"""
    states = np.broadcast_to(rho, (n,) + rho.shape).copy()
    out = np.empty((n, len(pairs)), dtype=np.int8)
    drift = 0.0
    for k, pair in enumerate(pairs):
        plus = pair.plus.apply(states)
        minus = pair.minus.apply(states)
        p_plus = np.real(np.trace(plus, axis1=-2, axis2=-1))
        p_minus = np.real(np.trace(minus, axis1=-2, axis2=-1))
        drift += float(np.max(np.abs(p_plus + p_minus - 1.0)))
        if first_order:
            p_plus = np.clip(p_plus, 0.0, 1.0)
            p_minus = 1.0 - p_plus
        u = rng.shot_uniforms(k, start, n)
        chose_plus = u < p_plus / (p_plus + p_minus)
        chosen = np.where(chose_plus[:, None, None], plus, minus)
        norm = np.real(np.trace(chosen, axis1=-2, axis2=-1))
        if np.any(norm <= zero_probability):
            raise ZeroProbabilityBranchError(f"Sampled an outcome of probability {norm.min():.3e} at slot {k}")
        states = chosen / norm[:, None, None]
        out[:, k] = np.where(chose_plus, 1, -1)
        if (k + 1) % 1000 == 0 or k == len(pairs) - 1:
            if drift > drift_limit:
                raise NumericalInvariantError(f"Trace drift {drift:.3e} exceeds {drift_limit:.1e} by slot {k}")
            drift = 0.0
    return out


def sample_records(configs: Union[Sequence[SlotLike], ScheduleSpec], bath: BuiltBath, rho_B: Operator,
                   shots: int, seed: int, mode: ChannelMode = ChannelMode.EXACT_UNITARY,
                   evolve_bath_during_window: bool = False, shot_chunk: int = 65536, n_jobs: int = 1,
                   trace_drift_limit: float = 1e-8, zero_probability: float = 1e-300) -> MeasurementRecord:
    """Draw outcomes slot by slot from the conditioned bath state

    A unit sequence resets the bath every shot. A ScheduleSpec runs one long
    conditioned trajectory per shot; idle slots are still measured and their
    outcomes kept, only flagged unused.
    """
    mode = ChannelMode.parse(mode)
    if shots < 1:
        raise ConfigValidationError(f"shots must be >= 1, got {shots}")
    if isinstance(configs, ScheduleSpec):
        slots, protocol, period, digest = configs.slots(), "streaming", configs.period, configs.digest()
    else:
        slots = _as_slots(configs)
        protocol, period = "unit", len(slots)
        digest = hashlib.sha256(json.dumps(
            [[s.config.time, s.config.prep_bloch, s.config.measure_axis, s.config.delta_t, s.used]
             for s in slots]).encode()).hexdigest()
    pairs = _pairs_for(slots, bath, mode, evolve_bath_during_window)
    rng = CounterRNG(seed)
    starts = list(range(0, shots, shot_chunk))
    logger.info(f"Sampling {shots} {protocol} shots over {len(slots)} slots in {len(starts)} chunks")
    chunks = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_sample_chunk)(pairs, rho_B.matrix, min(shot_chunk, shots - start), rng, start,
                               mode is ChannelMode.FIRST_ORDER, zero_probability, trace_drift_limit)
        for start in starts)
    return MeasurementRecord(
        outcomes=np.concatenate(chunks),
        times=tuple(s.config.time for s in slots),
        config_ids=tuple(s.config_id for s in slots),
        used=tuple(s.used for s in slots),
        seed=int(seed), mode=mode.value, protocol=protocol, period=period, schedule_hash=digest,
    )
