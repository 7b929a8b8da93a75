"""
Inverse problem: from measurement correlations G back to bath correlations C.

To leading order in delta_t,

    G = prod(delta_t) * sum over (axes, signs) of prod_n A_{a_n}^{bar eta_n} * C^{eta}_{a}

with A_a^eta = 2 Tr[Lambda S_a^eta rho_S]. For a spin-1/2 slot with
rho_S = (1 + r.sigma)/2 and Lambda = m.sigma this is A^+_a = m_a and
A^-_a = (r x m)_a.
"""

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .bath_models import BuiltBath
from .correlations import RECONSTRUCTED, CorrelationIndex, CorrelationTensor
from .errors import (
    ConfigValidationError, MissingCorrelationError, ModelError, RankDeficiencyError, ReconstructionError,
    TimeOrderingError,
)
from .measurement import MeasurementConfig, MeasurementRecord, window_offsets
from .operators import AXES, PAULI, SuperSign, super_apply_matrix

logger = logging.getLogger(__name__)

COEFFICIENT_ATOL = 1e-12
# Independent units (trajectories or window batches) behind a streaming error estimate
MIN_INDEPENDENT_UNITS = 10


@dataclass(frozen=True)
class AxisAssignment:
    """Spin-1/2 slot layout: which axis carries the commutator and which the anticommutator part"""

    prep: Tuple[float, float, float]
    measure: Tuple[float, float, float]
    minus_axis: str
    plus_axis: str


AXIS_ASSIGNMENTS: Dict[str, AxisAssignment] = {
    "yz": AxisAssignment((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), minus_axis="y", plus_axis="z"),
    "zx": AxisAssignment((0.0, 1.0, 0.0), (0.0, 0.0, 1.0), minus_axis="z", plus_axis="x"),
    "xy": AxisAssignment((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), minus_axis="x", plus_axis="y"),
}


def coefficient_A(config: MeasurementConfig, axis: str, sign: SuperSign) -> float:
    """A_a^eta = 2 Tr[Lambda S_a^eta rho_S] with S_a = sigma_a / 2"""
    rho = config.system_state().matrix
    S = 0.5 * PAULI[axis]
    value = 2 * np.trace(config.observable().matrix @ super_apply_matrix(SuperSign.parse(sign), S, rho))
    return float(np.real(value))


def _slot_terms(config: MeasurementConfig) -> List[Tuple[str, SuperSign, float]]:
    """(axis, sign of C, coefficient) for every nonzero coefficient of a slot"""
    terms = []
    for axis in AXES:
        for a_sign in SuperSign:
            a = coefficient_A(config, axis, a_sign)
            if abs(a) > COEFFICIENT_ATOL:
                terms.append((axis, a_sign.bar, a))
    return terms


def coefficient_product(variant: Sequence[MeasurementConfig], idx: CorrelationIndex) -> float:
    out = 1.0
    for config, (axis, sign, _) in zip(variant, idx.entries):
        out *= coefficient_A(config, axis, sign.bar)
    return out


def _window_product(variant: Sequence[MeasurementConfig]) -> float:
    return float(np.prod([c.delta_t for c in variant]))


def forward_G(C: CorrelationTensor, variant: Sequence[MeasurementConfig]) -> float:
    """Leading-order measurement correlation of one protocol variant"""
    times = [c.time for c in variant]
    per_slot = [_slot_terms(c) for c in variant]
    total = 0.0
    for combo in product(*per_slot):
        if combo[-1][1] is SuperSign.MINUS:
            continue
        idx = CorrelationIndex.build("".join(a for a, _, _ in combo), [s for _, s, _ in combo], times)
        total += float(np.prod([a for _, _, a in combo])) * C.value(idx)
    return _window_product(variant) * total


@dataclass
class ConfigSet:
    """Protocol variants, the targeted correlations and the O(1) design matrix between them"""

    variants: Tuple[Tuple[MeasurementConfig, ...], ...]
    variant_ids: Tuple[str, ...]
    targets: Tuple[CorrelationIndex, ...]
    rank_tolerance: float = 1e-9
    design: np.ndarray = field(init=False, default=None)

    def __post_init__(self):
        self.variants = tuple(tuple(v) for v in self.variants)
        self.variant_ids = tuple(self.variant_ids)
        self.targets = tuple(self.targets)
        if len(self.variants) != len(self.variant_ids):
            raise ConfigValidationError("Each variant needs exactly one id")
        orders = {len(v) for v in self.variants} | {t.order for t in self.targets}
        if len(orders) != 1:
            raise ConfigValidationError(f"Variants and targets disagree on the order: {sorted(orders)}")
        self.design = np.array([[coefficient_product(v, t) for t in self.targets] for v in self.variants])
        self._check_rank()

    @property
    def order(self) -> int:
        return self.targets[0].order

    @property
    def times(self) -> Tuple[float, ...]:
        return self.targets[0].times

    def _check_rank(self):
        _, s, vh = linalg.svd(self.design)
        rank = int(np.sum(s > self.rank_tolerance * max(1.0, s.max(initial=0.0))))
        if rank < len(self.targets):
            null = vh[rank:]
            weight = np.max(np.abs(null), axis=0)
            bad = [t for t, w in zip(self.targets, weight) if w > 1e-8]
            raise RankDeficiencyError(
                f"Design matrix has rank {rank} for {len(self.targets)} targets; unidentifiable: "
                + ", ".join(str(t) for t in bad), bad)

    def singular_values(self, scaled: bool = True) -> np.ndarray:
        """Singular values of the design matrix, optionally with the delta_t powers restored"""
        s = linalg.svdvals(self.design)
        return s if scaled else s * _window_product(self.variants[0])

    def is_hadamard(self) -> bool:
        D = self.design
        n = len(self.targets)
        return (D.shape[0] == n and np.allclose(np.abs(D), 1.0)
                and np.allclose(D.T @ D, n * np.eye(n)))

    def variant(self, variant_id: str) -> Tuple[MeasurementConfig, ...]:
        return self.variants[self.variant_ids.index(variant_id)]


def _assignments(order: int, axis_assignment) -> List[AxisAssignment]:
    names = [axis_assignment] * order if isinstance(axis_assignment, str) else list(axis_assignment)
    if len(names) != order:
        raise ConfigValidationError(f"Need one axis assignment per slot ({order}), got {len(names)}")
    try:
        return [AXIS_ASSIGNMENTS[n] for n in names]
    except KeyError as e:
        raise ConfigValidationError(
            f"Unknown axis assignment {e.args[0]!r} (choose from {sorted(AXIS_ASSIGNMENTS)})") from None


def _check_times(times: Sequence[float], order: int):
    if len(times) != order:
        raise ConfigValidationError(f"Order {order} needs {order} times, got {len(times)}")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise TimeOrderingError(f"Protocol times must be strictly increasing, got {list(times)}")


def build_config_set(order: int, times: Sequence[float], delta_t: float,
                     axis_assignment: Union[str, Sequence[str]] = "yz",
                     rank_tolerance: float = 1e-9) -> ConfigSet:
    """The 2^(N-1) spin-1/2 variants: slots 1..N-1 take prep +/-r, slot N a single fixed config"""
    if order < 1:
        raise ConfigValidationError("Order must be at least 1")
    _check_times(times, order)
    layout = _assignments(order, axis_assignment)
    variants, ids = [], []
    for flips in product((1, -1), repeat=order - 1):
        signs = flips + (1,)
        variants.append(tuple(
            MeasurementConfig(t, tuple(s * v for v in a.prep), a.measure, delta_t)
            for t, s, a in zip(times, signs, layout)))
        ids.append("".join("+" if s > 0 else "-" for s in signs))
    targets = []
    for etas in product((SuperSign.PLUS, SuperSign.MINUS), repeat=order - 1):
        etas = etas + (SuperSign.PLUS,)
        axes = "".join(a.plus_axis if e is SuperSign.PLUS else a.minus_axis for e, a in zip(etas, layout))
        targets.append(CorrelationIndex.build(axes, etas, times))
    return ConfigSet(tuple(variants), tuple(ids), tuple(targets), rank_tolerance)


def custom_config_set(variants: Mapping[str, Sequence[MeasurementConfig]], targets: Sequence[CorrelationIndex],
                      rank_tolerance: float = 1e-9) -> ConfigSet:
    return ConfigSet(tuple(tuple(v) for v in variants.values()), tuple(variants), tuple(targets), rank_tolerance)


# Estimation

@dataclass(frozen=True)
class GEstimate:
    value: float
    stderr: float
    shots: int
    variant_id: str = ""


def estimate_from_products(products: np.ndarray, variant_id: str = "") -> GEstimate:
    products = np.asarray(products, dtype=float)
    n = products.size
    stderr = float(np.std(products, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return GEstimate(float(products.mean()), stderr, int(n), variant_id)


def estimate_from_trajectories(products: np.ndarray, variant_id: str = "") -> GEstimate:
    """Mean over a shots x windows array whose windows share a trajectory

    Windows of one trajectory are correlated through the bath state, so the
    error is taken from per-trajectory means. With fewer than
    MIN_INDEPENDENT_UNITS trajectories each one is cut into contiguous batches
    of windows and the batch means are used instead.
    """
    products = np.asarray(products, dtype=float)
    shots, width = products.shape
    batches = 1 if shots >= MIN_INDEPENDENT_UNITS else min(width, -(-MIN_INDEPENDENT_UNITS // shots))
    units = np.concatenate([b.mean(axis=1) for b in np.array_split(products, batches, axis=1)])
    stderr = float(np.std(units, ddof=1) / np.sqrt(units.size)) if units.size > 1 else 0.0
    return GEstimate(float(products.mean()), stderr, int(products.size), variant_id)


def window_starts(record: MeasurementRecord, offsets: Sequence[int],
                  keys: Optional[Sequence[str]] = None) -> np.ndarray:
    """Earliest-first disjoint windows with these offsets on used slots (and matching settings)

    A window is skipped when it would share a slot with one already taken.
    """
    offsets = np.asarray(offsets, dtype=int)
    starts = np.arange(max(record.num_slots - int(offsets.max()), 0))
    used = np.asarray(record.used, dtype=bool)
    ids = np.asarray(record.config_ids, dtype=object)
    keep = np.ones(starts.size, dtype=bool)
    for n, offset in enumerate(offsets):
        keep &= used[starts + offset]
        if keys is not None:
            keep &= ids[starts + offset] == keys[n]
    taken = np.zeros(record.num_slots, dtype=bool)
    chosen = []
    for j in starts[keep]:
        columns = j + offsets
        if not taken[columns].any():
            taken[columns] = True
            chosen.append(j)
    return np.array(chosen, dtype=int)


def _stream_offsets(record: MeasurementRecord, subset, variant_id: str, variant) -> List[int]:
    if subset is not None:
        return [k - subset[0] for k in subset]
    if variant is None:
        raise ReconstructionError("A streaming record needs a slot subset or a variant to select windows")
    spacing = record.times[1] - record.times[0] if record.num_slots > 1 else 1.0
    try:
        return window_offsets([c.time for c in variant], spacing)
    except ConfigValidationError as e:
        raise ConfigValidationError(f"Variant '{variant_id}': {e}") from e


def estimate_G(record: MeasurementRecord, subset: Optional[Sequence[int]] = None, variant_id: str = "",
               variant: Optional[Sequence[MeasurementConfig]] = None) -> GEstimate:
    """Sample mean of the outcome product over shots (unit) or over disjoint windows (streaming)

    For a streaming record, ``subset`` gives the slots of one window and the
    non-overlapping shifts of it that land on used slots are the samples; with
    a ``variant`` the window's slots must also carry the variant's settings.
    """
    if record.protocol == "streaming":
        return _estimate_stream(record, subset, variant_id, variant)
    subset = list(record.used_slots() if subset is None else subset)
    if not subset:
        raise ReconstructionError(f"Empty slot subset for variant '{variant_id}'")
    for k in subset:
        if not 0 <= k < record.num_slots:
            raise ConfigValidationError(f"Slot {k} outside the record ({record.num_slots} slots)")
        if not record.used[k]:
            raise ConfigValidationError(f"Slot {k} is idle and cannot enter a correlation")
    if variant is not None:
        if len(variant) != len(subset):
            raise ConfigValidationError(
                f"Subset has {len(subset)} slots but variant '{variant_id}' has {len(variant)}")
        nominal = np.array([c.time for c in variant])
        actual = np.array([record.times[k] for k in subset])
        if not np.allclose(nominal, actual, rtol=0, atol=1e-9):
            raise ConfigValidationError(
                f"Slot times {actual.tolist()} do not match variant '{variant_id}' times {nominal.tolist()}")
    products = np.prod(record.outcomes[:, subset], axis=1, dtype=np.int64)
    return estimate_from_products(products, variant_id)


def _estimate_stream(record: MeasurementRecord, subset, variant_id: str, variant) -> GEstimate:
    if subset is not None:
        subset = list(subset)
        if not subset:
            raise ReconstructionError(f"Empty slot subset for variant '{variant_id}'")
        if any(b <= a for a, b in zip(subset, subset[1:])):
            raise TimeOrderingError(f"Window slots must be strictly increasing, got {subset}")
        if subset[0] < 0 or subset[-1] >= record.num_slots:
            raise ConfigValidationError(f"Window slots {subset} outside the record ({record.num_slots} slots)")
    offsets = _stream_offsets(record, subset, variant_id, variant)
    if offsets[-1] >= record.num_slots:
        raise ReconstructionError(f"A window spans {offsets[-1] + 1} slots; the record has {record.num_slots}")
    keys = None
    if variant is not None:
        if len(variant) != len(offsets):
            raise ConfigValidationError(
                f"Subset has {len(offsets)} slots but variant '{variant_id}' has {len(variant)}")
        nominal = np.array([c.time - variant[0].time for c in variant])
        actual = np.array([record.times[o] - record.times[0] for o in offsets])
        if not np.allclose(nominal, actual, rtol=0, atol=1e-9):
            raise ConfigValidationError(
                f"Window times {actual.tolist()} do not match variant '{variant_id}' times {nominal.tolist()}")
        keys = [c.key for c in variant]
    starts = window_starts(record, offsets, keys)
    if starts.size == 0:
        raise ReconstructionError(
            f"No window of the record puts offsets {offsets} on used (non-idle) slots"
            + (f" with the settings of variant '{variant_id}'" if keys else ""))
    columns = starts[:, None] + np.asarray(offsets)[None, :]
    products = np.prod(record.outcomes[:, columns], axis=2, dtype=np.int64)
    logger.debug(f"Variant '{variant_id}': {starts.size} windows per trajectory")
    return estimate_from_trajectories(products, variant_id)


def _g_vector(estimates: Sequence[GEstimate], config_set: ConfigSet) -> Tuple[np.ndarray, np.ndarray]:
    by_id = {e.variant_id: e for e in estimates}
    missing = [v for v in config_set.variant_ids if v not in by_id]
    if missing:
        raise MissingCorrelationError(f"No G estimate for variants {missing}")
    scale = _window_product(config_set.variants[0])
    values = np.array([by_id[v].value for v in config_set.variant_ids]) / scale
    errors = np.array([by_id[v].stderr for v in config_set.variant_ids]) / scale
    return values, errors


def reconstruct(estimates: Sequence[GEstimate], config_set: ConfigSet) -> CorrelationTensor:
    """Least-squares solve of design . C = G / delta_t^N through the SVD pseudo-inverse"""
    y, sigma = _g_vector(estimates, config_set)
    U, s, vh = linalg.svd(config_set.design, full_matrices=False)
    pinv = (vh.T / s) @ U.T
    C = pinv @ y
    cov = (pinv * sigma ** 2) @ pinv.T
    tensor = CorrelationTensor()
    for idx, value, var in zip(config_set.targets, C, np.diag(cov)):
        tensor.set(idx, float(value), RECONSTRUCTED, float(np.sqrt(max(var, 0.0))))
    logger.debug(f"Reconstructed {len(tensor)} order-{config_set.order} correlations")
    return tensor


def hadamard_reconstruct(estimates: Sequence[GEstimate], config_set: ConfigSet) -> CorrelationTensor:
    """Closed-form sum/difference inversion for a Hadamard-type design"""
    if not config_set.is_hadamard():
        raise ValueError("Config set is not of Hadamard type")
    y, sigma = _g_vector(estimates, config_set)
    n = len(config_set.targets)
    D = config_set.design
    C = D.T @ y / n
    stderr = np.sqrt((D.T ** 2) @ sigma ** 2) / n
    tensor = CorrelationTensor()
    for idx, value, err in zip(config_set.targets, C, stderr):
        tensor.set(idx, float(value), RECONSTRUCTED, float(err))
    return tensor


# Pure dephasing

DEPHASING_PREP = (1.0, 0.0, 0.0)
DEPHASING_MEASURE = {SuperSign.PLUS: (0.0, 1.0, 0.0), SuperSign.MINUS: (0.0, 0.0, 1.0)}


def dephasing_variants(pattern: str, times: Sequence[float], delta_t: float,
                       prep_signs: Optional[Sequence[int]] = None) -> Tuple[MeasurementConfig, ...]:
    """Slots for C^{pattern}_{z..z}: '+' slots read y, '-' slots read z, all prepared along x"""
    signs = [SuperSign.parse(c) for c in pattern]
    if signs[-1] is not SuperSign.PLUS:
        raise ConfigValidationError("The latest sign of a measurable correlation must be '+'")
    _check_times(times, len(signs))
    prep_signs = [1] * len(signs) if prep_signs is None else list(prep_signs)
    return tuple(
        MeasurementConfig(t, tuple(p * v for v in DEPHASING_PREP), DEPHASING_MEASURE[s], delta_t)
        for t, s, p in zip(times, signs, prep_signs))


def prep_sign_string(prep_signs: Sequence[int]) -> str:
    return "".join("+" if p > 0 else "-" for p in prep_signs)


@dataclass
class DephasingShortcut:
    tensor: CorrelationTensor
    violations: List[Tuple[str, float]]


def dephasing_shortcuts(estimates: Mapping[str, GEstimate], pattern: str, times: Sequence[float],
                        delta_t: float, bath: BuiltBath, sigmas: float = 4.0) -> DephasingShortcut:
    """C^{pattern}_{z..z} = G / delta_t^N, pooled over prep-sign variants

    ``estimates`` maps a prep-sign string (earliest first, e.g. "+-+") to its G.
    Flipping the prep on a '+' slot flips G; on a '-' slot it leaves G alone.
    Variants disagreeing with the all-'+' one by more than ``sigmas`` stderr
    are reported.
    """
    if not bath.is_pure_dephasing:
        raise ModelError("Dephasing shortcuts need a pure-dephasing bath (B_x = B_y = 0)")
    signs = [SuperSign.parse(c) for c in pattern]
    n = len(signs)
    _check_times(times, n)
    scale = delta_t ** n
    reference = estimates.get("+" * n)
    aligned = []
    violations = []
    for key, est in estimates.items():
        if len(key) != n:
            raise ConfigValidationError(f"Prep-sign string '{key}' does not have {n} slots")
        parity = int(np.prod([1 if c == "+" or s is SuperSign.MINUS else -1 for c, s in zip(key, signs)]))
        aligned.append((parity * est.value, est.stderr))
        if reference is not None and key != "+" * n:
            gap = abs(est.value - parity * reference.value)
            bound = sigmas * np.hypot(est.stderr, reference.stderr)
            if gap > bound and gap > 1e-12:
                logger.warning(f"Sign identity violated for prep '{key}': |dG| = {gap:.3e} > {bound:.3e}")
                violations.append((key, float(gap)))
    values = np.array([v for v, _ in aligned])
    errors = np.array([e for _, e in aligned])
    idx = CorrelationIndex.build("z" * n, signs, times)
    tensor = CorrelationTensor()
    tensor.set(idx, float(values.mean() / scale), RECONSTRUCTED,
               float(np.sqrt(np.sum(errors ** 2)) / len(values) / scale))
    return DephasingShortcut(tensor, violations)
