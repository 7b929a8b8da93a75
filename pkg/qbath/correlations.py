"""
Exact time-ordered bath correlations and their cumulants.

A correlation C^{eta_N..eta_1}_{a_N..a_1}(t_N,..,t_1) is the trace of the chain
B_{a_N}^{eta_N}(t_N) ... B_{a_1}^{eta_1}(t_1) rho_B, applied earliest first.
Axis and sign strings are written earliest first throughout ("zz", "+-").
"""

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from itertools import combinations
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import sympy
from joblib import Parallel, delayed
from sympy.utilities.iterables import multiset_partitions

from .bath_models import BuiltBath
from .errors import MissingCorrelationError, NumericalInvariantError, TimeOrderingError
from .operators import AXES, Operator, SuperSign, super_apply_matrix

logger = logging.getLogger(__name__)

TIME_DECIMALS = 12

EXACT = "exact"
RECONSTRUCTED = "reconstructed"


def _canonical_time(t: float) -> float:
    return float(np.round(float(t), TIME_DECIMALS)) + 0.0


@dataclass(frozen=True)
class CorrelationIndex:
    """Ordered (axis, sign, time) triples, index 0 is the earliest"""

    entries: Tuple[Tuple[str, SuperSign, float], ...]

    def __post_init__(self):
        entries = tuple((str(a).lower(), SuperSign.parse(s), _canonical_time(t)) for a, s, t in self.entries)
        if not entries:
            raise ValueError("A correlation index needs at least one entry")
        for a, _, _ in entries:
            if a not in AXES:
                raise ValueError(f"Unknown axis '{a}'")
        times = [t for _, _, t in entries]
        for earlier, later in zip(times, times[1:]):
            if not later > earlier:
                raise TimeOrderingError(f"Correlation times must be strictly increasing, got {times}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def build(cls, axes: str, signs, times: Sequence[float]) -> "CorrelationIndex":
        if isinstance(signs, str):
            signs = [SuperSign.parse(c) for c in signs]
        if not (len(axes) == len(signs) == len(times)):
            raise ValueError(f"axes/signs/times lengths differ: {len(axes)}, {len(signs)}, {len(times)}")
        return cls(tuple(zip(axes, signs, times)))

    @property
    def order(self) -> int:
        return len(self.entries)

    @property
    def axes(self) -> str:
        return "".join(a for a, _, _ in self.entries)

    @property
    def signs(self) -> Tuple[SuperSign, ...]:
        return tuple(s for _, s, _ in self.entries)

    @property
    def sign_string(self) -> str:
        return "".join(s.value for s in self.signs)

    @property
    def times(self) -> Tuple[float, ...]:
        return tuple(t for _, _, t in self.entries)

    def sub_index(self, positions: Sequence[int]) -> "CorrelationIndex":
        return CorrelationIndex(tuple(self.entries[p] for p in sorted(positions)))

    def shifted(self, dt: float) -> "CorrelationIndex":
        return CorrelationIndex(tuple((a, s, t + dt) for a, s, t in self.entries))

    def __str__(self) -> str:
        times = ",".join(f"{t:g}" for t in self.times)
        return f"C^{self.sign_string}_{self.axes}({times})"


class CorrelationClass(Enum):
    CLASSICAL = "classical"
    QUANTUM = "quantum"


def classify(idx: CorrelationIndex) -> CorrelationClass:
    """Quantum iff any superoperator in the chain is a commutator"""
    if any(s is SuperSign.MINUS for s in idx.signs):
        return CorrelationClass.QUANTUM
    return CorrelationClass.CLASSICAL


@dataclass(frozen=True)
class CorrelationValue:
    value: float
    source: str = EXACT
    stderr: float = 0.0


class CorrelationTensor:
    """Map CorrelationIndex -> CorrelationValue"""

    def __init__(self, values: Optional[Dict[CorrelationIndex, CorrelationValue]] = None):
        self._values: Dict[CorrelationIndex, CorrelationValue] = dict(values or {})

    def set(self, idx: CorrelationIndex, value: float, source: str = EXACT, stderr: float = 0.0):
        self._values[idx] = CorrelationValue(float(value), source, float(stderr))

    def __getitem__(self, idx: CorrelationIndex) -> CorrelationValue:
        try:
            return self._values[idx]
        except KeyError:
            raise MissingCorrelationError(f"Missing correlation {idx}") from None

    def value(self, idx: CorrelationIndex) -> float:
        return self[idx].value

    def get(self, idx: CorrelationIndex, default=None):
        return self._values.get(idx, default)

    def __contains__(self, idx) -> bool:
        return idx in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[CorrelationIndex]:
        return iter(self._values)

    def items(self):
        return self._values.items()

    def merge(self, other: "CorrelationTensor") -> "CorrelationTensor":
        merged = dict(self._values)
        merged.update(other._values)
        return CorrelationTensor(merged)

    def filter(self, predicate: Callable[[CorrelationIndex], bool]) -> "CorrelationTensor":
        return CorrelationTensor({k: v for k, v in self._values.items() if predicate(k)})

    def sorted_indices(self) -> List[CorrelationIndex]:
        return sorted(self._values, key=lambda i: (i.order, i.axes, i.sign_string, i.times))

    def max_order(self) -> int:
        return max((i.order for i in self._values), default=0)

    # Serialization

    def rows(self) -> List[Dict]:
        width = self.max_order()
        rows = []
        for idx in self.sorted_indices():
            entry = self._values[idx]
            row = {"N": idx.order, "alpha": idx.axes, "eta": idx.sign_string}
            for n in range(width):
                row[f"t_{n + 1}"] = repr(idx.times[n]) if n < idx.order else ""
            row.update({"value": repr(entry.value), "source": entry.source, "stderr": repr(entry.stderr)})
            rows.append(row)
        return rows

    def to_csv(self, path):
        width = self.max_order()
        fields = ["N", "alpha", "eta"] + [f"t_{n + 1}" for n in range(width)] + ["value", "source", "stderr"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows())

    @classmethod
    def from_csv(cls, path) -> "CorrelationTensor":
        tensor = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                n = int(row["N"])
                times = [float(row[f"t_{k + 1}"]) for k in range(n)]
                idx = CorrelationIndex.build(row["alpha"], row["eta"], times)
                tensor.set(idx, float(row["value"]), row["source"], float(row["stderr"] or 0.0))
        return tensor

    def to_json(self, path):
        payload = {"correlations": [
            {"alpha": idx.axes, "eta": idx.sign_string, "times": list(idx.times),
             "value": self._values[idx].value, "source": self._values[idx].source,
             "stderr": self._values[idx].stderr}
            for idx in self.sorted_indices()]}
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)

    @classmethod
    def from_json(cls, path) -> "CorrelationTensor":
        with open(path) as f:
            payload = json.load(f)
        tensor = cls()
        for item in payload["correlations"]:
            idx = CorrelationIndex.build(item["alpha"], item["eta"], item["times"])
            tensor.set(idx, item["value"], item.get("source", EXACT), item.get("stderr", 0.0))
        return tensor


def _real_trace(X: np.ndarray, atol: float, what) -> float:
    tr = np.trace(X, axis1=-2, axis2=-1)
    residue = np.max(np.abs(np.imag(tr)), initial=0.0)
    if residue > atol:
        raise NumericalInvariantError(f"Imaginary residue {residue:.3e} in {what}")
    return np.real(tr)


def bath_correlation(idx: CorrelationIndex, bath: BuiltBath, rho_B: Operator, atol: float = 1e-10) -> float:
    """Exact C for one index"""
    X = rho_B.matrix
    for axis, sign, t in idx.entries:
        X = super_apply_matrix(sign, bath.field_at(axis, t).matrix, X)
    return float(_real_trace(X, atol, idx))


def _walk_prefixes(first: int, field_stack: Dict[str, np.ndarray], rho: np.ndarray, times: Sequence[float],
                   axes: Sequence[str], max_order: int, include_null_signs: bool,
                   atol: float) -> List[Tuple[CorrelationIndex, float]]:
    out = []

    def visit(prefix, X, last):
        idx = CorrelationIndex(tuple(prefix))
        if prefix[-1][1] is SuperSign.PLUS:
            out.append((idx, float(_real_trace(X, atol, idx))))
        elif include_null_signs:
            out.append((idx, 0.0))
        if len(prefix) == max_order:
            return
        for k in range(last + 1, len(times)):
            for axis in axes:
                for sign in SuperSign:
                    Y = super_apply_matrix(sign, field_stack[axis][k], X)
                    visit(prefix + [(axis, sign, times[k])], Y, k)

    for axis in axes:
        for sign in SuperSign:
            X = super_apply_matrix(sign, field_stack[axis][first], rho)
            visit([(axis, sign, times[first])], X, first)
    return out


def correlations_up_to(bath: BuiltBath, rho_B: Operator, max_order: int, times: Sequence[float],
                       axes: Iterable[str] = AXES, include_null_signs: bool = True,
                       n_jobs: int = 1, atol: float = 1e-10) -> CorrelationTensor:
    """Every correlation of order <= max_order on sorted tuples drawn from ``times``

    Entries whose latest sign is minus vanish identically; they are stored as
    exact zeros unless ``include_null_signs`` is False.
    """
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise TimeOrderingError(f"Time grid must be strictly increasing, got {times}")
    axes = tuple(axes)
    field_stack = {axis: bath.fields_at(axis, times) for axis in axes}
    chunks = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_walk_prefixes)(first, field_stack, rho_B.matrix, times, axes, max_order,
                                include_null_signs, atol)
        for first in range(len(times)))
    tensor = CorrelationTensor()
    for chunk in chunks:
        for idx, value in chunk:
            tensor.set(idx, value, EXACT)
    logger.info(f"Computed {len(tensor)} correlations up to order {max_order} on {len(times)} times")
    return tensor


# Cumulants

def cumulant(positions: Sequence[int], moment: Callable[[Tuple[int, ...]], object], cache: Optional[dict] = None):
    """Moment minus the sum over every partition into >= 2 blocks of the block cumulants

    ``moment`` maps a sorted tuple of positions to the moment of that sub-chain.
    Works with floats, numpy arrays or sympy expressions.
    """
    cache = {} if cache is None else cache

    def kappa(block: Tuple[int, ...]):
        if block in cache:
            return cache[block]
        value = moment(block)
        if len(block) > 1:
            for partition in multiset_partitions(list(block)):
                if len(partition) < 2:
                    continue
                term = 1
                for part in partition:
                    term = term * kappa(tuple(sorted(part)))
                value = value - term
        cache[block] = value
        return value

    return kappa(tuple(sorted(positions)))


@lru_cache(maxsize=None)
def _cumulant_polynomial(order: int):
    """Cumulant of ``order`` as a polynomial in the sub-moments, with its gradient"""
    blocks = [b for n in range(1, order + 1) for b in combinations(range(order), n)]
    symbols = {b: sympy.Symbol("m_" + "_".join(map(str, b))) for b in blocks}
    expr = sympy.expand(cumulant(range(order), lambda b: symbols[b]))
    ordered = [symbols[b] for b in blocks]
    grad = sympy.lambdify(ordered, [sympy.diff(expr, s) for s in ordered], "numpy")
    return blocks, grad


def cumulants_from_moments(tensor: CorrelationTensor) -> CorrelationTensor:
    """Cumulant tensor for every index present; stderr by the delta method"""
    out = CorrelationTensor()
    for idx in tensor.sorted_indices():
        cache = {}
        value = cumulant(range(idx.order), lambda b: tensor.value(idx.sub_index(b)), cache)
        entry = tensor[idx]
        stderr = 0.0
        if idx.order > 1:
            blocks, grad = _cumulant_polynomial(idx.order)
            errors = np.array([tensor[idx.sub_index(b)].stderr for b in blocks])
            if np.any(errors > 0):
                moments = [tensor.value(idx.sub_index(b)) for b in blocks]
                g = np.array(grad(*moments), dtype=float)
                stderr = float(np.sqrt(np.sum((g * errors) ** 2)))
        else:
            stderr = entry.stderr
        out.set(idx, float(value), entry.source, stderr)
    return out


# Grid moments for quadrature

def grid_moments(bath: BuiltBath, rho_B: Operator, axis: str, times: Sequence[float], max_order: int,
                 atol: float = 1e-10) -> List[np.ndarray]:
    """All-plus single-axis moments as cubes M[n-1][i_1, ..., i_n], i_1 earliest

    Only entries with i_1 <= ... <= i_n are meaningful; tied indices give the
    limit from the sorted region.
    """
    fields = bath.fields_at(axis, times)
    rho = rho_B.matrix
    cubes = []
    X = None
    for n in range(1, max_order + 1):
        # Tr[B^+ X] = Tr[B X]
        if n == 1:
            cubes.append(_real_trace(fields @ rho, atol, "first moment"))
            X = super_apply_matrix(SuperSign.PLUS, fields, rho[None])
            continue
        traces = np.einsum("...ab,kba->...k", X, fields)
        if np.max(np.abs(traces.imag), initial=0.0) > atol:
            raise NumericalInvariantError(f"Imaginary residue in order-{n} grid moments")
        cubes.append(traces.real)
        if n < max_order:
            AX = np.einsum("kab,...bc->...kac", fields, X)
            XA = np.einsum("...ab,kbc->...kac", X, fields)
            X = 0.5 * (AX + XA)
    return cubes


def grid_pair_correlations(bath: BuiltBath, rho_B: Operator, times: Sequence[float],
                           atol: float = 1e-10) -> Dict[str, np.ndarray]:
    """First and second order correlations on a grid, all axes and signs

    Keys are ``alpha + ':' + eta`` earliest first, e.g. ``"xz:-+"``; second
    order arrays are indexed [i_1, i_2].
    """
    stacks = {axis: bath.fields_at(axis, times) for axis in AXES}
    rho = rho_B.matrix
    out = {}
    for a1 in AXES:
        for s1 in SuperSign:
            X = super_apply_matrix(s1, stacks[a1], rho[None])
            out[f"{a1}:{s1.value}"] = _real_trace(X, atol, "first order")
            for a2 in AXES:
                for s2 in SuperSign:
                    B = stacks[a2]
                    AX = np.einsum("jab,ibc->ijac", B, X)
                    XA = np.einsum("ibc,jcd->ijbd", X, B)
                    Y = 0.5 * (AX + XA) if s2 is SuperSign.PLUS else -0.5j * (AX - XA)
                    out[f"{a1}{a2}:{s1.value}{s2.value}"] = _real_trace(Y, atol, "second order")
    return out
