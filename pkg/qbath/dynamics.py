"""
Reduced dynamics of the central spin: exact joint evolution against the
cumulant prediction built from the all-plus B_z correlations.

For pure dephasing the coherence c(t) = <sigma_x> - i <sigma_y> of a spin
prepared along +x is

    c(t) = exp( sum_N (-i)^N I_N(t) ),

where I_N(t) integrates the order-N cumulant over the sorted simplex
0 < t_1 < ... < t_N < t.
"""

import csv
import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from sympy.utilities.iterables import multiset_partitions

from .bath_models import BuiltBath, SystemSpec, joint_hamiltonian
from .correlations import CorrelationIndex, CorrelationTensor, grid_moments
from .errors import ConfigValidationError, GridMismatchError, GridTooCoarseError
from .operators import AXES, PAULI, SYSTEM_SPACE, Eigensystem, Operator, tensor

logger = logging.getLogger(__name__)

_LETTERS = "abcdefghijklmnop"


def exact_reduced_dynamics(rho_S0: Operator, system: SystemSpec, bath: BuiltBath, rho_B: Operator,
                           times: Sequence[float]) -> List[Operator]:
    """rho_S(t) = Tr_B[e^{-iHt} (rho_S0 x rho_B) e^{iHt}] by full diagonalization"""
    H = joint_hamiltonian(system, bath)
    eig = Eigensystem(H)
    V, w = eig.vectors, eig.energies
    rho0 = V.conj().T @ tensor(rho_S0, rho_B).matrix @ V
    times = np.asarray(times, dtype=float)
    phase = np.exp(-1j * np.outer(times, w))
    rotated = phase[:, :, None] * rho0[None] * phase.conj()[:, None, :]
    states = V[None] @ rotated @ V.conj().T[None]
    d = bath.space.total_dim
    reduced = np.trace(states.reshape(len(times), 2, d, 2, d), axis1=2, axis2=4)
    return [Operator(SYSTEM_SPACE, r) for r in reduced]


def bloch_components(states: Sequence[Operator]) -> np.ndarray:
    """(len, 3) array of <sigma_x>, <sigma_y>, <sigma_z>"""
    return np.array([[float(np.real(np.trace(PAULI[a] @ s.matrix))) for a in AXES] for s in states])


def simplex_integral(cube: np.ndarray, times: np.ndarray) -> np.ndarray:
    """I(t_k) = integral of cube over 0 < t_1 < ... < t_n < t_k for every grid time"""
    A = cube
    while A.ndim > 1:
        inner = cumulative_trapezoid(A, x=times, axis=0, initial=0)
        A = np.moveaxis(np.diagonal(inner, axis1=0, axis2=1), -1, 0)
    return cumulative_trapezoid(A, x=times, initial=0)


def _is_uniform_from_zero(times: np.ndarray) -> bool:
    if len(times) < 2 or abs(times[0]) > 1e-12:
        return False
    steps = np.diff(times)
    return bool(np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12))


def _nearest_strict(positions: Sequence[int], size: int) -> Optional[List[int]]:
    """Closest strictly increasing index tuple to a sorted one with ties"""
    out = list(positions)
    for k in range(1, len(out)):
        out[k] = max(out[k], out[k - 1] + 1)
    if out[-1] >= size:
        out[-1] = size - 1
        for k in range(len(out) - 2, -1, -1):
            out[k] = min(out[k], out[k + 1] - 1)
    if out[0] < 0:
        return None
    return out


class GridMoments:
    """All-plus moments of one axis as cubes on a uniform grid starting at 0"""

    def __init__(self, times: Sequence[float], cubes: Sequence[np.ndarray], axis: str = "z"):
        self.times = np.asarray(times, dtype=float)
        self.cubes = [np.asarray(c, dtype=float) for c in cubes]
        self.axis = axis
        if not _is_uniform_from_zero(self.times):
            raise GridMismatchError("Quadrature grid must be uniform and start at t = 0")
        for n, cube in enumerate(self.cubes, start=1):
            if cube.shape != (len(self.times),) * n:
                raise GridMismatchError(f"Order-{n} cube has shape {cube.shape}, grid has {len(self.times)} points")

    @property
    def order(self) -> int:
        return len(self.cubes)

    @classmethod
    def from_bath(cls, bath: BuiltBath, rho_B: Operator, times: Sequence[float], order: int,
                  axis: str = "z") -> "GridMoments":
        return cls(times, grid_moments(bath, rho_B, axis, times, order), axis)

    @classmethod
    def from_tensor(cls, tensor: CorrelationTensor, times: Sequence[float], order: int, axis: str = "z",
                    stderr_shift: float = 0.0) -> "GridMoments":
        """Read stored (exact or reconstructed) correlations; ties take the nearest strict tuple"""
        times = np.asarray(times, dtype=float)
        T = len(times)
        cubes = []
        for n in range(1, order + 1):
            cube = np.zeros((T,) * n)
            for pos in combinations_with_replacement(range(T), n):
                strict = _nearest_strict(pos, T)
                if strict is None:
                    raise GridMismatchError(f"Grid of {T} points is too small for order-{n} correlations")
                entry = tensor[CorrelationIndex.build(axis * n, "+" * n, [times[k] for k in strict])]
                cube[pos] = entry.value + stderr_shift * entry.stderr
            cubes.append(cube)
        return cls(times, cubes, axis)

    def cumulants(self) -> List[np.ndarray]:
        kappas: List[np.ndarray] = []
        for n, M in enumerate(self.cubes, start=1):
            K = M.copy()
            for partition in multiset_partitions(list(range(n))):
                if len(partition) < 2:
                    continue
                subscripts = ["".join(_LETTERS[p] for p in sorted(part)) for part in partition]
                operands = [kappas[len(part) - 1] for part in partition]
                K = K - np.einsum(",".join(subscripts) + "->" + _LETTERS[:n], *operands)
            kappas.append(K)
        return kappas

    def coarsened(self) -> "GridMoments":
        if len(self.times) % 2 == 0:
            raise GridMismatchError("Coarsening needs an odd number of grid points")
        return GridMoments(self.times[::2], [c[(slice(None, None, 2),) * c.ndim] for c in self.cubes], self.axis)


@dataclass
class DephasingPrediction:
    order: int
    times: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    coherence: np.ndarray
    quadrature_error: float = 0.0
    stderr_band: Optional[np.ndarray] = None


def _check_order(K: int):
    if K < 2 or K % 2:
        raise ConfigValidationError(f"Truncation order K must be an even integer >= 2, got {K}")


def _exponent(kappas: Sequence[np.ndarray], times: np.ndarray, K: int, include_odd_orders: bool) -> np.ndarray:
    total = np.zeros(len(times), dtype=np.complex128)
    for n in range(1, K + 1):
        if n % 2 and not include_odd_orders:
            continue
        total += (-1j) ** n * simplex_integral(kappas[n - 1], times)
    return total


def cumulant_predicted_dephasing(moments: GridMoments, K: int, include_odd_orders: bool = False,
                                 tolerance: float = 1e-6, check_quadrature: bool = True) -> DephasingPrediction:
    """Coherence from the cumulant exponential truncated at order K"""
    _check_order(K)
    if moments.order < K:
        raise ConfigValidationError(f"Moments available to order {moments.order}, prediction needs {K}")
    kappas = moments.cumulants()[:K]
    times = moments.times
    error = 0.0
    if check_quadrature and len(times) >= 5 and len(times) % 2:
        coarse = moments.coarsened()
        fine_term = simplex_integral(kappas[K - 1], times)[::2]
        coarse_term = simplex_integral(coarse.cumulants()[K - 1], coarse.times)
        error = float(np.max(np.abs(fine_term - coarse_term)) / 3.0)
        if error > tolerance:
            raise GridTooCoarseError(
                f"Estimated quadrature error {error:.3e} of the order-{K} term exceeds {tolerance:.1e}")
    c = np.exp(_exponent(kappas, times, K, include_odd_orders))
    if np.max(np.abs(c)) > 1 + 1e-6:
        logger.warning(f"Predicted Bloch vector longer than 1 (max |c| = {np.max(np.abs(c)):.6f})")
    return DephasingPrediction(K, times, c.real, -c.imag, c, error)


def predict_dephasing(bath: BuiltBath, rho_B: Operator, t_max: float, K: int, initial_points: int = 11,
                      tolerance: float = 1e-6, max_refinements: int = 6,
                      include_odd_orders: bool = False) -> DephasingPrediction:
    """Refine the grid until the order-K term stops changing by more than ``tolerance``"""
    _check_order(K)
    points = initial_points if initial_points % 2 else initial_points + 1
    previous = None
    for refinement in range(max_refinements + 1):
        times = np.linspace(0.0, t_max, points)
        moments = GridMoments.from_bath(bath, rho_B, times, K)
        term = simplex_integral(moments.cumulants()[K - 1], times)
        if previous is not None:
            change = float(np.max(np.abs(term[::2] - previous)))
            logger.debug(f"Refinement {refinement}: {points} points, order-{K} term changed by {change:.3e}")
            if change < tolerance:
                prediction = cumulant_predicted_dephasing(moments, K, include_odd_orders, check_quadrature=False)
                prediction.quadrature_error = change / 3.0
                return prediction
        previous = term
        points = 2 * points - 1
    raise GridTooCoarseError(f"Order-{K} term did not converge to {tolerance:.1e} after {max_refinements} refinements")


def predict_from_tensor(tensor: CorrelationTensor, times: Sequence[float], K: int, axis: str = "z",
                        include_odd_orders: bool = False, tolerance: float = 1e-6,
                        check_quadrature: bool = True) -> DephasingPrediction:
    """Prediction from stored correlations, with a band from shifting them by +/- one stderr"""
    moments = GridMoments.from_tensor(tensor, times, K, axis)
    prediction = cumulant_predicted_dephasing(moments, K, include_odd_orders, tolerance, check_quadrature)
    if any(v.stderr > 0 for _, v in tensor.items()):
        band = np.zeros(len(prediction.times))
        for shift in (1.0, -1.0):
            shifted = cumulant_predicted_dephasing(
                GridMoments.from_tensor(tensor, times, K, axis, stderr_shift=shift), K,
                include_odd_orders, check_quadrature=False)
            band = np.maximum(band, np.hypot(shifted.sigma_x - prediction.sigma_x,
                                             shifted.sigma_y - prediction.sigma_y))
        prediction.stderr_band = band
    return prediction


@dataclass
class DynamicsComparison:
    times: np.ndarray
    exact_x: np.ndarray
    exact_y: np.ndarray
    pred_x: np.ndarray
    pred_y: np.ndarray
    stderr_band: Optional[np.ndarray] = None

    @property
    def deviation(self) -> np.ndarray:
        return np.hypot(self.exact_x - self.pred_x, self.exact_y - self.pred_y)

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation))

    @property
    def integrated_deviation(self) -> float:
        if len(self.times) < 2:
            return 0.0
        return float(trapezoid(self.deviation, self.times))

    def to_csv(self, path):
        fields = ["t", "exact_x", "exact_y", "pred_x", "pred_y", "deviation"]
        if self.stderr_band is not None:
            fields.append("stderr_band")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(fields)
            for k, t in enumerate(self.times):
                row = [t, self.exact_x[k], self.exact_y[k], self.pred_x[k], self.pred_y[k], self.deviation[k]]
                if self.stderr_band is not None:
                    row.append(self.stderr_band[k])
                writer.writerow([repr(float(v)) for v in row])


def compare(exact: Sequence[Operator], prediction: DephasingPrediction,
            exact_times: Optional[Sequence[float]] = None) -> DynamicsComparison:
    times = prediction.times if exact_times is None else np.asarray(exact_times, dtype=float)
    if len(exact) != len(prediction.times) or not np.allclose(times, prediction.times, rtol=0, atol=1e-12):
        raise GridMismatchError(
            f"Exact dynamics on {len(exact)} points does not match the prediction grid of {len(prediction.times)}")
    bloch = bloch_components(exact)
    return DynamicsComparison(prediction.times, bloch[:, 0], bloch[:, 1],
                              prediction.sigma_x, prediction.sigma_y, prediction.stderr_band)


def series_reduced_state(rho_S0: Operator, system: SystemSpec, bath: BuiltBath, rho_B: Operator,
                         times: Sequence[float]) -> List[Operator]:
    """Reduced state to second order in the coupling, for any coupling axes

    rho_S(t) ~ rho_S0 - i int Tr_B[V(t_1), rho_0] - int int_{t_1<t_2} Tr_B[V(t_2), [V(t_1), rho_0]]
    with H_S = 0; the reduced state is the same in either picture.
    """
    times = np.asarray(times, dtype=float)
    d = bath.space.total_dim
    Vt = np.zeros((len(times), 2 * d, 2 * d), dtype=np.complex128)
    for axis in system.coupling_axes:
        fields = bath.fields_at(axis, times)
        Vt += np.einsum("ab,tij->taibj", 0.5 * PAULI[axis], fields).reshape(len(times), 2 * d, 2 * d)
    rho0 = tensor(rho_S0, rho_B).matrix
    first = -1j * (Vt @ rho0 - rho0 @ Vt)
    second = -1j * (np.einsum("jab,ibc->ijac", Vt, first) - np.einsum("iab,jbc->ijac", first, Vt))
    states = rho0[None] + cumulative_trapezoid(first, x=times, axis=0, initial=0) + simplex_integral_matrix(second, times)
    reduced = np.trace(states.reshape(len(times), 2, d, 2, d), axis1=2, axis2=4)
    return [Operator(SYSTEM_SPACE, r) for r in reduced]


def simplex_integral_matrix(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Second-order simplex integral of a (T, T, ...) array indexed [t_1, t_2, ...]"""
    inner = cumulative_trapezoid(values, x=times, axis=0, initial=0)
    diagonal = np.moveaxis(np.diagonal(inner, axis1=0, axis2=1), -1, 0)
    return cumulative_trapezoid(diagonal, x=times, axis=0, initial=0)
