"""
Experiment configuration read from TOML.

Every section is validated as soon as the file is loaded, so a run never
starts on a configuration that one of the stages would reject later.
"""

import hashlib
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .bath_models import BathSpec, PauliTerm, SystemSpec, ThermalParams, load_preset
from .correlations import CorrelationIndex
from .errors import ConfigValidationError, ModelError, QBathError
from .measurement import ChannelMode, MeasurementConfig, window_fits_mask, window_offsets
from .operators import AXES

logger = logging.getLogger(__name__)

PROTOCOLS = ("unit", "streaming")


def _strictly_increasing(times, what: str) -> Tuple[float, ...]:
    times = tuple(float(t) for t in times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigValidationError(f"{what} times must be strictly increasing, got {list(times)}")
    return times


@dataclass(frozen=True)
class BathSection:
    preset: Optional[str] = "P1"
    params: Dict[str, Any] = field(default_factory=dict)
    num_spins: int = 0
    hamiltonian: Tuple[Tuple[float, str], ...] = ()
    fields: Dict[str, Tuple[Tuple[float, str], ...]] = field(default_factory=dict)

    def spec(self) -> BathSpec:
        if self.preset:
            return load_preset(self.preset, **self.params)
        return BathSpec(
            self.num_spins,
            tuple(PauliTerm(float(c), str(p)) for c, p in self.hamiltonian),
            {axis: tuple(PauliTerm(float(c), str(p)) for c, p in terms) for axis, terms in self.fields.items()},
        )


@dataclass(frozen=True)
class ProtocolSection:
    kind: str = "unit"
    order: int = 2
    times: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    delta_t: float = 0.05
    shots: float = 100000
    seed: int = 1234
    mode: str = ChannelMode.EXACT_UNITARY.value
    axis_assignment: Union[str, Tuple[str, ...]] = "yz"
    dephasing: bool = False
    sign_checks: bool = False
    evolve_bath_during_window: bool = False
    variants: Tuple[Dict[str, Any], ...] = ()
    targets: Tuple[Dict[str, Any], ...] = ()

    @property
    def noise_free(self) -> bool:
        return math.isinf(self.shots)

    def custom_variants(self) -> Dict[str, Tuple[MeasurementConfig, ...]]:
        out = {}
        for k, item in enumerate(self.variants):
            preps, measures = item["prep"], item["measure"]
            if not (len(preps) == len(measures) == len(self.times)):
                raise ConfigValidationError(f"Custom variant {k} needs one prep and measure per protocol time")
            out[str(item.get("id", f"v{k}"))] = tuple(
                MeasurementConfig(t, tuple(r), tuple(m), self.delta_t)
                for t, r, m in zip(self.times, preps, measures))
        return out

    def custom_targets(self) -> List[CorrelationIndex]:
        return [CorrelationIndex.build(t["alpha"], t["eta"], self.times) for t in self.targets]


@dataclass(frozen=True)
class ScheduleSection:
    tau: float = 0.5
    num_slots: int = 400
    used_mask: Tuple[bool, ...] = (True,)


@dataclass(frozen=True)
class CorrelationsSection:
    order: int = 2
    times: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    axes: Tuple[str, ...] = ("z",)
    include_null_signs: bool = True


@dataclass(frozen=True)
class ValidationSection:
    K: int = 2
    t_max: float = 1.0
    points: Optional[int] = None
    include_odd_orders: bool = False
    tolerance: Optional[float] = None
    source: str = "exact"


@dataclass(frozen=True)
class ExperimentConfig:
    bath: BathSection = field(default_factory=BathSection)
    system: SystemSpec = field(default_factory=SystemSpec)
    thermal: ThermalParams = field(default_factory=ThermalParams)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    correlations: CorrelationsSection = field(default_factory=CorrelationsSection)
    validation: ValidationSection = field(default_factory=ValidationSection)
    output_dir: str = "out"
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)

    def validate(self) -> "ExperimentConfig":
        """Construct every component once; any failure is a configuration error"""
        try:
            self.bath.spec()
            p = self.protocol
            if p.kind not in PROTOCOLS:
                raise ConfigValidationError(f"Protocol must be one of {PROTOCOLS}, got '{p.kind}'")
            ChannelMode.parse(p.mode)
            _strictly_increasing(p.times, "Protocol")
            _strictly_increasing(self.correlations.times, "Correlation grid")
            if not p.delta_t > 0:
                raise ConfigValidationError(f"delta_t must be positive, got {p.delta_t}")
            if not (p.noise_free or (isinstance(p.shots, int) and p.shots >= 0)):
                raise ConfigValidationError(f"shots must be a non-negative integer or 'inf', got {p.shots!r}")
            if p.order < 1 or p.order > len(p.times):
                raise ConfigValidationError(f"Protocol order {p.order} needs between 1 and {len(p.times)} times")
            if p.variants:
                p.custom_variants()
                p.custom_targets()
            if p.kind == "streaming":
                self._validate_schedule()
            for axis in self.correlations.axes:
                if axis not in AXES:
                    raise ConfigValidationError(f"Unknown correlation axis '{axis}'")
            v = self.validation
            if v.K < 2 or v.K % 2:
                raise ConfigValidationError(f"Truncation order K must be an even integer >= 2, got {v.K}")
            if v.source not in ("exact", "reconstructed"):
                raise ConfigValidationError(f"Validation source must be 'exact' or 'reconstructed', got '{v.source}'")
        except ConfigValidationError:
            raise
        except (QBathError, ValueError, KeyError, TypeError) as e:
            raise ConfigValidationError(str(e)) from e
        return self

    def _validate_schedule(self):
        p, s = self.protocol, self.schedule
        if s.tau < p.delta_t:
            raise ConfigValidationError(f"Schedule spacing tau = {s.tau} is smaller than delta_t = {p.delta_t}")
        if not s.used_mask or not any(s.used_mask):
            raise ConfigValidationError("Schedule used_mask needs at least one used slot")
        offsets = window_offsets(p.times, s.tau)
        if offsets[-1] >= s.num_slots:
            raise ConfigValidationError(
                f"Protocol times span {offsets[-1] + 1} slots but the schedule has only {s.num_slots}")
        for n in range(1, p.order + 1):
            for subset in combinations(offsets, n):
                relative = [o - subset[0] for o in subset]
                if not window_fits_mask(relative, s.used_mask):
                    raise ConfigValidationError(
                        f"Slot offsets {relative} never land on used slots of mask {list(s.used_mask)}")

    def with_overrides(self, seed: Optional[int] = None, mode: Optional[str] = None,
                       shots: Optional[float] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        protocol = self.protocol
        if seed is not None:
            protocol = replace(protocol, seed=int(seed))
        if mode is not None:
            protocol = replace(protocol, mode=mode)
        if shots is not None:
            protocol = replace(protocol, shots=shots)
        raw = json.loads(json.dumps(self.raw, default=str))
        raw.setdefault("protocol", {}).update({"seed": protocol.seed, "mode": protocol.mode,
                                               "shots": str(protocol.shots)})
        return replace(self, protocol=protocol, output_dir=output_dir or self.output_dir, raw=raw).validate()

    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()


def parse_shots(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "noise-free", "noise_free"):
            return math.inf
        try:
            return int(value)
        except ValueError:
            raise ConfigValidationError(f"shots must be an integer or 'inf', got {value!r}") from None
    if isinstance(value, float):
        if math.isinf(value):
            return value
        if value.is_integer():
            return int(value)
        raise ConfigValidationError(f"shots must be an integer or 'inf', got {value!r}")
    return int(value)


def _section(raw: Dict[str, Any], name: str, cls, **converters):
    data = dict(raw.get(name, {}))
    for key, convert in converters.items():
        if key in data:
            data[key] = convert(data[key])
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigValidationError(f"[{name}] {e}") from e
    except (ModelError, ValueError) as e:
        raise ConfigValidationError(f"[{name}] {e}") from e


def experiment_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    def pairs(items):
        return tuple((float(c), str(p)) for c, p in items)

    bath = _section(raw, "bath", BathSection,
                    hamiltonian=pairs,
                    fields=lambda d: {k: pairs(v) for k, v in d.items()})
    system = _section(raw, "system", SystemSpec, coupling_axes=tuple)
    thermal = _section(raw, "thermal", ThermalParams, beta=float)
    protocol = _section(raw, "protocol", ProtocolSection,
                        times=tuple, shots=parse_shots,
                        axis_assignment=lambda a: a if isinstance(a, str) else tuple(a),
                        variants=tuple, targets=tuple)
    schedule = _section(raw, "schedule", ScheduleSection, used_mask=lambda m: tuple(bool(u) for u in m))
    correlations = _section(raw, "correlations", CorrelationsSection, times=tuple, axes=tuple)
    validation = _section(raw, "validation", ValidationSection)
    output_dir = raw.get("output", {}).get("dir", "out")
    config = ExperimentConfig(bath, system, thermal, protocol, schedule, correlations, validation,
                              output_dir, raw=raw)
    return config.validate()


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigValidationError(f"{path}: {e}") from e
    logger.info(f"Loaded experiment config {path}")
    return experiment_from_dict(raw)
