import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from itertools import combinations, product
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .bath_models import build_bath, thermal_state
from .Config import Config
from .correlations import CorrelationIndex, CorrelationTensor, bath_correlation, correlations_up_to
from .dynamics import compare, exact_reduced_dynamics, predict_dephasing, predict_from_tensor
from .errors import ModelError
from .experiment import ExperimentConfig
from .measurement import (
    ChannelMode, MeasurementConfig, MeasurementRecord, ScheduleSpec, exact_G, sample_records, shared_schedule,
)
from .monitoring import PipelineMonitor
from .operators import bloch_state
from .reconstruction import (
    ConfigSet, GEstimate, build_config_set, custom_config_set, dephasing_shortcuts,
    dephasing_variants, estimate_G, prep_sign_string, reconstruct,
)
from .storage import (
    load_record, load_tensor, read_json, record_to_csv, save_record, save_tensor, write_json, write_rows,
)

logger = logging.getLogger(__name__)

STREAM_RECORD = "stream"


@dataclass
class PlannedVariant:
    name: str
    group: str
    variant_id: str
    configs: Tuple[MeasurementConfig, ...]
    seed: int


@dataclass
class PlannedGroup:
    """One linear system: a ConfigSet, or a pure-dephasing pattern"""

    name: str
    variants: List[PlannedVariant]
    config_set: Optional[ConfigSet] = None
    pattern: Optional[str] = None


@dataclass
class RunManifest:
    """Provenance of an output directory, accumulated over every stage run into it

    ``seed`` is the seed the records on disk were sampled with; ``stage_seeds`` keeps
    the seed each stage command last ran with.
    """

    config_hash: str
    version: str
    seed: int
    outputs: Dict[str, List[str]] = field(default_factory=dict)
    stage_seeds: Dict[str, int] = field(default_factory=dict)
    stage_config_hashes: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def merged_into(self, previous: Dict[str, Any]) -> Dict[str, Any]:
        """This run's entries over a manifest already on disk; stages not rerun keep their entries"""
        merged = self.to_dict()
        for key in ("outputs", "stage_seeds", "stage_config_hashes"):
            merged[key] = {**previous.get(key, {}), **merged[key]}
        merged["seed"] = merged["stage_seeds"].get("simulate", previous.get("seed", self.seed))
        return merged


def _subset_label(indices) -> str:
    return "t" + "-".join(str(i) for i in indices)


def _sign_label(signs: str) -> str:
    return signs.replace("+", "p").replace("-", "m")


class BathCharacterization:
    """Exact correlations, simulated protocol, reconstruction and dynamics validation for one experiment"""

    def __init__(self, experiment: ExperimentConfig, config: Config = None, out_dir=None):
        logger.debug("Initializing BathCharacterization")
        self.config = config or Config()
        self.monitor = PipelineMonitor(self.config)
        self.experiment = experiment
        self.out_dir = Path(out_dir or experiment.output_dir)
        self.spec = experiment.bath.spec()
        self.bath = build_bath(self.spec)
        self.rho_B = thermal_state(self.bath.hamiltonian, experiment.thermal)
        self.mode = ChannelMode.parse(experiment.protocol.mode)
        self.manifest = RunManifest(experiment.digest(), __version__, experiment.protocol.seed)
        self._plan: Optional[List[PlannedGroup]] = None
        self._exact_g: Dict[str, float] = {}
        self._records: Dict[Path, MeasurementRecord] = {}
        self.reconstructed: Optional[CorrelationTensor] = None

    @contextmanager
    def _stage(self, name: str, **info):
        logger.info(f"Stage '{name}' started")
        self.manifest.stage_seeds[name] = self.experiment.protocol.seed
        self.manifest.stage_config_hashes[name] = self.manifest.config_hash
        self.manifest.outputs[name] = []
        try:
            with self.monitor.track(name, **info):
                yield
        except Exception as e:
            logger.error(f"Stage '{name}' failed: {e}")
            raise
        logger.info(f"Stage '{name}' finished")

    def _record_output(self, stage: str, *paths: Path):
        entries = self.manifest.outputs.setdefault(stage, [])
        for path in paths:
            entries.append(str(Path(path).relative_to(self.out_dir)))

    # Exact correlations

    def run_correlations(self) -> CorrelationTensor:
        c = self.experiment.correlations
        with self._stage("correlations", order=c.order):
            tensor = correlations_up_to(self.bath, self.rho_B, c.order, c.times, c.axes,
                                        include_null_signs=c.include_null_signs,
                                        n_jobs=self.config['THREADS'], atol=self.config['TOLERANCE'])
            paths = save_tensor(tensor, self.out_dir, "correlations")
            self._record_output("correlations", *paths)
        return tensor

    # Protocol plan

    def _variant_seed(self, k: int) -> int:
        state = np.random.SeedSequence([self.experiment.protocol.seed, k]).generate_state(1, dtype=np.uint64)
        return int(state[0])

    def plan(self) -> List[PlannedGroup]:
        """Every protocol variant to simulate, grouped by the linear system it feeds"""
        if self._plan is not None:
            return self._plan
        p = self.experiment.protocol
        groups: List[PlannedGroup] = []
        counter = 0

        def variant(group: str, vid: str, configs) -> PlannedVariant:
            nonlocal counter
            counter += 1
            return PlannedVariant(f"{group}_{_sign_label(vid)}", group, vid, tuple(configs),
                                  self._variant_seed(counter - 1))

        if p.variants:
            variants = p.custom_variants()
            config_set = custom_config_set(variants, p.custom_targets(), self.config['RANK_TOLERANCE'])
            name = f"N{len(p.times)}_custom"
            groups.append(PlannedGroup(name, [variant(name, vid, cfg) for vid, cfg in variants.items()],
                                       config_set))
        else:
            for n in range(1, p.order + 1):
                for indices in combinations(range(len(p.times)), n):
                    times = [p.times[i] for i in indices]
                    base = f"N{n}_{_subset_label(indices)}"
                    if p.dephasing:
                        groups.extend(self._dephasing_groups(base, n, times, variant))
                        continue
                    assignment = p.axis_assignment
                    if not isinstance(assignment, str):
                        assignment = tuple(assignment)[-n:]
                    config_set = build_config_set(n, times, p.delta_t, assignment, self.config['RANK_TOLERANCE'])
                    groups.append(PlannedGroup(base, [
                        variant(base, vid, cfg) for vid, cfg in zip(config_set.variant_ids, config_set.variants)],
                        config_set))
        logger.info(f"Protocol plan: {len(groups)} groups, {counter} variants")
        self._plan = groups
        return groups

    def _dephasing_groups(self, base: str, n: int, times, variant) -> List[PlannedGroup]:
        p = self.experiment.protocol
        groups = []
        for head in product("+-", repeat=n - 1):
            pattern = "".join(head) + "+"
            name = f"{base}_{_sign_label(pattern)}"
            prep_sets = [(1,) * n]
            if p.sign_checks:
                prep_sets = list(product((1, -1), repeat=n))
            members = []
            for preps in prep_sets:
                vid = prep_sign_string(preps)
                members.append(variant(name, vid, dephasing_variants(pattern, times, p.delta_t, preps)))
            groups.append(PlannedGroup(name, members, pattern=pattern))
        return groups

    # Simulation

    def _exact(self, v: PlannedVariant) -> float:
        if v.name not in self._exact_g:
            self._exact_g[v.name] = exact_G(v.configs, self.bath, self.rho_B, self.mode,
                                            self.experiment.protocol.evolve_bath_during_window,
                                            self.config['PROBABILITY_TOLERANCE'])
        return self._exact_g[v.name]

    def stream_schedule(self) -> ScheduleSpec:
        """The one schedule every planned variant is read out of in streaming mode"""
        s, p = self.experiment.schedule, self.experiment.protocol
        variants = [v.configs for group in self.plan() for v in group.variants]
        return shared_schedule(variants, s.tau, s.num_slots, p.seed, s.used_mask)

    def _sample(self, source, seed: int):
        p = self.experiment.protocol
        return sample_records(
            source, self.bath, self.rho_B, p.shots, seed, self.mode, p.evolve_bath_during_window,
            shot_chunk=self.config['SHOT_CHUNK'], n_jobs=self.config['THREADS'],
            trace_drift_limit=self.config['TRACE_DRIFT_LIMIT'], zero_probability=self.config['ZERO_PROBABILITY'])

    def _save_record(self, record, stem: str):
        qbr = save_record(record, self.out_dir / "records" / f"{stem}.qbr")
        csv_path = record_to_csv(record, self.out_dir / "records" / f"{stem}.csv")
        self._record_output("simulate", qbr, csv_path)

    def run_simulate(self) -> Dict[str, float]:
        p = self.experiment.protocol
        with self._stage("simulate", shots=str(p.shots)):
            rows = []
            for group in self.plan():
                for v in group.variants:
                    rows.append({"variant": v.name, "N": len(v.configs),
                                 "times": " ".join(repr(c.time) for c in v.configs), "G": self._exact(v)})
            path = write_rows(self.out_dir / "exact_g.csv", ["variant", "N", "times", "G"], rows)
            self._record_output("simulate", path)
            if not p.noise_free and p.shots > 0:
                if p.kind == "streaming":
                    record = self._sample(self.stream_schedule(), p.seed)
                    record.metadata["variants"] = [v.name for group in self.plan() for v in group.variants]
                    self._save_record(record, STREAM_RECORD)
                else:
                    for group in self.plan():
                        for v in group.variants:
                            record = self._sample(v.configs, v.seed)
                            record.metadata.update({"variant": v.name, "variant_id": v.variant_id})
                            self._save_record(record, v.name)
        return dict(self._exact_g)

    # Reconstruction

    def _load_record(self, path: Path) -> MeasurementRecord:
        if path not in self._records:
            self._records[path] = load_record(path)
        return self._records[path]

    def _estimate(self, v: PlannedVariant, record_dir: Path) -> GEstimate:
        p = self.experiment.protocol
        if p.noise_free:
            return GEstimate(self._exact(v), 0.0, 0, v.variant_id)
        stem = STREAM_RECORD if p.kind == "streaming" else v.name
        return estimate_G(self._load_record(record_dir / f"{stem}.qbr"), None, v.variant_id, v.configs)

    def _reference(self, idx: CorrelationIndex) -> float:
        return bath_correlation(idx, self.bath, self.rho_B, self.config['TOLERANCE'])

    def run_reconstruct(self, record_dir=None) -> CorrelationTensor:
        p = self.experiment.protocol
        record_dir = Path(record_dir) if record_dir else self.out_dir / "records"
        with self._stage("reconstruct"):
            tensor = CorrelationTensor()
            report = []
            for group in self.plan():
                estimates = [self._estimate(v, record_dir) for v in group.variants]
                if group.pattern is not None:
                    times = [c.time for c in group.variants[0].configs]
                    shortcut = dephasing_shortcuts({e.variant_id: e for e in estimates}, group.pattern, times,
                                                   p.delta_t, self.bath, self.config['CONSISTENCY_SIGMAS'])
                    part = shortcut.tensor
                    for key, gap in shortcut.violations:
                        report.append({"index": f"{group.name}:{key}", "value": gap, "stderr": "",
                                       "exact": "", "bias": "", "within_band": "sign-identity-violation"})
                else:
                    part = reconstruct(estimates, group.config_set)
                for idx, entry in part.items():
                    exact = self._reference(idx)
                    bias = entry.value - exact
                    band = max(0.05 * abs(exact), 4 * entry.stderr, self.config['TOLERANCE'])
                    report.append({"index": str(idx), "value": entry.value, "stderr": entry.stderr,
                                   "exact": exact, "bias": bias, "within_band": abs(bias) <= band})
                tensor = tensor.merge(part)
            paths = save_tensor(tensor, self.out_dir, "reconstructed")
            report_path = write_rows(self.out_dir / "reconstruction_report.csv",
                                     ["index", "value", "stderr", "exact", "bias", "within_band"], report)
            self._record_output("reconstruct", *paths, report_path)
        self.reconstructed = tensor
        return tensor

    # Validation

    def run_validate(self, tensor_path=None):
        v = self.experiment.validation
        tolerance = v.tolerance if v.tolerance is not None else self.config['QUADRATURE_TOLERANCE']
        with self._stage("validate", K=v.K):
            if not self.bath.is_pure_dephasing:
                raise ModelError("Dynamics validation needs a pure-dephasing bath (B_x = B_y = 0)")
            source = None
            if tensor_path is not None:
                source = load_tensor(tensor_path)
            elif v.source == "reconstructed":
                source = self.reconstructed if self.reconstructed is not None else \
                    load_tensor(self.out_dir / "reconstructed.csv")
            if source is None:
                prediction = predict_dephasing(self.bath, self.rho_B, v.t_max, v.K,
                                               v.points or self.config['INITIAL_GRID_POINTS'], tolerance,
                                               self.config['MAX_REFINEMENTS'], v.include_odd_orders)
            else:
                times = sorted({t for idx in source if idx.axes == "z" * idx.order for t in idx.times})
                logger.info(f"Predicting from {len(source)} stored correlations on {len(times)} grid times")
                prediction = predict_from_tensor(source, times, v.K, "z", v.include_odd_orders, tolerance)
            exact = exact_reduced_dynamics(bloch_state((1.0, 0.0, 0.0)), self.experiment.system, self.bath,
                                           self.rho_B, prediction.times)
            comparison = compare(exact, prediction)
            path = self.out_dir / "dynamics_comparison.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            comparison.to_csv(path)
            self._record_output("validate", path)
            logger.info(f"Max deviation {comparison.max_deviation:.3e} (K = {v.K})")
        return comparison

    def run_all(self):
        self.run_correlations()
        self.run_simulate()
        self.run_reconstruct()
        return self.run_validate()

    def write_manifest(self) -> Path:
        path = self.out_dir / "manifest.json"
        self.manifest.timings = self.monitor.get_metrics()
        previous: Dict[str, Any] = {}
        if path.exists():
            try:
                previous = read_json(path)
            except (OSError, ValueError) as e:
                logger.warning(f"Ignoring unreadable manifest {path}: {e}")
        return write_json(path, self.manifest.merged_into(previous))

    def get_metrics(self) -> Dict[str, Any]:
        """Get run metrics"""
        return self.monitor.get_metrics()
