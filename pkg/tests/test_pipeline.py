import json
import math

import numpy as np
import pytest

from qbath.correlations import CorrelationIndex, CorrelationTensor
from qbath.errors import ModelError
from qbath.experiment import experiment_from_dict
from qbath.pipeline import BathCharacterization
from qbath.storage import load_record

TIMES = [0.0, 0.05, 0.1]


def dephasing_experiment(tmp_path, **protocol):
    raw = {
        "bath": {"preset": "P1"},
        "thermal": {"beta": 1.0},
        "protocol": {"order": 2, "times": TIMES, "delta_t": 0.01, "shots": "inf", "seed": 17,
                     "mode": "first_order", "dephasing": True, **protocol},
        "correlations": {"order": 2, "times": TIMES, "axes": ["z"]},
        "validation": {"K": 2, "t_max": 0.1, "points": 5},
        "output": {"dir": str(tmp_path / "run")},
    }
    return experiment_from_dict(raw)


def test_plan_for_dephasing(tmp_path):
    run = BathCharacterization(dephasing_experiment(tmp_path, sign_checks=True))
    groups = run.plan()
    # 3 singles with one pattern, 3 pairs with two patterns
    assert len(groups) == 9
    assert all(len(g.variants) == 2 ** len(g.variants[0].configs) for g in groups)
    names = [v.name for g in groups for v in g.variants]
    assert len(set(names)) == len(names)
    seeds = [v.seed for g in groups for v in g.variants]
    assert len(set(seeds)) == len(seeds)


def test_plan_for_general_protocol(tmp_path):
    experiment = dephasing_experiment(tmp_path, dephasing=False, order=3, axis_assignment=["yz", "yz", "zx"])
    groups = BathCharacterization(experiment).plan()
    assert [g.config_set.order for g in groups] == [1, 1, 1, 2, 2, 2, 3]
    assert all(g.config_set.is_hadamard() for g in groups)


def test_noise_free_reconstruction_recovers_exact_values(tmp_path):
    run = BathCharacterization(dephasing_experiment(tmp_path))
    exact = run.run_correlations()
    run.run_simulate()
    reconstructed = run.run_reconstruct()
    assert len(reconstructed) == 3 + 6
    for idx, entry in reconstructed.items():
        assert entry.value == pytest.approx(exact.value(idx), abs=1e-9)
    report = (run.out_dir / "reconstruction_report.csv").read_text().splitlines()
    assert report[0] == "index,value,stderr,exact,bias,within_band"
    assert all(line.endswith("True") for line in report[1:])


def test_validation_from_reconstructed_tensor(tmp_path):
    experiment = dephasing_experiment(tmp_path)
    run = BathCharacterization(experiment)
    run.run_simulate()
    run.run_reconstruct()
    comparison = run.run_validate(run.out_dir / "reconstructed.json")
    assert np.allclose(comparison.times, TIMES)
    assert comparison.max_deviation <= 1e-3


def test_validation_from_bath(tmp_path):
    run = BathCharacterization(dephasing_experiment(tmp_path))
    comparison = run.run_validate()
    assert comparison.max_deviation <= 1e-3
    assert (run.out_dir / "dynamics_comparison.csv").exists()


def test_validation_needs_pure_dephasing(tmp_path):
    raw_experiment = dephasing_experiment(tmp_path)
    experiment = experiment_from_dict({**raw_experiment.raw, "bath": {"preset": "P2"},
                                       "protocol": {**raw_experiment.raw["protocol"], "dephasing": False}})
    run = BathCharacterization(experiment)
    with pytest.raises(ModelError):
        run.run_validate()
    assert run.get_metrics()["total_errors"] == 1


@pytest.mark.slow
def test_sampled_run_is_reproducible(tmp_path):
    outputs = []
    for k in range(2):
        experiment = dephasing_experiment(tmp_path / str(k), shots=4000, mode="exact_unitary", sign_checks=True)
        run = BathCharacterization(experiment)
        run.run_simulate()
        run.run_reconstruct()
        manifest = json.loads(run.write_manifest().read_text())
        outputs.append((
            (run.out_dir / "reconstructed.csv").read_bytes(),
            manifest["seed"],
            sorted(manifest["outputs"]["simulate"]),
        ))
        record = load_record(run.out_dir / "records" / "N2_t0-2_pp_pp.qbr")
        assert record.shots == 4000
    assert outputs[0] == outputs[1]


def test_streaming_pipeline(tmp_path):
    raw = {
        "bath": {"preset": "P3", "params": {"g": 0.5}},
        "thermal": {"beta": 0.5},
        "protocol": {"kind": "streaming", "order": 2, "times": [0.0, 0.5], "delta_t": 0.05, "shots": 200,
                     "seed": 3},
        "schedule": {"tau": 0.5, "num_slots": 60},
        "output": {"dir": str(tmp_path / "stream")},
    }
    run = BathCharacterization(experiment_from_dict(raw))
    run.run_simulate()
    records = sorted(p.name for p in (run.out_dir / "records").glob("*.qbr"))
    assert records == ["stream.qbr"]
    record = load_record(run.out_dir / "records" / "stream.qbr")
    assert record.protocol == "streaming"
    assert record.num_slots == 60
    planned = [v for group in run.plan() for v in group.variants]
    assert record.metadata["variants"] == [v.name for v in planned]
    assert {len(v.configs) for v in planned} == {1, 2}
    tensor = run.run_reconstruct()
    idx = CorrelationIndex.build("zz", "++", [0.0, 0.5])
    assert idx in tensor
    assert tensor[idx].stderr > 0


def test_manifest_lists_outputs(tmp_path):
    run = BathCharacterization(dephasing_experiment(tmp_path))
    run.run_all()
    manifest = json.loads(run.write_manifest().read_text())
    assert manifest["seed"] == 17
    assert set(manifest["outputs"]) == {"correlations", "simulate", "reconstruct", "validate"}
    assert "correlations.csv" in manifest["outputs"]["correlations"]
    assert manifest["timings"]["successful_stages"] == 4
    loaded = CorrelationTensor.from_csv(run.out_dir / "reconstructed.csv")
    assert loaded.max_order() == 2
    assert math.isfinite(sum(v.value for _, v in loaded.items()))
