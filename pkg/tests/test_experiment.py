import math
from pathlib import Path

import pytest

from qbath.errors import ConfigValidationError
from qbath.experiment import experiment_from_dict, load_experiment, parse_shots

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def base(**sections):
    raw = {
        "bath": {"preset": "P1"},
        "protocol": {"order": 2, "times": [0.0, 0.5, 1.0], "delta_t": 0.01, "shots": 1000},
    }
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return raw


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")))
def test_shipped_configs_load(path):
    experiment = load_experiment(path)
    assert experiment.digest() == load_experiment(path).digest()


def test_defaults_fill_missing_sections():
    experiment = experiment_from_dict(base())
    assert experiment.validation.K == 2
    assert experiment.schedule.tau == 0.5
    assert experiment.output_dir == "out"
    assert experiment.protocol.mode == "exact_unitary"


def test_custom_bath_terms():
    experiment = experiment_from_dict(base(bath={
        "preset": "", "num_spins": 2,
        "hamiltonian": [[0.5, "zi"], [0.5, "iz"], [0.2, "zz"]],
        "fields": {"z": [[1.0, "xi"], [0.5, "ix"]]},
    }))
    spec = experiment.bath.spec()
    assert spec.num_spins == 2
    assert len(spec.hamiltonian_terms) == 3


@pytest.mark.parametrize("value,expected", [("inf", math.inf), ("noise-free", math.inf), (1000, 1000),
                                            ("250", 250), (2.0, 2), (math.inf, math.inf)])
def test_parse_shots(value, expected):
    assert parse_shots(value) == expected


@pytest.mark.parametrize("value", ["lots", 2.5])
def test_parse_shots_rejects(value):
    with pytest.raises(ConfigValidationError):
        parse_shots(value)


@pytest.mark.parametrize("raw,message", [
    (base(protocol={"times": [0.0, 1.0, 0.5]}), "strictly increasing"),
    (base(protocol={"kind": "batch"}), "Protocol must be one of"),
    (base(protocol={"mode": "second_order"}), "Unknown channel mode"),
    (base(protocol={"order": 4}), "Protocol order 4"),
    (base(protocol={"delta_t": 0.0}), "delta_t must be positive"),
    (base(protocol={"kind": "streaming"}, schedule={"tau": 0.001}), "smaller than delta_t"),
    (base(protocol={"kind": "streaming", "times": [0.0, 0.3]}, schedule={"tau": 0.5}), "streaming grid"),
    (base(protocol={"kind": "streaming"}, schedule={"tau": 0.5, "used_mask": [True, False]}), "never land on used slots"),
    (base(protocol={"kind": "streaming"}, schedule={"tau": 0.5, "num_slots": 2}), "schedule has only 2"),
    (base(protocol={"kind": "streaming"}, schedule={"used_mask": [False]}), "at least one used slot"),
    (base(validation={"K": 3}), "even integer"),
    (base(validation={"source": "guess"}), "Validation source"),
    (base(correlations={"axes": ["w"]}), "Unknown correlation axis"),
    (base(bath={"preset": "P7"}), "Unknown bath preset"),
    (base(thermal={"beta": -1.0}), "Inverse temperature"),
    (base(protocol={"unknown_key": 1}), "unexpected keyword"),
])
def test_invalid_experiments(raw, message):
    with pytest.raises(ConfigValidationError, match=message):
        experiment_from_dict(raw)


def test_custom_variants_need_one_slot_per_time():
    raw = base(protocol={"times": [0.0, 0.5], "variants": [
        {"id": "a", "prep": [[1, 0, 0]], "measure": [[0, 1, 0]]}]})
    with pytest.raises(ConfigValidationError, match="one prep and measure"):
        experiment_from_dict(raw)


def test_overrides_change_digest():
    experiment = experiment_from_dict(base())
    changed = experiment.with_overrides(seed=99, shots=math.inf, output_dir="elsewhere")
    assert changed.protocol.seed == 99
    assert changed.protocol.noise_free
    assert changed.output_dir == "elsewhere"
    assert changed.digest() != experiment.digest()
    assert experiment.with_overrides().digest() == experiment.with_overrides().digest()


def test_bad_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[bath\npreset = 1")
    with pytest.raises(ConfigValidationError):
        load_experiment(path)
