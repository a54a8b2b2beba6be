import json

import pytest

from tlsmpy.config import ArcConfig, LayoutConfig, ScenarioConfig
from tlsmpy.enums import IndicatorKind, LayoutKind, PulseKind, StudyKind, WaveMode
from tlsmpy.utils import ConfigError


REFERENCE = {
    "medium": {"mode": "antiplane"},
    "pulse": {"kind": "tone_burst", "centerFrequency": 10.0},
    "scene": {"arcs": [{"start": [-0.1, 0.0], "end": [0.1, 0.0]}]},
    "layout": {"nSources": 8, "nReceivers": 32, "nSteps": 512, "duration": 3.0},
    "noise": {"snrDb": 30},
    "grid": {"nx": 64, "ny": 64, "nNormals": 8},
    "inversion": {"indicator": "both", "tau": 0.6},
    "seed": 7,
}


def test_defaults_fill_missing_keys() -> None:
    config = ScenarioConfig.from_raw(raw={})
    assert config.medium.mode is WaveMode.ANTIPLANE
    assert config.layout.n_receivers == 32
    assert config.layout.n_steps == 512
    assert config.grid.nx == 64
    assert config.study.kind is StudyKind.FULL
    assert config.scene.arcs == []


def test_reference_scenario() -> None:
    config = ScenarioConfig.from_raw(raw=REFERENCE)
    assert config.pulse.kind is PulseKind.TONE_BURST
    assert config.noise.snr_db == 30.0
    assert isinstance(config.noise.snr_db, float)
    assert config.scene.arcs[0] == ArcConfig(start=[-0.1, 0.0], end=[0.1, 0.0])
    assert config.scene.arcs[0].stiffness == [[0.0]]
    assert config.inversion.indicator is IndicatorKind.BOTH
    assert config.seed == 7


def test_enum_casing_fallback() -> None:
    layout = LayoutConfig.from_raw(raw={"kind": "RING"})
    assert layout.kind is LayoutKind.RING


def test_unknown_enum_value_lists_allowed_values() -> None:
    with pytest.raises(ConfigError, match="antiplane"):
        ScenarioConfig.from_raw(raw={"medium": {"mode": "shear"}})


def test_unexpected_keys_rejected() -> None:
    with pytest.raises(ConfigError, match="unexpected args"):
        ScenarioConfig.from_raw(raw={"grid": {"nz": 4}})


def test_missing_required_key() -> None:
    with pytest.raises(ConfigError, match="requires 'end'"):
        ArcConfig.from_raw(raw={"start": [0.0, 0.0]})


def test_bool_is_not_a_number() -> None:
    with pytest.raises(ConfigError):
        LayoutConfig.from_raw(raw={"nSources": True})


def test_tau_must_lie_in_unit_interval() -> None:
    with pytest.raises(ConfigError, match="tau"):
        ScenarioConfig.from_raw(raw={"inversion": {"tau": 1.0}})


def test_study_specific_fields() -> None:
    with pytest.raises(ConfigError, match="stage"):
        ScenarioConfig.from_raw(raw={"study": {"kind": "evolution"}})

    with pytest.raises(ConfigError, match="line layout"):
        ScenarioConfig.from_raw(raw={"study": {"kind": "one_sided"}})

    with pytest.raises(ConfigError, match="stiffness"):
        ScenarioConfig.from_raw(raw={"study": {"kind": "stiffness_sweep", "stiffnessValues": [1.0, -2.0]}})

    config = ScenarioConfig.from_raw(
        raw={
            "study": {
                "kind": "evolution",
                "stages": [
                    {"arcs": [{"start": [-0.05, 0.0], "end": [0.05, 0.0]}]},
                    {"arcs": [{"start": [-0.1, 0.0], "end": [0.1, 0.0]}]},
                ],
            }
        }
    )
    assert len(config.study.stages) == 2
    assert config.study.stages[1].arcs[0].end == [0.1, 0.0]


def test_large_request_is_echoed(tmp_path) -> None:
    raw = {"layout": {"nReceivers": 145, "nSteps": 1024, "nSources": 8}}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    config = ScenarioConfig.from_file(path)
    echoed = json.loads(config.display())
    assert echoed["layout"]["n_receivers"] == 145
    assert echoed["layout"]["n_steps"] == 1024
    assert echoed["layout"]["kind"] == "ring"
