import copy
import json
import time

import numpy as np
import pytest

from tlsmpy.cli import main
from tlsmpy.config import ScenarioConfig
from tlsmpy.enums import IndicatorKind
from tlsmpy.inversion import IndicatorMap
from tlsmpy.model import CrackArc, CrackScene
from tlsmpy.persistence import load_dataset, verify_manifest
from tlsmpy.scenario import Scenario, compare, map_metrics, run, study_cells
from tlsmpy.trials import SamplingGrid
from tlsmpy.utils import GridMismatchError, LayoutError


SMALL = {
    "pulse": {"centerFrequency": 1.0},
    "scene": {"arcs": [{"start": [-0.1, 0.0], "end": [0.1, 0.0]}]},
    "layout": {"nSources": 6, "nReceivers": 12, "nSteps": 64, "duration": 8.0},
    "grid": {"region": [-0.4, 0.4, -0.4, 0.4], "nx": 5, "ny": 5, "nNormals": 2},
    "seed": 3,
}

REFERENCE = {
    "pulse": {"centerFrequency": 10.0},
    "scene": {"arcs": [{"start": [-0.1, 0.0], "end": [0.1, 0.0]}]},
    "layout": {"nSources": 8, "nReceivers": 32, "nSteps": 512, "duration": 3.0},
    "noise": {"snrDb": 30},
    "grid": {"region": [-0.5, 0.5, -0.5, 0.5], "nx": 64, "ny": 64, "nNormals": 8},
    "inversion": {"indicator": "tlsm", "tau": 0.6},
    "seed": 11,
}

# unit shear speed, so the wavelength at the center frequency is 0.1
SHEAR_WAVELENGTH = 0.1

ONE_SIDED_LAYOUT = {
    "kind": "line",
    "nSources": 8,
    "nReceivers": 32,
    "nSteps": 512,
    "duration": 3.0,
    "sourceStart": [-1.0, -0.9],
    "sourceEnd": [1.0, -0.9],
    "receiverStart": [-1.0, -1.0],
    "receiverEnd": [1.0, -1.0],
}

GRID = SamplingGrid(region=(-2.0, 2.0, -2.0, 2.0), nx=9, ny=9, normals=np.array([[1.0, 0.0]]))
TINY_CRACK = CrackScene(arcs=(CrackArc(start=(-0.01, 0.0), end=(0.01, 0.0), stiffness=np.zeros((1, 1))),))


def _config(raw: dict, **changes) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    raw.update(changes)
    return ScenarioConfig.from_raw(raw=raw)


def _write_config(tmp_path, raw: dict) -> str:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    return str(path)


def _map(values: np.ndarray, grid: SamplingGrid = GRID) -> IndicatorMap:
    return IndicatorMap(
        grid=grid,
        values=values,
        normal_index=np.zeros(grid.shape, dtype=int),
        holes=np.zeros(grid.shape, dtype=bool),
    )


def _delta(iy: int, ix: int) -> np.ndarray:
    values = np.zeros(GRID.shape)
    values[iy, ix] = 1.0
    return values


# ========== METRICS ===========:


def test_delta_on_the_crack_is_a_perfect_reconstruction() -> None:
    metrics = map_metrics(_map(_delta(4, 4)), TINY_CRACK, tau=0.5)
    assert metrics["argmax"] == [0.0, 0.0]
    assert metrics["localization_error"] == 0.0
    assert metrics["hausdorff"] == 0.0
    assert metrics["components"] == 1
    assert metrics["spurious_components"] == 0
    # the truth band is the 3 x 3 block around the crack cell:
    assert metrics["iou"] == pytest.approx(1.0 / 9.0)


def test_far_blob_is_spurious() -> None:
    values = _delta(4, 4)
    values[0, 8] = 0.9
    metrics = map_metrics(_map(values), TINY_CRACK, tau=0.5)
    assert metrics["components"] == 2
    assert metrics["spurious_components"] == 1
    assert metrics["hausdorff"] == pytest.approx(np.hypot(2.0, 2.0))


def test_map_compared_with_itself() -> None:
    values = _delta(4, 4)
    values[4, 5] = 0.8
    report = compare(_map(values), _map(values), TINY_CRACK, tau=0.5)
    assert report["a"] == report["b"]
    assert report["spurious_a_le_b"] is True


def test_compare_needs_a_common_grid() -> None:
    other = SamplingGrid(region=(-2.0, 2.0, -2.0, 2.0), nx=8, ny=9, normals=np.array([[1.0, 0.0]]))
    with pytest.raises(GridMismatchError):
        compare(_map(_delta(4, 4)), _map(np.ones(other.shape), grid=other), TINY_CRACK)


def test_empty_truth_leaves_geometry_metrics_unset() -> None:
    metrics = map_metrics(_map(_delta(1, 1)), CrackScene(), tau=0.5)
    assert metrics["mask_cells"] == 1
    assert metrics["hausdorff"] is None
    assert metrics["iou"] is None


# ========== STUDIES ===========:


def test_sparse_study_masks_the_shared_data() -> None:
    config = _config(SMALL, study={"kind": "sparse", "receiverCounts": [6, 4]})
    cells = study_cells(config)
    assert [cell.name for cell in cells] == ["full", "sparse_6", "sparse_4"]
    assert [int(cell.data.receiver_mask.sum()) for cell in cells] == [12, 6, 4]
    assert [cell.generated for cell in cells] == [True, False, False]
    for cell in cells[1:]:
        assert cell.data.values is cells[0].data.values
        np.testing.assert_array_equal(cell.data.receiver_mask, cell.scenario.layout.receiver_mask)


def test_partial_aperture_masks_sources_and_receivers() -> None:
    config = _config(SMALL, study={"kind": "partial_aperture", "apertureStart": 0.0, "apertureEnd": 3.141592653589793})
    _, partial = study_cells(config)
    assert partial.name == "partial"
    assert int(partial.scenario.layout.receiver_mask.sum()) == 7
    assert int(partial.scenario.layout.source_mask.sum()) == 4


def test_stiffness_sweep_scatters_less_as_the_interface_stiffens() -> None:
    config = _config(SMALL, study={"kind": "stiffness_sweep", "stiffnessValues": [0, 1e6]})
    free, stiff = study_cells(config)
    assert (free.name, stiff.name) == ("stiffness_0", "stiffness_1")
    assert stiff.scenario.scene.arcs[0].stiffness[0, 0] == 1e6
    assert stiff.data.norm() ** 2 <= 1e-3 * free.data.norm() ** 2


def test_mesh_check_records_the_measured_change() -> None:
    raw = copy.deepcopy(SMALL)
    raw["scene"]["meshCheck"] = True
    (cell,) = study_cells(ScenarioConfig.from_raw(raw=raw))
    assert 0.0 < cell.data.metadata["mesh_change"] < 0.05

    (unchecked,) = study_cells(_config(SMALL))
    assert "mesh_change" not in unchecked.data.metadata


def test_scenario_rejects_receivers_on_a_crack() -> None:
    raw = copy.deepcopy(SMALL)
    raw["scene"] = {"arcs": [{"start": [0.5, 0.0], "end": [1.5, 0.0]}]}
    with pytest.raises(LayoutError):
        Scenario.from_config(ScenarioConfig.from_raw(raw=raw))


# ========== RUNS ===========:


def test_empty_scene_run_reports_invalid_maps(tmp_path) -> None:
    config = _config(SMALL, scene={"arcs": []})
    report = run(config, output_dir=tmp_path)
    assert report.exit_code == 0
    assert report.metrics["full"]["status"] == "invalid_map"
    assert verify_manifest(tmp_path) == []

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["stages"] == ["generate", "invert", "emit"]
    assert np.all(load_dataset(tmp_path / "dataset_full.json").values == 0.0)


def test_runs_are_deterministic_across_workers(tmp_path) -> None:
    config = _config(SMALL)
    first = run(config, output_dir=tmp_path / "a", workers=1)
    second = run(config, output_dir=tmp_path / "b", workers=3)
    assert first.metrics["full"]["status"] == "ok"

    for name in ("full_tlsm.csv", "full_flsm.csv", "full_tlsm.pgm", "dataset_full.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    metrics = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert set(metrics["full"]) >= {"tlsm", "flsm", "tlsm_vs_flsm", "status", "runtime", "layout"}
    assert verify_manifest(tmp_path / "a") == []


def test_cli_run_and_verify(tmp_path) -> None:
    config_path = _write_config(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["run", "--config", config_path, "--output-dir", str(out), "--indicator", "tlsm"]) == 0
    assert (out / "full_tlsm.csv").exists()
    assert not (out / "full_flsm.csv").exists()
    assert main(["verify-manifest", str(out)]) == 0

    csv = out / "full_tlsm.csv"
    csv.write_text(csv.read_text().replace("\n", "\r\n", 1))
    assert main(["verify-manifest", str(out)]) == 1

    report = tmp_path / "compare.json"
    assert main(["compare", "--config", config_path, str(out / "full_tlsm.csv"), str(out / "full_tlsm.csv"), "--output", str(report)]) == 0
    assert json.loads(report.read_text())["spurious_a_le_b"] is True


def test_cli_generate_then_invert_empty_scene(tmp_path) -> None:
    raw = copy.deepcopy(SMALL)
    raw["scene"] = {"arcs": []}
    config_path = _write_config(tmp_path, raw)
    generated = tmp_path / "generated"
    inverted = tmp_path / "inverted"

    assert main(["generate", "--config", config_path, "--output-dir", str(generated)]) == 0
    assert main(
        ["invert", "--config", config_path, "--dataset", str(generated / "dataset.json"), "--output-dir", str(inverted)]
    ) == 2
    assert verify_manifest(inverted) == []


def test_cli_reports_failures(tmp_path) -> None:
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1


@pytest.mark.slow
def test_reference_crack_is_located(tmp_path) -> None:
    started = time.perf_counter()
    report = run(_config(REFERENCE), output_dir=tmp_path, workers=1)
    assert time.perf_counter() - started <= 300.0

    metrics = report.metrics["full"][IndicatorKind.TLSM.value]
    assert metrics["localization_cells"] <= 2.0
    assert metrics["tau"] == 0.6
    assert metrics["hausdorff"] <= SHEAR_WAVELENGTH / 2.0
    assert verify_manifest(tmp_path) == []


@pytest.mark.slow
def test_sparse_receivers_still_locate_the_crack(tmp_path) -> None:
    raw = copy.deepcopy(REFERENCE)
    raw["inversion"]["indicator"] = "both"
    report = run(_config(raw, study={"kind": "sparse", "receiverCounts": [8]}), output_dir=tmp_path)

    sparse = report.metrics["sparse_8"]
    assert sparse["layout"]["n_active_receivers"] == 8
    assert sparse[IndicatorKind.TLSM.value]["localization_cells"] <= 3.0
    assert "spurious_a_le_b" in sparse["tlsm_vs_flsm"]


@pytest.mark.slow
def test_one_sided_layout_still_locates_the_crack(tmp_path) -> None:
    config = _config(REFERENCE, layout=ONE_SIDED_LAYOUT, study={"kind": "one_sided"})
    report = run(config, output_dir=tmp_path)

    assert report.metrics["one_sided"][IndicatorKind.TLSM.value]["localization_cells"] <= 4.0
    degradation = report.metrics["aperture_degradation"]
    assert set(degradation) == {"localization_error", "hausdorff", "spurious_components", "iou"}
    assert degradation["localization_error"]["ring_reference"] is not None


@pytest.mark.slow
def test_reference_run_is_reproducible(tmp_path) -> None:
    config = _config(REFERENCE)
    run(config, output_dir=tmp_path / "a")
    run(config, output_dir=tmp_path / "b")
    assert (tmp_path / "a" / "full_tlsm.csv").read_bytes() == (tmp_path / "b" / "full_tlsm.csv").read_bytes()
