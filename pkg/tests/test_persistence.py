import json

import numpy as np
import pytest

from tlsmpy.inversion import IndicatorMap, threshold_map
from tlsmpy.nearfield import ScatteredDataset
from tlsmpy.persistence import (
    MAP_CSV_HEADER,
    load_dataset,
    read_map_csv,
    save_dataset,
    verify_manifest,
    write_json,
    write_manifest,
    write_map_csv,
    write_map_pgm,
)
from tlsmpy.trials import SamplingGrid
from tlsmpy.utils import ManifestError


GRID = SamplingGrid(region=(-0.5, 0.5, -0.25, 0.25), nx=4, ny=3, normals=np.array([[1.0, 0.0], [0.0, 1.0]]))


def _dataset() -> ScatteredDataset:
    rng = np.random.default_rng(0)
    return ScatteredDataset(
        values=rng.standard_normal((6, 16, 3)),
        dt=0.0625,
        n_components=2,
        receiver_mask=np.array([True, False, True]),
        column_mask=np.array([True, True, False]),
        noise_norm=0.125,
        metadata={"seed": 3},
    )


def _map() -> IndicatorMap:
    values = np.linspace(0.1, 1.3, GRID.n_points).reshape(GRID.shape) / 3.0
    normal_index = np.arange(GRID.n_points).reshape(GRID.shape) % 2
    holes = np.zeros(GRID.shape, dtype=bool)
    holes[1, 2] = True
    return IndicatorMap(
        grid=GRID,
        values=np.where(holes, 0.0, values),
        normal_index=np.where(holes, -1, normal_index),
        holes=holes,
    )


def test_dataset_round_trip_is_bit_exact(tmp_path) -> None:
    data = _dataset()
    header = save_dataset(data, tmp_path / "dataset")
    assert header == tmp_path / "dataset.json"

    loaded = load_dataset(header)
    np.testing.assert_array_equal(loaded.values, data.values)
    np.testing.assert_array_equal(loaded.receiver_mask, data.receiver_mask)
    np.testing.assert_array_equal(loaded.column_mask, data.column_mask)
    assert (loaded.dt, loaded.n_components, loaded.noise_norm) == (data.dt, data.n_components, data.noise_norm)
    assert loaded.metadata == {"seed": 3}

    meta = json.loads(header.read_text())
    assert meta["shape"] == [6, 16, 3]
    assert meta["dtype"] == "<f8"
    assert (tmp_path / "dataset.bin").stat().st_size == 6 * 16 * 3 * 8


def test_corrupted_dataset_is_rejected(tmp_path) -> None:
    header = save_dataset(_dataset(), tmp_path / "dataset")
    blob = bytearray((tmp_path / "dataset.bin").read_bytes())
    blob[100] ^= 0x01
    (tmp_path / "dataset.bin").write_bytes(bytes(blob))
    with pytest.raises(ManifestError):
        load_dataset(header)


def test_map_csv_is_deterministic_and_readable(tmp_path) -> None:
    indicator = threshold_map(_map(), tau=0.5)
    first = write_map_csv(indicator, tmp_path / "a.csv")
    second = write_map_csv(indicator, tmp_path / "b.csv")
    assert first.read_bytes() == second.read_bytes()

    lines = first.read_text().splitlines()
    assert lines[0] == MAP_CSV_HEADER
    assert len(lines) == GRID.n_points + 1

    loaded = read_map_csv(first)
    assert loaded.grid.shape == GRID.shape
    np.testing.assert_array_equal(loaded.grid.points, GRID.points)
    np.testing.assert_array_equal(loaded.values, indicator.values)
    np.testing.assert_array_equal(loaded.mask, indicator.mask)
    np.testing.assert_array_equal(loaded.normal_index, indicator.normal_index)
    np.testing.assert_array_equal(loaded.holes, indicator.holes)


def test_pgm_has_one_byte_per_grid_point(tmp_path) -> None:
    path = write_map_pgm(_map(), tmp_path / "map.pgm")
    content = path.read_bytes()
    header = b"P5\n4 3\n255\n"
    assert content.startswith(header)
    pixels = np.frombuffer(content[len(header):], dtype=np.uint8).reshape(3, 4)
    # first image row is the top of the grid:
    assert pixels[0, -1] == 255
    assert pixels[2, 0] < pixels[0, -1]


def test_manifest_detects_changed_artifacts(tmp_path) -> None:
    artifact = write_json(tmp_path / "metrics.json", {"value": 1.0})
    csv = write_map_csv(_map(), tmp_path / "maps" / "full.csv")
    write_manifest(tmp_path, {"seed": 0}, [artifact, csv], ["generate", "invert"])
    assert verify_manifest(tmp_path) == []

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert [entry["path"] for entry in manifest["artifacts"]] == ["maps/full.csv", "metrics.json"]

    blob = bytearray(csv.read_bytes())
    blob[-2] ^= 0x01
    csv.write_bytes(bytes(blob))
    assert verify_manifest(tmp_path) == ["checksum mismatch: maps/full.csv"]

    artifact.unlink()
    assert "missing: metrics.json" in verify_manifest(tmp_path)


def test_partial_manifest_is_flagged(tmp_path) -> None:
    write_manifest(tmp_path, {}, [], ["generate"], status="failed")
    assert verify_manifest(tmp_path) == ["run status is failed"]

    with pytest.raises(ManifestError):
        verify_manifest(tmp_path / "missing")
