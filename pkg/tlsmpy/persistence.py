"""
On-disk formats: binary datasets with a JSON header, indicator maps as CSV and
PGM, and the sha256 manifest of a run directory.
"""

import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional

import numpy as np

from tlsmpy.config import to_json
from tlsmpy.constants import VERSION
from tlsmpy.enums import IndicatorKind
from tlsmpy.inversion import IndicatorMap
from tlsmpy.nearfield import ScatteredDataset
from tlsmpy.trials import SamplingGrid
from tlsmpy.utils import ManifestError, ShapeMismatchError, file_sha256


__all__ = [
    "MAP_CSV_HEADER",
    "MANIFEST_NAME",
    "write_json",
    "save_dataset",
    "load_dataset",
    "write_map_csv",
    "read_map_csv",
    "write_map_pgm",
    "write_manifest",
    "verify_manifest",
]

logger = logging.getLogger(__name__)

MAP_CSV_HEADER = "z1,z2,value,mask,normal_index"

MANIFEST_NAME = "manifest.json"


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_json(obj=obj), indent=4, sort_keys=True))
    return path


# ========== DATASETS ===========:


def save_dataset(data: ScatteredDataset, path: Path) -> Path:
    """
    Write <path>.bin (little-endian float64, C order, shape (rows, n_steps, columns))
    and its header <path>.json; returns the header path.
    """
    path = Path(path)
    header_path = path.with_suffix(".json")
    data_path = path.with_suffix(".bin")
    header_path.parent.mkdir(parents=True, exist_ok=True)

    np.ascontiguousarray(data.values, dtype="<f8").tofile(data_path)
    header = {
        "version": VERSION,
        "data_file": data_path.name,
        "dtype": "<f8",
        "order": "C",
        "shape": list(data.values.shape),
        "axes": ["row", "time", "column"],
        "dt": data.dt,
        "n_components": data.n_components,
        "receiver_mask": data.receiver_mask.astype(int),
        "column_mask": data.column_mask.astype(int),
        "noise_norm": data.noise_norm,
        "sha256": file_sha256(data_path),
        "metadata": data.metadata,
    }
    write_json(header_path, header)
    logger.info(f"Saved dataset {data.values.shape} to {data_path}")
    return header_path


def load_dataset(path: Path) -> ScatteredDataset:
    header_path = Path(path).with_suffix(".json")
    try:
        header = json.loads(header_path.read_text())
        data_path = header_path.parent / header["data_file"]
        if file_sha256(data_path) != header["sha256"]:
            raise ManifestError(f"Checksum of {data_path} does not match its header")

        values = np.fromfile(data_path, dtype=header["dtype"])
        shape = tuple(header["shape"])
        if values.size != int(np.prod(shape)):
            raise ShapeMismatchError(f"{data_path} holds {values.size} values, header says {shape}")

        return ScatteredDataset(
            values=values.reshape(shape, order=header.get("order", "C")),
            dt=float(header["dt"]),
            n_components=int(header["n_components"]),
            receiver_mask=np.asarray(header["receiver_mask"], dtype=bool),
            column_mask=np.asarray(header["column_mask"], dtype=bool),
            noise_norm=float(header["noise_norm"]),
            metadata=header.get("metadata", {}),
        )

    except Exception as e:
        logger.error(f"{type(e).__name__}({e}) while loading dataset {header_path}")
        raise e


# ========== INDICATOR MAPS ===========:


def write_map_csv(indicator: IndicatorMap, path: Path) -> Path:
    """
    One row per grid point in row-major order. Values use 17 significant
    digits so the same map always gives the same bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = indicator.grid.points
    values = indicator.values.ravel()
    mask = (
        np.ones(values.shape, dtype=int)
        if indicator.mask is None
        else indicator.mask.ravel().astype(int)
    )
    normal_index = indicator.normal_index.ravel()

    lines = [MAP_CSV_HEADER]
    for (z1, z2), value, m, q in zip(points, values, mask, normal_index):
        lines.append(f"{z1:.17g},{z2:.17g},{value:.17g},{m:d},{q:d}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_map_csv(path: Path, kind: IndicatorKind = IndicatorKind.TLSM) -> IndicatorMap:
    """
    Rebuild a map from its CSV; the grid is recovered from the point coordinates.
    """
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0].strip() != MAP_CSV_HEADER:
        raise ShapeMismatchError(f"{path} is not an indicator map CSV")

    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    xs = np.unique(rows[:, 0])
    ys = np.unique(rows[:, 1])
    grid = SamplingGrid(
        region=(xs.min(), xs.max(), ys.min(), ys.max()),
        nx=len(xs),
        ny=len(ys),
        normals=np.zeros((0, 2)),
    )
    if len(rows) != grid.n_points:
        raise ShapeMismatchError(f"{path} has {len(rows)} rows for a {grid.nx} x {grid.ny} grid")

    normal_index = rows[:, 4].astype(int).reshape(grid.shape)
    return IndicatorMap(
        grid=grid,
        values=rows[:, 2].reshape(grid.shape),
        normal_index=normal_index,
        holes=normal_index < 0,
        kind=kind,
        mask=rows[:, 3].astype(bool).reshape(grid.shape),
        metadata={"source": str(path)},
    )


def write_map_pgm(indicator: IndicatorMap, path: Path) -> Path:
    """
    8-bit binary greyscale image of the normalized map, +y pointing up.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round(255.0 * np.clip(indicator.normalized(), 0.0, 1.0)).astype(np.uint8)[::-1]
    ny, nx = pixels.shape
    path.write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + pixels.tobytes())
    return path


# ========== MANIFEST ===========:


def write_manifest(
    output_dir: Path,
    config: dict,
    artifacts: Iterable[Path],
    stages: List[str],
    status: str = "complete",
    extra: Optional[dict] = None,
) -> Path:
    output_dir = Path(output_dir)
    entries = []
    for artifact in sorted(Path(a) for a in artifacts):
        entries.append(
            {
                "path": artifact.relative_to(output_dir).as_posix(),
                "sha256": file_sha256(artifact),
                "bytes": artifact.stat().st_size,
            }
        )

    manifest = {
        "version": VERSION,
        "status": status,
        "stages": stages,
        "config": config,
        "artifacts": entries,
    }
    manifest.update(extra or {})
    return write_json(output_dir / MANIFEST_NAME, manifest)


def verify_manifest(output_dir: Path) -> List[str]:
    """
    Problems found when re-hashing every listed artifact; empty when intact.
    """
    manifest_path = Path(output_dir) / MANIFEST_NAME
    if not manifest_path.exists():
        raise ManifestError(f"No manifest at {manifest_path}")

    manifest = json.loads(manifest_path.read_text())
    problems = []
    for entry in manifest.get("artifacts", []):
        artifact = manifest_path.parent / entry["path"]
        if not artifact.exists():
            problems.append(f"missing: {entry['path']}")
        elif file_sha256(artifact) != entry["sha256"]:
            problems.append(f"checksum mismatch: {entry['path']}")

    if manifest.get("status") != "complete":
        problems.append(f"run status is {manifest.get('status')}")

    return problems
