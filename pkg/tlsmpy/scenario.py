"""
Scenario runs: generate -> noise / mask -> invert -> emit, over the study cells
of a config (full, sparse, partial aperture, one-sided, evolution, stiffness sweep).
"""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import directed_hausdorff
from skimage.morphology import skeletonize

from tlsmpy.config import LayoutConfig, ScenarioConfig, SceneConfig
from tlsmpy.constants import DEFAULT_TAU, VERSION
from tlsmpy.enums import IndicatorKind, LayoutKind, StudyKind
from tlsmpy.forward_bem import add_noise, solve_scattering
from tlsmpy.inversion import IndicatorMap, flsm_indicator, threshold_map, tlsm_indicator
from tlsmpy.model import (
    CrackScene,
    MediumModel,
    Pulse,
    SensingLayout,
    TransformPlan,
    aperture_mask,
    downsample_mask,
    make_layout,
    plan_from_config,
)
from tlsmpy.nearfield import ScatteredDataset
from tlsmpy.persistence import (
    save_dataset,
    write_json,
    write_manifest,
    write_map_csv,
    write_map_pgm,
)
from tlsmpy.trials import SamplingGrid, batch_trials
from tlsmpy.utils import GridMismatchError, InvalidMapError, ShapeMismatchError


__all__ = [
    "Scenario",
    "StudyCell",
    "RunReport",
    "generate",
    "study_cells",
    "invert",
    "invert_cell",
    "map_metrics",
    "compare",
    "run",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Scenario:
    """
    Resolved model objects of one configuration.
    """

    config: ScenarioConfig
    medium: MediumModel
    pulse: Pulse
    scene: CrackScene
    layout: SensingLayout
    plan: TransformPlan
    grid: SamplingGrid

    @classmethod
    def from_config(
        cls,
        config: ScenarioConfig,
        scene: Optional[SceneConfig] = None,
        layout: Optional[LayoutConfig] = None,
    ) -> "Scenario":
        medium = MediumModel.from_config(config.medium)
        crack_scene = CrackScene.from_config(config.scene if scene is None else scene)
        sensing = make_layout(
            config.layout if layout is None else layout,
            scene=crack_scene,
            dimension=medium.dimension,
        )
        return cls(
            config=config,
            medium=medium,
            pulse=Pulse.from_config(config.pulse),
            scene=crack_scene,
            layout=sensing,
            plan=plan_from_config(config.plan, sensing),
            grid=SamplingGrid.from_config(config.grid),
        )

    def with_layout(self, layout: SensingLayout) -> "Scenario":
        return dataclasses.replace(self, layout=layout)


@dataclass(frozen=True, eq=False)
class StudyCell:
    name: str
    scenario: Scenario
    data: ScatteredDataset
    generated: bool = True


@dataclass
class RunReport:
    status: str
    output_dir: Path
    artifacts: List[Path] = field(default_factory=list)
    metrics: Dict[str, dict] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "complete" else 1


def _with_mesh_change(scenario: Scenario, data: ScatteredDataset, workers: Optional[int]) -> ScatteredDataset:
    coarse = solve_scattering(
        scene=scenario.scene,
        layout=scenario.layout,
        pulse=scenario.pulse,
        plan=scenario.plan,
        medium=scenario.medium,
        density=0.5 * scenario.scene.quadrature_density,
        workers=workers,
    )
    change = float(np.linalg.norm(data.values - coarse.values) / np.linalg.norm(data.values))
    logger.info(f"Halving the element density changes the traces by {change:.3e}")
    return dataclasses.replace(data, metadata={**data.metadata, "mesh_change": change})


def generate(scenario: Scenario, seed: Optional[int] = None, workers: Optional[int] = None) -> ScatteredDataset:
    """
    Forward data for the scenario's full layout, with the configured noise.
    """
    data = solve_scattering(
        scene=scenario.scene,
        layout=scenario.layout,
        pulse=scenario.pulse,
        plan=scenario.plan,
        medium=scenario.medium,
        workers=workers,
    )
    if scenario.config.scene.mesh_check and not scenario.scene.is_empty:
        data = _with_mesh_change(scenario, data, workers)

    seed = scenario.config.seed if seed is None else seed
    return add_noise(data, scenario.config.noise.snr_db, seed=seed)


def study_cells(config: ScenarioConfig, workers: Optional[int] = None) -> List[StudyCell]:
    """
    Every (layout, data) pair the study asks for, in a fixed order.
    """
    study = config.study
    base = Scenario.from_config(config)

    if study.kind is StudyKind.EVOLUTION:
        cells = []
        for index, stage in enumerate(study.stages):
            scenario = Scenario.from_config(config, scene=stage)
            logger.info(f"Generating stage {index} with {len(scenario.scene.arcs)} arcs")
            cells.append(StudyCell(f"stage_{index}", scenario, generate(scenario, config.seed + index, workers)))
        return cells

    if study.kind is StudyKind.STIFFNESS_SWEEP:
        cells = []
        for index, stiffness in enumerate(study.stiffness_values):
            arcs = [dataclasses.replace(arc, stiffness=[[stiffness]]) for arc in config.scene.arcs]
            scenario = Scenario.from_config(config, scene=dataclasses.replace(config.scene, arcs=arcs))
            logger.info(f"Generating sweep cell {index} at stiffness {stiffness}")
            cells.append(StudyCell(f"stiffness_{index}", scenario, generate(scenario, workers=workers)))
        return cells

    if study.kind is StudyKind.ONE_SIDED:
        ring = dataclasses.replace(config.layout, kind=LayoutKind.RING)
        reference = Scenario.from_config(config, layout=ring)
        return [
            StudyCell("one_sided", base, generate(base, workers=workers)),
            StudyCell("ring_reference", reference, generate(reference, workers=workers)),
        ]

    data = generate(base, workers=workers)
    cells = [StudyCell("full", base, data)]
    layout = base.layout

    if study.kind is StudyKind.SPARSE:
        for count in study.receiver_counts:
            sparse = layout.with_masks(receiver_mask=downsample_mask(layout.n_receivers, count))
            cells.append(StudyCell(f"sparse_{count}", base.with_layout(sparse), data.with_layout_masks(sparse), False))

    elif study.kind is StudyKind.PARTIAL_APERTURE:
        center = config.layout.center
        partial = layout.with_masks(
            receiver_mask=aperture_mask(layout.receivers, center, study.aperture_start, study.aperture_end),
            source_mask=aperture_mask(layout.sources, center, study.aperture_start, study.aperture_end),
        )
        cells.append(StudyCell("partial", base.with_layout(partial), data.with_layout_masks(partial), False))

    return cells


def _row_weights(layout: SensingLayout) -> np.ndarray:
    return np.repeat(layout.receiver_weights[layout.receiver_mask], layout.dimension)


def invert(
    scenario: Scenario,
    data: ScatteredDataset,
    indicator: Optional[IndicatorKind] = None,
    workers: Optional[int] = None,
) -> Dict[IndicatorKind, IndicatorMap]:
    """
    Indicator maps for one cell; the data masks must be those of the layout.
    """
    layout = scenario.layout
    if data.n_receivers != layout.n_receivers or data.n_components != layout.dimension:
        raise ShapeMismatchError(
            f"Dataset with {data.n_receivers} receivers x {data.n_components} components "
            f"does not fit a layout of {layout.n_receivers} x {layout.dimension}"
        )

    options = scenario.config.inversion
    indicator = options.indicator if indicator is None else indicator
    kinds = [IndicatorKind.TLSM, IndicatorKind.FLSM] if indicator is IndicatorKind.BOTH else [indicator]
    weights = _row_weights(layout)

    def trials():
        return batch_trials(scenario.grid, layout, scenario.pulse, scenario.plan, scenario.medium)

    maps = {}
    for kind in kinds:
        if kind is IndicatorKind.TLSM:
            maps[kind] = tlsm_indicator(
                data,
                scenario.grid,
                trials(),
                scenario.plan,
                noise_floor=options.noise_floor,
                row_weights=weights,
                workers=workers,
            )
        else:
            maps[kind] = flsm_indicator(
                data,
                scenario.grid,
                trials(),
                scenario.plan,
                n_frequencies=options.flsm_frequencies,
                rule=options.flsm_rule,
                noise_floor=options.noise_floor,
                row_weights=weights,
                workers=workers,
            )
    return maps


# ========== METRICS ===========:


_CONNECTIVITY = np.ones((3, 3), dtype=bool)


def _cell_centers(grid: SamplingGrid, mask: np.ndarray) -> np.ndarray:
    iy, ix = np.nonzero(mask)
    return np.column_stack([grid.xs[ix], grid.ys[iy]])


def _truth_raster(grid: SamplingGrid, truth: CrackScene) -> np.ndarray:
    """
    Cells within half a cell of an arc, plus every cell an arc passes through.
    """
    raster = np.zeros(grid.shape, dtype=bool)
    if truth.is_empty:
        return raster

    hx, hy = grid.spacing
    cell = max(hx, hy)
    distance = truth.distance(grid.points).reshape(grid.shape)
    raster |= distance <= 0.5 * cell

    positive = [h for h in (hx, hy) if h > 0.0]
    samples = truth.sample(0.25 * min(positive) if positive else 1e-3)
    ix = np.rint((samples[:, 0] - grid.region[0]) / hx).astype(int) if hx > 0.0 else np.zeros(len(samples), dtype=int)
    iy = np.rint((samples[:, 1] - grid.region[2]) / hy).astype(int) if hy > 0.0 else np.zeros(len(samples), dtype=int)
    inside = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
    raster[iy[inside], ix[inside]] = True
    return raster


def _hausdorff(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    if len(a) == 0 or len(b) == 0:
        return None
    return float(max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0]))


def map_metrics(indicator: IndicatorMap, truth: CrackScene, tau: Optional[float] = None) -> dict:
    """
    Localization and support quality of one map against the true arcs.
    """
    if indicator.mask is None:
        tau = tau if tau is not None else (indicator.tau or DEFAULT_TAU)
        indicator = threshold_map(indicator, tau)

    grid = indicator.grid
    mask = indicator.mask
    cell = max(grid.spacing)
    argmax = indicator.peak_point

    labels, n_components = ndimage.label(mask, structure=_CONNECTIVITY)
    metrics = {
        "kind": indicator.kind.value,
        "argmax": argmax.tolist(),
        "tau": indicator.tau,
        "mask_cells": int(mask.sum()),
        "components": int(n_components),
    }

    truth_raster = _truth_raster(grid, truth)
    if not truth_raster.any():
        metrics.update(
            {"localization_error": None, "hausdorff": None, "spurious_components": None, "iou": None}
        )
        return metrics

    skeleton = skeletonize(mask)
    near_truth = ndimage.binary_dilation(truth_raster, structure=_CONNECTIVITY, iterations=2)
    touching = set(np.unique(labels[near_truth & (labels > 0)]).tolist())
    band = ndimage.binary_dilation(truth_raster, structure=_CONNECTIVITY)
    localization = float(truth.distance(argmax[None, :])[0])

    metrics.update(
        {
            "localization_error": localization,
            "localization_cells": localization / cell if cell > 0.0 else 0.0,
            "hausdorff": _hausdorff(_cell_centers(grid, skeleton), _cell_centers(grid, truth_raster)),
            "spurious_components": int(n_components - len(touching)),
            "iou": float(np.sum(mask & band) / np.sum(mask | band)),
        }
    )
    return metrics


def _check_same_grid(a: SamplingGrid, b: SamplingGrid) -> None:
    if (a.nx, a.ny) != (b.nx, b.ny) or not np.allclose(a.region, b.region):
        raise GridMismatchError(
            f"Maps live on different grids: {a.nx}x{a.ny} over {a.region} vs {b.nx}x{b.ny} over {b.region}"
        )


def compare(map_a: IndicatorMap, map_b: IndicatorMap, truth: CrackScene, tau: Optional[float] = None) -> dict:
    _check_same_grid(map_a.grid, map_b.grid)
    a = map_metrics(map_a, truth, tau=tau)
    b = map_metrics(map_b, truth, tau=tau)
    report = {"a": a, "b": b}
    if a["spurious_components"] is not None:
        report["spurious_a_le_b"] = a["spurious_components"] <= b["spurious_components"]
    return report


# ========== RUN ===========:


def _emit_map(indicator: IndicatorMap, tau: float, stem: Path) -> tuple:
    thresholded = threshold_map(indicator, tau)
    emitted = dataclasses.replace(indicator, mask=thresholded.mask, tau=tau)
    paths = [write_map_csv(emitted, stem.with_suffix(".csv")), write_map_pgm(indicator, stem.with_suffix(".pgm"))]
    return emitted, paths


def invert_cell(
    cell: StudyCell,
    tau: float,
    output_dir: Path,
    workers: Optional[int],
    indicator: Optional[IndicatorKind],
) -> tuple:
    """
    Maps of one cell written under output_dir; returns (metrics, written paths).

    A cell whose data are identically zero is reported as invalid_map.
    """
    started = time.perf_counter()
    metrics = {"layout": {k: v for k, v in cell.scenario.layout.describe().items() if k.startswith("n_")}}
    artifacts = []
    emitted = {}
    try:
        maps = invert(cell.scenario, cell.data, indicator=indicator, workers=workers)
        for kind, indicator_map in maps.items():
            emitted[kind], paths = _emit_map(indicator_map, tau, output_dir / f"{cell.name}_{kind.value}")
            artifacts.extend(paths)
            metrics[kind.value] = map_metrics(emitted[kind], cell.scenario.scene)
            metrics[kind.value]["morozov"] = indicator_map.metadata

    except InvalidMapError as e:
        logger.warning(f"Cell {cell.name}: {e}")
        metrics.update({"status": "invalid_map", "reason": str(e), "runtime": time.perf_counter() - started})
        return metrics, artifacts

    if len(emitted) == 2:
        report = compare(emitted[IndicatorKind.TLSM], emitted[IndicatorKind.FLSM], cell.scenario.scene)
        metrics["tlsm_vs_flsm"] = {key: value for key, value in report.items() if key not in ("a", "b")}

    metrics.update({"status": "ok", "runtime": time.perf_counter() - started})
    return metrics, artifacts


def run(
    config: ScenarioConfig,
    output_dir: Optional[Path] = None,
    workers: Optional[int] = None,
    indicator: Optional[IndicatorKind] = None,
) -> RunReport:
    """
    Full pipeline for one config; on failure the manifest lists what was written
    as partial and the error is re-raised.
    """
    output_dir = Path(output_dir or config.output_dir or "tlsm-output")
    output_dir.mkdir(parents=True, exist_ok=True)
    workers = config.workers if workers is None else workers
    report = RunReport(status="running", output_dir=output_dir)
    stages = []
    started = time.perf_counter()

    try:
        cells = study_cells(config, workers=workers)
        for cell in cells:
            if cell.generated:
                report.artifacts.append(save_dataset(cell.data, output_dir / f"dataset_{cell.name}"))
                report.artifacts.append(output_dir / f"dataset_{cell.name}.bin")
        stages.append("generate")

        for cell in cells:
            logger.info(f"Inverting cell {cell.name}")
            metrics, artifacts = invert_cell(cell, config.inversion.tau, output_dir, workers, indicator)
            report.metrics[cell.name] = metrics
            report.artifacts.extend(artifacts)
        stages.append("invert")

        if config.study.kind is StudyKind.ONE_SIDED:
            report.metrics["aperture_degradation"] = _degradation(report.metrics)
        elif config.study.kind is StudyKind.EVOLUTION:
            report.metrics["support_growth"] = [
                report.metrics[cell.name].get(IndicatorKind.TLSM.value, {}).get("mask_cells") for cell in cells
            ]
        elif config.study.kind is StudyKind.STIFFNESS_SWEEP:
            report.metrics["stiffness_sensitivity"] = _sensitivity(config.study.stiffness_values, cells, report.metrics)

        report.metrics["total_runtime"] = time.perf_counter() - started
        report.artifacts.append(write_json(output_dir / "metrics.json", report.metrics))
        stages.append("emit")
        report.status = "complete"

    except Exception as e:
        logger.error(f"{type(e).__name__}({e}) while running scenario")
        report.status = "partial"
        write_manifest(
            output_dir,
            config.to_dict(),
            [p for p in report.artifacts if p.exists()],
            stages,
            status="partial",
            extra={"partial": True, "error": f"{type(e).__name__}: {e}"},
        )
        raise e

    write_manifest(output_dir, config.to_dict(), report.artifacts, stages, extra=_forward_notes(cells))
    logger.info(f"Run complete: {len(report.artifacts)} artifacts in {output_dir}")
    return report


def _degradation(metrics: dict) -> dict:
    one_sided = metrics["one_sided"].get(IndicatorKind.TLSM.value, {})
    reference = metrics["ring_reference"].get(IndicatorKind.TLSM.value, {})
    keys = ("localization_error", "hausdorff", "spurious_components", "iou")
    return {
        key: {"one_sided": one_sided.get(key), "ring_reference": reference.get(key)}
        for key in keys
    }


def _sensitivity(values: List[float], cells: List[StudyCell], metrics: dict) -> List[dict]:
    rows = []
    for stiffness, cell in zip(values, cells):
        tlsm = metrics[cell.name].get(IndicatorKind.TLSM.value, {})
        rows.append(
            {
                "stiffness": stiffness,
                "data_norm": cell.data.norm(),
                "localization_error": tlsm.get("localization_error"),
                "mask_cells": tlsm.get("mask_cells"),
            }
        )
    return rows


def _forward_notes(cells: List[StudyCell]) -> dict:
    generated = {cell.name: cell.data.metadata for cell in cells if cell.generated}
    return {"library_version": VERSION, "forward": generated}
