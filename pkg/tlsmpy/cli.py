import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from tlsmpy.config import ScenarioConfig, to_json
from tlsmpy.constants import VERSION
from tlsmpy.enums import IndicatorKind
from tlsmpy.model import CrackScene
from tlsmpy.persistence import (
    load_dataset,
    read_map_csv,
    save_dataset,
    verify_manifest,
    write_json,
    write_manifest,
)
from tlsmpy.scenario import Scenario, StudyCell, compare, generate, invert_cell, run


__all__ = [
    "build_parser",
    "main",
]

logger = logging.getLogger(__name__)


def _env_int(name: str) -> Optional[int]:
    value = os.environ.get(name)
    return int(value) if value else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlsm", description=f"Time-domain crack imaging, version {VERSION}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", type=Path, required=True, help="JSON scenario file")
        sub.add_argument("--output-dir", type=Path, default=None)
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--workers", type=int, default=None)

    def inversion_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--indicator", choices=[kind.value for kind in IndicatorKind], default=None)
        sub.add_argument("--tau", type=float, default=None, help="threshold as a fraction of the map peak")

    generate_cmd = commands.add_parser("generate", help="synthesize the scattered dataset of a scenario")
    scenario_flags(generate_cmd)

    invert_cmd = commands.add_parser("invert", help="indicator maps from a stored dataset")
    scenario_flags(invert_cmd)
    inversion_flags(invert_cmd)
    invert_cmd.add_argument("--dataset", type=Path, required=True, help="dataset header (.json)")

    compare_cmd = commands.add_parser("compare", help="metrics of two map CSVs against the true cracks")
    compare_cmd.add_argument("--config", type=Path, required=True, help="scenario holding the true scene")
    compare_cmd.add_argument("map_a", type=Path)
    compare_cmd.add_argument("map_b", type=Path)
    compare_cmd.add_argument("--output", type=Path, default=None)

    verify_cmd = commands.add_parser("verify-manifest", help="re-hash every artifact of a run directory")
    verify_cmd.add_argument("output_dir", type=Path)

    run_cmd = commands.add_parser("run", help="generate, invert and emit every study cell")
    scenario_flags(run_cmd)
    inversion_flags(run_cmd)

    return parser


def _load_config(args: argparse.Namespace) -> ScenarioConfig:
    """
    Config file, then environment defaults, then command-line overrides.
    """
    config = ScenarioConfig.from_file(args.config)
    overrides = {}
    env_workers = _env_int("TLSM_WORKERS")
    env_output = os.environ.get("TLSM_OUTPUT_DIR")
    if config.workers is None and env_workers is not None:
        overrides["workers"] = env_workers
    if config.output_dir is None and env_output:
        overrides["output_dir"] = env_output

    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "output_dir", None) is not None:
        overrides["output_dir"] = str(args.output_dir)

    inversion = {}
    if getattr(args, "indicator", None) is not None:
        inversion["indicator"] = IndicatorKind(args.indicator)
    if getattr(args, "tau", None) is not None:
        inversion["tau"] = args.tau
    if inversion:
        overrides["inversion"] = dataclasses.replace(config.inversion, **inversion)

    return dataclasses.replace(config, **overrides) if overrides else config


def _output_dir(config: ScenarioConfig) -> Path:
    output_dir = Path(config.output_dir or "tlsm-output")
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def _generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    output_dir = _output_dir(config)
    scenario = Scenario.from_config(config)
    data = generate(scenario, workers=config.workers)
    header = save_dataset(data, output_dir / "dataset")
    write_manifest(output_dir, config.to_dict(), [header, header.with_suffix(".bin")], ["generate"])
    return 0


def _invert(args: argparse.Namespace) -> int:
    config = _load_config(args)
    output_dir = _output_dir(config)
    scenario = Scenario.from_config(config)
    data = load_dataset(args.dataset)
    layout = scenario.layout
    n_polarizations = len(layout.polarizations)
    # masks stored with the dataset select the receivers and sources used:
    layout = layout.with_masks(
        receiver_mask=data.receiver_mask,
        source_mask=data.column_mask.reshape(layout.n_sources, n_polarizations).any(axis=1),
    )
    cell = StudyCell("inverted", scenario.with_layout(layout), data, generated=False)
    metrics, artifacts = invert_cell(cell, config.inversion.tau, output_dir, config.workers, None)
    artifacts.append(write_json(output_dir / "metrics.json", {"inverted": metrics}))
    write_manifest(
        output_dir,
        config.to_dict(),
        artifacts,
        ["invert", "emit"],
        extra={"dataset": str(args.dataset)},
    )
    return 0 if metrics["status"] == "ok" else 2


def _compare(args: argparse.Namespace) -> int:
    config = ScenarioConfig.from_file(args.config)
    truth = CrackScene.from_config(config.scene)
    report = compare(read_map_csv(args.map_a), read_map_csv(args.map_b), truth, tau=config.inversion.tau)
    if args.output is not None:
        write_json(args.output, report)
    else:
        print(json.dumps(to_json(obj=report), indent=4))
    return 0


def _verify(args: argparse.Namespace) -> int:
    problems = verify_manifest(args.output_dir)
    for problem in problems:
        logger.error(problem)
    if not problems:
        logger.info(f"All artifacts in {args.output_dir} match the manifest")
    return 1 if problems else 0


def _run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    return run(config, output_dir=_output_dir(config), workers=config.workers).exit_code


_COMMANDS = {
    "generate": _generate,
    "invert": _invert,
    "compare": _compare,
    "verify-manifest": _verify,
    "run": _run,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:
        logger.error(f"{type(e).__name__}({e}) while running {args.command}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
