"""Command-line experiment runner.

For every seed in the config (or ``--seed``) one simulated world is built and
each configured method runs on it, so all methods of a seed share data,
partition and initial weights. Each (method, seed) pair writes

* ``<method>_seed<seed>.csv``: one row per evaluation, columns as in
  :data:`fedodkd.protocols.MetricsRecord.COLUMNS`;
* ``<method>_seed<seed>.json``: final accuracies, communication report,
  generalization-bound report, resolved config and package version.

Missing values (for example the auxiliary accuracy of a method that has no
auxiliary model) are written as ``nan`` in the CSV and ``null`` in the JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import yaml

from . import __version__
from .analysis import CommReport, bound_report
from .config import ConfigError, ExperimentConfig, canonical_method, load_config
from .protocols import (
    MetricsRecord,
    RunResult,
    World,
    build_world,
    comm_entries,
    empirical_losses,
    method_train_seed,
    run_method,
)

log = logging.getLogger("fedodkd")

# methods whose output is the server-side target model, so the bound applies to it
_TARGET_METHODS = {"proposed", "fedavg_strong_only"}


def _cell(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return value


def write_metrics_csv(path: Path, records: list[MetricsRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MetricsRecord.COLUMNS)
        for rec in records:
            writer.writerow([_cell(getattr(rec, col)) for col in MetricsRecord.COLUMNS])


def run_summary(config: ExperimentConfig, world: World, result: RunResult, seed: int) -> dict:
    """Everything the JSON summary of one run contains, as plain Python values."""
    report = CommReport(result.method, comm_entries(config, world, result))
    comm = report.to_dict()
    comm["engine_total_upload"] = result.server.cum_upload
    comm["engine_total_download"] = result.server.cum_download

    uses_target = result.method in _TARGET_METHODS or (
        result.method == "feddf" and config.homogeneous_model == "target"
    )
    if uses_target:
        losses = empirical_losses(config, world, result)
        sizes = {cid: (v["n_labeled"], v["n_labeled"] + v["n_unlabeled"]) for cid, v in losses.items()}
        bound = bound_report(sizes, {cid: v["loss"] for cid, v in losses.items()}, config.bound_p).to_dict()
    else:
        bound = {"unavailable": f"{result.method} does not train a server-side target model"}

    seeds = world.seeds
    return _json_value(
        {
            "version": __version__,
            "method": result.method,
            "seed": seed,
            "seeds": {
                "data": seeds.data,
                "partition": seeds.partition,
                "init": seeds.init,
                "train": method_train_seed(config, seeds, result.method),
            },
            "final": result.final.as_dict(),
            "comm": comm,
            "bound": bound,
            "config": config.to_dict(),
        }
    )


def run(config: ExperimentConfig, out_dir, seeds=None, methods=None, workers=None) -> list[Path]:
    """Run every (seed, method) pair and write its CSV and JSON into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for seed in seeds if seeds is not None else config.seeds:
        world = build_world(config, seed)
        for method in methods or config.methods:
            t0 = time.perf_counter()
            result = run_method(config, world, method, workers=workers)
            stem = f"{result.method}_seed{seed}"
            write_metrics_csv(out / f"{stem}.csv", result.records)
            summary = run_summary(config, world, result, seed)
            (out / f"{stem}.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
            written += [out / f"{stem}.csv", out / f"{stem}.json"]
            log.info(
                "%s seed %d: target acc %.4f, aux acc %.4f (%.1fs)",
                result.method, seed, result.final.target_test_accuracy,
                result.final.aux_test_accuracy, time.perf_counter() - t0,
            )
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedodkd",
        description="Simulate heterogeneous federated learning with on-device distillation.",
    )
    parser.add_argument("--config", type=Path, help="YAML config (flat key: value); defaults if omitted")
    parser.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    parser.add_argument("--method", action="append", metavar="NAME",
                        help="run this method instead of the configured ones (repeatable)")
    parser.add_argument("--seed", type=int, action="append", metavar="N",
                        help="run this seed instead of the configured ones (repeatable)")
    parser.add_argument("--workers", type=int, help="threads for client-parallel execution")
    parser.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {}
        if args.method:
            overrides["methods"] = [canonical_method(m) for m in args.method]
        if args.seed:
            overrides["seeds"] = list(args.seed)
        if args.workers is not None:
            overrides["workers"] = args.workers
        if overrides:
            config = ExperimentConfig.from_dict({**config.to_dict(), **overrides})
    except (ConfigError, ValueError, OSError) as exc:
        print(f"fedodkd: error: {exc}", file=sys.stderr)
        return 2

    if args.dry_run:
        sys.stdout.write(yaml.safe_dump(config.to_dict(), sort_keys=False))
        return 0

    for path in run(config, args.out):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
