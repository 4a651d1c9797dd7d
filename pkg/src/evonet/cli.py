"""Command line front end.

    evonet run <config.toml>
    evonet validate <config.toml>
    evonet synth-bench <out-dir>

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training or
runtime error. Log verbosity comes from ``EVONET_LOG_LEVEL`` (default
WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import report
from .bench import BenchmarkSettings, calibrated_benchmark
from .config import ConfigError, RunConfig, load_config
from .core_nn import (
    Architecture,
    OptimizationError,
    classification_accuracy,
    dumps_model,
    load_model,
    param_count,
    train_source_model,
)
from .data import DataError, load_manifest, split, write_manifest
from .evo import evolve

logger = logging.getLogger("evonet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def load_domains(cfg: RunConfig):
    """Return the source dataset and a list of ``(case_name, target_dataset)``."""
    if cfg.synthetic is not None:
        bench = calibrated_benchmark(cfg.synthetic)
        logger.info(
            "synthetic benchmark attempt %d: source-only CA %.2f -> %.2f on target",
            bench.attempt, bench.source_ca, bench.target_ca,
        )
        return bench.source, [("synthetic", bench.target)]
    source = load_manifest(cfg.source_manifest, "source")
    targets = [(t.name, load_manifest(t.manifest, "target")) for t in cfg.targets]
    for name, ds in targets:
        if ds.dim != source.dim:
            raise DataError(f"target {name!r} has {ds.dim} features, source has {source.dim}")
    return source, targets


def get_teacher(cfg: RunConfig, source, num_classes: int):
    if cfg.teacher_model is not None:
        teacher = load_model(cfg.teacher_model)
        if teacher.arch.input_dim != source.dim or teacher.arch.num_classes != num_classes:
            raise DataError("saved teacher does not match the data dimensions")
        return teacher
    arch = Architecture(source.dim, cfg.teacher_widths, num_classes)
    rng = np.random.default_rng([cfg.evo.seed, 1])
    return train_source_model(source, arch, cfg.train, rng, cfg.activation)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def run_case(name, teacher, source, target, cfg: RunConfig, case_index: int, stage: Path) -> dict:
    rng = np.random.default_rng([cfg.split_seed, case_index])
    D_tr, D_val, D_te = split(target, cfg.split, rng)
    t0 = time.perf_counter()
    best, reports = evolve(teacher, source, (D_tr, D_val, D_te), cfg.evo)
    elapsed = time.perf_counter() - t0
    case_dir = stage / name
    _write(case_dir / "generations.json", report.generations_json(reports))
    _write(case_dir / "pareto_final.csv", report.emit_pareto(reports[-1]))
    _write(case_dir / "curve.csv", report.emit_curve(reports))
    _write(case_dir / "best_model.json", dumps_model(best))
    try:
        report.plot_curve(reports, case_dir / "ca_curve.png")
        report.plot_pareto(reports[-1], case_dir / "pareto_final.png")
    except ImportError:
        logger.warning("matplotlib unavailable; skipping figures")
    return {
        "name": name,
        "test_ca": classification_accuracy(best, D_te.features, D_te.labels),
        "validation_ca": classification_accuracy(best, D_val.features, D_val.labels),
        "teacher_test_ca": classification_accuracy(teacher, D_te.features, D_te.labels),
        "best_widths": list(best.arch.hidden_widths),
        "best_params": param_count(best.arch),
        "generations": len(reports),
        "split_sizes": [len(D_tr), len(D_val), len(D_te)],
        "seconds": elapsed,
    }


def execute(cfg: RunConfig) -> dict:
    """Run every target case and move the artifacts into ``cfg.output_dir``."""
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".evonet-", dir=out.parent))
    try:
        source, targets = load_domains(cfg)
        num_classes = max([source.num_classes] + [t.num_classes for _, t in targets])
        teacher = get_teacher(cfg, source, num_classes)
        cases = [
            run_case(name, teacher, source, target, cfg, k, stage)
            for k, (name, target) in enumerate(targets)
        ]
        ca = [c["test_ca"] for c in cases]
        mean, std = report.aggregate(ca)
        summary = {
            "cases": cases,
            "mean_ca": mean,
            "std_ca": std,
            "baseline_ca": cfg.baseline_ca,
            "ti": report.compute_ti(ca, cfg.baseline_ca) if cfg.baseline_ca else None,
            "teacher_widths": list(teacher.arch.hidden_widths),
            "wall_clock_seconds": time.perf_counter() - t0,
        }
        _write(stage / "summary.json", report.canonical_json(summary))
        _write(stage / "summary.csv", report.emit_summary_table(cases))
        _publish(stage, out)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return summary


def _publish(stage: Path, out: Path) -> None:
    for src in sorted(stage.rglob("*")):
        if src.is_file():
            dst = out / src.relative_to(stage)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)


def synth_bench(out_dir, seed: int = 0) -> Path:
    """Write the calibrated benchmark as manifests plus a ready-to-run config."""
    out = Path(out_dir)
    settings = BenchmarkSettings(seed=seed)
    bench = calibrated_benchmark(settings)
    write_manifest(bench.source, out, "source")
    write_manifest(bench.target, out, "target")
    info = dict(settings.to_dict(), attempt=bench.attempt,
                source_only_source_ca=bench.source_ca, source_only_target_ca=bench.target_ca)
    _write(out / "benchmark.json", report.canonical_json(info))
    _write(
        out / "run.toml",
        "\n".join([
            "[run]",
            'output_dir = "results"',
            "worker_count = 1",
            "",
            "[source]",
            'manifest = "source.toml"',
            "",
            "[[target]]",
            'name = "target"',
            'manifest = "target.toml"',
            "",
            "[evo]",
            "population_size = 12",
            "max_generations = 8",
            f"seed = {seed}",
            "",
            "[adapt]",
            "finetune_iters = 50",
            "",
        ]),
    )
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evonet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="train the teacher and run the search")
    p.add_argument("config")
    p = sub.add_parser("validate", help="parse and check a config without running it")
    p.add_argument("config")
    p = sub.add_parser("synth-bench", help="write the synthetic benchmark as manifests")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("EVONET_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-bench":
            path = synth_bench(args.out_dir, args.seed)
            print(f"benchmark written to {path}")
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return EXIT_OK
        summary = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OptimizationError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for case in summary["cases"]:
        print(f"{case['name']}: test CA {case['test_ca']:.2f} with widths {case['best_widths']}")
    print(f"mean CA {summary['mean_ca']:.2f}, std {summary['std_ca']:.2f}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
