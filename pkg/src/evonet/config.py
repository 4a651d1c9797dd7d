"""Run configuration files.

A run is described by a TOML file with these sections (all optional except
one data source)::

    [run]        output_dir, worker_count, baseline_ca, split, split_seed
    [synthetic]  calibrated benchmark settings (see bench.BenchmarkSettings)
    [source]     manifest
    [[target]]   name, manifest          (one block per target case)
    [teacher]    hidden_widths, activation, model (path of a saved teacher)
    [train]      max_iterations, gradient_tolerance, history_size,
                 pretrain_epochs, pretrain_noise
    [evo]        population_size, crossover_prob, mutation_prob,
                 max_generations, depth_min, depth_max, width_min,
                 width_max, sbx_eta, seed, fitness_cache,
                 final_finetune_iters, split_noise
    [adapt]      gamma, classification_scope, finetune_iters

Either ``[synthetic]`` or ``[source]`` plus ``[[target]]`` must be given.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .bench import BenchmarkSettings
from .core_nn import TrainConfig
from .domain_adapt import AdaptConfig
from .evo import EvoConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class TargetCase:
    name: str
    manifest: Path


@dataclass
class RunConfig:
    output_dir: Path
    evo: EvoConfig
    train: TrainConfig
    teacher_widths: tuple[int, ...] = (80, 40, 20)
    activation: str = "relu"
    teacher_model: Path | None = None
    synthetic: BenchmarkSettings | None = None
    source_manifest: Path | None = None
    targets: list[TargetCase] = field(default_factory=list)
    baseline_ca: list[float] | None = None
    split: tuple[float, float, float] = (0.64, 0.16, 0.20)
    split_seed: int = 0


_RUN_KEYS = {
    "output_dir": str,
    "worker_count": int,
    "baseline_ca": list,
    "split": list,
    "split_seed": int,
}
_TEACHER_KEYS = {"hidden_widths": list, "activation": str, "model": str}
_EVO_KEYS = {
    "population_size": int,
    "crossover_prob": float,
    "mutation_prob": float,
    "max_generations": int,
    "depth_min": int,
    "depth_max": int,
    "width_min": int,
    "width_max": int,
    "sbx_eta": float,
    "seed": int,
    "fitness_cache": bool,
    "final_finetune_iters": int,
    "split_noise": float,
}


def _types_of(cls) -> dict:
    return {f.name: type(f.default) for f in fields(cls)}


def _check(section: str, table, schema: dict) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    out = {}
    for key, value in table.items():
        if key not in schema:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        want = schema[key]
        ok = isinstance(value, want) and not (want is int and isinstance(value, bool))
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value, ok = float(value), True
        if not ok:
            raise ConfigError(f"[{section}] {key} must be of type {want.__name__}, got {value!r}")
        out[key] = value
    return out


def _build(section: str, cls, kwargs):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    known = {"run", "synthetic", "source", "target", "teacher", "train", "evo", "adapt"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown section [{key}]")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    run = _check("run", raw.get("run", {}), _RUN_KEYS)
    teacher = _check("teacher", raw.get("teacher", {}), _TEACHER_KEYS)
    train = _build("train", TrainConfig, _check("train", raw.get("train", {}), _types_of(TrainConfig)))
    adapt_schema = {"gamma": float, "classification_scope": str, "finetune_iters": int}
    adapt = _build("adapt", AdaptConfig, _check("adapt", raw.get("adapt", {}), adapt_schema))

    evo_raw = _check("evo", raw.get("evo", {}), _EVO_KEYS)
    defaults = EvoConfig()
    depth = (evo_raw.pop("depth_min", defaults.depth_range[0]), evo_raw.pop("depth_max", defaults.depth_range[1]))
    width = (evo_raw.pop("width_min", defaults.width_range[0]), evo_raw.pop("width_max", defaults.width_range[1]))
    evo = _build(
        "evo", EvoConfig,
        dict(evo_raw, depth_range=depth, width_range=width, adapt=adapt,
             worker_count=run.get("worker_count", 1)),
    )

    synthetic = None
    if "synthetic" in raw:
        synth_raw = _check("synthetic", raw["synthetic"], _types_of(BenchmarkSettings))
        synthetic = _build("synthetic", BenchmarkSettings, synth_raw)
    source_manifest = None
    if "source" in raw:
        src = _check("source", raw["source"], {"manifest": str})
        if "manifest" not in src:
            raise ConfigError("[source] manifest is required")
        source_manifest = resolve(src["manifest"])
    targets = []
    target_blocks = raw.get("target", [])
    if not isinstance(target_blocks, list):
        raise ConfigError("target must be an array of tables ([[target]])")
    for k, block in enumerate(target_blocks):
        t = _check("target", block, {"name": str, "manifest": str})
        if "manifest" not in t:
            raise ConfigError(f"[[target]] #{k} manifest is required")
        targets.append(TargetCase(t.get("name", f"target{k}"), resolve(t["manifest"])))
    names = [t.name for t in targets]
    if len(set(names)) != len(names):
        raise ConfigError("target names must be unique")

    if synthetic is not None and (source_manifest is not None or targets):
        raise ConfigError("synthetic: give either [synthetic] or [source]/[[target]] manifests, not both")
    if synthetic is None and (source_manifest is None or not targets):
        raise ConfigError("source: need [synthetic] or both [source] manifest and at least one [[target]]")

    n_cases = len(targets) if synthetic is None else 1
    baseline = run.get("baseline_ca")
    if baseline is not None:
        if len(baseline) != n_cases or not all(isinstance(v, (int, float)) for v in baseline):
            raise ConfigError(f"baseline_ca must list {n_cases} number(s), one per target case")
        baseline = [float(v) for v in baseline]
    split = tuple(float(v) for v in run.get("split", (0.64, 0.16, 0.20)))
    if len(split) != 3 or min(split) <= 0 or abs(sum(split) - 1) > 1e-9:
        raise ConfigError(f"split must be three positive fractions summing to 1, got {list(split)}")

    widths = tuple(teacher.get("hidden_widths", (80, 40, 20)))
    if not all(isinstance(w, int) and w >= 1 for w in widths):
        raise ConfigError(f"hidden_widths must be positive integers, got {list(widths)}")
    activation = teacher.get("activation", "relu")
    if activation not in ("relu", "sigmoid"):
        raise ConfigError(f"activation must be 'relu' or 'sigmoid', got {activation!r}")

    return RunConfig(
        output_dir=resolve(run.get("output_dir", "evonet_out")),
        evo=evo,
        train=train,
        teacher_widths=widths,
        activation=activation,
        teacher_model=resolve(teacher["model"]) if "model" in teacher else None,
        synthetic=synthetic,
        source_manifest=source_manifest,
        targets=targets,
        baseline_ca=baseline,
        split=split,
        split_seed=run.get("split_seed", 0),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent)
