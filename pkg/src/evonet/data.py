"""Signal ingestion, segmentation, normalization and splitting.

Manifests are TOML files::

    segment_length = 100
    normalization = "zscore"      # "zscore", "minmax" or "none"

    [[class]]
    label = 0
    name = "N"
    files = ["normal_0.txt", "normal_1.txt"]

Relative file paths resolve against the manifest's directory. Signal files
are UTF-8 text with one number per line; blank lines and lines starting
with ``#`` are skipped.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

NORMALIZATIONS = ("zscore", "minmax", "none")


class DataError(ValueError):
    pass


@dataclass(eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    domain_tag: str = "source"
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DataError(f"features must be a matrix, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.domain_tag not in ("source", "target"):
            raise DataError(f"unknown domain tag {self.domain_tag!r}")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("labels must be nonnegative")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(
            self.features[idx], self.labels[idx], self.domain_tag, dict(self.class_names)
        )


@dataclass
class ClassEntry:
    label: int
    name: str
    files: list[Path]


@dataclass
class DatasetManifest:
    classes: list[ClassEntry]
    segment_length: int
    normalization: str = "zscore"
    domain_tag: str = "source"

    def __post_init__(self):
        if self.segment_length < 2:
            raise DataError("segment_length must be >= 2")
        if self.normalization not in NORMALIZATIONS:
            raise DataError(f"normalization must be one of {NORMALIZATIONS}")
        labels = sorted(c.label for c in self.classes)
        if labels != list(range(len(labels))):
            raise DataError(f"class labels must be contiguous from 0, got {labels}")


def segment_signal(signal: Sequence[float], seg_len: int) -> np.ndarray:
    """Cut a 1-D signal into non-overlapping rows of ``seg_len`` points.

    The trailing remainder that does not fill a whole row is dropped.
    """
    signal = np.asarray(signal, dtype=float).ravel()
    if seg_len < 1:
        raise DataError("segment length must be positive")
    if signal.size < seg_len:
        raise DataError(f"signal of length {signal.size} is shorter than segment length {seg_len}")
    rows = signal.size // seg_len
    return signal[: rows * seg_len].reshape(rows, seg_len).copy()


def zscore(X: np.ndarray) -> np.ndarray:
    """Standardize each column with its mean and population std."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    # exact range test: the std of a constant column can round to ~1e-13
    flat = (np.ptp(X, axis=0) == 0) | (sigma == 0)
    if np.any(flat):
        warnings.warn(f"zscore: {int(flat.sum())} constant column(s) set to 0", RuntimeWarning)
    out = (X - mu) / np.where(flat, 1.0, sigma)
    out[:, flat] = 0.0
    return out


def minmax(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    flat = span == 0
    if np.any(flat):
        warnings.warn(f"minmax: {int(flat.sum())} constant column(s) set to 0.5", RuntimeWarning)
    out = (X - lo) / np.where(flat, 1.0, span)
    out[:, flat] = 0.5
    return out


def normalize(X: np.ndarray, method: str) -> np.ndarray:
    if method == "zscore":
        return zscore(X)
    if method == "minmax":
        return minmax(X)
    if method == "none":
        return np.asarray(X, dtype=float)
    raise DataError(f"unknown normalization {method!r}")


def split(
    ds: LabeledDataset,
    fractions: Sequence[float],
    rng: np.random.Generator,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Stratified random split into train/validation/test parts.

    Per class the validation and test counts are rounded to the nearest
    integer and training takes the rest, so each part is within one sample
    of its exact share.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < 3:
            raise DataError(f"class {c} has {idx.size} samples; at least 3 are needed to split")
        idx = rng.permutation(idx)
        n_val = int(np.floor(fractions[1] * idx.size + 0.5))
        n_test = int(np.floor(fractions[2] * idx.size + 0.5))
        n_val = min(max(n_val, 1), idx.size - 2)
        n_test = min(max(n_test, 1), idx.size - n_val - 1)
        n_train = idx.size - n_val - n_test
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(ds.subset(np.sort(np.concatenate(p))) for p in parts)


# -- files ------------------------------------------------------------------


def read_signal(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"signal file not found: {path}")
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise DataError(f"{path}:{lineno}: not a number: {text!r}") from None
    return np.asarray(values, dtype=float)


def write_signal(path, values) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.ravel(values):
            fh.write(f"{float(v)!r}\n")


def parse_manifest(path, domain_tag: str = "source") -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None
    base = path.parent
    try:
        classes = [
            ClassEntry(
                label=int(entry["label"]),
                name=str(entry.get("name", entry["label"])),
                files=[base / f for f in entry["files"]],
            )
            for entry in raw["class"]
        ]
        return DatasetManifest(
            classes=classes,
            segment_length=int(raw["segment_length"]),
            normalization=str(raw.get("normalization", "zscore")),
            domain_tag=domain_tag,
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc.args[0]!r}") from None


def load_manifest(path, domain_tag: str = "source") -> LabeledDataset:
    """Assemble a labeled dataset from a manifest of per-class signal files."""
    manifest = parse_manifest(path, domain_tag)
    blocks, labels = [], []
    for entry in sorted(manifest.classes, key=lambda c: c.label):
        segments = []
        for f in entry.files:
            sig = read_signal(f)
            if sig.size >= manifest.segment_length:
                segments.append(segment_signal(sig, manifest.segment_length))
        if not segments:
            raise DataError(f"class {entry.label} ({entry.name}) yields no segments")
        block = np.vstack(segments)
        blocks.append(block)
        labels.append(np.full(block.shape[0], entry.label))
    X = normalize(np.vstack(blocks), manifest.normalization)
    return LabeledDataset(
        X,
        np.concatenate(labels),
        domain_tag,
        {c.label: c.name for c in manifest.classes},
    )


def write_manifest(ds: LabeledDataset, out_dir, stem: str, normalization: str = "none") -> Path:
    """Write a dataset as one signal file per class plus a manifest.

    Each row becomes one segment, so loading the manifest back yields the
    same matrix when ``normalization`` is ``"none"``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"segment_length = {ds.dim}", f'normalization = "{normalization}"', ""]
    for c in range(ds.num_classes):
        fname = f"{stem}_class{c}.txt"
        write_signal(out_dir / fname, ds.features[ds.labels == c])
        name = ds.class_names.get(c, f"class{c}")
        lines += ["[[class]]", f"label = {c}", f'name = "{name}"', f'files = ["{fname}"]', ""]
    manifest_path = out_dir / f"{stem}.toml"
    manifest_path.write_text("\n".join(lines), encoding="utf-8")
    return manifest_path


# -- synthetic benchmark ----------------------------------------------------


def _rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    i, j = rng.choice(dim, size=2, replace=False)
    R = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    R[i, i] = c
    R[j, j] = c
    R[i, j] = -s
    R[j, i] = s
    return R


def synth_domain_shift(
    num_classes: int,
    dim: int,
    samples_per_class: tuple[int, int],
    shift_magnitude: float,
    rotation_angle: float,
    noise_std: float,
    rng: np.random.Generator,
    center_scale: float = 1.0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Gaussian class blobs for a source domain and a shifted target domain.

    Class centers are drawn from ``N(0, center_scale**2 I)`` (redrawn until
    every pair is at least ``4 * noise_std`` apart). Target samples are the
    same blobs translated by ``shift_magnitude`` along a random unit
    direction, then rotated by ``rotation_angle`` in a random coordinate
    plane.
    """
    if dim < 2 or num_classes < 2:
        raise DataError("synthetic benchmark needs dim >= 2 and num_classes >= 2")
    n_src, n_tgt = samples_per_class
    for _ in range(1000):
        centers = rng.normal(scale=center_scale, size=(num_classes, dim))
        gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        if gaps[np.triu_indices(num_classes, 1)].min() >= 4 * noise_std:
            break
    else:
        raise DataError("could not place class centers; increase center_scale or lower noise_std")
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    R = _rotation(dim, rotation_angle, rng)

    def blobs(n):
        X = np.vstack([centers[c] + noise_std * rng.normal(size=(n, dim)) for c in range(num_classes)])
        return X, np.repeat(np.arange(num_classes), n)

    Xs, ys = blobs(n_src)
    Xt, yt = blobs(n_tgt)
    Xt = (Xt + shift_magnitude * direction) @ R.T
    return LabeledDataset(Xs, ys, "source"), LabeledDataset(Xt, yt, "target")
