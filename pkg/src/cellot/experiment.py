"""Dataset generation and the paired-complex regression experiment.

A dataset is a seeded list of (source, target) complex pairs: each source is
a random weighted complex on a fixed vertex set, and its target shares the
skeleton with affinely transformed cell weights, so the map from source to
target is learnable from the source alone.  The experiment fits the
transport GP with a chosen kernel on a train split and tracks train/test
loss and the noise parameter per epoch; ``run_both`` repeats it with the
plain and fused kernels on the same dataset and reports which generalizes
better.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .complexes import (CWComplex, complex_hash, random_complex, reweighted,
                        save_complex, validate)
from .exceptions import ValidationError
from .gp import TrainingPair, fit
from .kernels import KernelSpec, write_matrix_csv
from .validation import check_positive, check_probability

#: affine weight transform applied to sources to produce targets
TARGET_WEIGHT_GAIN = 0.6
TARGET_WEIGHT_OFFSET = 0.4


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one experiment run."""

    n_pairs: int = 200
    split: float = 0.7
    epochs: int = 15
    batch_size: int = 2
    learning_rate: float = 0.05
    kind: str = "w"
    p: float = 2.0
    alpha: float = 0.5
    degree: int = 0
    seed: int = 0
    n_vertices: int = 8
    edge_prob: float = 0.45
    fill_prob: float = 0.3
    feature_rank: int | None = 16
    out_dir: str | None = None

    def __post_init__(self):
        if self.n_pairs < 2:
            raise ValidationError("need at least two pairs")
        check_probability(self.split, "split")
        if not 0.0 < self.split < 1.0:
            raise ValidationError(f"split must lie strictly in (0, 1), got {self.split}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        check_positive(self.learning_rate, "learning_rate")

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(kind=self.kind, p=self.p, alpha=self.alpha,
                          degree=self.degree)


def target_from_source(source: CWComplex) -> CWComplex:
    """Deterministic target: same skeleton, affinely rescaled weights."""
    return reweighted(source,
                      lambda w: TARGET_WEIGHT_OFFSET + TARGET_WEIGHT_GAIN * w)


def make_dataset(seed: int, n_pairs: int, n_vertices: int = 8,
                 edge_prob: float = 0.45, fill_prob: float = 0.3) -> list[TrainingPair]:
    """Seeded dataset of source/target pairs on a common vertex count."""
    item_seeds = np.random.SeedSequence(seed).generate_state(n_pairs)
    pairs = []
    for s in item_seeds:
        source = random_complex(int(s), n_vertices, edge_prob, fill_prob)
        pairs.append(TrainingPair(source, target_from_source(source)))
    return pairs


def split_dataset(pairs, split: float):
    """Leading ceil(split * N) pairs train, the rest test (the dataset order
    is already seeded-random)."""
    n_train = math.ceil(split * len(pairs))
    if not 0 < n_train < len(pairs):
        raise ValidationError(
            f"split {split} leaves an empty train or test set for {len(pairs)} pairs")
    return list(pairs[:n_train]), list(pairs[n_train:])


@dataclass
class KernelRunResult:
    """Loss curve and final state of one kernel's fit."""

    kind: str
    history: list
    final_train_loss: float
    final_test_loss: float
    sigma: float
    rank: int
    kernel_matrix: np.ndarray
    theta: np.ndarray
    item_ids: tuple


def run_kernel(config: ExperimentConfig, pairs=None, kind: str | None = None) -> KernelRunResult:
    """Fit one kernel on the configured dataset and collect its loss curve."""
    if pairs is None:
        pairs = make_dataset(config.seed, config.n_pairs, config.n_vertices,
                             config.edge_prob, config.fill_prob)
    kind = kind or config.kind
    train, test = split_dataset(pairs, config.split)
    spec = KernelSpec(kind=kind, p=config.p, alpha=config.alpha,
                      degree=config.degree)
    theta, model, kernel = fit(
        train, spec=spec, epochs=config.epochs, batch_size=config.batch_size,
        learning_rate=config.learning_rate, seed=config.seed,
        rank=config.feature_rank, eval_pairs=test)
    history = model.history
    return KernelRunResult(
        kind=kind,
        history=history,
        final_train_loss=history[-1]["train_loss"],
        final_test_loss=history[-1].get("test_loss", float("nan")),
        sigma=model.features.sigma_,
        rank=model.rank,
        kernel_matrix=model.features.kernel_,
        theta=theta,
        item_ids=tuple(complex_hash(p.source)[:12] for p in train),
    )


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory plus rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_loss_csv(path, history) -> None:
    """Per-epoch loss curve: epoch, train loss, test loss, noise variance."""
    lines = ["epoch,train_loss,test_loss,noise_variance"]
    for record in history:
        lines.append(",".join([
            str(record["epoch"]),
            repr(record["train_loss"]),
            repr(record.get("test_loss", float("nan"))),
            repr(record["noise_variance"]),
        ]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_loss_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for record in reader:
            rows.append({
                "epoch": int(record["epoch"]),
                "train_loss": float(record["train_loss"]),
                "test_loss": float(record["test_loss"]),
                "noise_variance": float(record["noise_variance"]),
            })
    if not rows:
        raise ValidationError(f"{path} has no loss rows")
    return rows


def run_experiment(config: ExperimentConfig, kinds=None) -> dict:
    """Run the experiment for one or both kernels and write the outputs.

    Writes, per kernel, ``loss_<kind>.csv`` and ``gram_<kind>.csv``, plus one
    ``summary.json``; partial outputs are removed if a run fails.  Returns
    the summary dictionary.
    """
    kinds = list(kinds) if kinds is not None else [config.kind]
    pairs = make_dataset(config.seed, config.n_pairs, config.n_vertices,
                         config.edge_prob, config.fill_prob)
    out_dir = config.out_dir
    written: list[str] = []
    results: dict[str, KernelRunResult] = {}
    try:
        for kind in kinds:
            result = run_kernel(config, pairs=pairs, kind=kind)
            results[kind] = result
            if out_dir is not None:
                os.makedirs(out_dir, exist_ok=True)
                loss_path = os.path.join(out_dir, f"loss_{kind}.csv")
                write_loss_csv(loss_path, result.history)
                written.append(loss_path)
                gram_path = os.path.join(out_dir, f"gram_{kind}.csv")
                write_matrix_csv(gram_path, result.kernel_matrix, result.item_ids)
                written.append(gram_path)

        summary = {
            "config": asdict(config),
            "kernels": {
                kind: {
                    "final_train_loss": results[kind].final_train_loss,
                    "final_test_loss": results[kind].final_test_loss,
                    "sigma": results[kind].sigma,
                    "rank": results[kind].rank,
                }
                for kind in kinds
            },
        }
        if len(kinds) == 2:
            a, b = kinds
            better = a if results[a].final_test_loss < results[b].final_test_loss else b
            summary["ordering"] = {
                "lower_test_loss": better,
                "test_loss": {k: results[k].final_test_loss for k in kinds},
            }
        if out_dir is not None:
            summary_path = os.path.join(out_dir, "summary.json")
            atomic_write_text(summary_path, json.dumps(summary, indent=2) + "\n")
            written.append(summary_path)
        return summary
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise


# -- dataset files --------------------------------------------------------------

def write_dataset(out_dir, seed: int, n_pairs: int, split: float = 0.7,
                  n_vertices: int = 8, edge_prob: float = 0.45,
                  fill_prob: float = 0.3) -> dict:
    """Generate a dataset and write it as complex files plus a manifest.

    Each pair ``i`` becomes ``pair_<i>_x.json`` and ``pair_<i>_y.json`` in
    the canonical complex format (the source's cell weights are its feature
    vector); the manifest records the seed, parameters, file names, and the
    train/test split ids.  Deterministic per seed.
    """
    pairs = make_dataset(seed, n_pairs, n_vertices, edge_prob, fill_prob)
    for index, pair in enumerate(pairs):
        for violation in validate(pair.source) + validate(pair.target):
            raise ValidationError(f"generated pair {index} is invalid: {violation}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for index, pair in enumerate(pairs):
        x_name = f"pair_{index:04d}_x.json"
        y_name = f"pair_{index:04d}_y.json"
        save_complex(pair.source, os.path.join(out_dir, x_name))
        save_complex(pair.target, os.path.join(out_dir, y_name))
        entries.append({
            "id": index,
            "source": x_name,
            "target": y_name,
            "source_hash": complex_hash(pair.source),
            "target_hash": complex_hash(pair.target),
        })
    n_train = math.ceil(split * n_pairs)
    manifest = {
        "seed": seed,
        "n_pairs": n_pairs,
        "split": split,
        "n_vertices": n_vertices,
        "edge_prob": edge_prob,
        "fill_prob": fill_prob,
        "features": "cell weights of each source complex",
        "pairs": entries,
        "train_ids": list(range(n_train)),
        "test_ids": list(range(n_train, n_pairs)),
    }
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(dataset_dir) -> dict:
    path = os.path.join(dataset_dir, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest at {path}: {exc}") from exc
    for key in ("seed", "n_pairs", "pairs", "train_ids", "test_ids"):
        if key not in manifest:
            raise ValidationError(f"manifest at {path} is missing {key!r}")
    return manifest


def load_dataset(dataset_dir) -> tuple[list[TrainingPair], dict]:
    """Load pairs written by :func:`write_dataset`."""
    from .complexes import load_complex

    manifest = read_manifest(dataset_dir)
    pairs = []
    for entry in manifest["pairs"]:
        source = load_complex(os.path.join(dataset_dir, entry["source"]))
        target = load_complex(os.path.join(dataset_dir, entry["target"]))
        pairs.append(TrainingPair(source, target))
    return pairs, manifest
