"""Synthetic Gaussian-blob data, Dirichlet label partitioning and local splits."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a matrix")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class UnlabeledData:
    """Inputs only; there is deliberately no label attribute."""

    inputs: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class ClientData:
    labeled: Dataset
    unlabeled: UnlabeledData

    @property
    def total(self) -> int:
        return len(self.labeled) + len(self.unlabeled)


@dataclass(frozen=True)
class PartitionPlan:
    assignments: tuple[np.ndarray, ...]
    alpha: float
    seed: int

    @property
    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    @property
    def empty_clients(self) -> list[int]:
        return [i for i, a in enumerate(self.assignments) if len(a) == 0]


class SyntheticSplit(NamedTuple):
    train: Dataset
    test: Dataset
    means: np.ndarray


def _cluster_means(C: int, input_dim: int, separation: float, rng) -> np.ndarray:
    means = rng.standard_normal((C, input_dim))
    if C == 1:
        return means / np.linalg.norm(means) * separation
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    min_dist = dist[np.triu_indices(C, 1)].min()
    return means * (separation / min_dist)


def _sample_blobs(means, per_class, rng, C):
    modes = means.shape[0] // C
    labels = np.repeat(np.arange(C), per_class)
    # mode k of class c is row c + k * C; modes share a class's samples round-robin
    mode = np.tile(np.arange(per_class) % modes, C)
    inputs = means[labels + mode * C] + rng.standard_normal((labels.size, means.shape[1]))
    return Dataset(inputs, labels, C)


def generate_synthetic(
    C: int,
    input_dim: int,
    samples_per_class: int,
    separation: float,
    seed: int,
    test_per_class: int | None = None,
    modes_per_class: int = 1,
) -> SyntheticSplit:
    """Unit-covariance Gaussian clusters whose closest pair of means is exactly ``separation`` apart.

    With ``modes_per_class > 1`` each class is an equal mixture of that many
    clusters (all ``C * modes_per_class`` means obey the separation), which
    makes the decision boundary non-linear. The train and test splits share
    cluster means but draw noise from independent child streams of ``seed``.
    """
    if min(C, input_dim, samples_per_class, modes_per_class) < 1 or separation <= 0:
        raise ValueError("counts and separation must be positive")
    test_per_class = samples_per_class if test_per_class is None else test_per_class
    mean_ss, train_ss, test_ss = np.random.SeedSequence(seed).spawn(3)
    means = _cluster_means(C * modes_per_class, input_dim, separation, np.random.default_rng(mean_ss))
    train = _sample_blobs(means, samples_per_class, np.random.default_rng(train_ss), C)
    test = _sample_blobs(means, test_per_class, np.random.default_rng(test_ss), C)
    return SyntheticSplit(train, test, means)


def dirichlet_partition(
    dataset: Dataset,
    n_clients: int,
    alpha: float,
    seed: int,
    indices: Sequence[int] | None = None,
) -> PartitionPlan:
    """Split each class over clients by cumulative shares of a Dirichlet(alpha) draw.

    ``indices`` restricts the partition to a subset of the dataset (e.g. after
    carving out a public pool). Clients may end up empty.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    pool = np.arange(len(dataset)) if indices is None else np.sort(np.asarray(indices, dtype=np.intp))
    labels = dataset.labels[pool]
    buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for c in range(dataset.num_classes):
        members = pool[labels == c]
        members = members[rng.permutation(members.size)]
        shares = rng.dirichlet(np.full(n_clients, alpha))
        cuts = np.floor(np.cumsum(shares)[:-1] * members.size + 0.5).astype(np.intp)
        for i, part in enumerate(np.split(members, cuts)):
            buckets[i].append(part)
    assignments = tuple(np.sort(np.concatenate(b)).astype(np.intp) for b in buckets)
    return PartitionPlan(assignments, float(alpha), int(seed))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_labeled_unlabeled(
    dataset: Dataset, indices, unlabeled_fraction: float, seed: int
) -> ClientData:
    """Hold out ``round(fraction * n)`` of a client's samples as label-free inputs."""
    if not 0.0 <= unlabeled_fraction <= 1.0:
        raise ValueError("unlabeled_fraction must be in [0, 1]")
    idx = np.asarray(indices, dtype=np.intp)
    n_unlabeled = _round_half_up(unlabeled_fraction * idx.size)
    perm = idx[np.random.default_rng(seed).permutation(idx.size)]
    unl, lab = np.sort(perm[:n_unlabeled]), np.sort(perm[n_unlabeled:])
    return ClientData(dataset.subset(lab), UnlabeledData(dataset.inputs[unl].copy()))


def build_public_pool(
    dataset: Dataset,
    size: int,
    labeled: bool,
    seed: int,
    exclude: Sequence[int] = (),
) -> tuple[Dataset | UnlabeledData, np.ndarray]:
    """Draw a shared pool of ``size`` samples from indices not in ``exclude``.

    Returns the pool (label-stripped unless ``labeled``) and the chosen indices.
    """
    excluded = np.zeros(len(dataset), dtype=bool)
    excluded[np.asarray(exclude, dtype=np.intp)] = True
    candidates = np.flatnonzero(~excluded)
    if size < 0 or size > candidates.size:
        raise ValueError(f"public pool size {size} exceeds {candidates.size} available samples")
    chosen = np.sort(np.random.default_rng(seed).choice(candidates, size=size, replace=False))
    if labeled:
        return dataset.subset(chosen), chosen
    return UnlabeledData(dataset.inputs[chosen].copy()), chosen


def max_class_share(dataset: Dataset, plan: PartitionPlan) -> np.ndarray:
    """Per non-empty client, the fraction of its samples that belong to its majority class."""
    shares = []
    for a in plan.assignments:
        if len(a):
            counts = np.bincount(dataset.labels[a], minlength=dataset.num_classes)
            shares.append(counts.max() / counts.sum())
    return np.asarray(shares)


def export_columnar(path, inputs: np.ndarray, labels=None) -> None:
    """Write one sample per line: comma-separated features, then the label or ``?``."""
    lines = []
    for k, row in enumerate(np.asarray(inputs)):
        tag = "?" if labels is None else str(int(labels[k]))
        lines.append(",".join(repr(float(v)) for v in row) + "," + tag)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_columnar(path) -> tuple[np.ndarray, list[int | None]]:
    inputs, labels = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        *feats, tag = line.split(",")
        inputs.append([float(v) for v in feats])
        labels.append(None if tag == "?" else int(tag))
    return np.asarray(inputs, dtype=np.float64), labels
