"""Core records shared by every stage: instances, expert predictions,
batch/capacity structure and the false-positive/false-negative cost ratio.

A :class:`Dataset` is columnar (numpy-backed) and immutable after load, so it
can be shared read-only across workers. CSV serialization uses ``repr`` for
floats, which round-trips float64 exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleCapacityError

MODE_EQUALITY = "equality"
MODE_UPPER = "upper-bound"

DATASET_FIXED_COLUMNS = ("id", "label", "weight", "batch")
EXPERT_COLUMNS = ("instance_id", "expert_id", "prediction")


@dataclass(frozen=True)
class CostStructure:
    """Misclassification cost ratio. False negatives cost 1, false positives
    cost ``lam`` (the ratio c_FP / c_FN)."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


def weight_for(label: int, cost: CostStructure) -> float:
    """Instance weight under the cost structure: 1 for positives, lambda for
    negatives."""
    return 1.0 if label == 1 else cost.lam


def weights_for(labels: np.ndarray, cost: CostStructure) -> np.ndarray:
    """Vectorized :func:`weight_for`."""
    return np.where(np.asarray(labels) == 1, 1.0, cost.lam)


class Dataset:
    """Columnar sample: ids, feature matrix, binary labels, positive weights
    and a batch id per instance."""

    __slots__ = ("ids", "features", "labels", "weights", "batches")

    def __init__(self, ids, features, labels, weights, batches):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.batches = np.asarray(batches, dtype=np.int64)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError("features must be a 2-D matrix with one row per id")
        for name in ("labels", "weights", "batches"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match ids")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values (missing values are an error)")
        if not (self.weights > 0).all():
            raise ValueError("weights must be positive")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        if len(np.unique(self.ids)) != n:
            raise ValueError("duplicate instance ids")
        for arr in (self.ids, self.features, self.labels, self.weights, self.batches):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        """New Dataset restricted to a boolean mask or index array."""
        index = np.asarray(index)
        return Dataset(
            self.ids[index],
            self.features[index],
            self.labels[index],
            self.weights[index],
            self.batches[index],
        )

    def with_weights(self, weights: np.ndarray) -> "Dataset":
        return Dataset(self.ids, self.features, self.labels, weights, self.batches)

    def row_of(self) -> dict:
        """Map instance id -> row position."""
        return {int(i): k for k, i in enumerate(self.ids)}

    def to_csv(self, path) -> None:
        d = self.feature_dim
        header = list(DATASET_FIXED_COLUMNS) + [f"f{k}" for k in range(d)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self)):
                row = [
                    int(self.ids[k]),
                    int(self.labels[k]),
                    repr(float(self.weights[k])),
                    int(self.batches[k]),
                ]
                row.extend(repr(float(v)) for v in self.features[k])
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[: len(DATASET_FIXED_COLUMNS)] != list(DATASET_FIXED_COLUMNS):
                raise ValueError(f"unexpected dataset header: {header[:4]}")
            d = len(header) - len(DATASET_FIXED_COLUMNS)
            ids, labels, weights, batches, feats = [], [], [], [], []
            for row in reader:
                if not row:
                    continue
                if len(row) != d + 4:
                    raise ValueError(f"row has {len(row)} fields, expected {d + 4}")
                ids.append(int(row[0]))
                labels.append(int(row[1]))
                weights.append(float(row[2]))
                batches.append(int(row[3]))
                feats.append([float(v) for v in row[4:]])
        features = np.asarray(feats, dtype=np.float64).reshape(len(ids), d)
        return cls(ids, features, labels, weights, batches)


class ExpertRecords:
    """One observed expert prediction per instance (the limited-data training
    history). At most one record per instance is enforced."""

    __slots__ = ("instance_ids", "expert_ids", "predictions")

    def __init__(self, instance_ids, expert_ids, predictions, *, allow_duplicates=False):
        self.instance_ids = np.asarray(instance_ids, dtype=np.int64)
        self.expert_ids = np.asarray(expert_ids, dtype=np.int64)
        self.predictions = np.asarray(predictions, dtype=np.int64)
        n = len(self.instance_ids)
        if len(self.expert_ids) != n or len(self.predictions) != n:
            raise ValueError("column length mismatch")
        if not np.isin(self.predictions, (0, 1)).all():
            raise ValueError("predictions must be binary")
        if not allow_duplicates and len(np.unique(self.instance_ids)) != n:
            raise ValueError("more than one expert record for some instance")

    def __len__(self) -> int:
        return len(self.instance_ids)

    def subset(self, index) -> "ExpertRecords":
        index = np.asarray(index)
        return ExpertRecords(
            self.instance_ids[index], self.expert_ids[index], self.predictions[index]
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EXPERT_COLUMNS)
            for k in range(len(self)):
                writer.writerow(
                    [int(self.instance_ids[k]), int(self.expert_ids[k]), int(self.predictions[k])]
                )

    @classmethod
    def from_csv(cls, path) -> "ExpertRecords":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != list(EXPERT_COLUMNS):
                raise ValueError(f"unexpected expert records header: {header}")
            cols = [[], [], []]
            for row in reader:
                if not row:
                    continue
                for c in range(3):
                    cols[c].append(int(row[c]))
        return cls(*cols)


@dataclass
class CapacityCheck:
    ok: bool
    batch: int | None = None
    message: str = "ok"


@dataclass
class CapacitySpec:
    """Per-batch decision-maker capacities.

    ``capacities`` has one row per batch and one column per decision-maker;
    column 0 is the classifier, columns 1..J the experts. ``batch_of`` maps
    instance id -> row index into ``capacities``. In equality mode each batch
    row must sum to the batch size; in upper-bound mode the sum must cover it.
    """

    batch_of: dict = field(default_factory=dict)
    capacities: np.ndarray = None
    mode: str = MODE_EQUALITY

    def __post_init__(self):
        self.capacities = np.asarray(self.capacities, dtype=np.int64)
        if self.capacities.ndim != 2:
            raise ValueError("capacities must be a 2-D matrix (batches x decision-makers)")
        if self.mode not in (MODE_EQUALITY, MODE_UPPER):
            raise ValueError(f"mode must be {MODE_EQUALITY!r} or {MODE_UPPER!r}")
        if (self.capacities < 0).any():
            raise ValueError("capacities must be non-negative")

    @property
    def n_decision_makers(self) -> int:
        return self.capacities.shape[1]

    def batch_index_for(self, dataset: Dataset) -> np.ndarray:
        """Row index into ``capacities`` for every dataset instance."""
        out = np.empty(len(dataset), dtype=np.int64)
        for k, iid in enumerate(dataset.ids):
            b = self.batch_of.get(int(iid))
            if b is None:
                raise KeyError(f"instance {int(iid)} has no batch assignment")
            if not 0 <= b < self.capacities.shape[0]:
                raise KeyError(f"batch index {b} outside capacity matrix")
            out[k] = b
        return out

    @classmethod
    def single_batch(cls, dataset: Dataset, capacities, mode: str = MODE_EQUALITY) -> "CapacitySpec":
        caps = np.asarray(capacities, dtype=np.int64).reshape(1, -1)
        return cls({int(i): 0 for i in dataset.ids}, caps, mode)


def validate_capacity(spec: CapacitySpec, dataset: Dataset) -> CapacityCheck:
    """Check the capacity invariants against concrete batch sizes; returns the
    first violated batch if any. Unknown batch ids and negative capacities
    raise."""
    batch_idx = spec.batch_index_for(dataset)
    sizes = np.bincount(batch_idx, minlength=spec.capacities.shape[0])
    row_sums = spec.capacities.sum(axis=1)
    for b in range(spec.capacities.shape[0]):
        if spec.mode == MODE_EQUALITY and row_sums[b] != sizes[b]:
            return CapacityCheck(
                False, b, f"batch {b}: capacity sum {row_sums[b]} != batch size {sizes[b]}"
            )
        if spec.mode == MODE_UPPER and row_sums[b] < sizes[b]:
            return CapacityCheck(
                False, b, f"batch {b}: capacity sum {row_sums[b]} < batch size {sizes[b]}"
            )
    return CapacityCheck(True)


def require_feasible(spec: CapacitySpec, dataset: Dataset) -> None:
    check = validate_capacity(spec, dataset)
    if not check.ok:
        raise InfeasibleCapacityError(check.message)
