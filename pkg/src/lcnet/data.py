"""Multi-task datasets: synthetic generators, CSV ingestion, scaling and splitting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.preprocessing import StandardScaler

__all__ = [
    "MultiTaskDataset",
    "FrequencyTaskParams",
    "SineLineTaskParams",
    "CsvSchema",
    "Scaler",
    "gen_frequency",
    "gen_sine_line",
    "load_csv",
    "write_csv",
    "fit_scaler",
    "subsample_balanced",
    "split",
    "split_task_groups",
]


@dataclass
class MultiTaskDataset:
    """Observations ``(task, x, y)``; task ids are dense integers ``1..num_tasks``."""

    tasks: np.ndarray
    X: np.ndarray
    y: np.ndarray
    num_tasks: int
    task_labels: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.tasks = np.asarray(self.tasks, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=np.float64)
        n = len(self.y)
        if self.tasks.shape != (n,) or self.X.shape[0] != n:
            raise ValueError("tasks, X and y must have the same number of rows")
        if n and (self.tasks.min() < 1 or self.tasks.max() > self.num_tasks):
            raise ValueError("task ids must lie in 1..num_tasks")
        if not self.task_labels:
            self.task_labels = list(range(1, self.num_tasks + 1))
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.X.shape[1])]

    def __len__(self) -> int:
        return len(self.y)

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def counts(self) -> np.ndarray:
        """Observations per task, indexed by ``task_id - 1``."""
        return np.bincount(self.tasks - 1, minlength=self.num_tasks)

    def take(self, index) -> "MultiTaskDataset":
        index = np.asarray(index)
        return MultiTaskDataset(
            self.tasks[index], self.X[index], self.y[index], self.num_tasks,
            list(self.task_labels), list(self.feature_names),
        )

    def select_tasks(self, task_ids, relabel: bool = True) -> "MultiTaskDataset":
        """Rows belonging to ``task_ids``; with ``relabel`` ids become 1..len(task_ids)."""
        task_ids = np.asarray(task_ids, dtype=np.int64)
        rows = np.flatnonzero(np.isin(self.tasks, task_ids))
        if not relabel:
            return self.take(rows)
        remap = np.zeros(self.num_tasks + 1, dtype=np.int64)
        remap[task_ids] = np.arange(1, len(task_ids) + 1)
        labels = [self.task_labels[t - 1] for t in task_ids]
        return MultiTaskDataset(
            remap[self.tasks[rows]], self.X[rows], self.y[rows], len(task_ids), labels, list(self.feature_names)
        )


@dataclass
class FrequencyTaskParams:
    omega: np.ndarray
    sigma: float


@dataclass
class SineLineTaskParams:
    is_sine: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    sigma: float


def _task_assignment(num_tasks: int, n: int, rng) -> np.ndarray:
    # balanced: every task gets n // m points, the remainder spread over random tasks
    base = np.repeat(np.arange(1, num_tasks + 1), n // num_tasks)
    extra = rng.choice(num_tasks, size=n % num_tasks, replace=False) + 1
    return np.sort(np.concatenate([base, extra]))


def frequency_function(x, omega):
    return 0.5 * np.sin(2 * np.pi * omega * x) + 0.5


def gen_frequency(num_tasks=250, n_train=30000, n_test=25000, sigma=0.1, seed=None):
    """Sine waves of different frequency, ``y = 0.5 sin(2 pi w x) + 0.5 + eps``."""
    if min(num_tasks, n_train, n_test) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.5, 4.0, size=num_tasks)

    def draw(n):
        tasks = _task_assignment(num_tasks, n, rng)
        x = rng.uniform(0.0, 1.0, size=n)
        y = frequency_function(x, omega[tasks - 1]) + rng.normal(0.0, sigma, size=n)
        return MultiTaskDataset(tasks, x[:, None], y, num_tasks)

    train = draw(n_train)
    test = draw(n_test)
    return train, test, FrequencyTaskParams(omega, sigma)


def sine_line_function(x, params: SineLineTaskParams, tasks):
    j = np.asarray(tasks) - 1
    affine = params.a[j] * x + params.b[j]
    sine = params.c[j] * np.sin(x + params.d[j])
    return np.where(params.is_sine[j], sine, affine)


def gen_sine_line(num_tasks=100, n_train=6000, n_test=10000, sigma=0.3, seed=None):
    """Equal numbers of affine and sinusoidal tasks on ``x ~ U(-5, 5)``."""
    if num_tasks % 2:
        raise ValueError("num_tasks must be even (half affine, half sine)")
    if min(num_tasks, n_train, n_test) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    is_sine = rng.permutation(np.arange(num_tasks) >= num_tasks // 2)
    params = SineLineTaskParams(
        is_sine=is_sine,
        a=np.where(is_sine, 0.0, rng.uniform(-3, 3, size=num_tasks)),
        b=np.where(is_sine, 0.0, rng.uniform(-3, 3, size=num_tasks)),
        c=np.where(is_sine, rng.uniform(0.1, 5.0, size=num_tasks), 0.0),
        d=np.where(is_sine, rng.uniform(0.0, np.pi, size=num_tasks), 0.0),
        sigma=sigma,
    )

    def draw(n):
        tasks = _task_assignment(num_tasks, n, rng)
        x = rng.uniform(-5.0, 5.0, size=n)
        y = sine_line_function(x, params, tasks) + rng.normal(0.0, sigma, size=n)
        return MultiTaskDataset(tasks, x[:, None], y, num_tasks)

    train = draw(n_train)
    test = draw(n_test)
    return train, test, params


# --- CSV ingestion ---------------------------------------------------------


@dataclass
class CsvSchema:
    task_column: str
    target_column: str
    features: list  # [{"name": ..., "kind": "continuous" | "categorical"}]

    @classmethod
    def from_dict(cls, doc: dict) -> "CsvSchema":
        feats = []
        for f in doc["features"]:
            f = {"name": f, "kind": "continuous"} if isinstance(f, str) else dict(f)
            if f.get("kind", "continuous") not in ("continuous", "categorical"):
                raise ValueError(f"feature {f['name']!r}: unknown kind {f['kind']!r}")
            f.setdefault("kind", "continuous")
            feats.append(f)
        return cls(doc["task_column"], doc["target_column"], feats)

    @classmethod
    def load(cls, path) -> "CsvSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"task_column": self.task_column, "features": self.features, "target_column": self.target_column}


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"row {row}: cannot parse {text!r} in column {column!r} as a number") from None


def load_csv(path, schema, reference: MultiTaskDataset | None = None) -> MultiTaskDataset:
    """Read a CSV file into a dataset; categorical features become indicator columns.

    Task labels are mapped to ids ``1..m`` in order of first appearance and the
    original labels are kept in ``task_labels``.  Row order is preserved.
    Passing the training set as ``reference`` reuses its task ids and
    categorical levels (unseen labels get new ids, unseen levels all-zero rows).
    """
    if not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_dict(schema)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        wanted = [schema.task_column, schema.target_column] + [f["name"] for f in schema.features]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = list(reader)

    labels: dict[str, int] = {}
    if reference is not None:
        labels = {str(lab): i + 1 for i, lab in enumerate(reference.task_labels)}
    tasks = np.empty(len(rows), dtype=np.int64)
    y = np.empty(len(rows))
    for r, row in enumerate(rows):
        line = r + 2  # 1-based, after the header
        tasks[r] = labels.setdefault(row[schema.task_column], len(labels) + 1)
        y[r] = _parse_float(row[schema.target_column], line, schema.target_column)

    columns, names = [], []
    for f in schema.features:
        raw = [row[f["name"]] for row in rows]
        if f["kind"] == "categorical":
            if reference is not None:
                prefix = f"{f['name']}="
                levels = [n[len(prefix):] for n in reference.feature_names if n.startswith(prefix)]
            else:
                levels = sorted(set(raw))
            for level in levels:
                columns.append(np.array([v == level for v in raw], dtype=np.float64))
                names.append(f"{f['name']}={level}")
        else:
            columns.append(np.array([_parse_float(v, i + 2, f["name"]) for i, v in enumerate(raw)]))
            names.append(f["name"])
    X = np.column_stack(columns) if columns else np.empty((len(rows), 0))
    num_tasks = len(labels) if reference is None else max(len(labels), reference.num_tasks)
    return MultiTaskDataset(tasks, X, y, num_tasks, list(labels), names)


def write_csv(dataset: MultiTaskDataset, path, task_column="task", target_column="y") -> CsvSchema:
    """Write ``dataset`` as CSV and return the schema that reads it back."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([task_column, *dataset.feature_names, target_column])
        for t, x, y in zip(dataset.tasks, dataset.X, dataset.y):
            writer.writerow([dataset.task_labels[t - 1], *map(repr, x.tolist()), repr(float(y))])
    return CsvSchema(task_column, target_column, [{"name": n, "kind": "continuous"} for n in dataset.feature_names])


# --- scaling ----------------------------------------------------------------


class Scaler:
    """Standardize features and target with statistics from the training data.

    Constant columns keep unit scale.
    """

    def __init__(self):
        self._x = StandardScaler()
        self._y = StandardScaler()

    def fit(self, X, y) -> "Scaler":
        self._x.fit(np.asarray(X, dtype=np.float64))
        self._y.fit(np.asarray(y, dtype=np.float64).reshape(-1, 1))
        return self

    def transform_X(self, X) -> np.ndarray:
        return self._x.transform(np.asarray(X, dtype=np.float64))

    def transform_y(self, y) -> np.ndarray:
        return self._y.transform(np.asarray(y, dtype=np.float64).reshape(-1, 1)).ravel()

    def inverse_y(self, y) -> np.ndarray:
        return self._y.inverse_transform(np.asarray(y, dtype=np.float64).reshape(-1, 1)).ravel()

    def inverse_X(self, X) -> np.ndarray:
        return self._x.inverse_transform(np.asarray(X, dtype=np.float64))

    @property
    def y_scale(self) -> float:
        return float(self._y.scale_[0])

    def transform(self, dataset: MultiTaskDataset) -> MultiTaskDataset:
        return MultiTaskDataset(
            dataset.tasks, self.transform_X(dataset.X), self.transform_y(dataset.y), dataset.num_tasks,
            list(dataset.task_labels), list(dataset.feature_names),
        )

    def inverse(self, dataset: MultiTaskDataset) -> MultiTaskDataset:
        return MultiTaskDataset(
            dataset.tasks, self.inverse_X(dataset.X), self.inverse_y(dataset.y), dataset.num_tasks,
            list(dataset.task_labels), list(dataset.feature_names),
        )

    def to_dict(self) -> dict:
        return {
            "x_mean": self._x.mean_.tolist(), "x_scale": self._x.scale_.tolist(),
            "y_mean": float(self._y.mean_[0]), "y_scale": float(self._y.scale_[0]),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        s = cls()
        for sk, mean, scale in ((s._x, doc["x_mean"], doc["x_scale"]), (s._y, [doc["y_mean"]], [doc["y_scale"]])):
            sk.mean_ = np.asarray(mean, dtype=np.float64)
            sk.scale_ = np.asarray(scale, dtype=np.float64)
            sk.var_ = sk.scale_ ** 2
            sk.n_features_in_ = len(sk.mean_)
        return s


def fit_scaler(train: MultiTaskDataset) -> Scaler:
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    return Scaler().fit(train.X, train.y)


# --- subsampling and splitting --------------------------------------------


def _rows_by_task(dataset: MultiTaskDataset):
    order = np.argsort(dataset.tasks, kind="stable")
    bounds = np.searchsorted(dataset.tasks[order], np.arange(1, dataset.num_tasks + 2))
    return [order[bounds[j]:bounds[j + 1]] for j in range(dataset.num_tasks)]


def subsample_balanced(dataset: MultiTaskDataset, fraction: float, seed=None) -> MultiTaskDataset:
    """Keep ``round(fraction * n_j)`` points (at least one) of every task."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return dataset.take(np.arange(len(dataset)))
    rng = np.random.default_rng(seed)
    keep = []
    for rows in _rows_by_task(dataset):
        if len(rows):
            k = max(1, int(round(fraction * len(rows))))
            keep.append(rng.choice(rows, size=k, replace=False))
    return dataset.take(np.sort(np.concatenate(keep)))


def split(dataset: MultiTaskDataset, fraction: float = 0.8, seed=None):
    """Per-task stratified split into disjoint parts ``(a, b)``.

    Each task puts ``round(fraction * n_j)`` points (at least one) into ``a``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    part_a, part_b = [], []
    for rows in _rows_by_task(dataset):
        if not len(rows):
            continue
        rows = rng.permutation(rows)
        k = min(len(rows), max(1, int(round(fraction * len(rows)))))
        part_a.append(rows[:k])
        part_b.append(rows[k:])
    a = np.sort(np.concatenate(part_a))
    b = np.sort(np.concatenate(part_b)) if part_b else np.empty(0, dtype=np.int64)
    return dataset.take(a), dataset.take(b)


def split_task_groups(num_tasks: int, num_groups: int = 3, seed=None) -> list[np.ndarray]:
    """Randomly partition task ids ``1..num_tasks`` into groups whose sizes differ by at most one."""
    if num_groups < 1 or num_groups > num_tasks:
        raise ValueError("need 1 <= num_groups <= num_tasks")
    perm = np.random.default_rng(seed).permutation(np.arange(1, num_tasks + 1))
    return [np.sort(g) for g in np.array_split(perm, num_groups)]
