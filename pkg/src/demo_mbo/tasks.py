"""Benchmark tasks with analytic oracles, offline datasets and their file format."""

from __future__ import annotations

import configparser
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .numeric_core import RngStream, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str  # "continuous" | "discrete"
    dim: int
    lo: np.ndarray
    hi: np.ndarray
    score_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    length: int = 0
    categories: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("task dimension must be >= 1")
        if np.any(self.lo >= self.hi):
            raise ValueError("every lower bound must be below its upper bound")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"


def levy(x: np.ndarray) -> np.ndarray:
    """Standard Levy function, rowwise; global minimum 0 at x = (1, ..., 1)."""
    x = np.atleast_2d(x)
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2), axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return head + mid + tail


def make_levy_task(dim: int = 10, bound: float = 10.0) -> TaskSpec:
    return TaskSpec(
        name="levy",
        kind="continuous",
        dim=dim,
        lo=np.full(dim, -bound),
        hi=np.full(dim, bound),
        score_fn=lambda x: -levy(x),
        params={"dim": dim, "bound": bound},
    )


def make_sphere_task(dim: int = 4, bound: float = 2.0) -> TaskSpec:
    return TaskSpec(
        name="sphere",
        kind="continuous",
        dim=dim,
        lo=np.full(dim, -bound),
        hi=np.full(dim, bound),
        score_fn=lambda x: -np.sum(np.atleast_2d(x) ** 2, axis=1),
        params={"dim": dim, "bound": bound},
    )


def lookup_table(length: int, categories: int, table_seed: int) -> np.ndarray:
    """Score of every sequence, indexed by the mixed-radix code of the sequence.

    Scores are a sum of per-position terms and nearest-neighbour pair terms
    drawn once from ``table_seed``.
    """
    g = np.random.default_rng(table_seed)
    unary = g.standard_normal((length, categories))
    pair = 0.5 * g.standard_normal((max(length - 1, 0), categories, categories))
    table = np.empty(categories**length)
    for code, seq in enumerate(itertools.product(range(categories), repeat=length)):
        s = sum(unary[i, c] for i, c in enumerate(seq))
        s += sum(pair[i, seq[i], seq[i + 1]] for i in range(length - 1))
        table[code] = s
    return table


def sequence_code(seqs: np.ndarray, categories: int) -> np.ndarray:
    seqs = np.atleast_2d(seqs)
    weights = categories ** np.arange(seqs.shape[1] - 1, -1, -1)
    return seqs @ weights


def make_lookup_task(length: int = 4, categories: int = 4, table_seed: int = 7) -> TaskSpec:
    table = lookup_table(length, categories, table_seed)
    dim = length * categories

    def score(x):
        seqs = _decode(np.atleast_2d(x), length, categories)
        return table[sequence_code(seqs, categories)]

    return TaskSpec(
        name="lookup",
        kind="discrete",
        dim=dim,
        lo=np.zeros(dim),
        hi=np.ones(dim),
        score_fn=score,
        length=length,
        categories=categories,
        params={"length": length, "categories": categories, "table_seed": table_seed},
    )


TASKS = {"levy": make_levy_task, "sphere": make_sphere_task, "lookup": make_lookup_task}


def make_task(name: str, **params) -> TaskSpec:
    try:
        factory = TASKS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None
    return factory(**params)


# -- discrete encoding --------------------------------------------------------


def encode_design(task: TaskSpec, seq) -> np.ndarray:
    """Concatenated one-hot blocks for a categorical sequence (or a batch of them)."""
    seq = np.asarray(seq, dtype=np.int64)
    single = seq.ndim == 1
    seq = np.atleast_2d(seq)
    if seq.shape[1] != task.length:
        raise ShapeError(f"expected sequences of length {task.length}, got {seq.shape[1]}")
    if np.any(seq < 0) or np.any(seq >= task.categories):
        raise ValueError("category index out of range")
    out = np.zeros((seq.shape[0], task.length, task.categories))
    np.put_along_axis(out, seq[:, :, None], 1.0, axis=2)
    out = out.reshape(seq.shape[0], task.dim)
    return out[0] if single else out


def _decode(x: np.ndarray, length: int, categories: int) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index.
    return np.argmax(x.reshape(x.shape[0], length, categories), axis=2)


def decode_design(task: TaskSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != task.dim:
        raise ShapeError(f"expected design width {task.dim}, got {x.shape[1]}")
    seqs = _decode(x, task.length, task.categories)
    return seqs[0] if single else seqs


# -- oracle / normalisation -----------------------------------------------------


def oracle_eval(task: TaskSpec, x) -> np.ndarray | float:
    """Ground-truth raw score(s). Continuous designs are clamped to the bounds first."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != task.dim:
        raise ShapeError(f"expected design width {task.dim}, got {x.shape[1]}")
    if not task.discrete:
        clipped = np.clip(x, task.lo, task.hi)
        n_out = int(np.count_nonzero(np.any(clipped != x, axis=1)))
        if n_out:
            log.info("%s: clamped %d of %d designs to bounds", task.name, n_out, x.shape[0])
        x = clipped
    y = np.asarray(task.score_fn(x), dtype=np.float64)
    return float(y[0]) if single else y


def normalize_score(y, y_min: float, y_max: float):
    if not y_max > y_min:
        raise ValueError(f"normalisation undefined: y_max ({y_max}) must exceed y_min ({y_min})")
    return (np.asarray(y, dtype=np.float64) - y_min) / (y_max - y_min)


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class ScoredDesign:
    x: np.ndarray
    y_raw: float
    y_norm: float


@dataclass
class Dataset:
    task: TaskSpec
    X: np.ndarray
    y_raw: np.ndarray
    y_min: float
    y_max: float
    seed: int | None = None
    predicted: bool = False

    def __post_init__(self):
        if self.X.shape[0] != self.y_raw.shape[0]:
            raise ShapeError("design and score counts differ")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.N

    @property
    def y_norm(self) -> np.ndarray:
        return normalize_score(self.y_raw, self.y_min, self.y_max)

    @property
    def items(self) -> list[ScoredDesign]:
        yn = self.y_norm
        return [ScoredDesign(self.X[i], float(self.y_raw[i]), float(yn[i])) for i in range(self.N)]

    def with_designs(self, X: np.ndarray) -> Dataset:
        return replace(self, X=X)


def sample_designs(task: TaskSpec, n: int, rng: RngStream) -> np.ndarray:
    g = rng.generator
    if task.discrete:
        seqs = g.integers(0, task.categories, size=(n, task.length))
        return encode_design(task, seqs)
    return g.uniform(task.lo, task.hi, size=(n, task.dim))


def build_offline_dataset(task: TaskSpec, n: int, keep_fraction: float, rng: RngStream) -> Dataset:
    """Uniform sample of ``n / keep_fraction`` designs with the best scores removed."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    if n < 10:
        raise ValueError("offline dataset needs at least 10 designs")
    total = int(round(n / keep_fraction))
    if keep_fraction < 1.0:
        total = max(total, n + 1)
    X = sample_designs(task, total, rng)
    y = oracle_eval(task, X)
    # Stable ascending sort, keep the n lowest; index order restored afterwards.
    keep = np.sort(np.argsort(y, kind="stable")[:n])
    X, y = X[keep], y[keep]
    y_min, y_max = float(y.min()), float(y.max())
    if y_min == y_max:
        raise ValueError("degenerate offline dataset: all scores equal")
    return Dataset(task, X, y, y_min, y_max, seed=rng.seed)


@dataclass(frozen=True)
class DesignScaler:
    """Per-coordinate standardisation of designs, fitted on the offline data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> DesignScaler:
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, X: np.ndarray) -> DesignScaler:
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X):
        return (np.asarray(X) - self.mean) / self.std

    def inverse(self, Z):
        return np.asarray(Z) * self.std + self.mean


# -- files ------------------------------------------------------------------------


def write_design_csv(path, X: np.ndarray, y_raw: np.ndarray, extra: dict | None = None) -> None:
    """``x0,...,x{d-1},y_raw`` plus any extra named columns. Floats use repr for exact round-trips."""
    extra = extra or {}
    d = X.shape[1]
    header = [f"x{j}" for j in range(d)] + ["y_raw"] + list(extra)
    lines = [",".join(header)]
    cols = [extra[k] for k in extra]
    for i in range(X.shape[0]):
        row = [repr(float(v)) for v in X[i]] + [repr(float(y_raw[i]))]
        row += [_fmt(c[i]) for c in cols]
        lines.append(",".join(row))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_design_csv(path) -> tuple[np.ndarray, np.ndarray, dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln], dtype=np.float64)
    data = data.reshape(-1, len(header))
    iy = header.index("y_raw")
    extra = {h: data[:, j] for j, h in enumerate(header) if j > iy}
    return data[:, :iy], data[:, iy], extra


def save_dataset(path, data: Dataset, scaler: DesignScaler | None = None) -> None:
    path = Path(path)
    write_design_csv(path, data.X, data.y_raw)
    meta = configparser.ConfigParser()
    meta["dataset"] = {
        "task": data.task.name,
        "kind": data.task.kind,
        "dim": str(data.task.dim),
        "y_min": repr(data.y_min),
        "y_max": repr(data.y_max),
        "n": str(data.N),
        "seed": "" if data.seed is None else str(data.seed),
        "predicted": str(data.predicted).lower(),
    }
    meta["bounds"] = {
        "lo": " ".join(repr(float(v)) for v in data.task.lo),
        "hi": " ".join(repr(float(v)) for v in data.task.hi),
    }
    meta["task_params"] = {k: repr(v) for k, v in sorted(data.task.params.items())}
    if scaler is not None:
        meta["scaler"] = {
            "mean": " ".join(repr(float(v)) for v in scaler.mean),
            "std": " ".join(repr(float(v)) for v in scaler.std),
        }
    with open(path.with_suffix(".meta"), "w") as fh:
        meta.write(fh)


def load_dataset(path, task: TaskSpec) -> tuple[Dataset, DesignScaler | None]:
    path = Path(path)
    X, y, _ = read_design_csv(path)
    meta = configparser.ConfigParser()
    meta.read(path.with_suffix(".meta"))
    sec = meta["dataset"]
    if sec["task"] != task.name:
        raise ValueError(f"{path}: dataset is for task {sec['task']!r}, not {task.name!r}")
    seed = int(sec["seed"]) if sec["seed"] else None
    data = Dataset(
        task, X, y, float(sec["y_min"]), float(sec["y_max"]), seed=seed,
        predicted=sec.getboolean("predicted"),
    )
    scaler = None
    if meta.has_section("scaler"):
        scaler = DesignScaler(
            np.array([float(v) for v in meta["scaler"]["mean"].split()]),
            np.array([float(v) for v in meta["scaler"]["std"].split()]),
        )
    return data, scaler
