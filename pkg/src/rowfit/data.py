"""Datasets, solver configuration, run reports and the error metric.

All randomness in the package flows through ``numpy.random.Generator``
instances seeded with 64-bit integers (PCG64, the numpy default).  The
generator name is recorded in every :class:`RunReport` so that ensemble
results can be replayed.
"""

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

RNG_NAME = "pcg64"


class Record(NamedTuple):
    """One input-output observation: a length-m input vector and a scalar."""

    x: np.ndarray
    y: float


@dataclass(eq=False)
class Dataset:
    """A batch of records, stored as an (N, m) input matrix and an N-vector.

    The output extrema are cached at construction; they feed the normalized
    RMSE and the outer-grid placement of the tree model.
    """

    x: np.ndarray
    y: np.ndarray
    y_min: float = field(init=False)
    y_max: float = field(init=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if x.ndim != 2 or x.shape[1] == 0:
            raise ValueError(f"inputs must be 2-D (records, features), got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"outputs must be 1-D with {x.shape[0]} entries, got shape {y.shape}")
        if x.shape[0] == 0:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("records must be finite")
        self.x = x
        self.y = y
        self.y_min = float(y.min())
        self.y_max = float(y.max())

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.x.shape[1]

    def record(self, i: int) -> Record:
        return Record(self.x[i], float(self.y[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)


@dataclass
class FitConfig:
    """Row-action solver settings.

    ``mu`` is the projection step scale in (0, 2); ``passes`` caps the number
    of sweeps; a run stops early once the per-pass RMSE change stays below
    ``epsilon`` for ``patience`` consecutive passes (set epsilon to 0 to
    disable).  With ``shuffle`` on, the record order of each pass is a fresh
    permutation drawn from a generator seeded with ``seed``.
    """

    mu: float = 1.0
    passes: int = 100
    epsilon: float = 1e-6
    patience: int = 20
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mu < 2.0:
            raise ValueError(f"mu must be in (0, 2), got {self.mu}")
        if self.passes < 1:
            raise ValueError(f"passes must be >= 1, got {self.passes}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


@dataclass
class RunReport:
    """What happened during one fit: per-pass RMSE plus bookkeeping."""

    rmse_per_pass: list
    skipped_steps: int = 0
    failed: bool = False
    final_param_norms: dict = field(default_factory=dict)
    mu: float = 0.0
    seed: int = 0
    rng: str = RNG_NAME

    @property
    def passes_run(self) -> int:
        return len(self.rmse_per_pass)

    def write_csv(self, path) -> None:
        """Emit the report as CSV: '# key=value' metadata, then pass,rmse rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# mu={self.mu!r}\n")
            fh.write(f"# seed={self.seed}\n")
            fh.write(f"# rng={self.rng}\n")
            fh.write(f"# skipped_steps={self.skipped_steps}\n")
            fh.write(f"# failed={self.failed}\n")
            for name, value in sorted(self.final_param_norms.items()):
                fh.write(f"# norm_{name}={value!r}\n")
            writer = csv.writer(fh)
            writer.writerow(["pass", "rmse"])
            for p, r in enumerate(self.rmse_per_pass, start=1):
                writer.writerow([p, repr(float(r))])


def rmse_normalized(y: np.ndarray, yhat: np.ndarray, y_min: float, y_max: float) -> float:
    """Root-mean-square error divided by the output range y_max - y_min."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1 or y.size == 0:
        raise ValueError(f"need equal-length 1-D vectors, got {y.shape} and {yhat.shape}")
    if not y_max > y_min:
        raise ValueError(f"need y_max > y_min, got [{y_min}, {y_max}]")
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean((y - yhat) ** 2)) / (y_max - y_min))


def monitor_rmse(y: np.ndarray, yhat: np.ndarray, y_min: float, y_max: float) -> float:
    """Per-pass fit metric: normalized RMSE, or plain RMSE for a flat range.

    Degenerate datasets (all outputs equal, e.g. a single record) have no
    output range to normalize by.
    """
    if y_max > y_min:
        return rmse_normalized(y, yhat, y_min, y_max)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def gen_ridge_data(n: int, rng: np.random.Generator) -> Dataset:
    """Records from the bundled 5-input ridge benchmark model.

    Inputs are unif(0, 1); outputs are exact model values (no noise).
    """
    from rowfit import ridge

    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    x = rng.uniform(0.0, 1.0, size=(n, 5))
    model = ridge.benchmark_model()
    return Dataset(x, ridge.predict(model, x))


def formula2(x: np.ndarray) -> np.ndarray:
    """The 5-input nonlinear benchmark function, vectorized over rows.

    Two scaled-arctan ridges with a steepness factor of 20, slopes tilted by
    the second input and sharpened by exp of the fifth; outputs lie in
    (0, 8/3).
    """
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4, x5 = (x[:, j] for j in range(5))
    e = np.exp(x5)
    half_pi = np.pi / 2.0
    t1 = (2.0 + 2.0 * x3) / (3.0 * np.pi) * (np.arctan(20.0 * (x1 - 0.5 + x2 / 6.0) * e) + half_pi)
    t2 = (2.0 + 2.0 * x4) / (3.0 * np.pi) * (np.arctan(20.0 * (x1 - 0.5 - x2 / 6.0) * e) + half_pi)
    return t1 + t2


def gen_formula2_data(n: int, rng: np.random.Generator) -> Dataset:
    """unif(0,1)^5 inputs pushed through :func:`formula2`."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    x = rng.uniform(0.0, 1.0, size=(n, 5))
    return Dataset(x, formula2(x))


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write a dataset as CSV with header x1,...,xm,y.

    Values use the shortest round-trip decimal form, so a reload reproduces
    them bit for bit.
    """
    m = dataset.n_inputs
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(m)] + ["y"])
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.x[i]]
            row.append(repr(float(dataset.y[i])))
            writer.writerow(row)


def load_dataset_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset_csv`.

    Raises ValueError naming the offending line for malformed rows and for
    files without records.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty dataset") from None
        header = [c.strip() for c in header]
        if len(header) < 2 or header[-1] != "y":
            raise ValueError(f"{path}: expected header x1,...,xm,y, got {header}")
        m = len(header) - 1
        expected = [f"x{j + 1}" for j in range(m)]
        if header[:-1] != expected:
            raise ValueError(f"{path}: expected columns {expected + ['y']}, got {header}")
        xs = []
        ys = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 1:
                raise ValueError(f"{path}: line {lineno}: expected {m + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric field in {row}") from None
            xs.append(values[:-1])
            ys.append(values[-1])
    if not xs:
        raise ValueError(f"{path}: empty dataset")
    return Dataset(np.array(xs), np.array(ys))
