"""Additive model over a shared hat basis, identified record-by-record.

The model output is a sum of univariate functions of each input, every
function being a linear combination of the hat basis; the parameters form an
m-by-n matrix.  Because the output is linear in the parameters, each record
defines one linear equation and the identification problem is solved by
cyclic Kaczmarz projections touching at most 2m entries per step.
"""

import json
from dataclasses import dataclass

import numpy as np

from rowfit import _kernels
from rowfit.basis import PwlBasis
from rowfit.data import Dataset, FitConfig, RunReport, monitor_rmse

_SCHEMA = "rowfit/urysohn-v1"


@dataclass(eq=False)
class UrysohnModel:
    """Parameter matrix ``u`` (m inputs by n basis functions) over ``basis``."""

    u: np.ndarray
    basis: PwlBasis

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=float)
        if u.ndim != 2:
            raise ValueError(f"parameter matrix must be 2-D, got shape {u.shape}")
        if u.shape[1] != self.basis.count:
            raise ValueError(
                f"parameter columns ({u.shape[1]}) must match basis size ({self.basis.count})"
            )
        if not np.all(np.isfinite(u)):
            raise ValueError("parameters must be finite")
        self.u = u

    @property
    def n_inputs(self) -> int:
        return self.u.shape[0]

    def copy(self) -> "UrysohnModel":
        return UrysohnModel(self.u.copy(), self.basis)

    def save(self, path) -> None:
        doc = {
            "schema": _SCHEMA,
            "m": self.u.shape[0],
            "n": self.u.shape[1],
            "lo": self.basis.lo,
            "hi": self.basis.hi,
            "u": [float(v) for v in self.u.ravel()],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "UrysohnModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != _SCHEMA:
            raise ValueError(f"expected schema {_SCHEMA!r}, got {doc.get('schema')!r}")
        u = np.array(doc["u"], dtype=float).reshape(doc["m"], doc["n"])
        return cls(u, PwlBasis(doc["lo"], doc["hi"], doc["n"]))


def evaluate(model: UrysohnModel, x_row: np.ndarray) -> float:
    """Model output for one input vector."""
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (model.n_inputs,):
        raise ValueError(f"expected {model.n_inputs} inputs, got shape {x_row.shape}")
    return float(_kernels.ury_predict(model.u, model.basis.nodes, x_row[None, :])[0])


def predict(model: UrysohnModel, x: np.ndarray) -> np.ndarray:
    """Model outputs for every row of x."""
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ValueError(f"expected (records, {model.n_inputs}) inputs, got shape {x.shape}")
    return _kernels.ury_predict(model.u, model.basis.nodes, x)


def kaczmarz_step(model: UrysohnModel, x_row: np.ndarray, y: float, mu: float) -> float:
    """Project the parameters onto one record's equation, in place.

    With mu = 1 the post-step output at ``x_row`` equals ``y`` exactly.
    Returns the pre-step residual.
    """
    if not 0.0 < mu < 2.0:
        raise ValueError(f"mu must be in (0, 2), got {mu}")
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (model.n_inputs,):
        raise ValueError(f"expected {model.n_inputs} inputs, got shape {x_row.shape}")
    return float(_kernels.ury_step(model.u, model.basis.nodes, x_row, float(y), mu))


def fit(
    data: Dataset,
    config: FitConfig,
    *,
    nodes: int = 5,
    x_range: tuple = None,
    u0: np.ndarray = None,
):
    """Identify an additive model by cyclic Kaczmarz sweeps.

    Parameters default to zero (the minimum-norm start for underdetermined
    systems).  The basis interval defaults to the input extrema of ``data``.
    The report carries the normalized RMSE on ``data`` after each pass; the
    run stops early on an RMSE plateau (see FitConfig).

    Returns
    -------
    (UrysohnModel, RunReport)
    """
    if x_range is None:
        x_range = (float(data.x.min()), float(data.x.max()))
    basis = PwlBasis(x_range[0], x_range[1], nodes)
    m = data.n_inputs
    if u0 is None:
        u = np.zeros((m, nodes))
    else:
        u = np.array(u0, dtype=float)
        if u.shape != (m, nodes):
            raise ValueError(f"u0 must have shape {(m, nodes)}, got {u.shape}")
    model = UrysohnModel(u, basis)

    shuffle_rng = np.random.default_rng(config.seed)
    base_order = np.arange(len(data), dtype=np.int64)
    history = []
    stall = 0
    for _ in range(config.passes):
        order = shuffle_rng.permutation(len(data)) if config.shuffle else base_order
        _kernels.ury_pass(model.u, basis.nodes, data.x, data.y, order, config.mu)
        history.append(monitor_rmse(data.y, predict(model, data.x), data.y_min, data.y_max))
        if len(history) >= 2 and abs(history[-1] - history[-2]) < config.epsilon:
            stall += 1
            if stall >= config.patience:
                break
        else:
            stall = 0
    report = RunReport(
        rmse_per_pass=history,
        skipped_steps=0,
        failed=False,
        final_param_norms={"u": float(np.linalg.norm(model.u))},
        mu=config.mu,
        seed=config.seed,
    )
    return model, report


def series_to_records(x_series, z_series, memory: int) -> Dataset:
    """Window a pair of equal-length series into lagged records.

    Record i (for i from ``memory`` to the series length, 1-based) has inputs
    (x_i, x_{i-1}, ..., x_{i-memory+1}) and output z_i.
    """
    x_series = np.asarray(x_series, dtype=float)
    z_series = np.asarray(z_series, dtype=float)
    if x_series.ndim != 1 or z_series.ndim != 1 or x_series.shape != z_series.shape:
        raise ValueError(
            f"series must be equal-length 1-D, got {x_series.shape} and {z_series.shape}"
        )
    n = x_series.size
    if memory < 1:
        raise ValueError(f"memory must be >= 1, got {memory}")
    if n < memory:
        raise ValueError(f"series too short: length {n} < memory {memory}")
    rows = []
    for i in range(memory - 1, n):
        rows.append(x_series[i - memory + 1 : i + 1][::-1])
    return Dataset(np.array(rows), z_series[memory - 1 :].copy())
