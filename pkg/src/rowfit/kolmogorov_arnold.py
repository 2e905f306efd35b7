"""Two-layer tree of additive models with basis-decomposed node functions.

The model maps m inputs through K additive branches to a hidden vector
theta, then sums K outer functions of the theta components.  Inner functions
live on a hat basis with n nodes, outer functions on a hat basis with s
nodes (a Gaussian outer basis is also accepted by the evaluation path).
Identification linearizes the output in all parameters one record at a time
and applies a Kaczmarz projection to the linearization.
"""

import json
from dataclasses import dataclass

import numpy as np

from rowfit import _kernels
from rowfit.basis import GaussBasis, PwlBasis
from rowfit.data import Dataset, FitConfig, RunReport, monitor_rmse

_SCHEMA = "rowfit/ka-v1"

ZETA_FLOOR = 1e-300


@dataclass(eq=False)
class KaModel:
    """Inner tensor ``h`` (K, m, n), outer matrix ``g`` (K, s) and bases."""

    h: np.ndarray
    g: np.ndarray
    inner_basis: PwlBasis
    outer_basis: "PwlBasis | GaussBasis"

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=float)
        g = np.ascontiguousarray(self.g, dtype=float)
        if h.ndim != 3 or g.ndim != 2:
            raise ValueError(f"need h (K,m,n) and g (K,s), got {h.shape} and {g.shape}")
        if h.shape[0] != g.shape[0]:
            raise ValueError(f"addend counts differ: h has {h.shape[0]}, g has {g.shape[0]}")
        if not 1 <= h.shape[0] <= 2 * h.shape[1] + 1:
            raise ValueError(f"addend count {h.shape[0]} outside [1, {2 * h.shape[1] + 1}]")
        if h.shape[2] != self.inner_basis.count:
            raise ValueError(
                f"inner size mismatch: h has {h.shape[2]}, basis has {self.inner_basis.count}"
            )
        if g.shape[1] != self.outer_basis.count:
            raise ValueError(
                f"outer size mismatch: g has {g.shape[1]}, basis has {self.outer_basis.count}"
            )
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
            raise ValueError("parameters must be finite")
        self.h = h
        self.g = g

    @property
    def addends(self) -> int:
        return self.h.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.h.shape[1]

    def copy(self) -> "KaModel":
        return KaModel(self.h.copy(), self.g.copy(), self.inner_basis, self.outer_basis)

    def save(self, path) -> None:
        if not isinstance(self.outer_basis, PwlBasis):
            raise ValueError("only hat-basis outer models serialize")
        doc = {
            "schema": _SCHEMA,
            "m": self.n_inputs,
            "k": self.addends,
            "n": self.inner_basis.count,
            "s": self.outer_basis.count,
            "x_lo": self.inner_basis.lo,
            "x_hi": self.inner_basis.hi,
            "t_lo": self.outer_basis.lo,
            "t_hi": self.outer_basis.hi,
            "h": [float(v) for v in self.h.ravel()],
            "g": [float(v) for v in self.g.ravel()],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "KaModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != _SCHEMA:
            raise ValueError(f"expected schema {_SCHEMA!r}, got {doc.get('schema')!r}")
        kk, m, n, s = doc["k"], doc["m"], doc["n"], doc["s"]
        return cls(
            np.array(doc["h"], dtype=float).reshape(kk, m, n),
            np.array(doc["g"], dtype=float).reshape(kk, s),
            PwlBasis(doc["x_lo"], doc["x_hi"], n),
            PwlBasis(doc["t_lo"], doc["t_hi"], s),
        )


@dataclass(eq=False)
class NkWorkspace:
    """Intermediate quantities of one linearization, kept for inspection.

    ``a`` and ``b`` are the partial derivatives of the model output with
    respect to the outer and inner parameters; ``c`` holds the outer basis
    derivatives at theta; ``e`` is the output itself and ``zeta`` the squared
    norm of the linearization row.
    """

    theta: np.ndarray
    a: np.ndarray
    c: np.ndarray
    b: np.ndarray
    e: float
    zeta: float


def init_model(
    n_inputs: int,
    addends: int,
    inner_count: int,
    outer_count: int,
    y_min: float,
    y_max: float,
    rng: np.random.Generator,
    *,
    x_range: tuple = (0.0, 1.0),
    t_range: tuple = None,
) -> KaModel:
    """Random model whose hidden layer starts inside the outer grid.

    Inner parameters are unif(y_min/m, y_max/m) and outer parameters
    unif(y_min/K, y_max/K), so for in-range inputs every theta component lies
    in [y_min, y_max] (the default outer interval).
    """
    if not y_min < y_max:
        raise ValueError(f"need y_min < y_max, got [{y_min}, {y_max}]")
    if not 1 <= addends <= 2 * n_inputs + 1:
        raise ValueError(f"addend count {addends} outside [1, {2 * n_inputs + 1}]")
    if t_range is None:
        t_range = (y_min, y_max)
    h = rng.uniform(y_min / n_inputs, y_max / n_inputs, size=(addends, n_inputs, inner_count))
    g = rng.uniform(y_min / addends, y_max / addends, size=(addends, outer_count))
    return KaModel(
        h,
        g,
        PwlBasis(x_range[0], x_range[1], inner_count),
        PwlBasis(t_range[0], t_range[1], outer_count),
    )


def theta(model: KaModel, x_row: np.ndarray) -> np.ndarray:
    """Hidden-layer vector for one input row (length K)."""
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (model.n_inputs,):
        raise ValueError(f"expected {model.n_inputs} inputs, got shape {x_row.shape}")
    return _kernels.ka_theta(model.h, model.inner_basis.nodes, x_row)


def evaluate(model: KaModel, x_row: np.ndarray):
    """Model output plus the filled :class:`NkWorkspace` for one record."""
    x_row = np.asarray(x_row, dtype=float)
    th = theta(model, x_row)
    kk, m, n = model.h.shape
    s = model.g.shape[1]
    a = np.zeros((kk, s))
    c = np.zeros((kk, s))
    for k in range(kk):
        se = model.outer_basis.eval(th[k])
        a[k, se.indices] = se.values
        c[k, se.indices] = se.derivs
    e = float(np.sum(model.g * a))
    dg = np.sum(model.g * c, axis=1)
    phi = np.zeros((m, n))
    for j in range(m):
        se = model.inner_basis.eval(x_row[j])
        phi[j, se.indices] = se.values
    b = dg[:, None, None] * phi[None, :, :]
    zeta = float(np.sum(a * a) + np.sum(b * b))
    return e, NkWorkspace(theta=th, a=a, c=c, b=b, e=e, zeta=zeta)


def nk_step(model: KaModel, x_row: np.ndarray, y: float, mu: float) -> bool:
    """One linearize-and-project update, in place.

    Returns False (and leaves the model untouched) when the linearization
    row vanishes; with a hat outer basis that cannot happen, since the two
    active outer values per addend sum to 1.
    """
    if not 0.0 < mu < 2.0:
        raise ValueError(f"mu must be in (0, 2), got {mu}")
    e, ws = evaluate(model, x_row)
    if ws.zeta <= ZETA_FLOOR:
        return False
    f = mu * (float(y) - e) / ws.zeta
    model.g += f * ws.a
    model.h += f * ws.b
    return True


def predict(model: KaModel, x: np.ndarray) -> np.ndarray:
    """Model outputs for every row of x."""
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ValueError(f"expected (records, {model.n_inputs}) inputs, got shape {x.shape}")
    if isinstance(model.outer_basis, PwlBasis):
        return _kernels.ka_predict(
            model.h, model.g, model.inner_basis.nodes, model.outer_basis.nodes, x
        )
    return np.array([evaluate(model, row)[0] for row in x])


def fit(
    train: Dataset,
    val: Dataset,
    config: FitConfig,
    rng: np.random.Generator,
    *,
    inner_count: int = 5,
    outer_count: int = 7,
    addends: int = None,
    x_range: tuple = None,
    t_range: tuple = None,
):
    """Identify a tree model by sequential per-record updates.

    The model is initialised from ``rng`` with the outer grid spanning the
    training output extrema (overridable through ``t_range``) and the inner
    grid spanning the training input extrema (``x_range``).  After each pass
    the normalized RMSE on ``val`` is appended to the report; the run stops
    early on a plateau.  If any parameter turns non-finite the run is
    aborted and flagged as failed.

    Returns
    -------
    (KaModel, RunReport)
    """
    m = train.n_inputs
    if addends is None:
        addends = 2 * m + 1
    if x_range is None:
        x_range = (float(train.x.min()), float(train.x.max()))
    model = init_model(
        m,
        addends,
        inner_count,
        outer_count,
        train.y_min,
        train.y_max,
        rng,
        x_range=x_range,
        t_range=t_range,
    )
    shuffle_rng = np.random.default_rng(config.seed)
    base_order = np.arange(len(train), dtype=np.int64)
    in_nodes = model.inner_basis.nodes
    out_nodes = model.outer_basis.nodes
    history = []
    skipped = 0
    failed = False
    stall = 0
    for _ in range(config.passes):
        order = shuffle_rng.permutation(len(train)) if config.shuffle else base_order
        skipped += _kernels.ka_pass(
            model.h, model.g, in_nodes, out_nodes, train.x, train.y, order, config.mu
        )
        if not (np.all(np.isfinite(model.h)) and np.all(np.isfinite(model.g))):
            failed = True
            break
        yhat = _kernels.ka_predict(model.h, model.g, in_nodes, out_nodes, val.x)
        history.append(monitor_rmse(val.y, yhat, val.y_min, val.y_max))
        if len(history) >= 2 and abs(history[-1] - history[-2]) < config.epsilon:
            stall += 1
            if stall >= config.patience:
                break
        else:
            stall = 0
    report = RunReport(
        rmse_per_pass=history,
        skipped_steps=skipped,
        failed=failed,
        final_param_norms={
            "h": float(np.linalg.norm(model.h)),
            "g": float(np.linalg.norm(model.g)),
        },
        mu=config.mu,
        seed=config.seed,
    )
    return model, report
