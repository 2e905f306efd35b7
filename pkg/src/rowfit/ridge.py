"""Single-ridge model with a Gaussian outer basis, plus its two solvers.

The model applies one function of a single linear combination of the inputs,
the function being a linear combination of Gaussian bumps.  It is identified
either record-by-record (Newton-Kaczmarz: linearize one equation, project)
or in full batches by a Newton iteration on the sum of squared residuals
whose Hessian keeps the second-derivative terms.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from rowfit import _kernels
from rowfit.basis import GaussBasis
from rowfit.data import Dataset

_SCHEMA = "rowfit/ridge-v1"

GRADIENT_FLOOR = 1e-300
PIVOT_FLOOR = 1e-12

# Parameters of the bundled 5-input benchmark model: a strongly non-monotonic
# outer function over theta in roughly (-1.9, 4.9).
BENCHMARK_C = np.array([-0.7, 2.5, -1.2, 0.8, 1.6])
BENCHMARK_G = np.array([2.1, -0.9, 0.7])
BENCHMARK_CENTERS = np.array([0.5, 1.5, 2.5])


@dataclass(eq=False)
class RidgeModel:
    """Inner weights ``c`` (length m), outer coefficients ``g`` (length s)."""

    c: np.ndarray
    g: np.ndarray
    basis: GaussBasis

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=float)
        g = np.ascontiguousarray(self.g, dtype=float)
        if c.ndim != 1 or g.ndim != 1:
            raise ValueError(f"need 1-D parameter vectors, got {c.shape} and {g.shape}")
        if g.shape[0] != self.basis.count:
            raise ValueError(f"outer size mismatch: g has {g.shape[0]}, basis {self.basis.count}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
            raise ValueError("parameters must be finite")
        self.c = c
        self.g = g

    @property
    def n_inputs(self) -> int:
        return self.c.shape[0]

    def copy(self) -> "RidgeModel":
        return RidgeModel(self.c.copy(), self.g.copy(), self.basis)

    def save(self, path) -> None:
        doc = {
            "schema": _SCHEMA,
            "m": self.n_inputs,
            "s": self.basis.count,
            "centers": [float(v) for v in self.basis.centers],
            "c": [float(v) for v in self.c],
            "g": [float(v) for v in self.g],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RidgeModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != _SCHEMA:
            raise ValueError(f"expected schema {_SCHEMA!r}, got {doc.get('schema')!r}")
        return cls(
            np.array(doc["c"], dtype=float),
            np.array(doc["g"], dtype=float),
            GaussBasis(np.array(doc["centers"], dtype=float)),
        )


def benchmark_model() -> RidgeModel:
    """The bundled study model (exact generator of :func:`data.gen_ridge_data`)."""
    return RidgeModel(BENCHMARK_C.copy(), BENCHMARK_G.copy(), GaussBasis(BENCHMARK_CENTERS.copy()))


def perturbed_init(alpha: float, rng: np.random.Generator, base: RidgeModel = None) -> RidgeModel:
    """Exact solution plus a unif(-0.5, 0.5) perturbation scaled by ``alpha``.

    The inner-weight perturbation is drawn before the outer one.
    """
    if base is None:
        base = benchmark_model()
    e1 = rng.uniform(-0.5, 0.5, size=base.n_inputs)
    e2 = rng.uniform(-0.5, 0.5, size=base.basis.count)
    return RidgeModel(base.c + alpha * e1, base.g + alpha * e2, base.basis)


def evaluate(model: RidgeModel, x_row: np.ndarray) -> float:
    """Model output for one input vector."""
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (model.n_inputs,):
        raise ValueError(f"expected {model.n_inputs} inputs, got shape {x_row.shape}")
    se = model.basis.eval(float(model.c @ x_row))
    return float(model.g @ se.values)


def predict(model: RidgeModel, x: np.ndarray) -> np.ndarray:
    """Model outputs for every row of x."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ValueError(f"expected (records, {model.n_inputs}) inputs, got shape {x.shape}")
    d = (x @ model.c)[:, None] - model.basis.centers[None, :]
    return np.exp(-2.0 * d * d) @ model.g


def nk_step(model: RidgeModel, x_row: np.ndarray, y: float, mu: float) -> bool:
    """One linearize-and-project update, in place.

    Returns False without touching the model when the residual gradient
    vanishes (every Gaussian underflowed at the current theta).
    """
    if not 0.0 < mu < 2.0:
        raise ValueError(f"mu must be in (0, 2), got {mu}")
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (model.n_inputs,):
        raise ValueError(f"expected {model.n_inputs} inputs, got shape {x_row.shape}")
    se = model.basis.eval(float(model.c @ x_row))
    psi = se.values
    yhat = float(model.g @ psi)
    w = float(model.g @ se.derivs)
    grad_c = w * x_row
    norm2 = float(psi @ psi + grad_c @ grad_c)
    if norm2 <= GRADIENT_FLOOR:
        return False
    f = mu * (float(y) - yhat) / norm2
    model.g += f * psi
    model.c += f * grad_c
    return True


def nk_fit(data: Dataset, init: RidgeModel, mu: float = 0.1, iterations: int = 10000):
    """Cyclic Newton-Kaczmarz over the records of ``data``.

    One iteration is one record.  Returns (model, skipped) where skipped
    counts degenerate-gradient iterations.
    """
    if not 0.0 < mu < 2.0:
        raise ValueError(f"mu must be in (0, 2), got {mu}")
    if init.n_inputs != data.n_inputs:
        raise ValueError(f"model expects {init.n_inputs} inputs, data has {data.n_inputs}")
    model = init.copy()
    skipped = _kernels.ridge_nk_iters(
        model.c, model.g, model.basis.centers, data.x, data.y, mu, int(iterations)
    )
    return model, int(skipped)


@dataclass(eq=False)
class GnState:
    """Stacked parameters [g, c], with gradient and Hessian of S = 1/2 sum r^2."""

    z: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    mu: float = 0.1


def gn_state(model: RidgeModel, data: Dataset, mu: float = 0.1) -> GnState:
    """Assemble the batch gradient and full Hessian at the current parameters.

    The Hessian keeps the residual-times-second-derivative terms, so it is
    the exact Newton matrix, symmetric but not necessarily positive definite.
    """
    if model.n_inputs != data.n_inputs:
        raise ValueError(f"model expects {model.n_inputs} inputs, data has {data.n_inputs}")
    x = data.x
    s = model.basis.count
    theta = x @ model.c
    d = theta[:, None] - model.basis.centers[None, :]
    psi = np.exp(-2.0 * d * d)
    eta = -4.0 * d * psi
    xi = (16.0 * d * d - 4.0) * psi
    r = psi @ model.g - data.y
    w = eta @ model.g
    drc = x * w[:, None]
    jac = np.concatenate([psi, drc], axis=1)
    gradient = jac.T @ r
    hessian = jac.T @ jac
    cross = eta.T @ (x * r[:, None])
    hessian[:s, s:] += cross
    hessian[s:, :s] += cross.T
    curv = (xi @ model.g) * r
    hessian[s:, s:] += x.T @ (x * curv[:, None])
    return GnState(z=np.concatenate([model.g, model.c]), gradient=gradient, hessian=hessian, mu=mu)


def _pivot_magnitudes(d: np.ndarray) -> np.ndarray:
    """Eigenvalue magnitudes of the block-diagonal factor of an LDL' split."""
    mags = []
    i = 0
    n = d.shape[0]
    while i < n:
        if i + 1 < n and d[i, i + 1] != 0.0:
            a, b, c = d[i, i], d[i, i + 1], d[i + 1, i + 1]
            t = 0.5 * (a + c)
            disc = np.sqrt(0.25 * (a - c) ** 2 + b * b)
            mags.extend([abs(t + disc), abs(t - disc)])
            i += 2
        else:
            mags.append(abs(d[i, i]))
            i += 1
    return np.array(mags)


def _newton_step(hessian: np.ndarray, gradient: np.ndarray):
    """Solve H step = gradient after a symmetric-factorization pivot check.

    Returns None when the factorization reveals effective singularity.
    Negative pivots are allowed: away from a minimum the exact Newton matrix
    is legitimately indefinite.
    """
    if not (np.all(np.isfinite(hessian)) and np.all(np.isfinite(gradient))):
        return None
    try:
        _, d, _ = scipy.linalg.ldl(hessian)
    except (ValueError, np.linalg.LinAlgError):
        return None
    mags = _pivot_magnitudes(d)
    if mags.size == 0 or np.min(mags) < PIVOT_FLOOR or not np.all(np.isfinite(mags)):
        return None
    try:
        return np.linalg.solve(hessian, gradient)
    except np.linalg.LinAlgError:
        return None


@dataclass(eq=False)
class GnFitResult:
    model: RidgeModel
    converged: bool
    failed: bool
    iterations: int


def gn_fit(
    data: Dataset,
    init: RidgeModel,
    delta: float = 1e-12,
    max_iters: int = 100,
    require_small_gradient: bool = False,
) -> GnFitResult:
    """Damped Newton iteration on the batch least-squares objective.

    The step scale starts at 0.1 and switches to 1 permanently once the step
    norm first drops below 0.1.  The run converges when the step norm falls
    below ``delta`` (and, behind the ``require_small_gradient`` flag, the
    gradient norm as well); it fails on a singular Hessian or non-finite
    parameters.
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    model = init.copy()
    mu = 0.1
    for iteration in range(1, max_iters + 1):
        state = gn_state(model, data, mu)
        step = _newton_step(state.hessian, state.gradient)
        if step is None:
            return GnFitResult(model, converged=False, failed=True, iterations=iteration)
        z_new = state.z - mu * step
        if not np.all(np.isfinite(z_new)):
            return GnFitResult(model, converged=False, failed=True, iterations=iteration)
        dz = float(np.linalg.norm(z_new - state.z))
        s = model.basis.count
        model.g = z_new[:s]
        model.c = z_new[s:]
        if dz < delta and (
            not require_small_gradient or float(np.linalg.norm(state.gradient)) < delta
        ):
            return GnFitResult(model, converged=True, failed=False, iterations=iteration)
        if dz < 0.1:
            mu = 1.0
    return GnFitResult(model, converged=False, failed=False, iterations=max_iters)
