"""Experiment harness: dataset generation, fitting, and the two studies.

Subcommands
-----------
gen          write generated benchmark datasets as CSV
fit          identify a model from a dataset CSV, write model + report
eval         apply a saved model to a dataset, write predictions + RMSE
ensemble     perturbed-initial-guess robustness study (row-action vs Newton)
convergence  RMSE-versus-passes study for the tree model

All randomness is seeded; identical invocations produce byte-identical CSV
artifacts.  ``--check`` makes the study commands validate their results
against the bundled reference bands and exit with code 2 on violation.
"""

import argparse
import concurrent.futures
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rowfit import data as data_mod
from rowfit import kolmogorov_arnold, ridge, urysohn
from rowfit.data import FitConfig, rmse_normalized

# ---------------------------------------------------------------------------
# Ensemble study (perturbed initial guesses, row-action vs Newton)
# ---------------------------------------------------------------------------

#: Reference statistics for the bundled ridge study: mean and standard
#: deviation, across five 100-run ensembles, of the number of runs whose
#: normalized RMSE stays below each threshold (plus, for the Newton solver,
#: the converged-run count and the mean converged-run RMSE in percent).
NK_REFERENCE = {
    0.4: {"below_5pct": (98.4, 0.9), "below_10pct": (99.8, 0.4), "below_20pct": (100.0, 0.0)},
    0.8: {"below_5pct": (78.2, 3.0), "below_10pct": (95.0, 2.0), "below_20pct": (98.8, 1.1)},
    1.2: {"below_5pct": (49.4, 4.7), "below_10pct": (78.0, 7.2), "below_20pct": (90.8, 3.8)},
    1.6: {"below_5pct": (35.8, 4.1), "below_10pct": (56.2, 3.6), "below_20pct": (75.4, 1.7)},
    2.0: {"below_5pct": (24.8, 2.6), "below_10pct": (42.2, 4.3), "below_20pct": (64.4, 3.2)},
    2.4: {"below_5pct": (16.0, 5.1), "below_10pct": (30.2, 5.8), "below_20pct": (48.0, 5.3)},
    2.8: {"below_5pct": (13.0, 4.3), "below_10pct": (20.4, 4.5), "below_20pct": (34.8, 7.2)},
}

GN_REFERENCE = {
    0.4: {
        "below_5pct": (93.6, 1.3),
        "below_10pct": (93.8, 1.1),
        "below_20pct": (99.2, 0.4),
        "converged": (99.4, 0.5),
        "converged_rmse_pct": (0.8, 0.2),
    },
    0.8: {
        "below_5pct": (59.0, 5.2),
        "below_10pct": (59.0, 5.2),
        "below_20pct": (80.0, 4.8),
        "converged": (83.2, 5.5),
        "converged_rmse_pct": (4.3, 0.1),
    },
    1.2: {
        "below_5pct": (31.4, 1.7),
        "below_10pct": (32.6, 2.3),
        "below_20pct": (55.0, 6.4),
        "converged": (62.4, 7.2),
        "converged_rmse_pct": (8.3, 1.1),
    },
    1.6: {
        "below_5pct": (12.4, 2.1),
        "below_10pct": (13.6, 2.3),
        "below_20pct": (33.8, 2.9),
        "converged": (40.8, 3.6),
        "converged_rmse_pct": (11.9, 1.0),
    },
    2.0: {
        "below_5pct": (5.0, 2.1),
        "below_10pct": (5.6, 1.9),
        "below_20pct": (21.8, 4.8),
        "converged": (29.8, 7.2),
        "converged_rmse_pct": (15.1, 2.8),
    },
    2.4: {
        "below_5pct": (2.0, 1.6),
        "below_10pct": (2.2, 1.9),
        "below_20pct": (11.0, 3.1),
        "converged": (22.2, 2.9),
        "converged_rmse_pct": (22.1, 2.5),
    },
    2.8: {
        "below_5pct": (0.4, 0.5),
        "below_10pct": (1.2, 0.8),
        "below_20pct": (7.4, 2.9),
        "converged": (19.6, 5.6),
        "converged_rmse_pct": (24.7, 3.1),
    },
}

#: Acceptance half-widths: three reference standard deviations, widened by a
#: floor of five counts (or percentage points) to absorb RNG differences.
BAND_FLOOR = 5.0


def reference_band(mean: float, std: float, cap: float = 100.0):
    """[mean - max(3 std, floor), mean + max(3 std, floor)], clipped to [0, cap]."""
    half = max(3.0 * std, BAND_FLOOR)
    return (max(0.0, mean - half), min(cap, mean + half) if cap is not None else mean + half)


@dataclass
class EnsembleSpec:
    """Protocol of the robustness study."""

    alphas: tuple = (0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 2.8)
    runs: int = 100
    ensembles: int = 5
    thresholds: tuple = (0.05, 0.10, 0.20)
    method: str = "both"
    base_seed: int = 12345
    n_records: int = 400
    nk_mu: float = 0.1
    nk_iterations: int = 10000
    iterations_as_passes: bool = False
    gn_delta: float = 1e-12
    gn_max_iters: int = 100

    def __post_init__(self):
        if self.runs < 1 or self.ensembles < 1:
            raise ValueError("need runs >= 1 and ensembles >= 1")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValueError(f"thresholds must ascend, got {self.thresholds}")
        if len(set(self.alphas)) != len(self.alphas):
            raise ValueError(f"duplicate alphas in {self.alphas}")
        if self.method not in ("nk", "gn", "both"):
            raise ValueError(f"method must be nk, gn or both, got {self.method!r}")

    @property
    def methods(self) -> tuple:
        return ("nk", "gn") if self.method == "both" else (self.method,)


@dataclass
class EnsembleResult:
    """Per-run outcomes plus per-(method, alpha, statistic) aggregates."""

    spec: EnsembleSpec
    runs: list = field(default_factory=list)  # (method, alpha, ensemble, run, seed, rmse, conv, failed)
    summary: dict = field(default_factory=dict)  # (method, alpha, stat) -> (mean, std)


def _ridge_run(task):
    """One study run: fresh dataset, fresh perturbed guess, one fit."""
    (method, alpha, seed, n_records, nk_mu, nk_iters, gn_delta, gn_max_iters) = task
    rng = np.random.default_rng(seed)
    dataset = data_mod.gen_ridge_data(n_records, rng)
    init = ridge.perturbed_init(alpha, rng)
    converged = False
    if method == "nk":
        model, _ = ridge.nk_fit(dataset, init, mu=nk_mu, iterations=nk_iters)
        failed = False
    else:
        result = ridge.gn_fit(dataset, init, delta=gn_delta, max_iters=gn_max_iters)
        model, converged, failed = result.model, result.converged, result.failed
    if not (np.all(np.isfinite(model.c)) and np.all(np.isfinite(model.g))):
        failed = True
    if failed:
        return method, alpha, seed, float("inf"), converged, True
    rmse = rmse_normalized(
        dataset.y, ridge.predict(model, dataset.x), dataset.y_min, dataset.y_max
    )
    if not np.isfinite(rmse):
        return method, alpha, seed, float("inf"), converged, True
    return method, alpha, seed, rmse, converged, failed


def _std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def run_ensemble(spec: EnsembleSpec, jobs: int = 1) -> EnsembleResult:
    """Execute the study: ensembles x runs per (method, alpha), then aggregate.

    Run seeds are ``base_seed XOR global_run_index`` with the global index
    counting through ensembles, so runs are paired across methods and alphas.
    Failed or diverged runs enter the counts as above-threshold.
    """
    nk_iters = spec.nk_iterations * (spec.n_records if spec.iterations_as_passes else 1)
    tasks = []
    keys = []
    for method in spec.methods:
        for alpha in spec.alphas:
            for ensemble in range(spec.ensembles):
                for run in range(spec.runs):
                    g = ensemble * spec.runs + run
                    seed = spec.base_seed ^ g
                    keys.append((method, alpha, ensemble, run, seed))
                    tasks.append(
                        (
                            method,
                            alpha,
                            seed,
                            spec.n_records,
                            spec.nk_mu,
                            nk_iters,
                            spec.gn_delta,
                            spec.gn_max_iters,
                        )
                    )
    outcomes = _run_tasks(_ridge_run, tasks, jobs)

    result = EnsembleResult(spec=spec)
    for (method, alpha, ensemble, run, seed), out in zip(keys, outcomes):
        rmse, converged, failed = out[3], out[4], out[5]
        result.runs.append((method, alpha, ensemble, run, seed, rmse, converged, failed))

    for method in spec.methods:
        for alpha in spec.alphas:
            rows = [r for r in result.runs if r[0] == method and r[1] == alpha]
            per_ens_rmse = [
                np.array([r[5] for r in rows if r[2] == e]) for e in range(spec.ensembles)
            ]
            for th in spec.thresholds:
                stat = f"below_{round(th * 100)}pct"
                counts = np.array([float(np.sum(arr < th)) for arr in per_ens_rmse])
                result.summary[(method, alpha, stat)] = (float(np.mean(counts)), _std(counts))
            if method == "gn":
                conv_counts = np.array(
                    [
                        float(sum(1 for r in rows if r[2] == e and r[6]))
                        for e in range(spec.ensembles)
                    ]
                )
                result.summary[(method, alpha, "converged")] = (
                    float(np.mean(conv_counts)),
                    _std(conv_counts),
                )
                per_ens_conv_rmse = []
                for e in range(spec.ensembles):
                    vals = [100.0 * r[5] for r in rows if r[2] == e and r[6] and np.isfinite(r[5])]
                    per_ens_conv_rmse.append(float(np.mean(vals)) if vals else float("nan"))
                arr = np.array(per_ens_conv_rmse)
                ok = arr[np.isfinite(arr)]
                result.summary[(method, alpha, "converged_rmse_pct")] = (
                    float(np.mean(ok)) if ok.size else float("nan"),
                    _std(ok),
                )
    return result


def _run_tasks(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=8))


def write_ensemble_csv(result: EnsembleResult, out_dir: Path):
    """Emit per-run rows and the aggregate summary as two CSV files."""
    runs_path = out_dir / "ensemble_runs.csv"
    with open(runs_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "alpha", "ensemble", "run", "seed", "rmse", "converged", "failed"])
        for method, alpha, ensemble, run, seed, rmse, conv, failed in result.runs:
            writer.writerow(
                [method, repr(alpha), ensemble, run, seed, repr(rmse), int(conv), int(failed)]
            )
    summary_path = out_dir / "ensemble_summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "alpha", "stat", "mean", "std"])
        for (method, alpha, stat), (mean, std) in sorted(
            result.summary.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])
        ):
            writer.writerow([method, repr(alpha), stat, repr(mean), repr(std)])
    return runs_path, summary_path


def check_ensemble(result: EnsembleResult):
    """Compare aggregates against the reference bands.

    Returns a list of (name, ok, observed, lo, hi) tuples.  Also enforces the
    ordering claim: at every alpha run with both methods, the row-action
    solver must beat the Newton solver on the 10% threshold count.
    """
    checks = []
    tables = {"nk": NK_REFERENCE, "gn": GN_REFERENCE}
    for method in result.spec.methods:
        table = tables[method]
        for alpha in result.spec.alphas:
            if alpha not in table:
                continue
            for stat, (ref_mean, ref_std) in table[alpha].items():
                if (method, alpha, stat) not in result.summary:
                    continue
                cap = None if stat == "converged_rmse_pct" else 100.0
                lo, hi = reference_band(ref_mean, ref_std, cap)
                observed = result.summary[(method, alpha, stat)][0]
                ok = bool(np.isfinite(observed)) and lo <= observed <= hi
                checks.append((f"{method} alpha={alpha} {stat}", ok, observed, lo, hi))
    if set(result.spec.methods) == {"nk", "gn"}:
        for alpha in result.spec.alphas:
            key_nk = ("nk", alpha, "below_10pct")
            key_gn = ("gn", alpha, "below_10pct")
            if key_nk in result.summary and key_gn in result.summary:
                nk_mean = result.summary[key_nk][0]
                gn_mean = result.summary[key_gn][0]
                checks.append(
                    (
                        f"ordering alpha={alpha} nk>gn below_10pct",
                        nk_mean > gn_mean,
                        nk_mean - gn_mean,
                        0.0,
                        float("inf"),
                    )
                )
    return checks


# ---------------------------------------------------------------------------
# Convergence study (tree model, RMSE versus passes)
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceSpec:
    """Protocol of the RMSE-versus-passes study."""

    mus: tuple = (1.0, 0.3, 0.1)
    passes: int = 500
    runs: int = 10
    n_train: int = 10000
    n_val: int = 2000
    inner_count: int = 5
    outer_count: int = 7
    addends: int = None
    base_seed: int = 12345

    def __post_init__(self):
        for mu in self.mus:
            if not 0.0 < mu < 2.0:
                raise ValueError(f"mu must be in (0, 2), got {mu}")
        if len(set(self.mus)) != len(self.mus):
            raise ValueError(f"duplicate mus in {self.mus}")
        if self.passes < 1 or self.runs < 1:
            raise ValueError("need passes >= 1 and runs >= 1")


@dataclass
class ConvergenceResult:
    spec: ConvergenceSpec
    histories: dict = field(default_factory=dict)  # (mu, run) -> list of rmse
    failed: dict = field(default_factory=dict)  # (mu, run) -> bool


def study_fit(
    seed: int,
    mu: float,
    passes: int,
    n_train: int = 10000,
    n_val: int = 2000,
    inner_count: int = 5,
    outer_count: int = 7,
    addends: int = None,
):
    """One study run: generate train + validation data, fit the tree model.

    The datasets come from one generator seeded with ``seed`` (train first),
    the parameter initialisation from a second generator with the same seed,
    which is exactly what the gen/fit commands do, so a gen + fit pipeline
    with matching flags reproduces a study run bit for bit.
    """
    data_rng = np.random.default_rng(seed)
    train = data_mod.gen_formula2_data(n_train, data_rng)
    val = data_mod.gen_formula2_data(n_val, data_rng)
    config = FitConfig(mu=mu, passes=passes, epsilon=0.0, patience=1, seed=seed)
    model, report = kolmogorov_arnold.fit(
        train,
        val,
        config,
        np.random.default_rng(seed),
        inner_count=inner_count,
        outer_count=outer_count,
        addends=addends,
    )
    return train, val, model, report


def _convergence_run(task):
    mu, run, seed, passes, n_train, n_val, inner_count, outer_count, addends = task
    _, _, _, report = study_fit(
        seed, mu, passes, n_train, n_val, inner_count, outer_count, addends
    )
    return mu, run, report.rmse_per_pass, report.failed


def run_convergence(spec: ConvergenceSpec, jobs: int = 1) -> ConvergenceResult:
    """Fit the tree model for every (mu, run); per-run seeds are base XOR run.

    The same run index gives the same data and initial guess for every mu,
    so mu comparisons are paired.
    """
    tasks = [
        (
            mu,
            run,
            spec.base_seed ^ run,
            spec.passes,
            spec.n_train,
            spec.n_val,
            spec.inner_count,
            spec.outer_count,
            spec.addends,
        )
        for mu in spec.mus
        for run in range(spec.runs)
    ]
    outcomes = _run_tasks(_convergence_run, tasks, jobs)
    result = ConvergenceResult(spec=spec)
    for mu, run, history, failed in outcomes:
        result.histories[(mu, run)] = history
        result.failed[(mu, run)] = failed
    return result


def write_convergence_csv(result: ConvergenceResult, out_dir: Path) -> Path:
    """Long-format CSV: one row per (mu, run, pass)."""
    path = out_dir / "convergence.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mu", "run", "pass", "rmse"])
        for mu in result.spec.mus:
            for run in range(result.spec.runs):
                for p, rmse in enumerate(result.histories[(mu, run)], start=1):
                    writer.writerow([repr(mu), run, p, repr(float(rmse))])
    return path


def mean_history(result: ConvergenceResult, mu: float) -> np.ndarray:
    """Per-pass RMSE averaged over the runs of one mu."""
    rows = [result.histories[(mu, run)] for run in range(result.spec.runs)]
    length = min(len(r) for r in rows)
    return np.mean(np.array([r[:length] for r in rows]), axis=0)


def loglog_r2(history: np.ndarray, first_pass: int = 10) -> float:
    """R^2 of the straight-line fit of log RMSE against log pass number."""
    passes = np.arange(1, len(history) + 1)
    mask = passes >= first_pass
    if int(mask.sum()) < 3:
        raise ValueError(f"need at least 3 passes beyond {first_pass} for a trend")
    lx = np.log(passes[mask])
    ly = np.log(np.asarray(history)[mask])
    design = np.vstack([lx, np.ones_like(lx)]).T
    _, res, *_ = np.linalg.lstsq(design, ly, rcond=None)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return float(1.0 - res[0] / ss_tot)


def check_convergence(result: ConvergenceResult):
    """Validate the study: accuracy and log-log trend at mu=1, mu ordering."""
    checks = []
    spec = result.spec
    finals = {}
    for mu in spec.mus:
        hist = mean_history(result, mu)
        finals[mu] = float(hist[-1])
    if 1.0 in spec.mus:
        hist = mean_history(result, 1.0)
        checks.append(("final rmse mu=1.0 <= 1%", finals[1.0] <= 0.01, finals[1.0], 0.0, 0.01))
        if spec.passes >= 20:
            r2 = loglog_r2(hist, first_pass=10)
            checks.append(("loglog r2 mu=1.0 >= 0.9", r2 >= 0.9, r2, 0.9, 1.0))
    ordered = sorted(spec.mus)
    for small, large in zip(ordered, ordered[1:]):
        ok = finals[small] > finals[large]
        checks.append(
            (
                f"final rmse mu={small} > mu={large}",
                ok,
                finals[small] - finals[large],
                0.0,
                float("inf"),
            )
        )
    return checks


# ---------------------------------------------------------------------------
# Minimal SVG line chart (log-log), no plotting dependency
# ---------------------------------------------------------------------------

_PALETTE = ("#0c5da5", "#e36414", "#2a9d34", "#8338ec", "#c1121f", "#577590")


def write_loglog_svg(path, result: ConvergenceResult, title: str = "validation RMSE vs passes"):
    """One polyline per (mu, run) on log-log axes with decade ticks."""
    width, height = 720, 520
    ml, mr, mt, mb = 70, 160, 40, 55
    plot_w, plot_h = width - ml - mr, height - mt - mb

    points = [
        v
        for hist in result.histories.values()
        for v in hist
        if np.isfinite(v) and v > 0.0
    ]
    max_pass = max((len(h) for h in result.histories.values()), default=1)
    if not points:
        points = [1.0]
    lx0, lx1 = 0.0, max(np.log10(max_pass), 0.301)
    ly0 = np.floor(np.log10(min(points)))
    ly1 = np.ceil(np.log10(max(points)))
    if ly1 <= ly0:
        ly1 = ly0 + 1.0

    def px(pass_no):
        return ml + (np.log10(pass_no) - lx0) / (lx1 - lx0) * plot_w

    def py(value):
        return mt + (ly1 - np.log10(value)) / (ly1 - ly0) * plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml}" y="24" font-family="sans-serif" font-size="15">{title}</text>',
        f'<rect x="{ml}" y="{mt}" width="{plot_w}" height="{plot_h}" fill="none" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for k in range(int(np.ceil(lx0)), int(np.floor(lx1)) + 1):
        x = ml + (k - lx0) / (lx1 - lx0) * plot_w
        lines.append(
            f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" y2="{mt + plot_h}" '
            f'stroke="#cccccc" stroke-width="0.5"/>'
        )
        lines.append(
            f'<text x="{x:.2f}" y="{mt + plot_h + 18}" font-family="sans-serif" '
            f'font-size="12" text-anchor="middle">{10 ** k:g}</text>'
        )
    for k in range(int(np.ceil(ly0)), int(np.floor(ly1)) + 1):
        y = mt + (ly1 - k) / (ly1 - ly0) * plot_h
        lines.append(
            f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + plot_w}" y2="{y:.2f}" '
            f'stroke="#cccccc" stroke-width="0.5"/>'
        )
        lines.append(
            f'<text x="{ml - 8}" y="{y + 4:.2f}" font-family="sans-serif" font-size="12" '
            f'text-anchor="end">{10.0 ** k:g}</text>'
        )
    lines.append(
        f'<text x="{ml + plot_w / 2:.0f}" y="{height - 12}" font-family="sans-serif" '
        f'font-size="13" text-anchor="middle">pass</text>'
    )
    lines.append(
        f'<text x="18" y="{mt + plot_h / 2:.0f}" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {mt + plot_h / 2:.0f})" text-anchor="middle">'
        "normalized RMSE</text>"
    )
    for mi, mu in enumerate(result.spec.mus):
        color = _PALETTE[mi % len(_PALETTE)]
        for run in range(result.spec.runs):
            hist = result.histories[(mu, run)]
            pts = " ".join(
                f"{px(p + 1):.2f},{py(v):.2f}"
                for p, v in enumerate(hist)
                if np.isfinite(v) and v > 0.0
            )
            if pts:
                lines.append(
                    f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    f'stroke-width="1" opacity="0.75"/>'
                )
        ly = mt + 16 + 18 * mi
        lines.append(
            f'<line x1="{ml + plot_w + 12}" y1="{ly - 4}" x2="{ml + plot_w + 40}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        lines.append(
            f'<text x="{ml + plot_w + 46}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">mu={mu:g}</text>'
        )
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Plumbing commands
# ---------------------------------------------------------------------------


def _load_model(path):
    """Sniff the schema field and dispatch to the right loader."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    schema = doc.get("schema", "")
    loaders = {
        "rowfit/urysohn-v1": urysohn.UrysohnModel,
        "rowfit/ka-v1": kolmogorov_arnold.KaModel,
        "rowfit/ridge-v1": ridge.RidgeModel,
    }
    if schema not in loaders:
        raise ValueError(f"unknown model schema {schema!r} in {path}")
    return loaders[schema].load(path)


def _predict_any(model, x):
    if isinstance(model, urysohn.UrysohnModel):
        return urysohn.predict(model, x)
    if isinstance(model, kolmogorov_arnold.KaModel):
        return kolmogorov_arnold.predict(model, x)
    return ridge.predict(model, x)


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    gen = data_mod.gen_ridge_data if args.kind == "ridge" else data_mod.gen_formula2_data
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / (args.out or f"{args.kind}_train.csv")
    dataset = gen(args.n, rng)
    data_mod.save_dataset_csv(dataset, train_path)
    print(f"wrote {train_path} ({len(dataset)} records)")
    if args.val_n:
        val_path = out_dir / (args.val_out or f"{args.kind}_val.csv")
        val = gen(args.val_n, rng)
        data_mod.save_dataset_csv(val, val_path)
        print(f"wrote {val_path} ({len(val)} records)")
    return 0


def cmd_fit(args) -> int:
    train = data_mod.load_dataset_csv(args.train)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / (args.out or f"{args.model}_model.json")
    report_path = out_dir / (args.report or f"{args.model}_report.csv")
    config = FitConfig(
        mu=args.mu,
        passes=args.passes,
        epsilon=args.epsilon,
        patience=args.patience,
        shuffle=args.shuffle,
        seed=args.seed,
    )
    if args.model == "urysohn":
        model, report = urysohn.fit(train, config, nodes=args.nodes)
    elif args.model == "ka":
        val = data_mod.load_dataset_csv(args.val) if args.val else train
        model, report = kolmogorov_arnold.fit(
            train,
            val,
            config,
            np.random.default_rng(args.seed),
            inner_count=args.nodes,
            outer_count=args.outer_nodes,
            addends=args.addends,
        )
    else:
        if not args.init:
            raise ValueError("ridge fits need --init (a saved ridge model as starting point)")
        init = ridge.RidgeModel.load(args.init)
        model, skipped = ridge.nk_fit(train, init, mu=args.mu, iterations=args.iterations)
        rmse = rmse_normalized(
            train.y, ridge.predict(model, train.x), train.y_min, train.y_max
        )
        report = data_mod.RunReport(
            rmse_per_pass=[rmse],
            skipped_steps=skipped,
            failed=not np.isfinite(rmse),
            final_param_norms={
                "c": float(np.linalg.norm(model.c)),
                "g": float(np.linalg.norm(model.g)),
            },
            mu=args.mu,
            seed=args.seed,
        )
    model.save(model_path)
    report.write_csv(report_path)
    final = report.rmse_per_pass[-1] if report.rmse_per_pass else float("nan")
    print(f"wrote {model_path} and {report_path} (final rmse {final:.6g}, failed={report.failed})")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model_file)
    dataset = data_mod.load_dataset_csv(args.data)
    model_m = model.n_inputs
    if dataset.n_inputs != model_m:
        raise ValueError(
            f"dimension mismatch: model expects {model_m} inputs, dataset has {dataset.n_inputs}"
        )
    yhat = _predict_any(model, dataset.x)
    rmse = rmse_normalized(dataset.y, yhat, dataset.y_min, dataset.y_max)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / (args.out or "predictions.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# rmse={rmse!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["y", "yhat"])
        for yv, yh in zip(dataset.y, yhat):
            writer.writerow([repr(float(yv)), repr(float(yh))])
    print(f"wrote {out_path} (normalized rmse {rmse:.6g})")
    return 0


def _print_checks(checks) -> int:
    worst = 0
    for name, ok, observed, lo, hi in checks:
        status = "ok" if ok else "FAIL"
        print(f"check {status}: {name}: observed {observed:.4g}, accepted [{lo:.4g}, {hi:.4g}]")
        if not ok:
            worst = 2
    return worst


def cmd_ensemble(args) -> int:
    spec = EnsembleSpec(
        alphas=tuple(args.alphas),
        runs=args.runs,
        ensembles=args.ensembles,
        method=args.method,
        base_seed=args.seed,
        nk_iterations=args.nk_iterations,
        iterations_as_passes=args.iterations_as_passes,
    )
    result = run_ensemble(spec, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path, summary_path = write_ensemble_csv(result, out_dir)
    print(f"wrote {runs_path} and {summary_path}")
    for (method, alpha, stat), (mean, std) in sorted(result.summary.items()):
        print(f"{method} alpha={alpha} {stat}: {mean:.1f} +/- {std:.1f}")
    if args.check:
        return _print_checks(check_ensemble(result))
    return 0


def cmd_convergence(args) -> int:
    spec = ConvergenceSpec(
        mus=tuple(args.mus),
        passes=args.passes,
        runs=args.runs,
        n_train=args.train_size,
        n_val=args.val_size,
        base_seed=args.seed,
        addends=args.addends,
    )
    result = run_convergence(spec, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_convergence_csv(result, out_dir)
    svg_path = write_loglog_svg(out_dir / "convergence.svg", result)
    print(f"wrote {csv_path} and {svg_path}")
    for mu in spec.mus:
        hist = mean_history(result, mu)
        print(f"mu={mu:g}: final rmse {hist[-1]:.6g} over {len(hist)} passes")
    if args.check:
        return _print_checks(check_convergence(result))
    return 0


def _float_list(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rowfit",
        description="Row-action model identification harness: generate benchmark "
        "data, fit and evaluate models, and run the bundled robustness and "
        "convergence studies with seeded, byte-reproducible outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=12345, help="base seed (64-bit)")
        p.add_argument("--out-dir", default=".", help="directory for output files")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (default sequential)")

    p = sub.add_parser("gen", help="generate a benchmark dataset CSV")
    common(p)
    p.add_argument("--kind", choices=("ridge", "formula2"), required=True)
    p.add_argument("--n", type=int, default=400, help="number of records")
    p.add_argument("--val-n", type=int, default=0, help="also write a validation set of this size")
    p.add_argument("--out", default=None, help="training CSV name")
    p.add_argument("--val-out", default=None, help="validation CSV name")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit a model to a dataset CSV")
    common(p)
    p.add_argument("--model", choices=("urysohn", "ka", "ridge"), required=True)
    p.add_argument("--train", required=True, help="training dataset CSV")
    p.add_argument("--val", default=None, help="validation dataset CSV (tree model)")
    p.add_argument("--mu", type=float, default=1.0, help="step scale in (0, 2)")
    p.add_argument("--passes", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1e-6, help="plateau threshold (0 disables)")
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--shuffle", action="store_true", help="shuffle record order per pass")
    p.add_argument("--nodes", type=int, default=5, help="inner basis size")
    p.add_argument("--outer-nodes", type=int, default=7, help="outer basis size (tree model)")
    p.add_argument("--addends", type=int, default=None, help="tree addend count (default 2m+1)")
    p.add_argument("--iterations", type=int, default=10000, help="record steps (ridge)")
    p.add_argument("--init", default=None, help="initial ridge model JSON")
    p.add_argument("--out", default=None, help="model JSON name")
    p.add_argument("--report", default=None, help="report CSV name")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="apply a saved model to a dataset CSV")
    common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="predictions CSV name")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="perturbed-initial-guess robustness study")
    common(p)
    p.add_argument("--method", choices=("nk", "gn", "both"), default="both")
    p.add_argument(
        "--alphas",
        type=_float_list,
        default=[0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 2.8],
        help="comma-separated perturbation amplitudes",
    )
    p.add_argument("--runs", type=int, default=100, help="runs per ensemble")
    p.add_argument("--ensembles", type=int, default=5)
    p.add_argument("--nk-iterations", type=int, default=10000)
    p.add_argument(
        "--iterations-as-passes",
        action="store_true",
        help="treat --nk-iterations as whole sweeps instead of record steps",
    )
    p.add_argument("--check", action="store_true", help="validate against reference bands")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("convergence", help="tree-model RMSE versus passes study")
    common(p)
    p.add_argument("--mus", type=_float_list, default=[1.0, 0.3, 0.1])
    p.add_argument("--passes", type=int, default=500)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--train-size", type=int, default=10000)
    p.add_argument("--val-size", type=int, default=2000)
    p.add_argument("--addends", type=int, default=None)
    p.add_argument("--check", action="store_true", help="validate accuracy and trend")
    p.set_defaults(func=cmd_convergence)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
