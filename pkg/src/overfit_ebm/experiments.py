"""Experiment runners behind the command-line interface.

Each run is one ``(rho, replicate)`` pair and writes, under
``<out_dir>/<experiment>/rho=<rho>/rep=<k>/``:

* ``trajectory.csv``: metrics (and modes where relevant) against time or lambda
* ``summary.csv``: a single row of final and extremal values
* ``manifest.txt``: resolved configuration, seeds, versions and wall-clock

Files are written as ``<name>.partial`` and renamed once the run succeeds, so
a failed run leaves only ``.partial`` files behind.

Seeds: run ``(i, k)`` for the ``i``-th rho and ``k``-th replicate uses
``run_seed = seed + 1000 * i + k``; the population basis is drawn from
``[run_seed, 0]``, the samples from ``[run_seed, 1]`` and sub-sampling or
chains from ``[run_seed, 2]``.
"""

from __future__ import annotations

import csv
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cleaning import (CleanedCovariance, default_sub_sizes, oracle_clean, polyfit_clean,
                       rie_clean)
from .config import ExperimentConfig
from .gebm import Regularization, Trajectory, gradient_ascent_train, mode_trajectories
from .ising_bm import McmcGradient, bm_train, build_ising_2d, metropolis_sample
from .metrics import (AlignedEvaluator, coupling_error, find_optimum, gaussian_w2, log_likelihood,
                      trace_energy)
from .numerics import EigenSystem, random_orthogonal, sym_eig
from .rmt import (JFunctional, Population, asymptotic_coupling_error, asymptotic_log_likelihood,
                  default_grid, gcv_test_from_train, solve_self_consistent)
from .spectra import (FIG1B, RMT_SPECTRUM, PowerLawSpectrumParams, assemble_covariance,
                      empirical_covariance, load_spectrum_csv, power_law_spectrum, sample_gaussian)

SUMMARY_KEYS = ("experiment", "rho", "rep", "seed")


class RunError(RuntimeError):
    """A module error annotated with the experiment coordinates."""


@dataclass(frozen=True)
class RunSpec:
    experiment: str
    rho: float
    rho_index: int
    rep: int
    seed: int

    @property
    def label(self) -> str:
        return f"{self.experiment} rho={self.rho:g} rep={self.rep} seed={self.seed}"


def run_seed(master: int, rho_index: int, rep: int) -> int:
    return master + 1000 * rho_index + rep


def plan_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    out = []
    rhos = cfg["data.rho_list"]
    if cfg.name == "gebm_population":
        rhos = (float("inf"),)
    for i, rho in enumerate(rhos):
        for k in range(cfg["experiment.replicates"]):
            out.append(RunSpec(cfg.name, rho, i, k, run_seed(cfg["experiment.seed"], i, k)))
    return out


# ---------------------------------------------------------------------------
# shared building blocks


def population_spectrum(cfg: ExperimentConfig, n: int, seed=None) -> np.ndarray:
    spec = cfg["data.spectrum"]
    if spec == "fig1b":
        params = FIG1B
    elif spec == "rmt":
        params = RMT_SPECTRUM
    elif spec.startswith("powerlaw:"):
        params = PowerLawSpectrumParams(*(float(x) for x in spec.split(":", 1)[1].split(",")))
    else:
        values = load_spectrum_csv(spec)
        if values.size != n:
            raise ValueError(f"spectrum file has {values.size} values but data.n = {n}")
        return values
    return power_law_spectrum(params, n, cfg["data.spectrum_mode"], seed=[seed, 3])


@dataclass
class Problem:
    spectrum: np.ndarray
    basis: np.ndarray
    c_pop: np.ndarray
    j_true: np.ndarray
    samples: object = None
    c_hat: np.ndarray | None = None


def make_problem(cfg, n: int, rho: float, seed: int, sample: bool = True) -> Problem:
    spec = population_spectrum(cfg, n, seed)
    basis = random_orthogonal(n, seed=[seed, 0])
    c_pop = assemble_covariance(spec, basis)
    j_true = (basis / spec) @ basis.T
    prob = Problem(spec, basis, c_pop, 0.5 * (j_true + j_true.T))
    if sample:
        m = int(round(rho * n))
        prob.samples = sample_gaussian(c_pop, m, seed=[seed, 1])
        prob.c_hat = empirical_covariance(prob.samples)
    return prob


def record_steps(cfg) -> np.ndarray:
    steps = cfg["training.steps"]
    if cfg["training.schedule"] == "log":
        k = np.unique(np.round(np.geomspace(1, steps, cfg["training.log_points"])).astype(int))
        return np.concatenate([[0], k])
    k = np.arange(0, steps + 1, cfg["training.record_every"])
    return k if k[-1] == steps else np.append(k, steps)


def init_value(cfg) -> float:
    init = cfg["training.init"]
    return {"identity": 1.0, "zero": 0.0}[init] if init in ("identity", "zero") else float(init)


def regularization(cfg) -> Regularization:
    return Regularization(cfg["regularization.kind"], cfg["regularization.lam"])


def gebm_trajectory(cfg, es: EigenSystem, evaluator: AlignedEvaluator, metrics,
                    c_pop: np.ndarray | None = None, j_true=None) -> Trajectory:
    """Train from ``es`` (data spectrum and basis) and score every recorded step."""
    rate = cfg["training.rate"]
    steps = record_steps(cfg)
    times = steps * rate
    j0 = init_value(cfg)
    reg = regularization(cfg)
    if cfg["training.method"] == "analytic":
        if j0 == 0.0 and reg.kind == "l2":
            raise ValueError("L2 mode dynamics need a positive init")
        modes = mode_trajectories(es, j0, times, reg)
        vals = evaluator.all(modes, metrics)
        return Trajectory(times, modes, vals, steps)
    c_hat = es.assemble()

    def observe(j):
        out = {}
        for name in metrics:
            if name == "e_j":
                out[name] = coupling_error(j, j_true)
            elif name == "e_train":
                out[name] = trace_energy(j, c_hat)
            elif name == "e_test":
                out[name] = trace_energy(j, c_pop)
            elif name == "ll_train":
                out[name] = log_likelihood(j, c_hat)
            elif name == "ll_test":
                out[name] = log_likelihood(j, c_pop)
            elif name == "e_c":
                out[name] = float(np.linalg.norm(c_pop - np.linalg.inv(j)))
            elif name == "w2":
                out[name] = _w2(c_pop, j)
        return out

    return gradient_ascent_train(c_hat, j0 * np.eye(es.n), rate, int(steps[-1]), reg=reg,
                                 record_every=cfg["training.record_every"], observe=observe,
                                 mode_basis=es.basis)


def _w2(c_pop, j):
    c_model = np.linalg.inv(j)
    return gaussian_w2(c_pop, 0.5 * (c_model + c_model.T))


def extrema_row(traj: Trajectory, index_name: str = "time") -> dict:
    row = {}
    for name in sorted(traj.metrics):
        vals = traj.metrics[name]
        row[f"{name}_final"] = float(vals[-1])
        if vals.size >= 3:
            lo = find_optimum(traj, name, "min")
            hi = find_optimum(traj, name, "max")
            row[f"{name}_min"] = lo.value
            row[f"{name}_argmin_{index_name}"] = lo.time
            row[f"{name}_max"] = hi.value
            row[f"{name}_argmax_{index_name}"] = hi.time
    return row


def write_table(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# experiments; each returns (trajectory writer, summary dict)

GEBM_METRICS = ("e_j", "e_train", "e_test", "ll_train", "ll_test")


def _run_gebm_population(cfg, run: RunSpec):
    n = cfg["data.n"]
    prob = make_problem(cfg, n, run.rho, run.seed, sample=False)
    es = EigenSystem(prob.spectrum, prob.basis)
    ev = AlignedEvaluator(prob.basis, prob.c_pop, prob.c_pop)
    traj = gebm_trajectory(cfg, es, ev, ("e_j", "ll_test", "e_c"), prob.c_pop, prob.j_true)
    return traj, extrema_row(traj)


def _run_gebm_finite(cfg, run: RunSpec, metrics):
    n = cfg["data.n"]
    prob = make_problem(cfg, n, run.rho, run.seed)
    es = sym_eig(prob.c_hat)
    ev = AlignedEvaluator(es.basis, prob.c_hat, prob.c_pop, with_w2="w2" in metrics)
    traj = gebm_trajectory(cfg, es, ev, metrics, prob.c_pop, prob.j_true)
    return traj, extrema_row(traj)


def _population_atoms(cfg) -> np.ndarray:
    spec = cfg["data.spectrum"]
    if spec in ("fig1b", "rmt") or spec.startswith("powerlaw:"):
        k = cfg["rmt.population_size"]
        params = {"fig1b": FIG1B, "rmt": RMT_SPECTRUM}.get(spec)
        if params is None:
            params = PowerLawSpectrumParams(*(float(x) for x in spec.split(":", 1)[1].split(",")))
        return power_law_spectrum(params, k, "quantile")
    return load_spectrum_csv(spec)


def _solve(cfg, rho):
    pop = Population.uniform(_population_atoms(cfg))
    grid = default_grid(pop, rho, cfg["rmt.grid_points"])
    return pop, solve_self_consistent(pop, rho, grid=grid, eps=cfg["rmt.eps"])


def _run_rmt_compare(cfg, run: RunSpec):
    # asymptotic time functional starts from J(0) = 0
    steps = record_steps(cfg)
    times = steps * cfg["training.rate"]
    _, sol = _solve(cfg, run.rho)
    asym = np.array([asymptotic_coupling_error(sol, JFunctional("time", t)) for t in times])
    metrics = {"e_j_asymptotic": asym}
    for n in (cfg["data.n_list"] or (cfg["data.n"],)):
        n = int(n)
        prob = make_problem(cfg, n, run.rho, run.seed)
        es = sym_eig(prob.c_hat)
        modes = mode_trajectories(es, 0.0, times)
        e_j = AlignedEvaluator(es.basis, prob.c_hat, prob.c_pop).e_j(modes)
        metrics[f"e_j_n{n}"] = e_j
    traj = Trajectory(times, None, metrics, steps)
    row = extrema_row(traj)
    for key, vals in metrics.items():
        if key != "e_j_asymptotic":
            row[f"{key}_max_rel_dev"] = float(np.max(np.abs(vals / asym - 1.0)))
    return traj, row


def clean_all(methods, prob: Problem, rho: float, cfg, seed) -> dict:
    es = sym_eig(prob.c_hat)
    out = {}
    for m in methods:
        if m == "raw":
            out[m] = CleanedCovariance(es.values, es.basis, "raw")
        elif m == "rie":
            out[m] = rie_clean(prob.c_hat, rho)
        elif m == "oracle":
            out[m] = oracle_clean(prob.spectrum, prob.c_hat)
        elif m == "polyfit":
            out[m] = polyfit_clean(prob.samples, cfg["cleaning.nu"], repeats=cfg["cleaning.repeats"],
                                   sub_sizes=_sub_sizes(cfg, prob), seed=[seed, 2])
    return out


def _sub_sizes(cfg, prob):
    return default_sub_sizes(prob.samples.n, prob.samples.m, cfg["cleaning.sub_count"])


def _run_cleaning_compare(cfg, run: RunSpec):
    n = cfg["data.n"]
    prob = make_problem(cfg, n, run.rho, run.seed)
    cleaned = clean_all(cfg["cleaning.methods"], prob, run.rho, cfg, run.seed)
    metrics, steps = {}, None
    for name, cl in cleaned.items():
        ev = AlignedEvaluator(cl.basis, prob.c_hat, prob.c_pop)
        traj = gebm_trajectory(cfg, cl.eigensystem, ev, ("e_j",), prob.c_pop, prob.j_true)
        metrics[f"e_j_{name}"] = traj.metrics["e_j"]
        times, steps = traj.times, traj.steps
    traj = Trajectory(times, None, metrics, steps)
    return traj, extrema_row(traj)


def lambda_grid(cfg) -> np.ndarray:
    return np.geomspace(cfg["regularization.lam_min"], cfg["regularization.lam_max"],
                        cfg["regularization.lam_count"])


def _run_regularization_scan(cfg, run: RunSpec):
    kind = cfg["regularization.kind"]
    if kind == "none":
        kind = "l2"
    lams = lambda_grid(cfg)
    prob = make_problem(cfg, cfg["data.n"], run.rho, run.seed)
    es = sym_eig(prob.c_hat)
    ev = AlignedEvaluator(es.basis, prob.c_hat, prob.c_pop)
    fp = np.array([Regularization(kind, lam).fixed_point(es.values) for lam in lams])
    _, sol = _solve(cfg, run.rho)
    funcs = [JFunctional.from_lambda(kind, lam) for lam in lams]
    metrics = {
        "e_j": ev.e_j(fp),
        "ll_test": ev.ll_test(fp),
        "e_j_asymptotic": np.array([asymptotic_coupling_error(sol, f) for f in funcs]),
        "ll_test_asymptotic": np.array([asymptotic_log_likelihood(sol, f)[1] for f in funcs]),
    }
    traj = Trajectory(lams, None, metrics)
    row = extrema_row(traj, "lambda")
    row["regularization"] = kind
    return traj, row


def _run_gcv_check(cfg, run: RunSpec):
    lams = (np.array([cfg["regularization.lam"]]) if cfg["regularization.lam"] > 0
            else lambda_grid(cfg))
    prob = make_problem(cfg, cfg["data.n"], run.rho, run.seed)
    es = sym_eig(prob.c_hat)
    ev = AlignedEvaluator(es.basis, prob.c_hat, prob.c_pop)
    fp = 1.0 / (es.values[None, :] + lams[:, None])
    e_train = ev.e_train(fp)
    e_test = ev.e_test(fp)
    gcv = np.array([gcv_test_from_train(e, run.rho) for e in e_train])
    metrics = {"e_train": e_train, "e_test": e_test, "e_test_gcv": gcv,
               "rel_error": np.abs(e_test - gcv) / e_test}
    traj = Trajectory(lams, None, metrics)
    row = extrema_row(traj, "lambda")
    row["rel_error_mean"] = float(np.mean(metrics["rel_error"]))
    return traj, row


def _run_bm(cfg, run: RunSpec):
    model = build_ising_2d(cfg["bm.side"], cfg["bm.beta"])
    n = model.n
    m = int(round(run.rho * n))
    data = metropolis_sample(model, m, burn_in=cfg["bm.burn_in"], thin=cfg["bm.thin"],
                             seed=[run.seed, 1], chains=cfg["bm.chains"])
    c_hat = empirical_covariance(data)
    if cfg["bm.clean"] == "polyfit":
        c_hat = polyfit_clean(data, cfg["cleaning.nu"], repeats=cfg["cleaning.repeats"],
                              sub_sizes=default_sub_sizes(n, m, cfg["cleaning.sub_count"]),
                              seed=[run.seed, 2]).matrix
    if cfg["bm.gradient"] == "mcmc":
        grad = McmcGradient(cfg["bm.mcmc_chains"], cfg["bm.mcmc_sweeps"], seed=[run.seed, 2])
    else:
        grad = "mean_field"
    j0 = np.zeros((n, n))
    if cfg["training.init"] not in ("zero", "identity"):
        raise ValueError("bm_inverse_ising starts from zero couplings; use training.init = zero")
    traj = bm_train(c_hat, j0, cfg["training.rate"], cfg["training.steps"],
                    gradient=grad, record_every=cfg["training.record_every"],
                    observe=lambda j: {"e_j": coupling_error(j, model.couplings)})
    return traj, extrema_row(traj)


RUNNERS = {
    "gebm_population": _run_gebm_population,
    "gebm_finite_m": lambda cfg, run: _run_gebm_finite(cfg, run, GEBM_METRICS),
    "gebm_metrics_sweep": lambda cfg, run: _run_gebm_finite(cfg, run, GEBM_METRICS + ("e_c", "w2")),
    "rmt_compare": _run_rmt_compare,
    "cleaning_compare": _run_cleaning_compare,
    "regularization_scan": _run_regularization_scan,
    "bm_inverse_ising": _run_bm,
    "gcv_check": _run_gcv_check,
}


# ---------------------------------------------------------------------------
# orchestration


def run_dir(cfg, run: RunSpec) -> Path:
    rho = "inf" if np.isinf(run.rho) else f"{run.rho:g}"
    return Path(cfg["experiment.out_dir"]) / run.experiment / f"rho={rho}" / f"rep={run.rep}"


def _write_run(cfg, run: RunSpec) -> Path:
    out = run_dir(cfg, run)
    out.mkdir(parents=True, exist_ok=True)
    partial = {name: out / f"{name}.partial" for name in ("trajectory.csv", "summary.csv",
                                                          "manifest.txt")}
    for name in partial:
        (out / name).unlink(missing_ok=True)
    start = time.perf_counter()
    manifest = [f"# {run.label}", f"run.seed = {run.seed}", f"run.rho = {run.rho!r}",
                f"run.rep = {run.rep}"] + cfg.manifest_lines()
    partial["manifest.txt"].write_text("\n".join(manifest) + "\nstatus = running\n")
    try:
        traj, row = RUNNERS[run.experiment](cfg, run)
    except Exception as exc:
        partial["manifest.txt"].write_text("\n".join(manifest)
                                           + f"\nstatus = failed\nerror = {exc}\n")
        raise RunError(f"{run.label}: {type(exc).__name__}: {exc}") from exc
    index = "lambda" if run.experiment in ("regularization_scan", "gcv_check") else "time"
    traj.write_csv(partial["trajectory.csv"], index_name=index)
    keys = {"experiment": run.experiment, "rho": run.rho, "rep": run.rep, "seed": run.seed}
    cols = list(SUMMARY_KEYS) + sorted(row)
    write_table(partial["summary.csv"], cols, [[keys.get(c, row.get(c)) for c in cols]])
    elapsed = time.perf_counter() - start
    manifest += [f"version.package = {__version__}", f"version.numpy = {np.__version__}",
                 f"version.python = {platform.python_version()}",
                 f"wall_clock_seconds = {elapsed:.3f}", "status = ok"]
    partial["manifest.txt"].write_text("\n".join(manifest) + "\n")
    for name, p in partial.items():
        p.replace(out / name)
    return out


def _worker(args):
    cfg, run = args
    return _write_run(cfg, run)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """Execute every ``(rho, replicate)`` run; returns the run directories.

    Raises :class:`RunError` naming the failing run after all others finish.
    """
    runs = plan_runs(cfg)
    results, errors = [], []
    if jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_worker, (cfg, r)) for r in runs]
            for f in futures:
                try:
                    results.append(f.result())
                except RunError as exc:
                    errors.append(exc)
    else:
        for r in runs:
            try:
                results.append(_write_run(cfg, r))
            except RunError as exc:
                errors.append(exc)
    if errors:
        msg = "; ".join(str(e) for e in errors)
        raise RunError(f"{len(errors)} of {len(runs)} runs failed: {msg}")
    return results


def emit_summary(paths, out_path) -> int:
    """Concatenate per-run ``summary.csv`` files into one table; returns the row count."""
    header, rows = None, []
    for p in sorted(Path(x) for x in paths):
        with p.open(newline="") as fh:
            table = list(csv.reader(fh))
        if not table:
            raise ValueError(f"{p}: empty summary file")
        if header is None:
            header = table[0]
        elif table[0] != header:
            raise ValueError(f"schema mismatch: {p} has columns {table[0]}, expected {header}")
        rows.extend(table[1:])
    header = header or list(SUMMARY_KEYS)
    with Path(out_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return len(rows)


def versions() -> str:
    return f"python {sys.version.split()[0]}, numpy {np.__version__}"
