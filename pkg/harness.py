"""Command line, experiment configuration, rate sweeps and result files."""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from csv_io import config_hash, read_csv, write_csv
from diagnostics import error_report, rate_slope, write_report_csv
from errors import ConfigError, FmtlError, NumericalError
from estimators import LossKind, TaskDataset, fit_graph, fit_pooled, fit_reduced, loss_value_grad
from fixed_rank_manifold import project_tangent, random_point, random_tangent, second_fundamental_form
from graph import (
    DEFAULT_BANDWIDTH_SCALE,
    AuxiliarySample,
    build_laplacian,
    load_weights_csv,
    sample_manifold,
    spectral_growth,
    write_eigs_csv,
)
from penalties import (
    PenaltySpec,
    PenaltyTerm,
    graph_penalty_spec,
    penalty_matrix,
    penalty_value,
    pooled_covariance,
    roughness_penalty_spec,
)
from processes import kernel_from_dict, make_kernel
from simdiag import diagonalize, gamma_growth_check, write_diag_csv
from simgen import PRESETS, GroundTruth, Scenario, generate, make_scenario
from spline_basis import evaluate, integrate_covariate, make_basis, rescale_to_unit

try:
    from joblib import Parallel, delayed

    JOBLIB_AVAILABLE = True
except ImportError:
    JOBLIB_AVAILABLE = False

logger = logging.getLogger(__name__)

TUNING_RULES = (
    "reduced_i",
    "reduced_ii",
    "reduced_iii",
    "reduced_iv",
    "graph_i",
    "graph_ii",
    "graph_iii",
    "graph_iv",
    "graph_v",
    "graph_vi",
)
MODELS = ("pooled", "reduced", "graph")

DEFAULT_CONSTS = {"q": 1, "d": 2, "nu": 2, "mu": 2, "order": 4}
DEFAULT_MULTIPLIERS = {"k": 1.0, "eta1": 1.0, "eta2": 1.0}
# K for rows that only bound it from below
DEFAULT_K_FLOOR = 20

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


# tuning rules


def rate_exponents(consts):
    """tau, iota, kappa, r1, r2 for the given smoothness constants."""
    q, d, nu, mu, order = (consts[k] for k in ("q", "d", "nu", "mu", "order"))
    tau = min(nu, order) + min(q, order) / 2.0
    iota = q + d
    return {
        "tau": tau,
        "iota": iota,
        "kappa": tau + d - nu,
        "r1": tau / (tau * (2 + mu) + 1),
        "r2": iota / (iota * (2 + mu) + 1),
    }


def _rule_orders(name, n_obs, n_tasks, rank, consts):
    """(K value, K is a lower bound, eta1, eta2) with unit constants."""
    e = rate_exponents(consts)
    tau, iota, kappa, r1, r2 = e["tau"], e["iota"], e["kappa"], e["r1"], e["r2"]
    mu = consts["mu"]
    hi, lo = max(iota, tau), min(iota, tau)

    if name.startswith("reduced"):
        s = n_tasks * n_obs / rank
        if name == "reduced_i":
            return s ** (1 / (2 * tau + 1)), False, s ** (-2 * hi / (2 * tau + 1)), 0.0
        if name == "reduced_ii":
            return s ** (iota / ((2 * iota + 1) * lo)), True, s ** (-2 * iota / (2 * iota + 1)), 0.0
        if name == "reduced_iii":
            return s ** (1 / (2 * tau + 1)), False, s ** (-2 * iota / (2 * tau + 1)), 0.0
        denom = kappa + 2 * iota * tau
        return s ** (iota / denom), False, s ** (-2 * iota * kappa / denom), 0.0

    n, mn = float(n_obs), float(n_tasks * n_obs)
    weak = n_tasks ** (-2.0 / mu)
    if name == "graph_i":
        eta2 = min(weak, n ** (-2 * tau / (2 * tau + 1)))
        return n ** (1 / (2 * tau + 1)), False, n ** (-2 * hi / (2 * tau + 1)), eta2
    if name == "graph_ii":
        eta2 = min(weak, n ** (-2 * iota / (2 * iota + 1)))
        return n ** (iota / ((2 * iota + 1) * hi)), True, n ** (-2 * iota / (2 * iota + 1)), eta2
    if name in ("graph_iii", "graph_iv"):
        eta2 = mn ** (-2 * r1) if name == "graph_iii" else weak
        return mn ** (r1 / tau), False, mn ** (-2 * hi * r1 / tau), eta2
    eta2 = mn ** (-2 * r2) if name == "graph_v" else weak
    return mn ** (r2 / lo), True, mn ** (-2 * r2), eta2


def tuning_rule(name, n_obs, n_tasks=1, rank=1, consts=None, multipliers=None, k_floor=DEFAULT_K_FLOOR,
                k_cap=None):
    """(K, eta1, eta2) prescribed by a named rate-table row.

    Proportionality constants are the ``multipliers`` (all 1 by default).
    Rows that only bound K from below use ``k_floor`` as well.
    """
    if name not in TUNING_RULES:
        raise ConfigError(f"unknown tuning rule {name!r}; expected one of {TUNING_RULES}")
    consts = {**DEFAULT_CONSTS, **(consts or {})}
    mult = {**DEFAULT_MULTIPLIERS, **(multipliers or {})}
    if name in ("reduced_iii", "reduced_iv") and consts["d"] <= consts["nu"]:
        logger.warning("Rule %s is meant for d > nu (got d=%d, nu=%d)", name, consts["d"], consts["nu"])

    k_value, lower_bound, eta1, eta2 = _rule_orders(name, n_obs, n_tasks, rank, consts)
    k = int(round(mult["k"] * k_value))
    if lower_bound:
        k = max(k, k_floor)
    k = max(k, consts["order"])
    if k_cap is not None:
        k = min(k, k_cap)
    return k, mult["eta1"] * eta1, mult["eta2"] * eta2


# configuration


@dataclass(eq=False)
class ExperimentConfig:
    scenario: Scenario
    n_grid: list
    m_grid: list | None = None
    reps: int = 10
    tuning_rule: str = "reduced_ii"
    model: str = "pooled"
    rank: int | None = None
    consts: dict = field(default_factory=lambda: dict(DEFAULT_CONSTS))
    multipliers: dict = field(default_factory=lambda: dict(DEFAULT_MULTIPLIERS))
    k_floor: int = DEFAULT_K_FLOOR
    k_cap: int | None = None
    h_scale: float = DEFAULT_BANDWIDTH_SCALE
    outputs: str | None = None
    master_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        for name, grid in (("n_grid", self.n_grid), ("m_grid", self.m_grid)):
            if grid is not None and (not grid or any(b <= a for a, b in zip(grid, grid[1:]))):
                raise ConfigError(f"{name} must be a non-empty increasing list, got {grid}")
        if self.tuning_rule not in TUNING_RULES:
            raise ConfigError(f"unknown tuning rule {self.tuning_rule!r}; expected one of {TUNING_RULES}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.model == "reduced" and self.rank is None:
            raise ConfigError("the reduced model needs a rank")
        if self.model == "graph" and self.scenario.preset != "graph_sphere":
            raise ConfigError("the graph model needs a scenario with auxiliary covariates (graph_sphere)")
        unknown = (set(self.consts) - set(DEFAULT_CONSTS)) | (set(self.multipliers) - set(DEFAULT_MULTIPLIERS))
        if unknown:
            raise ConfigError(f"unknown constants: {sorted(unknown)}")
        self.consts = {**DEFAULT_CONSTS, **self.consts}
        self.multipliers = {**DEFAULT_MULTIPLIERS, **self.multipliers}
        self.grid_points()

    def grid_points(self):
        """(N, M) pairs of the sweep and the value the rate is fitted against."""
        if self.m_grid is None:
            return [(n, self.scenario.n_tasks, n) for n in self.n_grid]
        if len(self.n_grid) == 1:
            return [(self.n_grid[0], m, m) for m in self.m_grid]
        if len(self.n_grid) == len(self.m_grid):
            return [(n, m, n * m) for n, m in zip(self.n_grid, self.m_grid)]
        raise ConfigError("m_grid must have one entry per n_grid value, or n_grid a single value")

    def to_dict(self):
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        payload["scenario"] = self.scenario.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" not in payload or "n_grid" not in payload:
            raise ConfigError("config needs 'scenario' and 'n_grid'")
        scenario = payload["scenario"]
        if isinstance(scenario, dict):
            scenario = dict(scenario)
            preset = scenario.pop("preset", None)
            if preset is None:
                raise ConfigError("scenario needs a 'preset'")
            payload["scenario"] = make_scenario(preset, **scenario)
        return cls(**payload)

    @property
    def hash(self):
        return config_hash(self.to_dict())


def load_config(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(payload)


def save_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return path


# experiments


def fit_model(model, data, system, eta1, eta2=0.0, rank=None, aux=None, h_scale=DEFAULT_BANDWIDTH_SCALE,
              lap=None):
    """Fit one model and return (FitResult, penalty spec, Laplacian or None)."""
    if model == "pooled":
        return fit_pooled(data, system, eta1), roughness_penalty_spec(system, eta1, data.n_tasks), None
    if model == "reduced":
        if rank is None:
            raise ConfigError("the reduced model needs a rank (--rank)")
        method = "als" if data.loss.kind == "squared" else "riemannian"
        fit = fit_reduced(data, system, eta1, rank, method=method)
        return fit, roughness_penalty_spec(system, eta1, data.n_tasks), None
    if lap is None:
        if aux is None:
            raise ConfigError("graph fits need auxiliary covariates or a weight matrix")
        lap = build_laplacian(aux, scale=h_scale)
    fit = fit_graph(data, system, lap, eta1, eta2)
    spec = graph_penalty_spec(system, lap, pooled_covariance(data), eta1, eta2)
    return fit, spec, lap


def replication_seed(master_seed, grid_index, rep):
    seq = np.random.SeedSequence([master_seed, grid_index, rep])
    return int(seq.generate_state(1)[0])


def run_replication(config, grid_index, rep):
    n_obs, n_tasks, axis = config.grid_points()[grid_index]
    seed = replication_seed(config.master_seed, grid_index, rep)
    fit_rank = config.rank if config.model == "reduced" else 1
    k, eta1, eta2 = tuning_rule(
        config.tuning_rule, n_obs, n_tasks, fit_rank, config.consts, config.multipliers,
        config.k_floor, config.k_cap,
    )
    if config.model != "graph":
        eta2 = 0.0
    try:
        scenario = config.scenario.replace(n_obs=n_obs, n_tasks=n_tasks, seed=seed)
        system = diagonalize(make_basis(k, order=config.consts["order"]), scenario.kernel, config.consts["d"])
        data, truth = generate(scenario, system)
        fit, spec, _ = fit_model(
            config.model, data, system, eta1, eta2, config.rank, truth.aux, config.h_scale
        )
        report = error_report(system, spec, fit.b, truth)
    except FmtlError as exc:
        raise type(exc)(f"replication {rep} at grid point {grid_index} (N={n_obs}, M={n_tasks}): {exc}") from exc

    row = {
        "grid_index": grid_index,
        "rep": rep,
        "n_obs": n_obs,
        "n_tasks": n_tasks,
        "axis": axis,
        "K": k,
        "eta1": eta1,
        "eta2": eta2,
        "seed": seed,
        "objective": fit.objective,
        "converged": fit.converged,
    }
    row.update(report.to_row())
    return row


def run_rate_sweep(config):
    """Run every replication of the sweep; returns (summary frame, slope, stderr, replication frame)."""
    jobs = [(gi, rep) for gi in range(len(config.grid_points())) for rep in range(config.reps)]
    logger.info("Running %d replications over %d grid points", len(jobs), len(config.grid_points()))
    if config.threads != 1 and not JOBLIB_AVAILABLE:
        logger.warning("joblib is not installed; running replications serially")
    if config.threads != 1 and JOBLIB_AVAILABLE:
        rows = Parallel(n_jobs=config.threads)(delayed(run_replication)(config, gi, rep) for gi, rep in jobs)
    else:
        rows = [run_replication(config, gi, rep) for gi, rep in jobs]

    reps = pd.DataFrame(rows).sort_values(["grid_index", "rep"]).reset_index(drop=True)
    summary = (
        reps.groupby(["grid_index", "n_obs", "n_tasks", "axis", "K", "eta1", "eta2"])["combined"]
        .agg(median="median", mean="mean", sd="std", reps="count")
        .reset_index()
    )
    if len(summary) >= 4:
        slope, stderr = rate_slope(summary["axis"], summary["median"])
    else:
        logger.warning("Fewer than four grid points; no rate slope fitted")
        slope, stderr = float("nan"), float("nan")

    if config.outputs:
        meta = {
            "config_hash": config.hash,
            "master_seed": config.master_seed,
            "tuning_rule": config.tuning_rule,
            "slope": f"{slope:.6f}",
            "slope_stderr": f"{stderr:.6f}",
        }
        out = Path(config.outputs)
        write_csv(summary, out / "rates.csv", meta)
        write_csv(reps, out / "replications.csv", meta)
        save_config(config, out / "config.json")
    logger.info("Successfully finished sweep: slope %.4f (stderr %.4f)", slope, stderr)
    return summary, slope, stderr, reps


# dataset bundles


def write_bundle(data, directory, system_info, truth=None, metadata=None):
    """One design CSV per task, a response CSV and a manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = dict(metadata or {})
    columns = [f"b{k + 1}" for k in range(data.dof)]
    files = []
    for m in range(data.n_tasks):
        name = f"x_{m:04d}.csv"
        write_csv(pd.DataFrame(data.x[m], columns=columns), directory / name, meta)
        files.append(name)
    write_csv(pd.DataFrame(data.y.T, columns=[f"task{m}" for m in range(data.n_tasks)]), directory / "y.csv", meta)

    manifest = {
        "n_tasks": data.n_tasks,
        "n_obs": data.n_obs,
        "dof": data.dof,
        "loss": data.loss.to_dict(),
        "intercept_mode": data.intercept_mode,
        "x_files": files,
        "y_file": "y.csv",
        "system": system_info,
        **meta,
    }
    if truth is not None:
        write_csv(pd.DataFrame(truth.beta.T), directory / "beta.csv", meta)
        np.savetxt(directory / "beta_grid.csv", truth.grid, delimiter=",")
        manifest["truth"] = {"beta": "beta.csv", "grid": "beta_grid.csv"}
        if truth.aux is not None:
            aux_frame = pd.DataFrame(truth.aux.points)
            write_csv(aux_frame, directory / "aux.csv", {**meta, "manifold": truth.aux.manifold,
                                                          "mu": truth.aux.intrinsic_dim})
            manifest["aux"] = "aux.csv"
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("Successfully wrote dataset bundle with %d tasks to %s", data.n_tasks, directory)
    return directory


def read_bundle(directory):
    """Inverse of ``write_bundle``: (TaskDataset, manifest dict, truth grid/values or None, aux or None)."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{directory}: invalid manifest ({exc})") from exc
    x = np.stack([read_csv(directory / name)[0].to_numpy(dtype=float) for name in manifest["x_files"]])
    y = read_csv(directory / manifest["y_file"])[0].to_numpy(dtype=float).T
    data = TaskDataset(
        x=x, y=y, intercept_mode=manifest["intercept_mode"], loss=LossKind(**manifest["loss"])
    )
    truth = None
    if "truth" in manifest:
        beta = read_csv(directory / manifest["truth"]["beta"])[0].to_numpy(dtype=float).T
        grid = np.loadtxt(directory / manifest["truth"]["grid"], delimiter=",")
        truth = (grid, beta)
    aux = None
    if "aux" in manifest:
        frame, meta = read_csv(directory / manifest["aux"])
        aux = AuxiliarySample(points=frame.to_numpy(dtype=float), manifold=meta["manifold"],
                              intrinsic_dim=int(meta["mu"]))
    return data, manifest, truth, aux


def load_curves_csv(path, basis, lo=None, hi=None, loss=None, intercept_mode="none"):
    """Curves in long-wide CSV form: columns ``task``, ``y`` and one column per observation point.

    Observation points (the numeric column headers) on [lo, hi] are mapped
    onto [0, 1]; every task must have the same number of curves.
    """
    frame = pd.read_csv(path, comment="#")
    if not {"task", "y"} <= set(frame.columns):
        raise ConfigError(f"{path}: needs 'task' and 'y' columns")
    point_cols = [c for c in frame.columns if c not in ("task", "y")]
    try:
        points = np.array([float(c) for c in point_cols])
    except ValueError as exc:
        raise ConfigError(f"{path}: observation columns must be numeric positions") from exc
    order = np.argsort(points)
    points, point_cols = points[order], [point_cols[i] for i in order]
    lo = points.min() if lo is None else lo
    hi = points.max() if hi is None else hi
    grid = rescale_to_unit(points, lo, hi)

    x, y = [], []
    for _, group in frame.groupby("task", sort=True):
        x.append(integrate_covariate(basis, group[point_cols].to_numpy(dtype=float), grid))
        y.append(group["y"].to_numpy(dtype=float))
    if len({len(v) for v in y}) != 1:
        raise ConfigError(f"{path}: tasks have unequal numbers of curves")
    logger.info("Loaded %d tasks of %d curves from %s", len(y), len(y[0]), path)
    return TaskDataset(x=x, y=y, intercept_mode=intercept_mode, loss=loss or LossKind())


# self test


def selftest(seed=0):
    """Fast invariant checks; returns a frame with one row per check."""
    rng = np.random.default_rng(seed)
    rows = []

    def record(name, value, tol):
        rows.append({"check": name, "value": float(value), "tol": tol, "passed": bool(value <= tol)})

    basis = make_basis(12)
    record("partition_of_unity", np.max(np.abs(evaluate(basis, np.linspace(0, 1, 101)).sum(axis=1) - 1)), 1e-12)

    k, m = 5, 4
    def psd(n):
        a = rng.standard_normal((n, n))
        return a @ a.T
    spec = PenaltySpec(terms=(PenaltyTerm(0.7, psd(k), psd(m)), PenaltyTerm(0.3, psd(k), psd(m))))
    b = rng.standard_normal((k, m))
    vec = b.ravel(order="F")
    value = penalty_value(spec, b)
    record("kronecker_identity", abs(vec @ penalty_matrix(spec) @ vec - value) / value, 1e-10)

    aux = sample_manifold("sphere", 60, seed, mu=2)
    lap = build_laplacian(aux)
    record("laplacian_row_sums", np.max(np.abs(lap.omega.sum(axis=1))), 1e-10)

    point = random_point((6, 5), 2, rng)
    x = rng.standard_normal((6, 5))
    once = project_tangent(point, x).dense()
    record("tangent_idempotence", np.max(np.abs(project_tangent(point, once).dense() - once)), 1e-10)
    delta = random_tangent(point, rng)
    second = second_fundamental_form(point, delta, delta)
    record("second_form_normality", np.max(np.abs(project_tangent(point, second).dense())), 1e-10)

    worst = 0.0
    for kind in ("squared", "logistic", "quantile"):
        loss = LossKind(kind=kind, smooth_eps=0.5 if kind == "quantile" else None)
        y = rng.integers(0, 2, 20).astype(float) if kind == "logistic" else rng.standard_normal(20)
        u = rng.standard_normal(20)
        grad = loss_value_grad(loss, y, u)[1]
        step = 1e-6
        numeric = np.array([
            (loss_value_grad(loss, y, u + step * e)[0] - loss_value_grad(loss, y, u - step * e)[0]) / (2 * step)
            for e in np.eye(20)
        ])
        worst = max(worst, np.max(np.abs(numeric - grad)) / max(np.max(np.abs(grad)), 1e-12))
    record("loss_gradients", worst, 1e-6)

    system = diagonalize(make_basis(12), make_kernel("brownian"), 2)
    record("diagonal_covariance", system.pattern_deviation(), 1e-6)
    return pd.DataFrame(rows)


# command line


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)


def _kernel_arg(text):
    """``brownian`` or a JSON object such as ``{"kind": "ornstein_uhlenbeck", "c2": 2}``."""
    if text.lstrip().startswith("{"):
        return kernel_from_dict(json.loads(text))
    return make_kernel(text)


def _system_info(args):
    return {"dof": args.k, "order": args.order, "d": args.d, "kernel": args.kernel.to_dict()}


def _cmd_gen(args):
    overrides = {"seed": args.seed, "kernel": args.kernel}
    for key in ("n_obs", "n_tasks", "noise_sd"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.loss:
        overrides["loss"] = LossKind(kind=args.loss, w=args.w)
    scenario = make_scenario(args.preset, **overrides)
    system = diagonalize(make_basis(args.k, order=args.order), scenario.kernel, args.d)
    data, truth = generate(scenario, system)
    meta = {"config_hash": config_hash(scenario.to_dict()), "seed": args.seed}
    write_bundle(data, args.out, _system_info(args), truth, {**meta, "scenario": scenario.to_dict()})
    print(f"wrote {data.n_tasks} tasks x {data.n_obs} curves to {args.out}")
    return EXIT_OK


def _cmd_fit(args):
    data, manifest, truth_arrays, aux = read_bundle(args.data)
    info = manifest["system"]
    system = diagonalize(make_basis(info["dof"], order=info["order"]), kernel_from_dict(info["kernel"]), info["d"])
    lap = load_weights_csv(args.weights) if args.weights else None
    fit, spec, _ = fit_model(args.model, data, system, args.eta1, args.eta2, args.rank, aux, args.h_scale, lap)

    out = Path(args.out)
    meta = {"config_hash": manifest.get("config_hash", ""), "seed": manifest.get("seed", ""), "model": args.model}
    coef = pd.DataFrame(fit.b, columns=[f"task{m}" for m in range(data.n_tasks)])
    write_csv(coef, out / "coefficients.csv", {**meta, "objective": repr(fit.objective)})
    write_csv(pd.DataFrame({"objective": fit.objective_trace}), out / "trace.csv", meta)
    print(f"objective {fit.objective!r} after {fit.iterations} iterations (converged={fit.converged})")
    if truth_arrays is not None:
        grid, beta = truth_arrays
        report = error_report(system, spec, fit.b, GroundTruth(grid=grid, beta=beta, b0=None))
        write_report_csv([report], out / "report.csv", meta)
        print(f"combined error {report.combined:.6e}")
    return EXIT_OK


def _cmd_rates(args):
    config = load_config(args.config)
    if args.out:
        config.outputs = args.out
    if args.seed is not None:
        config.master_seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    summary, slope, stderr, _ = run_rate_sweep(config)
    print(summary.to_string(index=False))
    print(f"slope {slope:.4f} +/- {stderr:.4f}")
    return EXIT_OK


def _cmd_graph_eig(args):
    sample = sample_manifold(args.manifold, args.m, args.seed, mu=args.mu)
    lap = build_laplacian(sample, kernel_g=args.kernel_g, scale=args.h_scale)
    eigs, slope = spectral_growth(lap, args.m_lo, min(args.m_hi, args.m))
    meta = {
        "manifold": args.manifold,
        "mu": args.mu,
        "M": args.m,
        "h": f"{lap.bandwidth:.6f}",
        "seed": args.seed,
        "slope": f"{slope:.6f}",
        "expected_slope": f"{2.0 / args.mu:.6f}",
    }
    if args.out:
        write_eigs_csv(eigs, args.out, meta)
    print(f"mu={args.mu} M={args.m}: fitted slope {slope:.4f} (expected {2.0 / args.mu:.4f})")
    return EXIT_OK


def _cmd_diag(args):
    system = diagonalize(make_basis(args.k, order=args.order), args.kernel, args.d)
    print(f"K={system.dof} pbar={system.pbar} pattern deviation {system.pattern_deviation():.2e} "
          f"cond(Q) {system.condition:.3e}")
    if system.dof >= 2 * args.d + 8:
        print(f"gamma growth slope {gamma_growth_check(system):.4f}")
    if args.out:
        write_diag_csv(system, args.out)
    return EXIT_OK


def _cmd_selftest(args):
    table = selftest(args.seed)
    print(table.to_string(index=False))
    return EXIT_OK if table["passed"].all() else EXIT_NUMERICAL


def build_parser():
    parser = argparse.ArgumentParser(prog="fmtl", description="Multi-task functional linear regression toolkit.")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("--verbose", action="store_true", help="debug logging")
    noise.add_argument("--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    def spline_args(p):
        p.add_argument("--k", type=int, default=20, help="spline degrees of freedom")
        p.add_argument("--order", type=int, default=4)
        p.add_argument("--d", type=int, default=2, help="penalized derivative order")
        p.add_argument("--kernel", type=_kernel_arg, default="brownian")

    p = sub.add_parser("gen", help="emit a synthetic dataset bundle")
    p.add_argument("--preset", default="single_task_smooth", help=f"one of {PRESETS}, e.g. reduced_rank(2)")
    p.add_argument("--n", dest="n_obs", type=int)
    p.add_argument("--m", dest="n_tasks", type=int)
    p.add_argument("--noise", dest="noise_sd", type=float)
    p.add_argument("--loss", choices=("squared", "logistic", "quantile"))
    p.add_argument("--w", type=float, default=0.5, help="quantile level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    spline_args(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("fit", help="fit one model to a dataset bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=MODELS, default="pooled")
    p.add_argument("--rank", type=int)
    p.add_argument("--eta1", type=float, default=1e-4)
    p.add_argument("--eta2", type=float, default=0.0)
    p.add_argument("--weights", help="CSV weight matrix for a fixed graph")
    p.add_argument("--h-scale", dest="h_scale", type=float, default=DEFAULT_BANDWIDTH_SCALE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("rates", help="run a rate sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("graph-eig", help="Laplacian eigenvalue growth on a sampled manifold")
    p.add_argument("--mu", type=int, default=2)
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--manifold", default="sphere")
    p.add_argument("--kernel-g", dest="kernel_g", default="exp_trunc")
    p.add_argument("--h-scale", dest="h_scale", type=float, default=DEFAULT_BANDWIDTH_SCALE)
    p.add_argument("--m-lo", dest="m_lo", type=int, default=5)
    p.add_argument("--m-hi", dest="m_hi", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_graph_eig)

    p = sub.add_parser("diag", help="simultaneous diagonalization report")
    spline_args(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_diag)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_selftest)
    return parser


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    _configure_logging(args)
    try:
        return args.func(args)
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(cli_main())
