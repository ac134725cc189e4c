"""Experiment execution: runs, sweeps, scaling studies, and report data.

Builds problems and optimizer runs from an ExperimentConfig, executes
(condition, seed) cells (optionally in a process pool), writes one
trajectory CSV per cell plus a merged summary CSV, and turns summaries
back into quantile-band plot data. All files are written atomically
(temp + rename) and floats are formatted with their shortest round-trip
representation, so re-running a config reproduces byte-identical output.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, resolve_axis
from .errors import ConfigError, NonFiniteError, SingularMatrixError
from .estimation import beta_schedule, burn_in_length
from .optimizer import (
    STEP_LARGE,
    STEP_NORMAL,
    EstimatedPreconditioner,
    HyperParams,
    IdealizedPreconditioner,
    first_order_params,
    run_large_step_variant,
    run_preconditioned_sgd,
    run_rmsprop,
    run_rmsprop_with_burnin,
    second_order_params,
)
from .precond import PreconditionerConstants, PreconditionerKind
from .problems import (
    ProblemSmoothness,
    load_dataset_csv,
    make_counterexample,
    make_logistic_regression,
    make_quadratic_gaussian,
    make_saddle_problem,
    make_synthetic_logistic,
)

# The paper-scale escape level (-0.1) is below the saddle problem's global
# minimum (~ -0.01265), so escape is declared at -0.01 instead.
DEFAULT_ESCAPE_LEVEL = -0.01

SUMMARY_COLUMNS = (
    "run_id",
    "seed",
    "final_f",
    "min_f",
    "iters_to_threshold",
    "escape_time",
    "mean_last_1000_f",
    "sup_est_error",
    "trajectory",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _atomic_write(path, write_fn) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def make_rng(seed: int):
    """The per-run RNG: a counter-based Philox stream keyed by the seed."""
    return np.random.Generator(np.random.Philox(seed))


def build_problem(pcfg: dict):
    name = pcfg["name"]
    if name == "saddle":
        return make_saddle_problem()
    if name == "counterexample":
        return make_counterexample(pcfg["c"], pcfg["zeta"])
    if name == "quadratic_gaussian":
        dim = pcfg["dim"]
        h_diag, noise_diag = pcfg["h_diag"], pcfg["noise_diag"]
        if len(h_diag) != dim or len(noise_diag) != dim:
            raise ConfigError("problem.h_diag/noise_diag must have length problem.dim")
        return make_quadratic_gaussian(dim, np.diag(h_diag), np.diag(noise_diag))
    if name == "logistic_synthetic":
        return make_synthetic_logistic(
            pcfg["n"],
            pcfg["d"],
            seed=pcfg["data_seed"],
            label_noise=pcfg.get("label_noise", 0.05),
            batch=pcfg.get("batch", min(100, pcfg["n"])),
        )
    if name == "logistic_csv":
        X, y = load_dataset_csv(pcfg["path"])
        return make_logistic_regression(X, y, pcfg.get("batch", X.shape[0]))
    raise ConfigError(f"problem.name: unknown problem {name!r}")


@dataclass
class ResolvedRun:
    """Everything needed to execute one run of a condition."""

    algorithm: str
    kind: PreconditionerKind
    source: str
    hp: HyperParams
    T: int
    beta_c: float | None
    eta_schedule: object
    x0: np.ndarray
    log_every: int
    track_est_error: bool
    lambda_min_every: int


def resolve_run(cfg: ExperimentConfig, problem) -> ResolvedRun:
    ocfg, rcfg = cfg.optimizer, cfg.run
    algo = ocfg["algorithm"]
    variant = "identity" if algo == "sgd" else ocfg.get("kind", "full_matrix")
    kind = PreconditionerKind(
        variant=variant,
        epsilon=ocfg.get("epsilon", 0.0),
        exponent=ocfg.get("exponent", -0.5),
    )
    source = "idealized" if algo in ("sgd", "preconditioned_sgd") else "estimated"
    if algo in ("preconditioned_sgd", "large_step"):
        source = ocfg.get("source", source)

    beta, beta_c = None, None
    if "beta_spec" in ocfg:
        mode, value = ocfg["beta_spec"]
        if mode == "fixed":
            beta = value
        else:
            beta_c = value
    elif source == "estimated" and kind.variant != "identity":
        raise ConfigError("optimizer.beta_spec: required for estimated preconditioning")

    eta = ocfg.get("eta")
    T = rcfg["t"]
    r = ocfg.get("r")
    t_thresh = ocfg.get("t_thresh")
    W = ocfg.get("w")
    S = ocfg.get("s")

    auto = ocfg.get("auto")
    if auto in ("first_order_exact", "first_order_inexact"):
        for key in ("l", "c3", "lambda_minus", "delta_f", "tau"):
            if key not in ocfg:
                raise ConfigError(f"optimizer.{key}: required for auto={auto}")
        eta, T = first_order_params(
            ocfg["l"], ocfg["c3"], ocfg["lambda_minus"], ocfg["delta_f"], ocfg["tau"],
            exact=auto == "first_order_exact",
        )
    elif auto == "second_order":
        for key in ("l", "rho", "c3", "c4", "lambda_minus", "tau", "delta"):
            if key not in ocfg:
                raise ConfigError(f"optimizer.{key}: required for auto=second_order")
        consts = PreconditionerConstants(
            nu1=ocfg.get("nu1", 1.0),
            nu2=ocfg.get("nu2", 1.0),
            c3=ocfg["c3"],
            c4=ocfg["c4"],
            lambda_minus=ocfg["lambda_minus"],
            M_bound=ocfg.get("m_bound", math.sqrt(ocfg["c3"])),
        )
        hp_auto = second_order_params(
            consts,
            ProblemSmoothness(L=ocfg["l"], rho=ocfg["rho"]),
            tau=ocfg["tau"],
            delta_prob=ocfg["delta"],
            omega=ocfg.get("omega", 5.0),
            k_const=ocfg.get("k_const", 0.125),
            c_w=rcfg.get("burn_in_c", 1.0),
            beta_c=beta_c if beta_c is not None else 1.0,
            epsilon=kind.epsilon,
        )
        eta, r, t_thresh, W, S, beta, beta_c = (
            hp_auto.eta, hp_auto.r, hp_auto.t_thresh, hp_auto.W, hp_auto.S, hp_auto.beta, None,
        )
    if eta is None:
        raise ConfigError("optimizer.eta: required (or supply optimizer.auto)")

    if algo == "rmsprop_burnin" and W is None:
        W = burn_in_length(eta, rcfg.get("burn_in_c", 1.0))
    if algo == "large_step":
        if r is None or t_thresh is None:
            raise ConfigError("optimizer.r and optimizer.t_thresh: required for large_step")
        if source == "estimated" and S is None:
            S = max(1, math.ceil(r / eta))
        if W is None:
            W = burn_in_length(eta, rcfg.get("burn_in_c", 1.0)) if source == "estimated" else 0

    hp = HyperParams(
        eta=eta,
        beta=beta,
        epsilon=kind.epsilon,
        r=r,
        t_thresh=t_thresh,
        W=W or 0,
        S=S,
        tau=ocfg.get("tau"),
        delta_prob=ocfg.get("delta"),
        omega=ocfg.get("omega", 5.0),
        K_const=ocfg.get("k_const", 0.125),
    )

    eta_schedule = None
    if ocfg.get("eta_decay", "none") == "inv_sqrt":
        eta_schedule = lambda t: eta / math.sqrt(t + 1.0)  # noqa: E731

    x0_cfg = cfg.problem.get("x0")
    if x0_cfg is not None and len(x0_cfg) != problem.dim:
        raise ConfigError("problem.x0: length must equal the problem dimension")
    x0 = np.asarray(x0_cfg, dtype=np.float64) if x0_cfg is not None else np.zeros(problem.dim)

    return ResolvedRun(
        algorithm=algo,
        kind=kind,
        source=source,
        hp=hp,
        T=T,
        beta_c=beta_c,
        eta_schedule=eta_schedule,
        x0=x0,
        log_every=rcfg.get("log_every", 1),
        track_est_error=rcfg.get("track_est_error", False),
        lambda_min_every=rcfg.get("lambda_min_every", 0),
    )


def execute_records(cfg: ExperimentConfig, seed: int):
    """Run one (condition, seed) cell and return its trajectory records."""
    problem = build_problem(cfg.problem)
    run = resolve_run(cfg, problem)
    rng = make_rng(seed)
    opts = dict(
        x0=run.x0,
        log_every=run.log_every,
        track_est_error=run.track_est_error,
        lambda_min_every=run.lambda_min_every,
        beta_c=run.beta_c,
        eta_schedule=run.eta_schedule,
    )
    if run.algorithm in ("sgd", "preconditioned_sgd"):
        src = (
            IdealizedPreconditioner(run.kind)
            if run.source == "idealized"
            else EstimatedPreconditioner(run.kind, cfg.optimizer.get("bias_corrected", False))
        )
        return problem, run, run_preconditioned_sgd(problem, src, run.hp, run.T, rng, **opts)
    if run.algorithm == "rmsprop":
        return problem, run, run_rmsprop(
            problem, run.hp, run.T, rng, kind=run.kind,
            bias_corrected=cfg.optimizer.get("bias_corrected", False), **opts,
        )
    if run.algorithm == "rmsprop_burnin":
        return problem, run, run_rmsprop_with_burnin(
            problem, run.hp, run.T, rng, kind=run.kind,
            bias_corrected=cfg.optimizer.get("bias_corrected", False), **opts,
        )
    if run.algorithm == "large_step":
        src = (
            IdealizedPreconditioner(run.kind)
            if run.source == "idealized"
            else EstimatedPreconditioner(run.kind, cfg.optimizer.get("bias_corrected", False))
        )
        return problem, run, run_large_step_variant(problem, src, run.hp, run.T, rng, **opts)
    raise ConfigError(f"optimizer.algorithm: unknown algorithm {run.algorithm!r}")


def trajectory_columns(dim: int) -> list[str]:
    cols = ["iter", "step_kind", "f", "grad_norm", "lambda_min_H", "est_error"]
    if dim <= 8:
        cols += [f"x_{i}" for i in range(dim)]
    return cols


def write_trajectory(path, records, dim: int) -> None:
    cols = trajectory_columns(dim)
    include_x = dim <= 8

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for r in records:
            row = [
                str(r.iteration),
                r.step_kind,
                _fmt(r.f_val),
                _fmt(r.grad_norm),
                _fmt(r.lambda_min_h),
                _fmt(r.est_error),
            ]
            if include_x:
                row += [_fmt(float(v)) for v in r.x]
            writer.writerow(row)

    _atomic_write(path, write)


def read_trajectory(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            rows.append(
                {
                    "iter": int(raw["iter"]),
                    "step_kind": raw["step_kind"],
                    "f": float(raw["f"]),
                    "grad_norm": float(raw["grad_norm"]),
                    "lambda_min_H": float(raw["lambda_min_H"]) if raw["lambda_min_H"] else None,
                    "est_error": float(raw["est_error"]) if raw["est_error"] else None,
                }
            )
    return rows


def summarize_rows(rows, run_id: str, seed: int, escape_level: float, f_threshold, trajectory: str) -> dict:
    """Summary of one trajectory; derived only from logged rows, so the
    summary is exactly recomputable from the trajectory CSV."""
    steps = [r for r in rows if r["step_kind"] in (STEP_NORMAL, STEP_LARGE)]
    if not steps:
        raise ConfigError("trajectory contains no optimization steps")
    fs = np.array([r["f"] for r in steps])
    escape = next((r["iter"] for r in steps if r["f"] <= escape_level), None)
    threshold_hit = None
    if f_threshold is not None:
        threshold_hit = next((r["iter"] for r in steps if r["f"] <= f_threshold), None)
    est_errors = [r["est_error"] for r in steps if r["est_error"] is not None]
    return {
        "run_id": run_id,
        "seed": seed,
        "final_f": float(fs[-1]),
        "min_f": float(fs.min()),
        "iters_to_threshold": threshold_hit,
        "escape_time": escape,
        "mean_last_1000_f": float(fs[-min(1000, len(fs)):].mean()),
        "sup_est_error": max(est_errors) if est_errors else None,
        "trajectory": trajectory,
    }


def records_to_rows(records) -> list[dict]:
    return [
        {
            "iter": r.iteration,
            "step_kind": r.step_kind,
            "f": r.f_val,
            "grad_norm": r.grad_norm,
            "lambda_min_H": r.lambda_min_h,
            "est_error": r.est_error,
        }
        for r in records
    ]


def _safe_name(value: str) -> str:
    return "".join(c if (c.isalnum() or c in "._=-") else "-" for c in value)


def run_cell(cfg: ExperimentConfig, run_id: str, seed: int, out_dir: str) -> dict:
    """Execute one cell, write its trajectory, and return its summary row.

    On divergence the partial trajectory is still flushed before the
    error propagates.
    """
    traj_name = f"{_safe_name(run_id)}_seed{seed}.csv"
    traj_path = os.path.join(out_dir, traj_name)
    try:
        problem, run, records = execute_records(cfg, seed)
    except NonFiniteError as err:
        dim = build_problem(cfg.problem).dim
        write_trajectory(traj_path, err.records, dim)
        raise NonFiniteError(f"{run_id} seed {seed}: {err}") from None
    write_trajectory(traj_path, records, problem.dim)
    return summarize_rows(
        records_to_rows(records),
        run_id,
        seed,
        cfg.run.get("escape_level", DEFAULT_ESCAPE_LEVEL),
        cfg.run.get("f_threshold"),
        traj_name,
    )


def write_summary(path, rows, extra_columns=()) -> None:
    cols = list(extra_columns) + list(SUMMARY_COLUMNS)

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in cols])

    _atomic_write(path, write)


def read_summary(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty summary") from None
        rows = [dict(zip(header, row)) for row in reader]
    return header, rows


def _pool_cell(args):
    cfg, run_id, seed, out_dir = args
    return run_cell(cfg, run_id, seed, out_dir)


def _execute_cells(cells, jobs: int):
    if jobs <= 1 or len(cells) <= 1:
        return [_pool_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_pool_cell, cells))


def cmd_run(cfg: ExperimentConfig, out_dir: str, jobs: int = 1, seed_offset: int = 0) -> str:
    """One condition x all seeds; returns the summary path."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = [s + seed_offset for s in cfg.run["seeds"]]
    cells = [(cfg, "run", seed, out_dir) for seed in seeds]
    rows = _execute_cells(cells, jobs)
    rows.sort(key=lambda r: r["seed"])
    path = os.path.join(out_dir, "summary.csv")
    write_summary(path, rows)
    return path


def cmd_sweep(
    cfg: ExperimentConfig, axis: str, values: list[str], out_dir: str, jobs: int = 1, seed_offset: int = 0
) -> str:
    """Cross-product of axis values and seeds, merged into one summary."""
    if not values:
        raise ConfigError("sweep: empty value list")
    resolve_axis(axis)
    os.makedirs(out_dir, exist_ok=True)
    seeds = [s + seed_offset for s in cfg.run["seeds"]]
    cells = []
    for value in values:
        sub = cfg.clone()
        sub.set_axis_value(axis, value)
        run_id = f"{axis}={value}"
        for seed in seeds:
            cells.append((sub, run_id, seed, out_dir))
    rows = _execute_cells(cells, jobs)

    def sort_key(row):
        value = row["run_id"].split("=", 1)[1]
        try:
            return (0, float(value), row["seed"])
        except ValueError:
            return (1, value, row["seed"])

    rows.sort(key=sort_key)
    for row in rows:
        row["axis"] = axis
        row["axis_value"] = row["run_id"].split("=", 1)[1]
    path = os.path.join(out_dir, "summary.csv")
    write_summary(path, rows, extra_columns=("axis", "axis_value"))
    return path


def cmd_estimation_scaling(cfg: ExperimentConfig, out_dir: str, seed_offset: int = 0) -> str:
    """Sup preconditioner-estimation error versus eta, with the fitted slope.

    For each eta, runs RMSProp with burn-in under beta = 1 - C eta^(2/3),
    tracking ||Ahat_t - A(x_t)|| over a window of ~est_window_factor EMA
    time constants, and fits the log-log slope of the sup error.
    """
    etas = cfg.run.get("etas")
    if not etas or len(etas) < 2:
        raise ConfigError("run.etas: estimation scaling needs at least two stepsizes")
    problem_probe = build_problem(cfg.problem)
    if not problem_probe.has_exact_g:
        raise ConfigError("problem: estimation scaling needs an exact_G oracle")
    os.makedirs(out_dir, exist_ok=True)
    c_sched = cfg.run.get("beta_c", 1.0)
    factor = cfg.run.get("est_window_factor", 40.0)
    seed = cfg.run["seeds"][0] + seed_offset

    rows = []
    for eta in sorted(etas, reverse=True):
        beta = beta_schedule(eta, c_sched)
        window = max(cfg.run.get("t", 1), math.ceil(factor / (1.0 - beta)))
        sub = cfg.clone()
        sub.optimizer["algorithm"] = "rmsprop_burnin"
        sub.optimizer["eta"] = eta
        sub.optimizer["beta_spec"] = ("fixed", beta)
        sub.optimizer.pop("auto", None)
        sub.run["t"] = window
        sub.run["track_est_error"] = True
        sub.run["log_every"] = 1
        problem, run, records = execute_records(sub, seed)
        steps = [r for r in records if r.step_kind in (STEP_NORMAL, STEP_LARGE)]
        sup_err = max(r.est_error for r in steps)
        rows.append(
            {
                "eta": eta,
                "beta": beta,
                "T": window,
                "W": run.hp.W,
                "sup_error": sup_err,
                "max_x_norm": max(float(np.linalg.norm(r.x)) for r in records),
                "seed": seed,
            }
        )

    finite = [r for r in rows if r["sup_error"] > 0.0]
    if len(finite) >= 2:
        slope = float(
            np.polyfit(
                np.log([r["eta"] for r in finite]), np.log([r["sup_error"] for r in finite]), 1
            )[0]
        )
    else:
        slope = 0.0

    path = os.path.join(out_dir, "scaling.csv")

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["eta", "beta", "T", "W", "sup_error", "max_x_norm", "seed"]
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in cols])

    _atomic_write(path, write)

    fit_path = os.path.join(out_dir, "scaling_fit.csv")
    _atomic_write(
        fit_path,
        lambda fh: fh.write("slope\n" + _fmt(slope) + "\n"),
    )
    return path


def cmd_report(summary_paths, out_dir: str) -> str:
    """Per-condition f-vs-iteration quantile bands (p10/p50/p90 over seeds)."""
    if not summary_paths:
        raise ConfigError("report: no summary files given")
    header0 = None
    groups: dict[str, list[tuple[int, str, str]]] = {}
    for path in summary_paths:
        header, rows = read_summary(path)
        if header0 is None:
            header0 = header
        elif header != header0:
            raise ConfigError(f"{path}: summary schema does not match {summary_paths[0]}")
        base = os.path.dirname(os.path.abspath(path))
        for row in rows:
            groups.setdefault(row["run_id"], []).append(
                (int(row["seed"]), os.path.join(base, row["trajectory"]), path)
            )

    os.makedirs(out_dir, exist_ok=True)
    out_rows = []
    for run_id in sorted(groups):
        iters_ref = None
        f_by_seed = []
        for seed, traj_path, _src in sorted(groups[run_id]):
            rows = [r for r in read_trajectory(traj_path) if r["step_kind"] in (STEP_NORMAL, STEP_LARGE)]
            iters = [r["iter"] for r in rows]
            if iters_ref is None:
                iters_ref = iters
            elif iters != iters_ref:
                raise ConfigError(f"{traj_path}: iteration grid differs within condition {run_id!r}")
            f_by_seed.append([r["f"] for r in rows])
        f_mat = np.asarray(f_by_seed)
        p10, p50, p90 = np.quantile(f_mat, [0.1, 0.5, 0.9], axis=0)
        for i, it in enumerate(iters_ref):
            out_rows.append((run_id, it, p10[i], p50[i], p90[i]))

    path = os.path.join(out_dir, "bands.csv")

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "iter", "f_p10", "f_p50", "f_p90"])
        for run_id, it, a, b, c in out_rows:
            writer.writerow([run_id, str(it), _fmt(float(a)), _fmt(float(b)), _fmt(float(c))])

    _atomic_write(path, write)
    return path
