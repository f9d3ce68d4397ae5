"""Experiment sweeps: config files, parallel runs, and trace summaries.

A config file describes one problem, a base solver configuration, a sweep
grid over the tolerance exponent, the batch growth step and (for the
noisy quadratic) the noise level, and a list of seeds.  Every grid point
times seed becomes one run with its own trace CSV; a manifest, a summary
table and per-grid-point budget curves are written next to the traces.
Identical configs produce byte-identical outputs, regardless of worker
count.
"""

from __future__ import annotations

import concurrent.futures
import configparser
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, EmptyGroup, IpasError, ParseError
from .objective import FiniteSumObjective
from .problems import (
    generate_constraints,
    load_libsvm,
    logistic_objective,
    make_noisy_quadratic,
    min_norm_feasible,
    noisy_quadratic_objective,
)
from .solver import IterationRecord, SolverConfig, read_trace, run, write_trace

MANIFEST_NAME = "runs.csv"
SUMMARY_NAME = "summary.csv"

# Stationarity levels reported as "fraction of runs that reached" columns.
REACH_THRESHOLDS = (1e-1, 1e-2, 1e-3)

# Number of points on the common budget grid for the mean curves.
CURVE_POINTS = 50

_PROBLEM_KEYS = {
    "noisy_quadratic": {
        "kind",
        "n",
        "components",
        "sigma",
        "base_seed",
        "base_curvature",
        "q_scale",
        "m_fraction",
        "constraint_seed",
    },
    "logistic": {"kind", "dataset", "m_fraction", "constraint_seed"},
}

_SOLVER_KEYS = {
    "beta",
    "c",
    "c1",
    "t_min",
    "c_accept",
    "n0",
    "n0_fraction",
    "dn",
    "s",
    "d",
    "k_max",
    "tol_d",
    "tol_e",
}

_SWEEP_KEYS = {"s", "dn", "sigma"}
_RUN_KEYS = {"seeds", "output_dir"}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    solver: SolverConfig
    n0_fraction: float | None
    sweep_s: tuple[float, ...]
    sweep_dN: tuple[int, ...]
    sweep_sigma: tuple[float, ...] | None
    seeds: tuple[int, ...]
    output_dir: str


@dataclass(frozen=True)
class SummaryRow:
    config_id: str
    config_hash: str
    s_exp: float
    dN: int
    sigma: float | None
    n_runs: int
    n_failed: int
    d_final_median: float
    d_final_q25: float
    d_final_q75: float
    budget_median: float
    e_final_median: float
    reached: tuple[float, ...]  # fractions, aligned with REACH_THRESHOLDS


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _parse_ints(text: str) -> list[int]:
    out = []
    for tok in text.replace(",", " ").split():
        v = float(tok)
        if v != int(v):
            raise ValueError(f"expected an integer, got {tok!r}")
        out.append(int(v))
    return out


def parse_experiment_config(path) -> ExperimentConfig:
    """Read a key-value config file with [problem]/[solver]/[sweep]/[run] sections."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigInvalid(f"cannot parse config {path}: {exc}") from exc

    for section in cp.sections():
        if section not in ("problem", "solver", "sweep", "run"):
            raise ConfigInvalid(f"unknown section [{section}]")
    if not cp.has_section("problem") or not cp.has_section("run"):
        raise ConfigInvalid("config needs [problem] and [run] sections")

    try:
        problem = _parse_problem(dict(cp["problem"]))
        solver, n0_fraction = _parse_solver(dict(cp["solver"]) if cp.has_section("solver") else {})
        sweep_s, sweep_dN, sweep_sigma = _parse_sweep(
            dict(cp["sweep"]) if cp.has_section("sweep") else {}, problem, solver
        )
        run_sec = dict(cp["run"])
        unknown = set(run_sec) - _RUN_KEYS
        if unknown:
            raise ConfigInvalid(f"unknown keys in [run]: {sorted(unknown)}")
        if "seeds" not in run_sec:
            raise ConfigInvalid("[run] needs a seeds list")
        seeds = tuple(_parse_ints(run_sec["seeds"]))
        if not seeds:
            raise ConfigInvalid("[run] seeds list is empty")
        output_dir = run_sec.get("output_dir", "runs")
    except (ValueError, KeyError) as exc:
        raise ConfigInvalid(f"bad config value: {exc}") from exc

    return ExperimentConfig(
        problem=problem,
        solver=solver,
        n0_fraction=n0_fraction,
        sweep_s=sweep_s,
        sweep_dN=sweep_dN,
        sweep_sigma=sweep_sigma,
        seeds=seeds,
        output_dir=output_dir,
    )


def _parse_problem(sec: dict) -> dict:
    kind = sec.get("kind")
    if kind not in _PROBLEM_KEYS:
        raise ConfigInvalid(f"problem kind must be one of {sorted(_PROBLEM_KEYS)}, got {kind!r}")
    unknown = set(sec) - _PROBLEM_KEYS[kind]
    if unknown:
        raise ConfigInvalid(f"unknown keys in [problem] for kind={kind}: {sorted(unknown)}")
    if kind == "noisy_quadratic":
        return {
            "kind": kind,
            "n": int(sec["n"]),
            "components": int(sec["components"]),
            "sigma": float(sec.get("sigma", 1.0)),
            "base_seed": int(sec.get("base_seed", 0)),
            "base_curvature": float(sec.get("base_curvature", 1.0)),
            "q_scale": float(sec.get("q_scale", 1.0)),
            "m_fraction": float(sec.get("m_fraction", 0.5)),
            "constraint_seed": int(sec.get("constraint_seed", 0)),
        }
    if "dataset" not in sec:
        raise ConfigInvalid("logistic problems need a dataset path")
    return {
        "kind": kind,
        "dataset": sec["dataset"],
        "m_fraction": float(sec.get("m_fraction", 0.5)),
        "constraint_seed": int(sec.get("constraint_seed", 0)),
    }


def _parse_solver(sec: dict) -> tuple[SolverConfig, float | None]:
    unknown = set(sec) - _SOLVER_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown keys in [solver]: {sorted(unknown)}")
    if "n0" in sec and "n0_fraction" in sec:
        raise ConfigInvalid("give either n0 or n0_fraction, not both")
    kwargs = {}
    for key, attr, conv in (
        ("beta", "beta", float),
        ("c", "c", float),
        ("c1", "c1", float),
        ("t_min", "t_min", float),
        ("c_accept", "C_accept", float),
        ("n0", "N0", int),
        ("dn", "dN", int),
        ("s", "s_exp", float),
        ("d", "D_size", int),
        ("k_max", "k_max", int),
        ("tol_d", "tol_d", float),
        ("tol_e", "tol_e", float),
    ):
        if key in sec:
            kwargs[attr] = conv(sec[key])
    n0_fraction = float(sec["n0_fraction"]) if "n0_fraction" in sec else None
    return SolverConfig(**kwargs), n0_fraction


def _parse_sweep(
    sec: dict, problem: dict, solver: SolverConfig
) -> tuple[tuple[float, ...], tuple[int, ...], tuple[float, ...] | None]:
    unknown = set(sec) - _SWEEP_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown keys in [sweep]: {sorted(unknown)}")
    sweep_s = tuple(_parse_floats(sec["s"])) if "s" in sec else (solver.s_exp,)
    sweep_dN = tuple(_parse_ints(sec["dn"])) if "dn" in sec else (solver.dN,)
    if "sigma" in sec:
        if problem["kind"] != "noisy_quadratic":
            raise ConfigInvalid("a sigma sweep only applies to noisy_quadratic problems")
        sweep_sigma = tuple(_parse_floats(sec["sigma"]))
    elif problem["kind"] == "noisy_quadratic":
        sweep_sigma = (problem["sigma"],)
    else:
        sweep_sigma = None
    return sweep_s, sweep_dN, sweep_sigma


def _format_g(v: float) -> str:
    return f"{v:g}"


def plan_runs(cfg: ExperimentConfig, output_dir: str | None = None) -> list[dict]:
    """Expand the sweep grid into one self-contained payload per run.

    Payloads are plain dicts so worker processes can rebuild the problem
    and the solver configuration without sharing state with the parent.
    """
    out_dir = output_dir if output_dir is not None else cfg.output_dir
    sigmas: tuple[float | None, ...] = cfg.sweep_sigma if cfg.sweep_sigma is not None else (None,)
    payloads = []
    for s_exp in cfg.sweep_s:
        for dN in cfg.sweep_dN:
            for sigma in sigmas:
                config_id = f"s{_format_g(s_exp)}_dN{dN}"
                problem = dict(cfg.problem)
                if sigma is not None:
                    problem["sigma"] = sigma
                    config_id += f"_sig{_format_g(sigma)}"
                solver_fields = dataclasses.asdict(cfg.solver)
                solver_fields["s_exp"] = s_exp
                solver_fields["dN"] = dN
                grid_key = {
                    "problem": problem,
                    "solver": solver_fields,
                    "n0_fraction": cfg.n0_fraction,
                }
                config_hash = hashlib.sha256(
                    json.dumps(grid_key, sort_keys=True).encode()
                ).hexdigest()[:12]
                for seed in cfg.seeds:
                    payloads.append(
                        {
                            "config_id": config_id,
                            "config_hash": config_hash,
                            "s_exp": s_exp,
                            "dN": dN,
                            "sigma": sigma,
                            "seed": seed,
                            "problem": problem,
                            "solver": solver_fields,
                            "n0_fraction": cfg.n0_fraction,
                            "trace_file": f"trace_{config_id}_seed{seed}.csv",
                            "output_dir": out_dir,
                        }
                    )
    return payloads


def build_problem(problem: dict):
    """Construct (constraints, objective, x0) from a problem payload."""
    kind = problem["kind"]
    if kind == "noisy_quadratic":
        spec = make_noisy_quadratic(
            n=problem["n"],
            n_components=problem["components"],
            sigma=problem["sigma"],
            seed=problem["base_seed"],
            base_curvature=problem["base_curvature"],
            q_scale=problem["q_scale"],
        )
        obj = noisy_quadratic_objective(spec)
        n = spec.dim
    elif kind == "logistic":
        ds = load_libsvm(problem["dataset"])
        obj = logistic_objective(ds)
        n = ds.dim
    else:
        raise ConfigInvalid(f"unknown problem kind {kind!r}")
    m = max(1, round(problem["m_fraction"] * n))
    cs = generate_constraints(n, m, seed=problem["constraint_seed"])
    return cs, obj, min_norm_feasible(cs)


def _resolve_n0(n0_fraction: float | None, base_n0: int, n_components: int) -> int:
    if n0_fraction is None:
        return min(base_n0, n_components)
    return min(n_components, max(1, math.ceil(n0_fraction * n_components)))


def execute_run(payload: dict) -> dict:
    """Run one grid point / seed combination and write its trace.

    Returns a result row for the manifest; failures are reported in the
    row rather than raised, so one bad run cannot take down a sweep.
    """
    result = {
        "config_id": payload["config_id"],
        "config_hash": payload["config_hash"],
        "s_exp": payload["s_exp"],
        "dN": payload["dN"],
        "sigma": payload["sigma"],
        "seed": payload["seed"],
        "trace_file": payload["trace_file"],
        "status": "",
        "error": "",
    }
    try:
        cs, obj, x0 = build_problem(payload["problem"])
        fields = dict(payload["solver"])
        fields["N0"] = _resolve_n0(payload["n0_fraction"], fields["N0"], obj.n_components)
        fields["seed"] = payload["seed"]
        cfg = SolverConfig(**fields)
        out = run(cs, obj, cfg, x0=x0)
        write_trace(out.records, os.path.join(payload["output_dir"], payload["trace_file"]))
        result["status"] = out.status
    except (IpasError, OSError, ValueError) as exc:
        result["status"] = "failed"
        result["error"] = str(exc)
    return result


def _write_manifest(rows: list[dict], path: str) -> None:
    cols = ("config_id", "config_hash", "s_exp", "dN", "sigma", "seed", "status", "trace_file", "error")
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(repr(v))
            else:
                cells.append(str(v).replace(",", ";").replace("\n", " "))
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> list[dict]:
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise ParseError(f"{path}: empty manifest")
    cols = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        row = dict(zip(cols, cells))
        row["s_exp"] = float(row["s_exp"])
        row["dN"] = int(row["dN"])
        row["sigma"] = float(row["sigma"]) if row["sigma"] else None
        row["seed"] = int(row["seed"])
        rows.append(row)
    return rows


def final_norm_d(records: list[IterationRecord]) -> float:
    return records[-1].norm_d_true


def reach_budget(records: list[IterationRecord], threshold: float) -> float:
    """Scalar products spent until norm_d_true first drops to the threshold.

    Returns +inf when the run never reached it.
    """
    for r in records:
        if r.norm_d_true <= threshold:
            return float(r.scalar_products)
    return math.inf


def summarize_group(
    rows: list[dict], traces: list[list[IterationRecord]]
) -> SummaryRow:
    """Aggregate one grid point over its seeds.

    rows holds the manifest entries (completed and failed); traces holds
    the parsed trace of each completed run, aligned with the completed
    subset of rows in order.
    """
    if not rows:
        raise EmptyGroup("cannot summarise an empty run group")
    completed = [r for r in rows if r["status"] != "failed"]
    if not completed:
        raise EmptyGroup(
            f"group {rows[0]['config_id']} has no completed runs "
            f"({len(rows)} failed)"
        )
    if len(completed) != len(traces):
        raise ValueError("trace list does not match the completed runs")

    finals = np.array([final_norm_d(t) for t in traces])
    budgets = np.array([t[-1].scalar_products for t in traces], dtype=float)
    e_finals = np.array([t[-1].e_x for t in traces])
    reached = tuple(
        float(np.mean([1.0 if reach_budget(t, thr) < math.inf else 0.0 for t in traces]))
        for thr in REACH_THRESHOLDS
    )
    head = rows[0]
    return SummaryRow(
        config_id=head["config_id"],
        config_hash=head["config_hash"],
        s_exp=head["s_exp"],
        dN=head["dN"],
        sigma=head["sigma"],
        n_runs=len(rows),
        n_failed=len(rows) - len(completed),
        d_final_median=float(np.quantile(finals, 0.5)),
        d_final_q25=float(np.quantile(finals, 0.25)),
        d_final_q75=float(np.quantile(finals, 0.75)),
        budget_median=float(np.quantile(budgets, 0.5)),
        e_final_median=float(np.quantile(e_finals, 0.5)),
        reached=reached,
    )


def interpolate_log_d(records: list[IterationRecord], budgets: np.ndarray) -> np.ndarray:
    """Per-run interpolant of log10 norm_d_true, linear in the budget axis.

    Rows sharing a budget value collapse to the latest one, and direction
    norms are floored at 1e-16 before the log.
    """
    xs = np.array([r.scalar_products for r in records], dtype=float)
    ys = np.log10(np.maximum([r.norm_d_true for r in records], 1e-16))
    keep_x: list[float] = []
    keep_y: list[float] = []
    for x, y in zip(xs, ys):
        if keep_x and x == keep_x[-1]:
            keep_y[-1] = y
        else:
            keep_x.append(float(x))
            keep_y.append(float(y))
    return np.interp(budgets, keep_x, keep_y)


def budget_curve(
    traces: list[list[IterationRecord]], n_points: int = CURVE_POINTS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and standard error of log10 ||d|| on a common budget grid.

    The grid spans the budgets where every run has data, so each point is
    an arithmetic mean of per-run interpolants rather than an
    extrapolation.
    """
    if not traces:
        raise EmptyGroup("no traces to build a curve from")
    lo = max(t[0].scalar_products for t in traces)
    hi = min(t[-1].scalar_products for t in traces)
    if hi < lo:
        lo = hi
    grid = np.linspace(lo, hi, n_points) if hi > lo else np.array([float(lo)])
    interped = np.vstack([interpolate_log_d(t, grid) for t in traces])
    mean = interped.mean(axis=0)
    if len(traces) > 1:
        se = interped.std(axis=0, ddof=1) / np.sqrt(len(traces))
    else:
        se = np.zeros_like(mean)
    return grid, mean, se


def _write_summary(rows: list[SummaryRow], path: str) -> None:
    cols = [
        "config_id",
        "config_hash",
        "s_exp",
        "dN",
        "sigma",
        "n_runs",
        "n_failed",
        "d_final_median",
        "d_final_q25",
        "d_final_q75",
        "budget_median",
        "e_final_median",
    ] + [f"reached_{_format_g(t)}" for t in REACH_THRESHOLDS]
    lines = [",".join(cols)]
    for r in rows:
        cells = [
            r.config_id,
            r.config_hash,
            repr(float(r.s_exp)),
            str(r.dN),
            "" if r.sigma is None else repr(float(r.sigma)),
            str(r.n_runs),
            str(r.n_failed),
            repr(r.d_final_median),
            repr(r.d_final_q25),
            repr(r.d_final_q75),
            repr(r.budget_median),
            repr(r.e_final_median),
        ] + [repr(v) for v in r.reached]
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_curve(path: str, grid: np.ndarray, mean: np.ndarray, se: np.ndarray, n_runs: int) -> None:
    lines = ["budget,log10_d_mean,log10_d_se,d_geomean,d_lo,d_hi"]
    for b, m, s in zip(grid, mean, se):
        d_geo = 10.0**m
        d_lo = 10.0 ** (m - 1.96 * s)
        d_hi = 10.0 ** (m + 1.96 * s)
        lines.append(
            ",".join(repr(float(v)) for v in (b, m, s, d_geo, d_lo, d_hi))
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def summarize_dir(trace_dir: str) -> list[SummaryRow]:
    """Rebuild summary.csv and the curve files from a manifest directory."""
    manifest_path = os.path.join(trace_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise EmptyGroup(f"no manifest {MANIFEST_NAME} in {trace_dir}")
    rows = read_manifest(manifest_path)
    if not rows:
        raise EmptyGroup(f"manifest in {trace_dir} lists no runs")

    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["config_id"], []).append(row)

    summary_rows = []
    for config_id in sorted(groups):
        group = sorted(groups[config_id], key=lambda r: r["seed"])
        traces = [
            read_trace(os.path.join(trace_dir, r["trace_file"]))
            for r in group
            if r["status"] != "failed"
        ]
        if traces:
            summary_rows.append(summarize_group(group, traces))
            grid, mean, se = budget_curve(traces)
            _write_curve(
                os.path.join(trace_dir, f"curve_{config_id}.csv"), grid, mean, se, len(traces)
            )
        else:
            # Keep fully-failed groups visible instead of dropping them.
            head = group[0]
            summary_rows.append(
                SummaryRow(
                    config_id=config_id,
                    config_hash=head["config_hash"],
                    s_exp=head["s_exp"],
                    dN=head["dN"],
                    sigma=head["sigma"],
                    n_runs=len(group),
                    n_failed=len(group),
                    d_final_median=math.nan,
                    d_final_q25=math.nan,
                    d_final_q75=math.nan,
                    budget_median=math.nan,
                    e_final_median=math.nan,
                    reached=tuple(0.0 for _ in REACH_THRESHOLDS),
                )
            )
    _write_summary(summary_rows, os.path.join(trace_dir, SUMMARY_NAME))
    return summary_rows


@dataclass
class ExperimentOutcome:
    output_dir: str
    n_runs: int
    n_failed: int
    summary: list[SummaryRow]


def run_experiment(
    cfg: ExperimentConfig,
    workers: int | None = None,
    output_dir: str | None = None,
) -> ExperimentOutcome:
    """Execute the full sweep and write traces, manifest, summary and curves.

    workers defaults to the available parallelism; results are collected
    and written in a deterministic order regardless of scheduling.
    """
    out_dir = output_dir if output_dir is not None else cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    payloads = plan_runs(cfg, output_dir=out_dir)

    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(workers, len(payloads)))

    if workers == 1:
        results = [execute_run(p) for p in payloads]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(execute_run, payloads, chunksize=1))

    results.sort(key=lambda r: (r["config_id"], r["seed"]))
    _write_manifest(results, os.path.join(out_dir, MANIFEST_NAME))
    summary = summarize_dir(out_dir)
    n_failed = sum(1 for r in results if r["status"] == "failed")
    return ExperimentOutcome(
        output_dir=out_dir, n_runs=len(results), n_failed=n_failed, summary=summary
    )
