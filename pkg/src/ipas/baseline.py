"""Deterministic projected gradient baseline for budget comparisons.

Every iteration evaluates the full weighted gradient, projects exactly,
and backtracks with the same nonmonotone Armijo rule as the adaptive
solver.  The exact solve is charged as (m + 4) * m scalar products, the
worst case of a CG solve on the same system, so budgets are comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, exact_project, feasibility_gap
from .errors import ConfigInvalid
from .objective import BudgetMeter, FiniteSumObjective, full_grad, full_value
from .solver import (
    STATUS_MAX_ITERATIONS,
    STATUS_STATIONARY,
    IterationRecord,
    RunResult,
    _guarded,
    eta,
    line_search_full,
)


@dataclass(frozen=True)
class BaselineConfig:
    """Line search and stopping parameters for the deterministic method.

    s_exp controls the same decaying slack eta_k^2 used by the adaptive
    solver's search, keeping the two methods' acceptance thresholds
    aligned in comparisons.
    """

    beta: float = 0.1
    c1: float = 1e-2
    s_exp: float = 1.0
    k_max: int = 500
    tol_d: float = 0.0
    tol_e: float = 0.0


def validate_baseline_config(cfg: BaselineConfig) -> None:
    problems = []
    if not (0.0 < cfg.beta < 1.0):
        problems.append(f"beta={cfg.beta!r} must lie in (0, 1)")
    if not (0.0 < cfg.c1 < 1.0):
        problems.append(f"c1={cfg.c1!r} must lie in (0, 1)")
    if not cfg.s_exp > 0.5:
        problems.append(f"s_exp={cfg.s_exp!r} must exceed 0.5")
    if cfg.k_max < 0:
        problems.append(f"k_max={cfg.k_max} must be >= 0")
    if cfg.tol_d < 0 or cfg.tol_e < 0:
        problems.append("tolerances must be >= 0")
    if problems:
        raise ConfigInvalid("; ".join(problems))


@dataclass
class BaselineState:
    x: np.ndarray
    k: int
    meter: BudgetMeter
    done: str | None = None


def baseline_step(
    state: BaselineState, cs: ConstraintSet, obj: FiniteSumObjective, cfg: BaselineConfig
) -> IterationRecord:
    """One full-gradient iteration with an exact projection."""
    x = state.x
    k = state.k
    meter = state.meter
    eta_k = eta(k, cfg.s_exp)

    g = full_grad(obj, x, meter)
    d = exact_project(cs, x - g) - x
    # Exact solve priced at CG's worst case on the m-dimensional system.
    meter.charge_cg(cs.m, cs.m)
    norm_d = float(np.linalg.norm(d))
    e_x = feasibility_gap(cs, x)

    f0 = full_value(obj, x, meter)
    slope = float(g @ d)
    phi = lambda t_: _guarded(lambda: full_value(obj, x + t_ * d, meter))
    t = line_search_full(phi, f0, slope, eta_k, cfg.beta, cfg.c1)

    record = IterationRecord(
        k=k,
        Nk=obj.n_components,
        t=float(t),
        norm_p=norm_d,
        norm_d_true=norm_d,
        e_x=float(e_x),
        f_true=f0,
        scalar_products=meter.scalar_products,
        accepted=True,
        unsuccessful=False,
        cg_iters=cs.m,
    )

    if norm_d <= cfg.tol_d and e_x <= cfg.tol_e:
        state.done = STATUS_STATIONARY

    state.x = x + t * d
    state.k = k + 1
    return record


def _terminal_record(
    state: BaselineState, cs: ConstraintSet, obj: FiniteSumObjective
) -> IterationRecord:
    g = full_grad(obj, state.x, None)
    d = exact_project(cs, state.x - g) - state.x
    return IterationRecord(
        k=state.k,
        Nk=obj.n_components,
        t=0.0,
        norm_p=0.0,
        norm_d_true=float(np.linalg.norm(d)),
        e_x=feasibility_gap(cs, state.x),
        f_true=full_value(obj, state.x, None),
        scalar_products=state.meter.scalar_products,
        accepted=False,
        unsuccessful=False,
        cg_iters=0,
    )


def run_baseline(
    cs: ConstraintSet,
    obj: FiniteSumObjective,
    cfg: BaselineConfig,
    x0: np.ndarray | None = None,
) -> RunResult:
    """Drive the baseline from x0 (default: minimum-norm feasible point).

    Produces the same trace schema as the adaptive solver; every row is a
    full-sample accepted step.
    """
    validate_baseline_config(cfg)
    if obj.dim != cs.n:
        raise ConfigInvalid(
            f"objective dimension {obj.dim} does not match the constraint width {cs.n}"
        )
    if x0 is None:
        x0 = exact_project(cs, np.zeros(cs.n))
    else:
        x0 = np.asarray(x0, dtype=float)

    state = BaselineState(x=x0, k=0, meter=BudgetMeter())
    records: list[IterationRecord] = []
    status = STATUS_MAX_ITERATIONS
    while state.k < cfg.k_max:
        records.append(baseline_step(state, cs, obj, cfg))
        if state.done is not None:
            status = state.done
            break
    records.append(_terminal_record(state, cs, obj))
    return RunResult(
        records=records,
        status=status,
        x=state.x,
        meter=state.meter,
        seed=0,
    )
