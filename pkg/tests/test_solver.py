import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipas import (
    CallableKernel,
    ConfigInvalid,
    FiniteSumObjective,
    MaxBacktracks,
    ParseError,
    STATUS_MAX_ITERATIONS,
    STATUS_STATIONARY,
    SolverConfig,
    TRACE_COLUMNS,
    additional_sampling_test,
    build_constraint_set,
    descent_check,
    eta,
    exact_project,
    feasibility_gap,
    generate_constraints,
    line_search_full,
    line_search_minibatch,
    make_noisy_quadratic,
    noisy_quadratic_objective,
    read_trace,
    run,
    search_direction,
    uniform_weights,
    validate_config,
    write_trace,
)
from ipas.objective import BudgetMeter


def orthonormal_system(m: int, n: int, seed: int, shift: float = 0.0):
    """Constraint rows with A A^T = I, so CG projects exactly in one sweep."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    A = Q.T
    b = A @ rng.standard_normal(n) + shift
    return build_constraint_set(A, b)


def pinned_target_objective(x_star: np.ndarray, n_components: int) -> FiniteSumObjective:
    """All components equal to 0.5 ||x - x_star||^2; gradient x - x_star."""

    def fn(i, x):
        d = x - x_star
        return 0.5 * float(d @ d), d

    return FiniteSumObjective(
        weights=uniform_weights(n_components),
        dim=x_star.size,
        kernel=CallableKernel(fn, n_components),
    )


class TestEta:
    def test_known_values(self):
        assert eta(0, 1.0) == 1.0
        assert eta(1, 1.0) == 0.5
        assert eta(3, 2.0) == pytest.approx(1.0 / 16.0, rel=1e-15)
        assert eta(99, 0.5) == pytest.approx(0.1, rel=1e-12)

    def test_strictly_decreasing(self):
        vals = [eta(k, 0.75) for k in range(200)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_squared_series_stays_bounded(self):
        # With exponent > 0.5 the partial sums of eta^2 approach a limit;
        # zeta(1.2) < 5.6 bounds the 0.6 case.
        partial = sum(eta(k, 0.6) ** 2 for k in range(100_000))
        assert partial < 5.6

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError):
            eta(-1, 1.0)


class TestValidateConfig:
    def test_default_config_is_valid(self):
        assert validate_config(SolverConfig()) == []

    @pytest.mark.parametrize(
        "field,value",
        [
            ("beta", 0.0),
            ("beta", 1.0),
            ("c", -0.1),
            ("c1", 1.5),
            ("t_min", 0.0),
            ("C_accept", 0.0),
            ("C_accept", -1.0),
            ("s_exp", 0.5),
            ("s_exp", 0.2),
            ("N0", 0),
            ("dN", 0),
            ("D_size", 0),
            ("k_max", -1),
            ("tol_d", -1e-9),
            ("tol_e", -0.5),
        ],
    )
    def test_each_hard_bound(self, field, value):
        cfg = SolverConfig(**{field: value})
        with pytest.raises(ConfigInvalid):
            validate_config(cfg)

    def test_batch_bounds_need_component_count(self):
        cfg = SolverConfig(N0=10, D_size=9)
        validate_config(cfg)  # fine without a count
        with pytest.raises(ConfigInvalid):
            validate_config(cfg, n_components=5)

    def test_control_sample_must_leave_one_out(self):
        with pytest.raises(ConfigInvalid):
            validate_config(SolverConfig(D_size=10), n_components=10)
        validate_config(SolverConfig(D_size=9), n_components=10)

    def test_single_component_skips_control_bound(self):
        # N = 1 never reaches the mini-batch phase, so D_size is moot.
        validate_config(SolverConfig(N0=1, D_size=1), n_components=1)

    def test_step_floor_warning(self):
        cfg = SolverConfig(t_min=0.5)
        warnings = validate_config(cfg, L_estimate=100.0)
        assert len(warnings) == 1
        assert "t_min" in warnings[0]

    def test_no_warning_for_small_floor(self):
        cfg = SolverConfig(t_min=1e-8)
        assert validate_config(cfg, L_estimate=100.0) == []


class TestDescentCheck:
    def test_antiparallel_direction_passes(self):
        assert descent_check(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), c=0.5)

    def test_uphill_direction_fails(self):
        assert not descent_check(np.array([1.0, 0.0]), np.array([1.0, 0.0]), c=0.5)

    def test_zero_direction_passes_trivially(self):
        assert descent_check(np.array([1.0, 2.0]), np.zeros(2), c=0.9)

    def test_threshold_scales_with_c(self):
        g = np.array([1.0, 0.0])
        p = np.array([-1.0, 1.0])  # g.p = -1, ||p||^2 = 2
        assert descent_check(g, p, c=0.5)  # -1 <= -1.0 holds
        assert not descent_check(g, p, c=0.6)  # -1 <= -1.2 fails


class TestLineSearchFull:
    def test_quadratic_model_lands_on_known_power(self):
        # phi(t) = f0 - t + 3 t^2 with slope -1, c1 = 0.5: the condition
        # 3 t^2 <= t/2 first holds at t = 0.5^3.
        f0 = 10.0
        phi = lambda t: f0 - t + 3 * t * t
        t = line_search_full(phi, f0, slope=-1.0, eta_k=0.0, beta=0.5, c1=0.5)
        assert t == 0.125

    def test_slack_loosens_the_step(self):
        f0 = 10.0
        phi = lambda t: f0 - t + 3 * t * t
        t = line_search_full(phi, f0, slope=-1.0, eta_k=1.0, beta=0.5, c1=0.5)
        assert t == 0.5

    def test_immediate_acceptance(self):
        f0 = 2.0
        t = line_search_full(lambda t: f0 - t, f0, slope=-1.0, eta_k=0.0, beta=0.1, c1=0.9)
        assert t == 1.0

    def test_unsatisfiable_raises_after_cap(self):
        calls = []
        phi = lambda t: calls.append(t) or 1e9
        with pytest.raises(MaxBacktracks):
            line_search_full(phi, 0.0, slope=-1.0, eta_k=0.0, beta=0.5, c1=0.5)
        assert len(calls) == 201

    def test_nonfinite_trials_are_skipped(self):
        # A phi that explodes for large steps but behaves below t = 0.25.
        f0 = 1.0

        def phi(t):
            return math.inf if t > 0.3 else f0 - 0.5 * t

        t = line_search_full(phi, f0, slope=-1.0, eta_k=0.0, beta=0.5, c1=0.25)
        assert t == 0.25


class TestLineSearchMinibatch:
    def test_matches_full_search_above_floor(self):
        f0 = 10.0
        phi = lambda t: f0 - t + 3 * t * t
        t = line_search_minibatch(phi, f0, slope=-1.0, eta_k=0.0, beta=0.5, c1=0.5, t_min=0.01)
        assert t == 0.125

    def test_floor_stops_reduction_before_armijo_holds(self):
        # Always-failing phi with beta = 0.5, t_min = 0.1: reductions stop at
        # 0.125 because the next trial 0.0625 would cross the floor.
        phi = lambda t: 1e9
        t = line_search_minibatch(phi, 0.0, slope=-1.0, eta_k=0.0, beta=0.5, c1=0.5, t_min=0.1)
        assert t == 0.125

    def test_high_floor_returns_unit_step(self):
        phi = lambda t: 1e9
        t = line_search_minibatch(phi, 0.0, slope=-1.0, eta_k=0.0, beta=0.5, c1=0.5, t_min=0.9)
        assert t == 1.0

    def test_returned_step_may_violate_armijo(self):
        f0 = 0.0
        phi = lambda t: f0 + 1.0  # never satisfies the condition
        t = line_search_minibatch(phi, f0, slope=-1.0, eta_k=0.0, beta=0.1, c1=0.5, t_min=0.05)
        assert phi(t) > f0 + 0.5 * t * (-1.0)

    @given(
        beta=st.floats(min_value=0.05, max_value=0.9),
        t_min=st.floats(min_value=1e-6, max_value=0.99),
        fail_above=st.floats(min_value=1e-8, max_value=2.0),
    )
    @settings(max_examples=120, deadline=None)
    def test_floor_and_grid_invariants(self, beta, t_min, fail_above):
        # phi fails the Armijo test exactly when t > fail_above.
        phi = lambda t: 1e9 if t > fail_above else -1e9
        t = line_search_minibatch(phi, 0.0, slope=-1.0, eta_k=0.0, beta=beta, c1=0.5, t_min=t_min)
        # Never below the floor, and always a power of beta up to roundoff.
        assert t >= t_min or t == 1.0
        j = round(math.log(t) / math.log(beta)) if t < 1.0 else 0
        assert t == pytest.approx(beta**j, rel=1e-9)
        # On return either the test passed or the floor blocked further cuts.
        assert phi(t) <= 0.0 or beta * t < t_min


class TestAdditionalSamplingTest:
    def setup_method(self):
        # sum(x) = 0 over R^2; components identical so control values are
        # deterministic no matter which indices get drawn.
        self.cs = build_constraint_set(np.ones((1, 2)), np.array([0.0]))
        self.x = np.array([1.0, -1.0])
        self.obj = pinned_target_objective(np.zeros(2), n_components=5)
        self.rng = np.random.default_rng(0)

    def config(self, **kw):
        base = dict(c=0.01, C_accept=0.5, D_size=2)
        base.update(kw)
        return SolverConfig(**base)

    def test_clear_improvement_accepted(self):
        out = additional_sampling_test(
            self.cs, self.obj, self.x, np.zeros(2), eta_k=0.5,
            cfg=self.config(), rng=self.rng, meter=BudgetMeter(),
        )
        assert out.accepted

    def test_clear_regression_rejected(self):
        out = additional_sampling_test(
            self.cs, self.obj, self.x, np.array([10.0, -10.0]), eta_k=0.5,
            cfg=self.config(), rng=self.rng, meter=BudgetMeter(),
        )
        assert not out.accepted

    def test_threshold_boundary(self):
        # f(x) = 1, s = -x so ||s||^2 = 2: the cutoff value is
        # 1 - 2c + C eta^2 = 1 - 0.02 + 0.125 = 1.105.
        cutoff = 1.0 - 2 * 0.01 + 0.5 * 0.5**2
        for delta, expect in [(-1e-6, True), (1e-6, False)]:
            a = math.sqrt(cutoff + delta)
            out = additional_sampling_test(
                self.cs, self.obj, self.x, np.array([a, -a]), eta_k=0.5,
                cfg=self.config(), rng=np.random.default_rng(1), meter=BudgetMeter(),
            )
            assert out.accepted is expect

    def test_control_direction_norm(self):
        # grad at x is x itself; x - grad = 0 projects to 0, so s = -x.
        out = additional_sampling_test(
            self.cs, self.obj, self.x, np.zeros(2), eta_k=0.5,
            cfg=self.config(), rng=self.rng, meter=BudgetMeter(),
        )
        assert out.s_norm == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_charges_one_grad_and_two_values_per_index(self):
        meter = BudgetMeter()
        additional_sampling_test(
            self.cs, self.obj, self.x, np.zeros(2), eta_k=0.5,
            cfg=self.config(D_size=3), rng=self.rng, meter=meter,
        )
        assert meter.component_grad_evals == 3
        assert meter.component_value_evals == 6
        # CG work is charged by the caller, not in here.
        assert meter.cg_scalar_products == 0

    def test_nonfinite_trial_value_rejects(self):
        def fragile(i, x):
            if abs(x[0]) > 5:
                return float("nan"), np.zeros(2)
            d = x.copy()
            return 0.5 * float(d @ d), d

        obj = FiniteSumObjective(
            weights=uniform_weights(4), dim=2, kernel=CallableKernel(fragile, 4)
        )
        out = additional_sampling_test(
            self.cs, obj, self.x, np.array([10.0, -10.0]), eta_k=0.5,
            cfg=self.config(), rng=self.rng, meter=BudgetMeter(),
        )
        assert not out.accepted


class TestSearchDirection:
    def test_direction_consistent_with_projection(self):
        cs = orthonormal_system(3, 9, seed=5)
        rng = np.random.default_rng(6)
        x = exact_project(cs, rng.standard_normal(9))
        g = rng.standard_normal(9)
        p, proj = search_direction(cs, g, x, eta_k=1e-8)
        np.testing.assert_array_equal(p, proj.point - x)
        assert proj.residual_norm <= 1e-8


class TestRunBehaviour:
    def test_zero_iterations_yields_single_state_row(self):
        cs = orthonormal_system(2, 5, seed=7)
        obj = pinned_target_objective(np.zeros(5), n_components=3)
        res = run(cs, obj, SolverConfig(k_max=0, N0=2, D_size=2))
        assert len(res.records) == 1
        r = res.records[0]
        assert (r.k, r.Nk, r.t, r.accepted, r.unsuccessful) == (0, 2, 0.0, False, False)
        assert r.scalar_products == 0
        assert res.status == STATUS_MAX_ITERATIONS

    def test_exact_quadratic_reaches_stationarity(self):
        # Orthonormal rows make every projection exact, and the objective is
        # centred on a feasible point: one unit step lands on the solution
        # and the next iteration certifies it.
        cs = orthonormal_system(2, 6, seed=8)
        x_star = exact_project(cs, np.random.default_rng(9).standard_normal(6))
        obj = pinned_target_objective(x_star, n_components=3)
        res = run(cs, obj, SolverConfig(N0=3, k_max=50, tol_d=1e-10, tol_e=1e-10))
        assert res.status == STATUS_STATIONARY
        assert len(res.records) == 3  # two iterations plus the state row
        np.testing.assert_allclose(res.x, x_star, rtol=0, atol=1e-12)
        assert res.records[0].t == 1.0
        assert res.final_record.norm_d_true <= 1e-12

    def test_stationarity_never_fires_below_full_sample(self):
        # Identical components mean every trial is accepted, so the batch
        # never grows: the run converges yet may not report stationary,
        # because that test is reserved for full-sample iterations.
        cs = orthonormal_system(2, 6, seed=8)
        x_star = exact_project(cs, np.random.default_rng(9).standard_normal(6))
        obj = pinned_target_objective(x_star, n_components=3)
        res = run(
            cs, obj,
            SolverConfig(N0=1, dN=1, D_size=2, k_max=50, seed=3, tol_d=1e-10, tol_e=1e-10),
        )
        assert res.status == STATUS_MAX_ITERATIONS
        assert all(r.Nk == 1 for r in res.records)
        np.testing.assert_allclose(res.x, x_star, rtol=0, atol=1e-10)

    def test_mixed_accept_reject_bookkeeping(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        cfg = SolverConfig(N0=2, dN=2, D_size=3, k_max=60, seed=0, s_exp=1.0, t_min=1e-3)
        res = run(cs, obj, cfg)
        rows = res.records[:-1]
        minibatch = [r for r in rows if r.Nk < 25]
        rejected = [r for r in minibatch if not r.accepted and not r.unsuccessful]
        accepted = [r for r in minibatch if r.accepted]
        assert len(rejected) == 12  # (25 - 2 + 1) / 2 rounded: batch growth path
        assert len(accepted) > 0
        for r, nxt in zip(rows, rows[1:]):
            if r.Nk < 25 and not r.accepted:
                # Rejection: iterate frozen bitwise, batch grows by dN.
                assert nxt.f_true == r.f_true
                assert nxt.e_x == r.e_x
                assert nxt.Nk == min(25, r.Nk + cfg.dN)
            elif r.Nk < 25 and r.accepted:
                assert nxt.Nk == r.Nk
            else:
                assert nxt.Nk == r.Nk  # full phase never shrinks or grows

    def test_budget_is_monotone_and_positive(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        res = run(cs, obj, SolverConfig(N0=2, dN=2, D_size=3, k_max=40, seed=0))
        budgets = [r.scalar_products for r in res.records]
        assert budgets[0] > 0
        assert all(a <= b for a, b in zip(budgets, budgets[1:]))
        assert res.meter.scalar_products == budgets[-1]
        assert res.projections_checked > 0

    def test_cg_iterations_bounded_per_row(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        res = run(cs, obj, SolverConfig(N0=2, dN=2, D_size=3, k_max=40, seed=0))
        for r in res.records[:-1]:
            # At most two projection solves per iteration, 10 m each.
            assert 0 <= r.cg_iters <= 2 * 10 * cs.m

    def test_feasibility_drift_bounded_by_tolerance_sums(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        cfg = SolverConfig(N0=2, dN=2, D_size=3, k_max=60, seed=0, s_exp=1.0)
        res = run(cs, obj, cfg)
        bound = 0.0
        for r in res.records:
            assert r.e_x <= bound + 1e-8
            bound += eta(r.k, cfg.s_exp)

    def test_unsuccessful_steps_reproject(self):
        # A strict descent constant makes the check fail once the true
        # direction is small against the projection inexactness.
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(
            make_noisy_quadratic(8, 6, sigma=0.0, seed=200, q_scale=3.0)
        )
        cfg = SolverConfig(N0=6, dN=1, k_max=120, seed=0, s_exp=0.8, c=0.9)
        res = run(cs, obj, cfg)
        rows = res.records[:-1]
        unsuccessful = [r for r in rows if r.unsuccessful]
        assert len(unsuccessful) > 0
        for r, nxt in zip(rows, rows[1:]):
            if r.unsuccessful:
                assert r.t == 0.0
                assert not r.accepted
                assert nxt.e_x <= eta(r.k, cfg.s_exp) + 1e-10

    def test_infeasible_start_contracts_the_gap(self):
        cs = orthonormal_system(3, 8, seed=10, shift=1.0)
        x_star = exact_project(cs, np.zeros(8))
        obj = pinned_target_objective(x_star, n_components=2)
        x0 = x_star + 0.5  # violates the constraints
        res = run(cs, obj, SolverConfig(N0=2, k_max=5), x0=x0)
        e0 = res.records[0].e_x
        assert e0 == pytest.approx(feasibility_gap(cs, x0), rel=1e-12)
        assert e0 > 0.1
        assert res.records[1].e_x < 1e-8  # one exact step restores feasibility

    def test_single_component_objective_runs_full_sample(self):
        cs = orthonormal_system(2, 5, seed=11)
        x_star = exact_project(cs, np.ones(5))
        obj = pinned_target_objective(x_star, n_components=1)
        res = run(cs, obj, SolverConfig(N0=1, D_size=1, k_max=10, tol_d=1e-10, tol_e=1e-10))
        assert all(r.Nk == 1 for r in res.records)
        assert res.status == STATUS_STATIONARY

    def test_dimension_mismatch_rejected(self):
        cs = orthonormal_system(2, 5, seed=12)
        obj = pinned_target_objective(np.zeros(4), n_components=2)
        with pytest.raises(ConfigInvalid):
            run(cs, obj, SolverConfig(N0=2))

    def test_oversized_initial_batch_rejected(self):
        cs = orthonormal_system(2, 5, seed=13)
        obj = pinned_target_objective(np.zeros(5), n_components=3)
        with pytest.raises(ConfigInvalid):
            run(cs, obj, SolverConfig(N0=7))

    def test_deterministic_given_seed(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        cfg = SolverConfig(N0=2, dN=2, D_size=3, k_max=30, seed=0)
        a = run(cs, obj, cfg)
        b = run(cs, obj, cfg)
        assert a.records == b.records
        np.testing.assert_array_equal(a.x, b.x)

    def test_seed_changes_the_trajectory(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        a = run(cs, obj, SolverConfig(N0=2, dN=2, D_size=3, k_max=30, seed=0))
        b = run(cs, obj, SolverConfig(N0=2, dN=2, D_size=3, k_max=30, seed=1))
        assert a.records != b.records

    def test_oracle_metrics_do_not_touch_budget_or_iterates(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        base = dict(N0=2, dN=2, D_size=3, k_max=30, seed=0)
        with_oracle = run(cs, obj, SolverConfig(**base, oracle_metrics=True))
        without = run(cs, obj, SolverConfig(**base, oracle_metrics=False))
        np.testing.assert_array_equal(with_oracle.x, without.x)
        assert with_oracle.meter.scalar_products == without.meter.scalar_products
        assert all(math.isnan(r.f_true) for r in without.records)
        assert all(math.isnan(r.norm_d_true) for r in without.records)
        assert all(math.isfinite(r.f_true) for r in with_oracle.records)


class TestTraceIO:
    def make_records(self):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        return run(cs, obj, SolverConfig(N0=2, dN=2, D_size=3, k_max=20, seed=0)).records

    def test_round_trip_preserves_every_field(self, tmp_path):
        records = self.make_records()
        path = tmp_path / "trace.csv"
        write_trace(records, path)
        assert read_trace(path) == records

    def test_header_line(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace(self.make_records(), path)
        assert path.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)

    def test_writes_are_byte_identical(self, tmp_path):
        records = self.make_records()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace(records, p1)
        write_trace(records, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_row_count_is_iterations_plus_state_row(self, tmp_path):
        cs = generate_constraints(8, 3, seed=100)
        obj = noisy_quadratic_objective(make_noisy_quadratic(8, 25, sigma=1.5, seed=200))
        res = run(cs, obj, SolverConfig(N0=2, dN=2, D_size=3, k_max=20, seed=0))
        path = tmp_path / "trace.csv"
        write_trace(res.records, path)
        n_lines = len(path.read_text().splitlines())
        assert n_lines == 1 + 20 + 1  # header + iterations + state row

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("k,N_k,nope\n0,1,2\n")
        with pytest.raises(ParseError):
            read_trace(path)

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text(",".join(TRACE_COLUMNS) + "\n0,1,0.5\n")
        with pytest.raises(ParseError):
            read_trace(path)
