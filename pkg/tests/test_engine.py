import math

import numpy as np
import pytest

from distributed_opf.case_io import parse_matpower
from distributed_opf.config import AlgorithmConfig, Balancing, Scheme
from distributed_opf.engine import ADMMEngine, ResidualReport, WorkerPool, run
from distributed_opf.exceptions import BranchInfeasible, NotConverged
from distributed_opf.local_solvers import GenProxInput, solve_generator
from distributed_opf.network import build_layout, build_network

from .conftest import TWO_BUS_M


def _engine(net_layout, **kw) -> ADMMEngine:
    net, layout = net_layout
    return ADMMEngine(net, layout, AlgorithmConfig(**kw))


def _residuals(r, s) -> ResidualReport:
    r, s = np.asarray(r, dtype=float), np.asarray(s, dtype=float)
    return ResidualReport(
        r=r,
        s=s,
        r_norm=float(np.linalg.norm(r)),
        s_norm=float(np.linalg.norm(s)),
        eps_pri=0.0,
        eps_dual=0.0,
        max_abs_r=float(np.abs(r).max()),
    )


def test_relaxed_and_plain_dual_updates(two_bus):
    engine = _engine(two_bus, scheme=Scheme.over_relaxed, alpha=1.5)
    n = two_bus[1].n_x
    x = np.ones(n)
    rho = np.full(n, 10.0)
    lam_hat = engine.relax_dual(x, np.full(n, 0.5), np.zeros(n), rho, 1.5)
    assert lam_hat == pytest.approx(np.full(n, 2.5))
    lam = engine.lambda_update(x, np.full(n, 0.75), lam_hat, rho)
    assert lam == pytest.approx(np.full(n, 5.0))


def test_consensus_leaves_dual_unchanged(two_bus):
    engine = _engine(two_bus)
    layout = two_bus[1]
    z = np.linspace(0.1, 0.8, layout.n_z)
    lam = np.linspace(-1, 1, layout.n_lambda)
    x = layout.duplicate(z)
    assert (engine.lambda_update(x, z, lam, np.full(layout.n_x, 3.0)) == lam).all()


def test_residual_thresholds(two_bus):
    engine = _engine(two_bus)
    layout = two_bus[1]
    z = np.linspace(0.1, 0.8, layout.n_z)
    x = layout.duplicate(z) + 0.5
    lam = np.full(layout.n_lambda, 2.0)
    res = engine.compute_residuals(x, z, z, lam, np.ones(layout.n_x))
    assert res.r == pytest.approx(np.full(layout.n_x, 0.5))
    assert res.s_norm == 0
    cfg = engine.config
    pz = layout.duplicate(z)
    want = math.sqrt(layout.n_lambda) * cfg.eps_abs + cfg.eps_rel * max(
        np.linalg.norm(x), np.linalg.norm(pz)
    )
    assert res.eps_pri == pytest.approx(want, rel=1e-15)
    assert res.eps_dual == pytest.approx(
        math.sqrt(layout.n_x) * cfg.eps_abs + cfg.eps_rel * np.linalg.norm(lam), rel=1e-15
    )
    assert res.eps_pri >= math.sqrt(layout.n_lambda) * cfg.eps_abs


def test_dual_residual_uses_reference(two_bus):
    engine = _engine(two_bus)
    layout = two_bus[1]
    z = np.zeros(layout.n_z)
    z_ref = z.copy()
    z_ref[-1] = 0.1
    rho = np.full(layout.n_x, 4.0)
    res = engine.compute_residuals(layout.duplicate(z), z, z_ref, np.zeros(layout.n_x), rho)
    slots = np.flatnonzero(layout.zmap == layout.n_z - 1)
    assert res.s[slots] == pytest.approx(np.full(len(slots), 0.4))
    assert np.count_nonzero(res.s) == len(slots)


def test_fast_step_momentum_sequence(two_bus):
    engine = _engine(two_bus, scheme=Scheme.fast)
    state = engine.init_state()
    n = two_bus[1].n_x
    z_prev, lam_prev = state.z.copy(), state.lam.copy()

    assert not engine.fast_step(state, _residuals(np.ones(n), np.zeros(n)), z_prev, lam_prev)
    assert state.alpha_acc == pytest.approx(1.618034, abs=1e-6)
    assert not engine.fast_step(state, _residuals(np.full(n, 0.5), np.zeros(n)), z_prev, lam_prev)
    assert state.alpha_acc == pytest.approx(2.193527, abs=1e-6)


def test_fast_step_restart_without_progress(two_bus):
    engine = _engine(two_bus, scheme=Scheme.fast)
    state = engine.init_state()
    n = two_bus[1].n_x
    res = _residuals(np.full(n, 0.1), np.full(n, 0.2))
    z_prev, lam_prev = state.z.copy(), state.lam.copy()
    engine.fast_step(state, res, z_prev, lam_prev)
    c_old = state.c_comb

    state.z = state.z + 1.0
    state.lam = state.lam - 1.0
    assert engine.fast_step(state, res, z_prev, lam_prev)
    assert state.alpha_acc == 1.0
    assert (state.z_hat == state.z).all()
    assert (state.lam_hat == state.lam).all()
    assert state.c_comb == c_old


def test_restart_to_previous(two_bus):
    engine = _engine(two_bus, scheme=Scheme.fast, restart_to_previous=True, combined_residual_init=0.0)
    state = engine.init_state()
    n = two_bus[1].n_x
    z_prev = state.z - 1.0
    lam_prev = state.lam + 1.0
    assert engine.fast_step(state, _residuals(np.ones(n), np.ones(n)), z_prev, lam_prev)
    assert (state.z_hat == z_prev).all()
    assert (state.lam_hat == lam_prev).all()


def test_adapt_rho_local(two_bus):
    engine = _engine(two_bus, scheme=Scheme.adaptive)
    rho = np.array([10.0, 10.0, 10.0])
    res = _residuals([1.0, 0.001, 0.5], [0.05, 0.5, 0.5])
    assert engine.adapt_rho(rho, res) == pytest.approx([20.0, 6.6667, 10.0], abs=1e-4)


def test_adapt_rho_global(two_bus):
    engine = _engine(two_bus, scheme=Scheme.adaptive, balancing=Balancing.global_)
    rho = np.array([10.0, 100.0])
    assert engine.adapt_rho(rho, _residuals([1.0, 1.0], [0.01, 0.0])) == pytest.approx([20.0, 200.0])
    assert engine.adapt_rho(rho, _residuals([0.0, 0.001], [1.0, 0.0])) == pytest.approx(
        [10 / 1.5, 100 / 1.5]
    )


def test_adapt_rho_clamped(two_bus):
    engine = _engine(two_bus, scheme=Scheme.adaptive, rho_max=1e3)
    new = engine.adapt_rho(np.array([800.0]), _residuals([1.0], [0.0]))
    assert new[0] == 1e3


def test_adaptation_schedule(two_bus):
    engine = _engine(two_bus, scheme=Scheme.adaptive, k_f=3)
    assert [k for k in range(1, 10) if engine._should_adapt(k, False)] == [3, 6, 9]
    assert not _engine(two_bus, k_f=3)._should_adapt(3, False)

    frozen = _engine(two_bus, scheme=Scheme.fast_adaptive, k_f=2, adapt_only_on_restart=True)
    assert not frozen._should_adapt(2, False)
    assert frozen._should_adapt(2, True)
    assert not frozen._should_adapt(3, True)


def test_x_update_composition(two_bus):
    net, layout = two_bus
    engine = ADMMEngine(net, layout)
    rng = np.random.default_rng(1)
    z = layout.z_init(net) + rng.normal(scale=0.1, size=layout.n_z)
    lam = rng.normal(size=layout.n_lambda)
    rho = rng.uniform(1, 20, size=layout.n_x)
    x, branch_w = engine.x_update(z, lam, rho)
    dup = layout.duplicate(z)
    gen = net.gens[0]
    p, q = solve_generator(
        GenProxInput(
            c2=gen.c2, c1=gen.c1, base=gen.base,
            lambda_p=lam[0], lambda_q=lam[1], rho_p=rho[0], rho_q=rho[1],
            p_dup=dup[0], q_dup=dup[1],
            p_min=gen.p_min, p_max=gen.p_max, q_min=gen.q_min, q_max=gen.q_max,
        )
    )
    assert (x[0], x[1]) == (p, q)
    assert branch_w.shape == (1, 2)


def test_first_iteration_feasible(case5):
    net, layout = case5
    with ADMMEngine(net, layout) as engine:
        state = engine.init_state()
        engine.step(state)
    x, z = state.x, state.z
    assert np.isfinite(x).all()
    for g, gen in enumerate(net.gens):
        assert gen.p_min <= x[g] <= gen.p_max
        assert gen.q_min <= x[layout.n_gens + g] <= gen.q_max
    n = len(net.branches)
    for l, br in enumerate(net.branches):
        w_i = x[layout.x_end(l) + 2]
        w_j = x[layout.x_end(l + n) + 2]
        wr, wi = state.branch_w[l]
        assert wr * wr + wi * wi <= w_i * w_j + 1e-9
        if br.s_max is not None:
            for base in (layout.x_end(l), layout.x_end(l + n)):
                assert x[base] ** 2 + x[base + 1] ** 2 <= br.s_max**2 + 1e-9

    for bus, grp in zip(net.buses, layout.bus_groups):
        w = z[grp.z_w]
        kcl_p = z[grp.gen_p].sum() - bus.p_d - z[grp.z_end_p].sum() - bus.g_sh * w
        kcl_q = z[grp.gen_q].sum() - bus.q_d - z[grp.z_end_q].sum() + bus.b_sh * w
        assert abs(kcl_p) <= 1e-12
        assert abs(kcl_q) <= 1e-12


def test_unit_relaxation_matches_vanilla(case5):
    net, layout = case5
    plain = run(net, layout, AlgorithmConfig(scheme=Scheme.vanilla, max_iter=50), raise_on_failure=False)
    relaxed = run(
        net, layout, AlgorithmConfig(scheme=Scheme.over_relaxed, alpha=1.0, max_iter=50), raise_on_failure=False
    )
    assert len(plain.trace) == 50
    assert plain.trace == relaxed.trace
    assert (plain.x == relaxed.x).all()
    assert (plain.lam == relaxed.lam).all()


def test_restart_keeps_combined_residual_monotone(case5):
    net, layout = case5
    config = AlgorithmConfig(scheme=Scheme.fast)
    restarts = 0
    with ADMMEngine(net, layout, config) as engine:
        state = engine.init_state()
        for _ in range(60):
            c_before = state.c_comb
            _, restarted = engine.step(state)
            if restarted:
                restarts += 1
                assert state.alpha_acc == 1.0
                assert (state.z_hat == state.z).all()
                assert (state.lam_hat == state.lam).all()
                assert state.c_comb == c_before
            else:
                assert state.c_comb < config.eta * c_before
                assert state.alpha_acc > 1.0
    assert state.k == 60


def test_adaptation_cadence_and_factors(case5, monkeypatch):
    net, layout = case5
    config = AlgorithmConfig(scheme=Scheme.adaptive, max_iter=40)
    engine = ADMMEngine(net, layout, config)
    snapshots = []
    step = engine.step

    def spy(state):
        snapshots.append((state.k, state.rho.copy()))
        return step(state)

    monkeypatch.setattr(engine, "step", spy)
    with engine:
        engine.run(raise_on_failure=False)

    changed = 0
    for (_, before), (k, after) in zip(snapshots, snapshots[1:]):
        # after 是第 k 次迭代结束后（可能调整过）的 ρ
        if k % config.k_f != 0:
            assert (before == after).all()
            continue
        ratio = after / before
        ok = np.isclose(ratio, 1.0, rtol=0, atol=0) | np.isclose(ratio, 2.0) | np.isclose(ratio, 1 / 1.5)
        assert ok.all()
        assert (after >= config.rho_min).all() and (after <= config.rho_max).all()
        changed += int(np.count_nonzero(ratio != 1.0))
    assert changed > 0


def test_stopping_is_sound(two_bus):
    net, layout = two_bus
    with ADMMEngine(net, layout) as engine:
        report = engine.run()
        res = engine.compute_residuals(report.x, report.z, report.z_ref, report.lam, report.rho)
    assert report.converged
    assert res.converged
    assert res.r_norm == report.last.r_norm
    assert report.max_abs_r <= res.eps_pri
    assert len(report.trace) == report.iterations


@pytest.mark.parametrize("scheme", [Scheme.vanilla, Scheme.fast_adaptive, Scheme.over_relaxed_adaptive])
def test_branches_survive_active_constraints(case5, scheme):
    # 迭代到电压上限和 SOC 约束都起作用的阶段，支路子问题不应失败
    report = run(*case5, AlgorithmConfig(scheme=scheme, alpha=1.5, max_iter=400), raise_on_failure=False)
    assert report.converged or report.iterations == 400
    assert np.isfinite(report.objective)


@pytest.mark.parametrize("threads", [2, 8])
def test_thread_count_does_not_change_trace(case5, threads):
    net, layout = case5
    config = AlgorithmConfig(scheme=Scheme.fast_adaptive, max_iter=30)
    serial = run(net, layout, config, raise_on_failure=False)
    with WorkerPool(threads) as pool, ADMMEngine(net, layout, config, pool=pool) as engine:
        parallel = engine.run(raise_on_failure=False)
    assert serial.trace == parallel.trace
    assert (serial.x == parallel.x).all()
    assert (serial.z == parallel.z).all()


def test_not_converged_carries_report(two_bus):
    net, layout = two_bus
    with pytest.raises(NotConverged) as e:
        run(net, layout, AlgorithmConfig(max_iter=3))
    report = e.value.report
    assert report.iterations == 3
    assert len(report.trace) == 3
    assert not report.converged


def test_solver_error_names_component():
    case = parse_matpower(TWO_BUS_M)
    case.branches[0].b_charge = 1.0
    case.branches[0].rate_a = 0.1
    net = build_network(case)
    with pytest.raises(BranchInfeasible) as e:
        run(net, build_layout(net))
    assert e.value.component == "branch 0"


def test_trace_row_csv(two_bus):
    report = run(*two_bus, AlgorithmConfig(max_iter=2), raise_on_failure=False)
    row = report.trace[0].csv_row()
    assert row[0] == "1"
    assert row[-1] == "0"
    assert float(row[1]) == report.trace[0].r_norm
    assert len(row) == 9


@pytest.mark.slow
class TestCase5Iterations:
    "case5 上各格式的迭代次数"

    @pytest.fixture(scope="class")
    def vanilla(self, case5):
        return run(*case5, AlgorithmConfig(scheme=Scheme.vanilla))

    def test_vanilla(self, vanilla):
        assert vanilla.converged
        assert 1150 <= vanilla.iterations <= 2200
        assert vanilla.max_abs_r <= 1e-3

    @pytest.mark.parametrize("alpha", [1.5, 1.8])
    def test_over_relaxed_is_faster(self, case5, vanilla, alpha):
        report = run(*case5, AlgorithmConfig(scheme=Scheme.over_relaxed, alpha=alpha))
        assert report.iterations < vanilla.iterations
        assert report.max_abs_r <= 1e-3
        assert report.objective == pytest.approx(vanilla.objective, rel=1e-3)

    @pytest.mark.parametrize("scheme", [Scheme.fast_adaptive, Scheme.over_relaxed_adaptive])
    def test_adaptive_overlays_halve_iterations(self, case5, vanilla, scheme):
        report = run(*case5, AlgorithmConfig(scheme=scheme, alpha=1.0))
        assert report.iterations <= 0.5 * vanilla.iterations
        assert report.max_abs_r <= 1e-3
        assert report.objective == pytest.approx(vanilla.objective, rel=1e-3)

    def test_adaptive_insensitive_to_initial_rho(self, case5):
        tuned = run(*case5, AlgorithmConfig(scheme=Scheme.adaptive))
        flat = run(*case5, AlgorithmConfig(scheme=Scheme.adaptive, rho_power=1.0, rho_voltage=1.0))
        assert flat.converged
        assert flat.iterations <= 3 * tuned.iterations


def test_worker_pool_keeps_order():
    with WorkerPool(4) as pool:
        assert pool.map(lambda i: i * i, range(20)) == [i * i for i in range(20)]
    with pytest.raises(ValueError):
        WorkerPool(0)
