import numpy as np
import pytest

import pass_isac.ao as ao
from pass_isac import (Infeasible, PlacementGrid, SystemConfig, effective_channels,
                       optimize_beamforming, solve, uniform_layout)
from pass_isac.ao import CONVERGED, INFEASIBLE, ITER_LIMIT
from pass_isac.experiments import sample_scenario


@pytest.fixture(scope="module")
def solved():
    cfg = SystemConfig()
    out = []
    for seed in (0, 1):
        sc = sample_scenario(cfg, seed)
        out.append((cfg, sc, solve(sc, cfg)))
    return out


def test_frozen_layout_reproduces_beamforming_optimum():
    cfg = SystemConfig()
    sc = sample_scenario(cfg, 5)
    rep = solve(sc, cfg, optimize_placement=False)
    ref = optimize_beamforming(effective_channels(uniform_layout(cfg), sc, cfg), sc, cfg)
    assert rep.status == CONVERGED and len(rep.iterates) == 1
    assert rep.trace_crb == pytest.approx(ref.objective, rel=1e-12)
    assert np.array_equal(rep.layout.x_pos, uniform_layout(cfg).x_pos)


def test_accepted_trace_monotone_and_best_is_minimum(solved):
    for cfg, sc, rep in solved:
        acc = rep.accepted_trace()
        assert np.all(np.diff(acc) <= 0)
        feas = [it.trace_crb for it in rep.iterates if it.feasible]
        assert rep.iterates[rep.best].feasible
        assert rep.trace_crb == min(feas)
        assert rep.status in (CONVERGED, ITER_LIMIT)
        assert rep.rcrb == pytest.approx(np.sqrt(rep.trace_crb))


def test_result_is_feasible_and_improves_on_uniform(solved):
    for cfg, sc, rep in solved:
        rep.layout.validate(cfg)
        ch = effective_channels(rep.layout, sc, cfg)
        assert rep.beams.check(ch, cfg)
        assert rep.trace_crb <= rep.iterates[0].trace_crb


def test_fixed_point_rerun(solved):
    cfg, sc, rep = solved[0]
    again = solve(sc, cfg, init_layout=rep.layout)
    assert again.outer_iters == 1 and again.status == CONVERGED
    assert again.trace_crb == pytest.approx(rep.trace_crb, rel=1e-4)


def test_deterministic(solved):
    cfg, sc, rep = solved[1]
    again = solve(sc, cfg)
    assert np.array_equal(again.layout.x_pos, rep.layout.x_pos)
    assert [it.trace_crb for it in again.iterates] == [it.trace_crb for it in rep.iterates]


def test_unattainable_targets_reported_not_raised():
    # two feeds cannot serve three users at 6 dB: sum SINR/(1+SINR) < N
    cfg = SystemConfig(N=2)
    rep = solve(sample_scenario(cfg, 0), cfg)
    assert rep.status == INFEASIBLE and rep.best is None and not rep.feasible
    assert rep.layout is None and rep.iterates == []


def test_infeasible_proposal_keeps_previous_layout(monkeypatch):
    cfg = SystemConfig()
    sc = sample_scenario(cfg, 2)
    calls = {"n": 0}
    real = ao._beamform

    def flaky(layout, scenario, c):
        calls["n"] += 1
        if calls["n"] > 1:
            raise Infeasible("forced")
        return real(layout, scenario, c)

    monkeypatch.setattr(ao, "_beamform", flaky)
    rep = solve(sc, cfg)
    assert rep.status == CONVERGED
    # without a feasible re-solve only the fixed-beam placement can be accepted
    for it in rep.iterates:
        assert it.feasible
    assert np.all(np.diff(rep.accepted_trace()) <= 0)


def test_iteration_cap():
    cfg = SystemConfig()
    sc = sample_scenario(cfg, 0)
    rep = solve(sc, cfg, max_outer=1, rel_tol=0.0)
    assert rep.outer_iters == 1
    assert rep.status in (ITER_LIMIT, CONVERGED)


def test_discrete_scheme_stays_on_grid():
    cfg = SystemConfig()
    grid = PlacementGrid.discrete(cfg, 15)
    rep = solve(sample_scenario(cfg, 4), cfg, grid=grid)
    assert np.all(np.isin(rep.layout.x_pos, grid.points))


def test_sensing_layout_lowers_isotropic_crb_and_stays_valid():
    from pass_isac import Scenario, fim_crb
    from pass_isac.ao import sensing_layout
    cfg = SystemConfig()
    sc = sample_scenario(cfg, 3)
    quiet = Scenario(np.zeros((0, 2)), sc.target, sc.beta)
    lay = uniform_layout(cfg)
    new = sensing_layout(lay, sc, cfg)
    new.validate(cfg)
    R = cfg.P * np.eye(cfg.N) / cfg.N
    crb = lambda L: fim_crb(effective_channels(L, quiet, cfg.replace(K=0)), R, sc.beta, cfg.T,
                            cfg.sigmas_sq).trace_crb
    assert crb(new) < crb(lay)
    # swept to a fixed point
    assert np.array_equal(sensing_layout(new, sc, cfg).x_pos, new.x_pos)


def test_sensing_proposal_can_be_disabled():
    cfg = SystemConfig(M=2)
    sc = sample_scenario(cfg, 1)
    with_p = solve(sc, cfg)
    without = solve(sc, cfg, sensing_proposal=False)
    assert with_p.feasible and without.feasible
    assert np.all(np.diff(without.accepted_trace()) <= 0)
