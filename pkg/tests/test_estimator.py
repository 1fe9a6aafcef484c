import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pass_isac import Infeasible, SystemConfig, solve
from pass_isac.estimator import PassIsacDesigner
from pass_isac.experiments import sample_scenario


def test_params_and_clone():
    est = PassIsacDesigner(scheme="discrete:15", max_outer=3)
    assert est.get_params()["scheme"] == "discrete:15"
    c = clone(est).set_params(rel_tol=1e-3)
    assert c.max_outer == 3 and c.rel_tol == 1e-3 and est.rel_tol == 1e-4


def test_fit_matches_solver():
    cfg = SystemConfig(M=2)
    sc = sample_scenario(cfg, 0)
    est = PassIsacDesigner(config=cfg).fit(sc)
    rep = solve(sc, cfg)
    assert est.trace_crb_ == pytest.approx(rep.trace_crb, rel=1e-10)
    assert est.crb() == pytest.approx(est.trace_crb_, rel=1e-10)
    assert est.score() == pytest.approx(-np.sqrt(est.trace_crb_))


def test_uniform_scheme_keeps_layout():
    cfg = SystemConfig(M=2)
    est = PassIsacDesigner(config=cfg, scheme="uniform").fit(sample_scenario(cfg, 0))
    assert est.report_.outer_iters == 0 and len(est.report_.iterates) == 1
    assert np.array_equal(est.layout_.x_pos[:, 0], [cfg.D, cfg.D + cfg.L])


def test_errors():
    with pytest.raises(NotFittedError):
        PassIsacDesigner().score()
    with pytest.raises(TypeError):
        PassIsacDesigner().fit(np.zeros(3))
    cfg = SystemConfig(N=2, M=2)
    with pytest.raises(Infeasible):
        PassIsacDesigner(config=cfg).fit(sample_scenario(cfg, 0))
