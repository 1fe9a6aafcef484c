"""scikit-learn style wrapper around the alternating optimiser.

The "data" here is a single :class:`Scenario`, so only ``fit`` and ``score``
are meaningful; ``get_params`` / ``set_params`` / ``clone`` work as usual.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .ao import INFEASIBLE, solve
from .config import SystemConfig
from .errors import Infeasible
from .experiments import Scheme
from .fim import trace_crb_from_channels
from .geometry import Scenario, effective_channels


class PassIsacDesigner(BaseEstimator):
    """Jointly design beamformers and PA positions for one scenario.

    Parameters
    ----------
    config : SystemConfig, optional
        Physical constants; defaults to :class:`SystemConfig()`.
    scheme : str
        ``"continuous"``, ``"uniform"`` or ``"discrete:<Z>"``.
    max_outer : int
        Cap on alternating-optimisation rounds.
    rel_tol : float
        Relative tr(CRB) change that ends the alternation.

    Fitted attributes: ``layout_``, ``beams_``, ``report_``, ``trace_crb_``,
    ``rcrb_``.
    """

    def __init__(self, config: Optional[SystemConfig] = None, scheme: str = "continuous",
                 max_outer: int = 20, rel_tol: float = 1e-4):
        self.config = config
        self.scheme = scheme
        self.max_outer = max_outer
        self.rel_tol = rel_tol

    def _cfg(self) -> SystemConfig:
        return self.config if self.config is not None else SystemConfig()

    def fit(self, scenario: Scenario, y=None):
        if not isinstance(scenario, Scenario):
            raise TypeError("fit expects a Scenario")
        cfg = self._cfg()
        sch = Scheme.parse(self.scheme)
        rep = solve(scenario, cfg, grid=sch.grid(cfg), optimize_placement=sch.kind != "uniform",
                    max_outer=self.max_outer, rel_tol=self.rel_tol)
        if rep.status == INFEASIBLE:
            raise Infeasible("SINR targets are unattainable for this scenario")
        self.report_ = rep
        self.layout_ = rep.layout
        self.beams_ = rep.beams
        self.trace_crb_ = rep.trace_crb
        self.rcrb_ = rep.rcrb
        self.scenario_ = scenario
        return self

    def _check_fitted(self):
        if not hasattr(self, "report_"):
            raise NotFittedError("call fit before using this designer")

    def crb(self, scenario: Optional[Scenario] = None) -> float:
        """tr(CRB) of the fitted design evaluated on ``scenario`` (default:
        the scenario it was fitted on)."""
        self._check_fitted()
        sc = scenario if scenario is not None else self.scenario_
        cfg = self._cfg()
        ch = effective_channels(self.layout_, sc, cfg)
        return trace_crb_from_channels(ch, self.beams_.R, sc.beta, cfg.T, cfg.sigmas_sq)

    def score(self, scenario: Optional[Scenario] = None, y=None) -> float:
        """Negative RCRB in metres, so that larger is better."""
        return -float(np.sqrt(self.crb(scenario)))
