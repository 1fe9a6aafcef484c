"""Alternating optimisation between digital beamforming and PA placement."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SystemConfig
from .errors import Infeasible, SingularFim, SolverFailure
from .fim import trace_crb_from_channels
from .geometry import PassLayout, Scenario, effective_channels, sinr, uniform_layout
from .pinching import PenaltyState, PlacementGrid, penalty_loop, sinr_feasible, update_X
from .sdr import BeamformingSolution, optimize_beamforming

log = logging.getLogger(__name__)

CONVERGED = "Converged"
ITER_LIMIT = "IterLimit"
INFEASIBLE = "Infeasible"


@dataclass
class IterateRecord:
    trace_crb: float
    rcrb: float
    feasible: bool
    sinr: np.ndarray
    power: float
    wall_s: float
    accepted: bool
    layout: Optional[PassLayout] = None
    beams: Optional[BeamformingSolution] = None


@dataclass
class SolveReport:
    iterates: list = field(default_factory=list)
    best: Optional[int] = None
    status: str = ITER_LIMIT
    outer_iters: int = 0

    @property
    def layout(self) -> Optional[PassLayout]:
        return None if self.best is None else self.iterates[self.best].layout

    @property
    def beams(self) -> Optional[BeamformingSolution]:
        return None if self.best is None else self.iterates[self.best].beams

    @property
    def trace_crb(self) -> float:
        return np.nan if self.best is None else self.iterates[self.best].trace_crb

    @property
    def rcrb(self) -> float:
        return np.nan if self.best is None else self.iterates[self.best].rcrb

    @property
    def feasible(self) -> bool:
        return self.best is not None

    def accepted_trace(self) -> np.ndarray:
        return np.array([it.trace_crb for it in self.iterates if it.accepted])


def _record(layout, beams, scenario, cfg, t0, accepted) -> IterateRecord:
    ch = effective_channels(layout, scenario, cfg)
    tr = trace_crb_from_channels(ch, beams.R, scenario.beta, cfg.T, cfg.sigmas_sq)
    s = sinr(ch.H, beams.W, beams.R_s, cfg.sigma0_sq)
    power = float(np.real(np.trace(beams.R)))
    feas = sinr_feasible(ch.H, beams.W, beams.R_s, cfg) and power <= cfg.P * (1 + 1e-6)
    return IterateRecord(trace_crb=tr, rcrb=float(np.sqrt(tr)), feasible=feas, sinr=s, power=power,
                         wall_s=time.perf_counter() - t0, accepted=accepted, layout=layout, beams=beams)


def _beamform(layout, scenario, cfg):
    return optimize_beamforming(effective_channels(layout, scenario, cfg), scenario, cfg)


def sensing_layout(layout: PassLayout, scenario: Scenario, cfg: SystemConfig,
                   grid: Optional[PlacementGrid] = None, max_sweeps: int = 10) -> PassLayout:
    """Element-wise placement for sensing alone under the isotropic
    covariance ``P I / N``, swept until no PA moves.

    Placement under the current beams tends to stall: a near rank-one ``R``
    is matched to the current channel, so every single-PA move looks worse.
    The isotropic covariance does not favour the current layout.
    """
    grid = grid or PlacementGrid.continuous(cfg)
    N, M = layout.N, layout.M
    quiet = Scenario(np.zeros((0, 2)), scenario.target, scenario.beta)
    c0 = cfg.replace(K=0)
    W, R_s = np.zeros((N, 0)), cfg.P * np.eye(N) / N
    tr0 = trace_crb_from_channels(effective_channels(layout, quiet, c0), R_s, scenario.beta,
                                  cfg.T, cfg.sigmas_sq)
    state = PenaltyState(Q=np.zeros((N, 0)), Q_m=np.zeros((M, N, 0)), rho=1.0,
                         crb_scale=tr0 if np.isfinite(tr0) and tr0 > 0 else 1.0)
    for _ in range(max_sweeps):
        new = update_X(state, layout, W, R_s, quiet, c0, grid)
        if np.array_equal(new.x_pos, layout.x_pos):
            break
        layout = new
    return layout


def solve(scenario: Scenario, cfg: SystemConfig, init_layout: Optional[PassLayout] = None,
          grid: Optional[PlacementGrid] = None, optimize_placement: bool = True,
          max_outer: int = 20, rel_tol: float = 1e-4, placement_kwargs: Optional[dict] = None,
          sensing_proposal: bool = True) -> SolveReport:
    """Minimise tr(CRB) over beamformers and PA positions.

    Every outer iteration runs the placement loop for the current beams and
    then re-solves the beamforming program at every distinct layout the loop
    visited. Most of those layouts break an SINR target with the old beams,
    so the new beams are what make them usable. With ``sensing_proposal``
    the layout from :func:`sensing_layout` is tried as well. The best
    feasible pair wins and is accepted only if it lowers tr(CRB), so the
    accepted sequence is monotone. A layout whose beamforming program is infeasible is dropped,
    which leaves the previous layout in place.
    """
    t0 = time.perf_counter()
    layout = (init_layout or uniform_layout(cfg)).validate(cfg)
    grid = grid or PlacementGrid.continuous(cfg)
    report = SolveReport()
    try:
        beams = _beamform(layout, scenario, cfg)
    except Infeasible:
        log.info("SINR targets are unattainable at the initial layout")
        report.status = INFEASIBLE
        return report
    rec = _record(layout, beams, scenario, cfg, t0, accepted=True)
    report.iterates.append(rec)
    report.best = 0
    cur_val = rec.trace_crb
    if not optimize_placement:
        report.status = CONVERGED
        return report

    report.status = ITER_LIMIT
    for it in range(1, max_outer + 1):
        report.outer_iters = it
        best_layout, info = penalty_loop(layout, beams.W, beams.R_s, scenario, cfg, grid,
                                         return_info=True, **(placement_kwargs or {}))
        options = []
        if info.status == "improved":
            options.append((info.crb_out, best_layout, beams))
        proposals = [best_layout, info.candidate] + info.visited()
        if sensing_proposal:
            proposals.append(sensing_layout(layout, scenario, cfg, grid))
        seen = []
        for L in proposals:
            if L is None or np.array_equal(L.x_pos, layout.x_pos):
                continue
            if any(np.array_equal(L.x_pos, s.x_pos) for s in seen):
                continue
            seen.append(L)
            try:
                bf = _beamform(L, scenario, cfg)
            except (Infeasible, SingularFim, SolverFailure) as exc:
                log.info("outer %d: beamforming at the proposed layout failed (%s)", it, exc)
                continue
            r = _record(L, bf, scenario, cfg, t0, accepted=False)
            if r.feasible:
                options.append((r.trace_crb, L, bf))
        if not options:
            report.status = CONVERGED
            break
        val, new_layout, new_beams = min(options, key=lambda o: o[0])
        if not val < cur_val:
            report.status = CONVERGED
            break
        rec = _record(new_layout, new_beams, scenario, cfg, t0, accepted=True)
        report.iterates.append(rec)
        report.best = len(report.iterates) - 1
        delta = cur_val - rec.trace_crb
        layout, beams, cur_val = new_layout, new_beams, rec.trace_crb
        if delta <= rel_tol * cur_val:
            report.status = CONVERGED
            break
    return report
