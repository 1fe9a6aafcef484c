"""Experiment harness: seeded scenarios, parameter sweeps, outputs and a
Monte-Carlo maximum-likelihood check of the CRB."""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ao import solve
from .config import SystemConfig, db_to_linear, dbm_to_watt
from .errors import PassIsacError
from .fim import fim_crb
from .geometry import (PassLayout, Scenario, effective_channels, spherical_coeff,
                       waveguide_phases)
from .pinching import PlacementGrid

log = logging.getLogger(__name__)

CSV_HEADER = ["sweep_var", "sweep_value", "seed", "scheme", "rcrb_m", "trace_crb_m2",
              "feasible", "power_used_w", "outer_iters", "wall_s"]

SWEEPS = {
    "power": ("power_dbm", (20.0, 25.0, 30.0, 35.0, 40.0)),
    "waveguides": ("num_waveguides", (2, 4, 6, 8)),
    "sinr": ("sinr_db", (0.0, 3.0, 6.0, 9.0, 12.0)),
}
SWEEP_VARS = {v[0] for v in SWEEPS.values()}

# Direction in which a design stays feasible: a layout that meets the SINR
# targets at a low budget or a high target also meets them at a higher budget
# or a lower target. +1 walks ascending values, -1 descending.
CONTINUATION = {"power_dbm": +1, "sinr_db": -1}

TARGET_USER_CLEARANCE = 0.5   # m


# ---------------------------------------------------------------------------
# schemes


@dataclass(frozen=True)
class Scheme:
    kind: str                 # "continuous", "uniform" or "discrete"
    Z: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        t = text.strip().lower()
        if t in ("continuous", "uniform"):
            return cls(t)
        if t.startswith("discrete:"):
            try:
                Z = int(t.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad discrete scheme {text!r}; expected discrete:<Z>") from None
            if Z < 1:
                raise ValueError("discrete scheme needs Z >= 1")
            return cls("discrete", Z)
        raise ValueError(f"unknown scheme {text!r}")

    @property
    def label(self) -> str:
        return f"discrete:{self.Z}" if self.kind == "discrete" else self.kind

    def grid(self, cfg: SystemConfig) -> Optional[PlacementGrid]:
        if self.kind == "continuous":
            return PlacementGrid.continuous(cfg)
        if self.kind == "discrete":
            return PlacementGrid.discrete(cfg, self.Z)
        return None


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    base: SystemConfig
    sweep_var: str                       # power_dbm | num_waveguides | sinr_db
    sweep_values: tuple
    schemes: tuple = ("continuous",)
    seeds: tuple = tuple(range(20))
    monte_carlo: Optional[dict] = None   # {"trials": int, "grid_step": float}
    warm_start: bool = True              # continue each seed's layout along the sweep

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "schemes", tuple(Scheme.parse(s).label for s in self.schemes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep_var must be one of {sorted(SWEEP_VARS)}")
        if not self.sweep_values:
            raise ValueError("sweep values must be non-empty")
        if list(self.sweep_values) != sorted(self.sweep_values):
            raise ValueError("sweep values must be sorted")
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        if self.monte_carlo is not None and int(self.monte_carlo.get("trials", 1)) < 1:
            raise ValueError("trials must be >= 1")

    def cfg_for(self, value) -> SystemConfig:
        if self.sweep_var == "power_dbm":
            return self.base.replace(P=float(dbm_to_watt(value)))
        if self.sweep_var == "num_waveguides":
            return self.base.replace(N=int(value))
        return self.base.replace(gamma=float(db_to_linear(value)))

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "sweep_var": self.sweep_var,
                "sweep_values": list(self.sweep_values), "schemes": list(self.schemes),
                "seeds": list(self.seeds), "monte_carlo": self.monte_carlo,
                "warm_start": self.warm_start}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(base=SystemConfig.from_dict(d["base"]), sweep_var=d["sweep_var"],
                   sweep_values=tuple(d["sweep_values"]), schemes=tuple(d["schemes"]),
                   seeds=tuple(d["seeds"]), monte_carlo=d.get("monte_carlo"),
                   warm_start=bool(d.get("warm_start", True)))


_DB_KEYS = {"p_dbm": ("P", dbm_to_watt), "sigma0_dbm": ("sigma0_sq", dbm_to_watt),
            "sigmas_dbm": ("sigmas_sq", dbm_to_watt), "gamma_db": ("gamma", db_to_linear)}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines (``#`` comments) to a dict of strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[run]\n" + text)
    return dict(cp["run"])


def system_config_from_pairs(pairs: dict, base: Optional[SystemConfig] = None) -> SystemConfig:
    """Apply string key/value overrides to a :class:`SystemConfig`.

    Field names are accepted as is; ``P_dbm``, ``gamma_db``, ``sigma0_dbm``
    and ``sigmas_dbm`` are converted to linear units.
    """
    base = base or SystemConfig()
    fields = {f.name: f for f in base.__dataclass_fields__.values()}
    changes = {}
    for key, raw in pairs.items():
        lk = key.lower()
        if lk in _DB_KEYS:
            name, conv = _DB_KEYS[lk]
            changes[name] = float(conv(float(raw)))
        elif key in fields:
            if key in ("N", "M", "M_r", "K", "T", "rng_seed"):
                changes[key] = int(raw)
            elif key == "gamma":
                vals = [float(v) for v in str(raw).replace(",", " ").split()]
                changes[key] = vals[0] if len(vals) == 1 else tuple(vals)
            elif key == "delta" and str(raw).strip().lower() in ("", "none"):
                changes[key] = None
            else:
                changes[key] = float(raw)
        else:
            raise KeyError(f"unknown configuration key {key!r}")
    if "delta" not in changes and "f_c" in changes:
        changes["delta"] = None     # keep the half-wavelength default in step with f_c
    return base.replace(**changes)


# ---------------------------------------------------------------------------
# scenarios


def sample_scenario(cfg: SystemConfig, index: int) -> Scenario:
    """Users and target uniform in the service rectangle; depends only on
    ``(cfg.rng_seed, index)`` and the geometry."""
    rng = np.random.default_rng([cfg.rng_seed, index])
    lo = np.array([cfg.D, -cfg.D_y / 2.0])
    span = np.array([cfg.D_x, cfg.D_y])
    users = lo + rng.random((cfg.K, 2)) * span
    while True:
        target = lo + rng.random(2) * span
        if cfg.K == 0 or np.min(np.linalg.norm(users - target, axis=1)) >= TARGET_USER_CLEARANCE:
            break
    phase = rng.uniform(0.0, 2 * np.pi)
    beta = cfg.beta_mag_coeff / np.hypot(*target) * np.exp(1j * phase)
    return Scenario(users=users, target=target, beta=complex(beta))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class CellResult:
    sweep_var: str
    sweep_value: object
    seed: object                 # int, or "mean" for aggregate rows
    scheme: str
    rcrb_m: float
    trace_crb_m2: float
    feasible: object             # bool, or "n/m" for aggregate rows
    power_used_w: float
    outer_iters: int
    wall_s: float
    layout: Optional[PassLayout] = field(default=None, repr=False)
    beams: object = field(default=None, repr=False)

    def csv_row(self) -> list:
        def num(v):
            return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))
        return [self.sweep_var, _fmt_value(self.sweep_value), str(self.seed), self.scheme,
                num(self.rcrb_m), num(self.trace_crb_m2), str(self.feasible),
                num(self.power_used_w), str(self.outer_iters), f"{self.wall_s:.3f}"]


def _fmt_value(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def run_cell(cfg: SystemConfig, scenario: Scenario, scheme: Scheme, sweep_var: str, value, seed,
             init_layout: Optional[PassLayout] = None):
    t0 = time.perf_counter()
    optimize = scheme.kind != "uniform"
    try:
        rep = solve(scenario, cfg, init_layout=init_layout if optimize else None,
                    grid=scheme.grid(cfg), optimize_placement=optimize)
        if not rep.feasible and init_layout is not None and optimize:
            rep = solve(scenario, cfg, grid=scheme.grid(cfg))
    except PassIsacError as exc:
        log.warning("cell %s=%s seed=%s %s failed: %s", sweep_var, value, seed, scheme.label, exc)
        rep = None
    wall = time.perf_counter() - t0
    if rep is None or not rep.feasible:
        return CellResult(sweep_var, value, seed, scheme.label, np.nan, np.nan, False, np.nan,
                          0 if rep is None else rep.outer_iters, wall)
    it = rep.iterates[rep.best]
    return CellResult(sweep_var, value, seed, scheme.label, it.rcrb, it.trace_crb, True, it.power,
                      rep.outer_iters, wall, rep.layout, rep.beams)


def aggregate(rows: Sequence[CellResult]) -> list:
    """One mean row per (sweep value, scheme) over the feasible seeds."""
    out = []
    keys = []
    for r in rows:
        if (r.sweep_value, r.scheme) not in keys:
            keys.append((r.sweep_value, r.scheme))
    for value, scheme in keys:
        sel = [r for r in rows if r.sweep_value == value and r.scheme == scheme and r.seed != "mean"]
        ok = [r for r in sel if r.feasible is True]
        mean = lambda a: float(np.mean(a)) if a else np.nan
        out.append(CellResult(sel[0].sweep_var, value, "mean", scheme,
                              mean([r.rcrb_m for r in ok]), mean([r.trace_crb_m2 for r in ok]),
                              f"{len(ok)}/{len(sel)}", mean([r.power_used_w for r in ok]),
                              int(round(mean([r.outer_iters for r in ok]) if ok else 0)),
                              float(sum(r.wall_s for r in sel))))
    return out


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list                   # per-seed CellResult, in (value, seed, scheme) order
    aggregates: list
    validation: list = field(default_factory=list)

    def table(self, scheme: str) -> dict:
        """``{sweep_value: {seed: rcrb or nan}}`` for one scheme."""
        t = {}
        for r in self.rows:
            if r.scheme == scheme:
                t.setdefault(r.sweep_value, {})[r.seed] = r.rcrb_m if r.feasible is True else np.nan
        return t


def _visit_order(xcfg: ExperimentConfig) -> list:
    """Sweep-value indices in the order cells are solved."""
    idx = list(range(len(xcfg.sweep_values)))
    direction = CONTINUATION.get(xcfg.sweep_var) if xcfg.warm_start else None
    return idx[::-1] if direction == -1 else idx


def run_sweep(xcfg: ExperimentConfig, progress=None) -> SweepResult:
    """Every (sweep value, seed, scheme) cell.

    With ``warm_start`` and a power or SINR sweep, each (seed, scheme) chain
    is solved from the hardest sweep value to the easiest and every cell
    starts from the previous cell's layout. That layout stays feasible, and
    the alternation never accepts an increase, so per-seed RCRB is monotone
    along the sweep up to solver tolerance. Rows are returned in
    (value, seed, scheme) order regardless.
    """
    schemes = [Scheme.parse(s) for s in xcfg.schemes]
    done = {}
    prev = {}
    for i in _visit_order(xcfg):
        value = xcfg.sweep_values[i]
        cfg = xcfg.cfg_for(value)
        warm = xcfg.warm_start and xcfg.sweep_var in CONTINUATION
        for seed in xcfg.seeds:
            scenario = sample_scenario(cfg, seed)
            for sch in schemes:
                init = prev.get((seed, sch.label)) if warm else None
                r = run_cell(cfg, scenario, sch, xcfg.sweep_var, value, seed, init_layout=init)
                done[(i, seed, sch.label)] = r
                if r.layout is not None:
                    prev[(seed, sch.label)] = r.layout
                if progress is not None:
                    progress(r)
    rows = [done[(i, seed, sch.label)] for i in range(len(xcfg.sweep_values))
            for seed in xcfg.seeds for sch in schemes]
    res = SweepResult(xcfg, rows, aggregate(rows))
    if xcfg.monte_carlo is not None:
        mc = dict(xcfg.monte_carlo)
        for value in xcfg.sweep_values:
            cfg = xcfg.cfg_for(value)
            for r in rows:
                if r.sweep_value == value and r.feasible is True and r.seed == xcfg.seeds[0]:
                    v = monte_carlo_validate(r.layout, r.beams, sample_scenario(cfg, r.seed), cfg,
                                             trials=int(mc.get("trials", 200)),
                                             grid_step=mc.get("grid_step"), seed=r.seed)
                    res.validation.append({"sweep_value": value, "scheme": r.scheme, "seed": r.seed,
                                           **v.as_dict()})
    return res


# ---------------------------------------------------------------------------
# outputs


def csv_text(rows: Sequence[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


def plot_data_text(result: SweepResult) -> str:
    schemes = list(result.config.schemes)
    lines = ["\t".join([result.config.sweep_var] + [f"rcrb_m[{s}]" for s in schemes])]
    for value in result.config.sweep_values:
        vals = []
        for s in schemes:
            m = [a.rcrb_m for a in result.aggregates if a.sweep_value == value and a.scheme == s]
            vals.append(repr(float(m[0])) if m else "nan")
        lines.append("\t".join([_fmt_value(value)] + vals))
    return "\n".join(lines) + "\n"


def manifest(result_or_config) -> dict:
    from . import __version__
    xcfg = getattr(result_or_config, "config", result_or_config)
    return {"library": "pass_isac", "version": __version__, "experiment": xcfg.to_dict()}


def emit_outputs(result: SweepResult, path) -> dict:
    """Write ``results.csv``, ``manifest.json`` and ``plot_<sweep_var>.tsv``
    (plus ``crb_validation.csv`` when validation ran) into ``path``."""
    out = Path(path)
    files = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        files["csv"] = out / "results.csv"
        files["csv"].write_text(csv_text(list(result.rows) + list(result.aggregates)), newline="\n")
        files["manifest"] = out / "manifest.json"
        files["manifest"].write_text(json.dumps(manifest(result), indent=2, sort_keys=True) + "\n")
        files["plot"] = out / f"plot_{result.config.sweep_var}.tsv"
        files["plot"].write_text(plot_data_text(result), newline="\n")
        if result.validation:
            files["validation"] = out / "crb_validation.csv"
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=list(result.validation[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(result.validation)
            files["validation"].write_text(buf.getvalue(), newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs under {out}: {exc}") from exc
    return files


def load_manifest(path) -> ExperimentConfig:
    d = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(d["experiment"])


# ---------------------------------------------------------------------------
# Monte-Carlo CRB check


@dataclass
class MonteCarloResult:
    mse_m2: float
    trace_crb_m2: float
    ratio: float
    trials: int
    outliers: int
    errors: np.ndarray = field(repr=False, default=None)   # (trials, 2) estimate - truth

    def as_dict(self) -> dict:
        return {"mse_m2": self.mse_m2, "trace_crb_m2": self.trace_crb_m2, "ratio": self.ratio,
                "trials": self.trials, "outliers": self.outliers}


def target_response(layout: PassLayout, points: np.ndarray, cfg: SystemConfig):
    """Target channel ``h_t`` (P, N) and steering vector (P, M_r) for
    candidate target positions ``points`` (P, 2)."""
    p = np.atleast_2d(points)
    px, py = p[:, 0, None, None], p[:, 1, None, None]
    r = np.sqrt((px - layout.x_pos) ** 2 + (py - layout.wg_y) ** 2 + layout.d_h**2)
    h = (waveguide_phases(layout, cfg) * spherical_coeff(r, cfg.kappa_c)).sum(axis=1)
    s = p[:, 1] / np.hypot(p[:, 0], p[:, 1])
    a = np.exp(-1j * np.pi * np.arange(cfg.M_r) * s[:, None])
    return h, a


def _crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _psd_sqrt(R):
    ev, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    return (V * np.sqrt(np.maximum(ev, 0.0))) @ V.conj().T


def _concentrated_score(layout, cfg, Z, G):
    """Concentrated log-likelihood (up to constants) with beta profiled out:
    ``|a^H Z h|^2 / (||a||^2 h^H G h)`` with ``Z = Y S^H`` and ``G = S S^H``."""
    def score(points):
        h, a = target_response(layout, points, cfg)
        num = np.abs(np.einsum("pi,ij,pj->p", a.conj(), Z, h)) ** 2
        den = cfg.M_r * np.real(np.einsum("pi,ij,pj->p", h.conj(), G, h))
        return num / den
    return score


def _quadratic_refine(score, p0, step, min_step, max_rounds=100):
    """Repeated 3x3 quadratic fits of the log score.

    A Newton step that stays inside the stencil is taken and the stencil
    shrinks 4x; otherwise the search moves to the best stencil point.
    """
    off = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    basis = np.column_stack([np.ones(9), off, 0.5 * off[:, 0] ** 2, off[:, 0] * off[:, 1],
                             0.5 * off[:, 1] ** 2])
    p = np.asarray(p0, dtype=float)
    for _ in range(max_rounds):
        if step < min_step:
            break
        v = np.log(np.maximum(score(p + step * off), 1e-300))
        v = v - v[4]
        c = np.linalg.lstsq(basis, v, rcond=None)[0]
        Hm = np.array([[c[3], c[4]], [c[4], c[5]]])
        d = None
        if np.all(np.linalg.eigvalsh(Hm) < 0):
            d = -np.linalg.solve(Hm, c[1:3])
            if np.max(np.abs(d)) > 1.0:
                d = None
        if d is None:
            k = int(np.argmax(v))
            if k == 4:
                step /= 2.0
            else:
                p = p + step * off[k]
            continue
        p = p + step * d
        step /= 4.0
    return p


def ml_estimate(layout, cfg, Y, S, center, grid_step, window, min_step=None):
    """ML position estimate from one coherent interval.

    Grid search over ``center +- window`` at ``grid_step`` followed by
    iterated quadratic refinement. Returns ``(estimate, on_edge)``.
    """
    Z, G = Y @ S.conj().T, S @ S.conj().T
    score = _concentrated_score(layout, cfg, Z, G)
    n = int(round(window / grid_step))
    ax = np.arange(-n, n + 1) * grid_step
    gx, gy = np.meshgrid(center[0] + ax, center[1] + ax, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    v = score(pts)
    k = int(np.argmax(v))
    i, j = divmod(k, ax.size)
    on_edge = i in (0, ax.size - 1) or j in (0, ax.size - 1)
    est = _quadratic_refine(score, pts[k], grid_step / 2.0, min_step or grid_step * 1e-6)
    return est, on_edge


def monte_carlo_validate(layout: PassLayout, beams, scenario: Scenario, cfg: SystemConfig,
                         trials: int = 200, grid_step: Optional[float] = None,
                         window: Optional[float] = None, seed: int = 0) -> MonteCarloResult:
    """Empirical MSE of the ML position estimate against tr(CRB).

    Each trial draws unit-power communication symbols and sensing samples
    with covariance ``R_s``, forms ``Y = beta a h_t^H S + noise`` and
    estimates the target position by maximising the likelihood with beta
    profiled out. The search is local (``window`` around the true position,
    default one carrier wavelength) because the likelihood has
    wavelength-scale sidelobes. Default ``grid_step`` is wavelength / 8.
    """
    grid_step = grid_step or cfg.wavelength / 8.0
    window = window or cfg.wavelength
    rng = np.random.default_rng([cfg.rng_seed, seed, 7919])
    ch = effective_channels(layout, scenario, cfg)
    crb = fim_crb(ch, beams.R, scenario.beta, cfg.T, cfg.sigmas_sq).trace_crb
    A = np.outer(ch.steer, ch.h_target.conj())
    Rs_half = _psd_sqrt(beams.R_s)
    truth = np.asarray(scenario.target, dtype=float)
    errs = np.empty((trials, 2))
    outliers = 0
    K = beams.W.shape[1]
    for t in range(trials):
        S = beams.W @ _crandn(rng, (K, cfg.T)) + Rs_half @ _crandn(rng, (cfg.N, cfg.T))
        Y = scenario.beta * (A @ S) + np.sqrt(cfg.sigmas_sq) * _crandn(rng, (cfg.M_r, cfg.T))
        try:
            est, edge = ml_estimate(layout, cfg, Y, S, truth, grid_step, window)
        except (np.linalg.LinAlgError, FloatingPointError):
            est, edge = truth + window, True
        outliers += int(edge)
        errs[t] = est - truth
    mse = float(np.mean(np.sum(errs**2, axis=1)))
    return MonteCarloResult(mse_m2=mse, trace_crb_m2=crb, ratio=mse / crb, trials=trials,
                            outliers=outliers, errors=errs)
