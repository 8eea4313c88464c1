"""Experiment configs, parameter sweeps, result caching and CSV/SVG output.

Each sweep point is an independent task; tasks run on a process pool and
results are collected in grid order. Rows are plain dicts and always carry
a ``status`` column; a failed point is recorded with NaN values and an
error status, and never aborts the sweep.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__, npa, sdp
from .chained import (Behavior, BellCoefficients, DegenerateCorrelation, bell_value,
                      bell_value_of_behavior, behavior_from_state, chained_coefficients,
                      classical_bound, ideal_behavior, j_gamma_coefficients, noisy_behavior,
                      solve_gram_sdp, theorem1_bound, tightness_check, tsirelson_bound,
                      werner_witness_threshold)
from .qstate import bloch_decompose, correlation_svd, make_singlet, make_xstate, parse_state
from .search import SwarmConfig, pso_max_violation

CACHE_ENV = "CHAINEDBELL_CACHE"
EXPERIMENTS = ("bound", "tightness", "gram", "witness", "fig1", "fig2", "fig3")
_ALIASES = {"fig1_xstate": "fig1", "fig2_randomness": "fig2", "fig3_compare": "fig3"}
ONSET_EPS = 1e-5  # bits; below this a point counts as certifying nothing


class InvalidConfig(ValueError):
    pass


def default_p_grid() -> List[float]:
    return [float(v) for v in np.linspace(0.7, 1.0, 41)]


def default_gamma_grid() -> List[float]:
    return [float(v) for v in np.linspace(0.0, np.pi / 12, 13)]


def default_nu_grid() -> List[float]:
    return [float(v) for v in np.linspace(0.4, 1.0, 27)[1:-1]]


@dataclass
class ExperimentConfig:
    """Parameters of one CLI run. Settings in ``settings`` are 1-based (x, y) pairs."""

    experiment: str
    n: int = 3
    state: str = "singlet"
    chained_ns: List[int] = field(default_factory=lambda: [3, 4, 5])
    p_grid: Optional[List[float]] = None
    nu_grid: Optional[List[float]] = None
    gamma_grid: Optional[List[float]] = None
    levels: Optional[List[str]] = None
    modes: Optional[List[str]] = None
    settings: Optional[List[List[int]]] = None
    inequality: bool = False
    onsets: bool = True
    seed: int = 0
    swarm: Dict[str, Any] = field(default_factory=dict)
    rel_tol: float = 1e-8
    workers: Optional[int] = None
    out_dir: str = "results"
    use_cache: bool = True

    # fields that do not change results and stay out of the cache key
    _RUNTIME = ("workers", "out_dir", "use_cache")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in data:
            raise InvalidConfig("config needs an 'experiment' key")
        try:
            return cls(**data).resolved()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig("config must be a JSON object")
        return cls.from_dict(data)

    def resolved(self) -> "ExperimentConfig":
        """Fill experiment-specific defaults and validate; raises InvalidConfig."""
        exp = _ALIASES.get(self.experiment, self.experiment)
        if exp not in EXPERIMENTS:
            raise InvalidConfig(f"unknown experiment {self.experiment!r}")
        c = dataclasses.replace(self, experiment=exp)
        if not isinstance(c.n, int) or c.n < 2:
            raise InvalidConfig(f"n must be an integer >= 2, got {c.n!r}")
        if exp == "fig1":
            c.nu_grid = default_nu_grid() if c.nu_grid is None else c.nu_grid
            _check_grid("nu_grid", c.nu_grid, 0.4, 1.0, open_ends=True)
        if exp in ("fig2", "fig3"):
            c.p_grid = default_p_grid() if c.p_grid is None else c.p_grid
            _check_grid("p_grid", c.p_grid, 0.0, 1.0)
        if exp == "fig3":
            c.gamma_grid = default_gamma_grid() if c.gamma_grid is None else c.gamma_grid
            _check_grid("gamma_grid", c.gamma_grid, 0.0, np.pi / 12 + 1e-12)
            if any(not isinstance(k, int) or k < 2 for k in c.chained_ns):
                raise InvalidConfig("chained_ns must hold integers >= 2")
        default_levels = {"fig2": ["q1", "q2"], "fig3": ["1+ab"]}.get(exp, ["q2"])
        try:
            c.levels = [npa.Level.parse(v).value for v in (c.levels or default_levels)]
            default_modes = ["violation", "full"] if exp == "fig2" else ["violation"]
            c.modes = [npa.Mode(v).value for v in (c.modes or default_modes)]
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        if exp == "fig2" and c.settings is None:
            c.settings = [[1, 1]]
        if c.settings is not None:
            n_max = max([c.n] + list(c.chained_ns)) if exp == "fig3" else c.n
            for pair in c.settings:
                if (len(pair) != 2 or not all(isinstance(v, int) for v in pair)
                        or not all(1 <= v <= n_max for v in pair)):
                    raise InvalidConfig(f"setting {pair!r} must be two integers in 1..{n_max}")
        if exp in ("bound", "tightness"):
            try:
                parse_state(c.state)
            except ValueError as exc:
                raise InvalidConfig(f"bad state {c.state!r}: {exc}") from exc
        try:
            SwarmConfig(seed=c.seed, **c.swarm)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad swarm options: {exc}") from exc
        if c.workers is not None and c.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        return c

    def key_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in self._RUNTIME:
            d.pop(k)
        return d

    def config_hash(self) -> str:
        payload = json.dumps({"config": self.key_dict(), "version": __version__},
                             sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def swarm_config(self) -> SwarmConfig:
        return SwarmConfig(seed=self.seed, **self.swarm)


def _check_grid(name: str, grid: Sequence[float], lo: float, hi: float,
                open_ends: bool = False) -> None:
    if not grid:
        raise InvalidConfig(f"{name} is empty")
    vals = [float(v) for v in grid]
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise InvalidConfig(f"{name} must be strictly increasing")
    inside = (lambda v: lo < v < hi) if open_ends else (lambda v: lo <= v <= hi)
    bad = [v for v in vals if not inside(v)]
    if bad:
        raise InvalidConfig(f"{name} values {bad} fall outside {'(' if open_ends else '['}"
                            f"{lo}, {hi}{')' if open_ends else ']'}")


# -- sweep plumbing ----------------------------------------------------------

def _error_row(base: Dict[str, Any], exc: Exception, nan_keys: Sequence[str]) -> Dict[str, Any]:
    row = dict(base)
    for k in nan_keys:
        row[k] = float("nan")
    status = "Infeasible" if isinstance(exc, npa.Infeasible) else "Error"
    row["status"] = f"{status}: {exc}"
    return row


def map_points(fn: Callable, tasks: Sequence, workers: Optional[int] = None) -> List:
    """Apply ``fn`` to every task, in order, on a bounded process pool."""
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def least_predictable_setting(beh: Behavior) -> tuple:
    """0-based (x, y) whose largest outcome probability is smallest (first on ties)."""
    peak = beh.table.max(axis=(2, 3))
    best = np.min(peak)
    xs, ys = np.nonzero(peak <= best + 1e-12)
    return int(xs[0]), int(ys[0])


def label(setting) -> str:
    return f"A{setting[0] + 1}B{setting[1] + 1}"


# -- point tasks (module level so they pickle) -------------------------------

def fig1_point(task) -> Dict[str, Any]:
    nu, n, swarm = task
    l = (4 * nu - 1) / 3
    base = {"nu": nu, "l": l, "n": n}
    t0 = time.perf_counter()
    try:
        b = bloch_decompose(make_xstate(nu, l))
        coeffs = chained_coefficients(n)
        bound = theorem1_bound(b, n)
        res = pso_max_violation(b, coeffs, SwarmConfig(**swarm))
        row = dict(base, bound=bound, pso_best=res.best_value,
                   difference=bound - res.best_value, evaluations=res.evaluations,
                   status="ok")
    except Exception as exc:  # recorded per row, sweep continues
        row = _error_row(base, exc, ("bound", "pso_best", "difference", "evaluations"))
    row["wall_time"] = time.perf_counter() - t0
    return row


def randomness_point(task) -> Dict[str, Any]:
    """Certify randomness of a noisy behavior at one visibility.

    ``task`` is (curve, gamma, weights, table, p, level, mode, setting, inequality)
    with a 0-based setting.
    """
    curve, gamma, weights, table, p, level, mode, setting, inequality = task
    base = {"curve": curve, "gamma": gamma, "p": p, "level": level, "mode": mode,
            "setting": label(setting)}
    t0 = time.perf_counter()
    try:
        coeffs = BellCoefficients(np.array(weights))
        beh = noisy_behavior(Behavior(np.array(table)), p)
        s = npa.Scenario(coeffs.n_a, coeffs.n_b)
        value = bell_value_of_behavior(beh, coeffs)
        if mode == npa.Mode.VIOLATION_ONLY.value:
            res = npa.max_prob_given_violation(s, coeffs, value, tuple(setting), level,
                                               inequality=inequality)
        else:
            res = npa.max_guess_full_statistics(s, beh, tuple(setting), level)
        row = dict(base, bell_value=value, p_guess=res.p_guess,
                   min_entropy=res.min_entropy_bits, gap=res.gap, status=res.solver_status)
    except Exception as exc:
        row = _error_row(base, exc, ("bell_value", "p_guess", "min_entropy", "gap"))
    row["wall_time"] = time.perf_counter() - t0
    return row


# -- experiments ---------------------------------------------------------------

def _state_row(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {"state": cfg.state, "n": cfg.n}


def run_bound(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    b = bloch_decompose(parse_state(cfg.state))
    rep = correlation_svd(b, cfg.rel_tol)
    row = dict(_state_row(cfg), sigma_max=rep.sigma_max, degeneracy=rep.degeneracy,
               bound=theorem1_bound(b, cfg.n), tsirelson=tsirelson_bound(cfg.n),
               classical=classical_bound(cfg.n), status="ok")
    return {cfg.experiment: [row]}


def run_tightness(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    b = bloch_decompose(parse_state(cfg.state))
    coeffs = chained_coefficients(cfg.n)
    row = dict(_state_row(cfg), bound=theorem1_bound(b, cfg.n))
    try:
        out = tightness_check(b, cfg.n, cfg.rel_tol)
    except DegenerateCorrelation as exc:
        row.update(sufficient="trivial", witness_value=0.0, reason=str(exc),
                   alice="", bob="", status="DegenerateCorrelation")
        return {cfg.experiment: [row]}
    w = out["witness"]
    row.update(sufficient=out["sufficient"],
               witness_value=bell_value(b, w, coeffs) if w is not None else float("nan"),
               reason=out["reason"],
               alice=json.dumps((np.round(w.alice, 12) + 0.0).tolist()) if w is not None else "",
               bob=json.dumps((np.round(w.bob, 12) + 0.0).tolist()) if w is not None else "",
               status="ok" if w is not None else "NoWitness")
    return {cfg.experiment: [row]}


def run_gram(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    row = {"n": cfg.n, "expected": cfg.n * math.cos(math.pi / cfg.n)}
    try:
        out = solve_gram_sdp(cfg.n)
        row.update(primal=out["primal"], dual=out["dual"], gap=out["gap"],
                   iterations=out["solution"].iterations, status=out["solution"].status.value)
    except sdp.SolverFailure as exc:
        row = _error_row(row, exc, ("primal", "dual", "gap", "iterations"))
    return {cfg.experiment: [row]}


def run_witness(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    row = {"n": cfg.n, "threshold": werner_witness_threshold(cfg.n),
           "classical": classical_bound(cfg.n), "tsirelson": tsirelson_bound(cfg.n),
           "status": "ok"}
    return {cfg.experiment: [row]}


def run_fig1(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    swarm = dataclasses.asdict(cfg.swarm_config())
    tasks = [(float(nu), cfg.n, swarm) for nu in cfg.nu_grid]
    return {"fig1": map_points(fig1_point, tasks, cfg.workers)}


def _min_over_settings(rows: List[dict]) -> List[dict]:
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault((r["p"], r["level"], r["mode"]), []).append(r)
    out = []
    for (p, level, mode), rs in groups.items():
        vals = [r["min_entropy"] for r in rs]
        worst = rs[int(np.nanargmin(vals))] if not all(np.isnan(vals)) else rs[0]
        out.append(dict(worst, setting="min", wall_time=sum(r["wall_time"] for r in rs)))
    return out


def run_fig2(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    coeffs = chained_coefficients(cfg.n)
    table = ideal_behavior(cfg.n).table.tolist()
    tasks = []
    for level in cfg.levels:
        for mode in cfg.modes:
            for st in cfg.settings:
                for p in cfg.p_grid:
                    tasks.append((f"C{cfg.n}", "", coeffs.weights.tolist(), table, float(p),
                                  level, mode, (st[0] - 1, st[1] - 1), cfg.inequality))
    rows = map_points(randomness_point, tasks, cfg.workers)
    if len(cfg.settings) > 1:
        rows += _min_over_settings(rows)
    return {"fig2": rows}


def _jgamma_behaviors(cfg: ExperimentConfig) -> List[tuple]:
    """Singlet measurements maximizing each J_γ, found by swarm search."""
    b = bloch_decompose(make_singlet())
    out = []
    for g in cfg.gamma_grid:
        coeffs = j_gamma_coefficients(float(g))
        res = pso_max_violation(b, coeffs, cfg.swarm_config())
        out.append((float(g), coeffs, behavior_from_state(b, res.best_measurements)))
    return out


def curve_onset(weights, table, level, setting, lo: float = 0.5, hi: float = 1.0,
                tol: float = 1e-3, inequality: bool = False) -> tuple:
    """Bracket the smallest visibility with positive certified entropy by bisection."""
    def h(p):
        row = randomness_point(("", "", weights, table, p, level, "violation", setting,
                                inequality))
        return row["min_entropy"]

    if not h(hi) > ONSET_EPS:
        return float("nan"), float("nan")
    if h(lo) > ONSET_EPS:
        return lo, lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) > ONSET_EPS:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _fig3_curves(cfg: ExperimentConfig):
    curves = []
    for n in [2] + [k for k in cfg.chained_ns if k != 2]:
        beh = ideal_behavior(n)
        setting = (tuple(v - 1 for v in cfg.settings[0]) if cfg.settings
                   else least_predictable_setting(beh))
        name = "CHSH" if n == 2 else f"C{n}"
        curves.append((name, n, chained_coefficients(n), beh, setting))
    return curves


def run_fig3(cfg: ExperimentConfig) -> Dict[str, List[dict]]:
    level = cfg.levels[0]
    mode = cfg.modes[0]
    tasks = []
    curves = _fig3_curves(cfg)
    for name, n, coeffs, beh, setting in curves:
        for p in cfg.p_grid:
            tasks.append((name, "", coeffs.weights.tolist(), beh.table.tolist(), float(p),
                          level, mode, setting, cfg.inequality))
    jgam = _jgamma_behaviors(cfg)
    for g, coeffs, beh in jgam:
        setting = least_predictable_setting(beh)
        for p in cfg.p_grid:
            tasks.append(("J_gamma", g, coeffs.weights.tolist(), beh.table.tolist(), float(p),
                          level, mode, setting, cfg.inequality))
    rows = map_points(randomness_point, tasks, cfg.workers)

    j_rows = [r for r in rows if r["curve"] == "J_gamma"]
    for p in cfg.p_grid:
        at_p = [r for r in j_rows if r["p"] == float(p)]
        vals = [r["min_entropy"] for r in at_p]
        best = at_p[int(np.nanargmax(vals))] if not all(np.isnan(vals)) else at_p[0]
        rows.append(dict(best, curve="J_gamma_opt"))

    tables = {"fig3": rows,
              "fig3_inset": [r for r in rows if r["p"] >= 0.95]}
    if cfg.onsets:
        onset_rows = []
        for name, n, coeffs, beh, setting in curves:
            t0 = time.perf_counter()
            lo, hi = curve_onset(coeffs.weights.tolist(), beh.table.tolist(), level, setting,
                                 inequality=cfg.inequality)
            onset_rows.append({"curve": name, "n": n, "level": level, "setting": label(setting),
                               "onset_lo": lo, "onset_hi": hi,
                               "witness_threshold": werner_witness_threshold(n),
                               "status": "ok" if np.isfinite(lo) else "NoRandomness",
                               "wall_time": time.perf_counter() - t0})
        tables["fig3_onsets"] = onset_rows
    return tables


RUNNERS = {"bound": run_bound, "tightness": run_tightness, "gram": run_gram,
           "witness": run_witness, "fig1": run_fig1, "fig2": run_fig2, "fig3": run_fig3}


# -- caching and output ----------------------------------------------------------

def cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "chainedbell"


def _cache_path(cfg: ExperimentConfig) -> Path:
    return cache_dir() / f"{cfg.experiment}-{cfg.config_hash()}.json"


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def to_csv(rows: List[dict], cfg: ExperimentConfig) -> str:
    keys: List[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    head = ["config_hash", "tool_version", "experiment"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(head + keys)
    h = cfg.config_hash()
    for r in rows:
        w.writerow([h, __version__, cfg.experiment] + [_fmt(r.get(k, "")) for k in keys])
    return buf.getvalue()


def _svg_for(name: str, rows: List[dict]) -> Optional[str]:
    from .plotting import line_plot
    if name == "fig1":
        xs = [r["nu"] for r in rows]
        return line_plot({"upper bound": (xs, [r["bound"] for r in rows]),
                          "swarm maximum": (xs, [r["pso_best"] for r in rows])},
                         "Chained n=3 value on the X-state family", "nu", "maximal value")
    if name == "fig2":
        series, dashed = {}, []
        for r in rows:
            key = f"{r['level'].upper()} {r['mode']} {r['setting']}"
            series.setdefault(key, ([], []))
            series[key][0].append(r["p"])
            series[key][1].append(r["min_entropy"])
            if r["level"] == "q1":
                dashed.append(key)
        return line_plot(series, "Certified randomness", "visibility p", "H_min (bits)",
                         dashed=dashed)
    if name == "fig3":
        series = {}
        for r in rows:
            if r["curve"] == "J_gamma":
                continue
            series.setdefault(r["curve"], ([], []))
            series[r["curve"]][0].append(r["p"])
            series[r["curve"]][1].append(r["min_entropy"])
        return line_plot(series, "Certified randomness by inequality", "visibility p",
                         "H_min (bits)")
    return None


@dataclass
class RunReport:
    tables: Dict[str, List[dict]]
    paths: List[Path]
    failures: int
    cached: bool
    config_hash: str


def failed(row: dict) -> bool:
    return any(isinstance(v, float) and math.isnan(v) for v in row.values()) \
        and row.get("status", "").startswith(("Error", "Infeasible"))


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run (or load from cache) one experiment and write its CSV and SVG files."""
    cfg = cfg.resolved()
    path = _cache_path(cfg)
    tables = None
    if cfg.use_cache and path.exists():
        try:
            tables = json.loads(path.read_text(encoding="utf-8"))["tables"]
        except (OSError, ValueError, KeyError):
            tables = None
    cached = tables is not None
    if tables is None:
        tables = RUNNERS[cfg.experiment](cfg)
        tables = {k: [{kk: _jsonable(vv) for kk, vv in r.items()} for r in rows]
                  for k, rows in tables.items()}
        if cfg.use_cache:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps({"version": __version__, "config": cfg.key_dict(),
                                            "tables": tables}, allow_nan=True),
                                encoding="utf-8")
            except OSError:
                pass
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows in tables.items():
        p = out / f"{name}.csv"
        p.write_text(to_csv(rows, cfg), encoding="utf-8", newline="")
        paths.append(p)
        svg = _svg_for(name, rows) if rows else None
        if svg is not None:
            q = out / f"{name}.svg"
            q.write_text(svg, encoding="utf-8")
            paths.append(q)
    failures = sum(failed(r) for rows in tables.values() for r in rows)
    return RunReport(tables, paths, failures, cached, cfg.config_hash())
