"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines are written to the
terminal even under capture) or ``python3 tests/test_acceptance.py``.
"""
import sys
import time

import numpy as np
import pytest

from chainedbell import npa, sdp
from chainedbell.chained import (
    MeasurementSet, behavior_from_state, bell_value, chained_coefficients, ideal_behavior,
    noisy_behavior, solve_gram_sdp, theorem1_bound, tightness_check, tsirelson_bound,
    gram_problem)
from chainedbell.experiments import ExperimentConfig, default_nu_grid, run_experiment
from chainedbell.qstate import (bloch_decompose, correlation_svd, make_singlet, make_werner,
                                make_xstate, random_state, rayleigh_singular_bound)
from chainedbell.search import SwarmConfig, pso_max_violation

SINGLET = bloch_decompose(make_singlet())
P_IDEAL3 = (1 + np.cos(np.pi / 6)) / 4


@pytest.fixture
def report(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(k, name, ok, detail, elapsed, budget):
        ok = bool(ok) and elapsed < budget
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {k:>2} {name}: {detail} "
                f"({elapsed:.1f} s, budget {budget:.0f} s)")
        if capman is not None:
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)
        else:
            print(line, flush=True)
        assert ok, line
    return emit


def test_criterion_01_bound_exactness(report):
    t0 = time.perf_counter()
    errs = [abs(theorem1_bound(SINGLET, n) - 2 * n * np.cos(np.pi / (2 * n))) for n in range(2, 13)]
    chsh = abs(theorem1_bound(SINGLET, 2) - 2 * np.sqrt(2))
    ok = max(errs) <= 1e-12 and chsh <= 1e-12
    report(1, "singlet bound equals 2n cos(pi/2n)", ok,
           f"max error {max(errs):.1e} for n=2..12, CHSH error {chsh:.1e}",
           time.perf_counter() - t0, 1)


def test_criterion_02_gram_duality(report):
    t0 = time.perf_counter()
    worst_p = worst_d = worst_gap = 0.0
    for n in range(2, 9):
        out = solve_gram_sdp(n)
        target = n * np.cos(np.pi / n)
        worst_p = max(worst_p, abs(out["primal"] - target))
        worst_d = max(worst_d, abs(out["dual"] - target))
        worst_gap = max(worst_gap, abs(out["gap"]))
    ok = worst_p <= 1e-5 and worst_d <= 1e-5 and worst_gap <= 1e-6
    report(2, "Gram program strong duality", ok,
           f"max |primal-opt| {worst_p:.1e}, |dual-opt| {worst_d:.1e}, gap {worst_gap:.1e}",
           time.perf_counter() - t0, 5)


def test_criterion_03_saturation_witness(report):
    t0 = time.perf_counter()
    worst = 0.0
    for p in (0.5, 0.8, 1.0):
        b = bloch_decompose(make_werner(p))
        for n in (2, 3, 4, 5):
            w = tightness_check(b, n)["witness"]
            v = bell_value(b, w, chained_coefficients(n))
            worst = max(worst, abs(v - 2 * n * p * np.cos(np.pi / (2 * n))))
    report(3, "Werner saturation witness", worst <= 1e-9, f"max error {worst:.1e}",
           time.perf_counter() - t0, 1)


def test_criterion_04_xstate_swarm(report):
    t0 = time.perf_counter()
    c = chained_coefficients(3)
    grid = default_nu_grid()
    errs = []
    for nu in grid:
        b = bloch_decompose(make_xstate(nu, (4 * nu - 1) / 3))
        errs.append(abs(pso_max_violation(b, c, SwarmConfig()).best_value - 3 * np.sqrt(3) * nu))
    i = int(np.argmax(errs))
    report(4, "swarm maximum on the X-state family", len(grid) == 25 and max(errs) <= 2e-3,
           f"worst |PSO - 3sqrt3 nu| = {errs[i]:.1e} at nu = {grid[i]:.4f} over {len(grid)} points",
           time.perf_counter() - t0, 300)


def test_criterion_05_randomness_at_max_violation(report):
    t0 = time.perf_counter()
    res = npa.max_prob_given_violation(npa.Scenario.chained(3), chained_coefficients(3),
                                       tsirelson_bound(3), (0, 0), "q2")
    ok = abs(res.min_entropy_bits - 1.1) <= 0.05 and abs(res.p_guess - P_IDEAL3) <= 2e-3
    report(5, "C3 randomness at 3sqrt3, A1B1, Q2", ok,
           f"p_guess {res.p_guess:.6f} (target {P_IDEAL3:.6f}), H {res.min_entropy_bits:.4f} bits, "
           f"status {res.solver_status}", time.perf_counter() - t0, 60)


def test_criterion_06_two_bits(report):
    t0 = time.perf_counter()
    n = 3
    unused = (0, (n + 1) // 2 - 1)  # pair (1, (n+1)/2) in 1-based labels
    assert chained_coefficients(n).weights[unused] == 0
    res = npa.max_guess_full_statistics(npa.Scenario.chained(n), ideal_behavior(n), unused, "1+ab")
    report(6, "two bits on an unused pair, full statistics, 1+AB", res.p_guess <= 0.27,
           f"p_guess {res.p_guess:.6f} at A1B2, H {res.min_entropy_bits:.4f} bits, "
           f"status {res.solver_status}", time.perf_counter() - t0, 120)


def _h_violation(n, p, level, target=(0, 0)):
    c = chained_coefficients(n)
    return npa.max_prob_given_violation(npa.Scenario.chained(n), c, p * tsirelson_bound(n),
                                        target, level).min_entropy_bits


def test_criterion_07_thresholds(report):
    t0 = time.perf_counter()
    zero = {p: _h_violation(3, p, "q2") for p in (0.70, 0.74, 0.765, 0.769)}
    pos = {p: _h_violation(3, p, "q2") for p in (0.775, 0.8, 0.9, 1.0)}
    chsh_lo = _h_violation(2, 0.705, "1+ab")
    chsh_hi = _h_violation(2, 0.710, "1+ab")
    ok = (max(zero.values()) <= 1e-6 and min(pos.values()) > 1e-6
          and chsh_lo <= 1e-6 and chsh_hi > 1e-6)
    report(7, "randomness onsets", ok,
           f"C3 Q2 max H for p<=0.769 {max(zero.values()):.1e}, min H for p>=0.775 "
           f"{min(pos.values()):.2e}; CHSH 1+AB H(0.705) {chsh_lo:.1e}, H(0.710) {chsh_hi:.2e}",
           time.perf_counter() - t0, 180)


def test_criterion_08_orderings(report, tmp_path):
    t0 = time.perf_counter()
    grid = [float(v) for v in np.linspace(0.78, 1.0, 11)]
    cfg = ExperimentConfig.from_dict({"experiment": "fig2", "n": 3, "p_grid": grid,
                                      "levels": ["q1", "q2"], "modes": ["violation", "full"],
                                      "out_dir": str(tmp_path), "use_cache": False})
    rows = run_experiment(cfg).tables["fig2"]
    H = {(r["level"], r["mode"], r["p"]): r["min_entropy"] for r in rows}
    mode_gap = min(H[(l, "full", p)] - H[(l, "violation", p)] for l in ("q1", "q2") for p in grid)
    level_gap = min(H[("q2", m, p)] - H[("q1", m, p)] for m in ("violation", "full") for p in grid)
    ok = mode_gap >= -1e-6 and level_gap >= -1e-6 and not any(np.isnan(list(H.values())))
    report(8, "full >= violation and Q2 >= Q1", ok,
           f"min H(full)-H(violation) {mode_gap:.2e}, min H(Q2)-H(Q1) {level_gap:.2e} "
           f"over {len(grid)} points", time.perf_counter() - t0, 600)


def test_criterion_09_inequality_comparison(report, tmp_path):
    t0 = time.perf_counter()
    grid = sorted(set(round(float(v), 10) for v in np.linspace(0.7, 1.0, 11)) | {0.98, 0.99})
    cfg = ExperimentConfig.from_dict({"experiment": "fig3", "p_grid": grid, "levels": ["1+ab"],
                                      "out_dir": str(tmp_path), "use_cache": False})
    tables = run_experiment(cfg).tables
    H = {(r["curve"], r["p"]): r["min_entropy"] for r in tables["fig3"]}
    near = {p: H[("C3", p)] - H[("CHSH", p)] for p in (0.98, 0.99, 1.0)}
    onsets = {r["curve"]: (r["onset_lo"], r["onset_hi"]) for r in tables["fig3_onsets"]}
    increasing = onsets["C3"][1] <= onsets["C4"][0] and onsets["C4"][1] <= onsets["C5"][0]
    j_gap = min(H[("J_gamma_opt", p)] - H[("CHSH", p)] for p in grid)
    ok = min(near.values()) > 0 and increasing and j_gap >= -1e-6
    mids = ", ".join(f"{k} {0.5 * (a + b):.4f}" for k, (a, b) in onsets.items())
    report(9, "CHSH vs chained vs J_gamma at 1+AB", ok,
           f"min H(C3)-H(CHSH) near p=1 {min(near.values()):.3f}; onsets {mids}; "
           f"min H(J_opt)-H(CHSH) {j_gap:.1e}", time.perf_counter() - t0, 1800)


def test_criterion_10_property_suites(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    failures = []

    # bound dominance: 200 states x 200 measurement sets
    n = 3
    W = chained_coefficients(n).weights
    for _ in range(200):
        b = bloch_decompose(random_state(rng))
        bound = theorem1_bound(b, n)
        a = rng.normal(size=(200, n, 3))
        v = rng.normal(size=(200, n, 3))
        a /= np.linalg.norm(a, axis=2, keepdims=True)
        v /= np.linalg.norm(v, axis=2, keepdims=True)
        vals = np.einsum("pxi,ij,pyj,xy->p", a, b.M, v, W)
        if np.max(np.abs(vals)) > bound + 1e-9:
            failures.append("dominance")
        # spot-check the vectorized value against the scalar path
        ms = MeasurementSet(a[0], v[0])
        if abs(bell_value(b, ms, chained_coefficients(n)) - vals[0]) > 1e-12:
            failures.append("bell value mismatch")

    # singular-value inequality: 1000 samples
    for _ in range(1000):
        A = rng.uniform(-1, 1, (3, 3))
        if not rayleigh_singular_bound(A, rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))["holds"]:
            failures.append("rayleigh")

    # behavior invariants on random quantum behaviors
    for _ in range(500):
        b = bloch_decompose(random_state(rng))
        k = int(rng.integers(2, 6))
        a = rng.normal(size=(k, 3))
        v = rng.normal(size=(k, 3))
        ms = MeasurementSet(a / np.linalg.norm(a, axis=1, keepdims=True),
                            v / np.linalg.norm(v, axis=1, keepdims=True))
        t = behavior_from_state(b, ms).table  # construction validates the invariants
        if t.min() < -1e-12 or np.abs(t.sum(axis=(2, 3)) - 1).max() > 1e-10:
            failures.append("behavior")
        if correlation_svd(b).sigma_max > 1 + 1e-10:
            failures.append("sigma_max")

    # SDP residual certificates
    for n in range(2, 9):
        p = gram_problem(n)
        if not sdp.feasibility_certificate(sdp.solve(p), p).passes():
            failures.append(f"gram {n}")
    for _ in range(20):
        d = 5
        A = [(lambda G: G + G.T)(rng.normal(size=(d, d))) for _ in range(4)]
        X0 = (lambda G: G @ G.T + np.eye(d))(rng.normal(size=(d, d)))
        C = (lambda G: G @ G.T + np.eye(d))(rng.normal(size=(d, d)))
        p = sdp.SdpProblem.from_constraints([d], [C], [([a], np.trace(a @ X0)) for a in A])
        sol = sdp.solve(p)
        if not (sol.optimal and sdp.feasibility_certificate(sol, p).passes()):
            failures.append("random sdp")

    report(10, "property suites", not failures,
           f"{len(failures)} failures" + (f" ({', '.join(sorted(set(failures)))})" if failures else
                                          " over dominance 200x200, 1000 singular-value samples, 500 "
                                          "behaviors, 27 SDP certificates"),
           time.perf_counter() - t0, 120)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
