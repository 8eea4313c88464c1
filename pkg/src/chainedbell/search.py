"""Direct numerical maximization of a Bell expression over qubit observables.

Used as an oracle independent of the singular-value bound: particle swarm
over the spherical angles of every measurement direction, plus an
exhaustive grid for small cases.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .chained import BellCoefficients, MeasurementSet, bell_value
from .qstate import BlochForm

MAX_GRID_EVALUATIONS = 10**8


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SwarmConfig:
    particles: int = 50
    iterations: int = 500
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    restarts: int = 10
    seed: int = 0
    patience: int = 50
    min_improvement: float = 1e-10

    def __post_init__(self):
        for name in ("particles", "iterations", "restarts", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("inertia", "cognitive", "social"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SearchResult:
    best_value: float
    best_measurements: MeasurementSet
    history: List[float] = field(default_factory=list)
    evaluations: int = 0


def angles_to_vectors(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def _unpack(pos: np.ndarray, n_a: int, n_b: int):
    """(P, 2(n_a + n_b)) angles -> Alice (P, n_a, 3) and Bob (P, n_b, 3) vectors."""
    k = n_a + n_b
    vecs = angles_to_vectors(pos[:, :k], pos[:, k:])
    return vecs[:, :n_a], vecs[:, n_a:]


def _values(M: np.ndarray, W: np.ndarray, pos: np.ndarray) -> np.ndarray:
    a, b = _unpack(pos, *W.shape)
    corr = np.einsum("pxi,ij,pyj->pxy", a, M, b)
    return np.einsum("pxy,xy->p", corr, W)


def _measurements(pos: np.ndarray, n_a: int, n_b: int) -> MeasurementSet:
    a, b = _unpack(pos[None, :], n_a, n_b)
    a = a[0] / np.linalg.norm(a[0], axis=1, keepdims=True)
    b = b[0] / np.linalg.norm(b[0], axis=1, keepdims=True)
    return MeasurementSet(a, b)


def _run_swarm(M, W, cfg: SwarmConfig, rng: np.random.Generator):
    n_a, n_b = W.shape
    k = n_a + n_b
    lo = np.zeros(2 * k)
    hi = np.concatenate([np.full(k, np.pi), np.full(k, 2 * np.pi)])
    width = hi - lo
    vmax = 0.5 * width

    x = rng.uniform(lo, hi, size=(cfg.particles, 2 * k))
    v = rng.uniform(-vmax, vmax, size=x.shape)
    f = _values(M, W, x)
    pbest, pbest_f = x.copy(), f.copy()
    g = int(np.argmax(f))
    gbest, gbest_f = x[g].copy(), float(f[g])
    evals = cfg.particles
    last_gain_val, last_gain_it = gbest_f, 0

    for it in range(1, cfg.iterations + 1):
        r1 = rng.uniform(size=x.shape)
        r2 = rng.uniform(size=x.shape)
        v = (cfg.inertia * v + cfg.cognitive * r1 * (pbest - x)
             + cfg.social * r2 * (gbest - x))
        np.clip(v, -vmax, vmax, out=v)
        x = x + v
        # reflect at the box walls
        below, above = x < lo, x > hi
        x = np.where(below, 2 * lo - x, x)
        x = np.where(above, 2 * hi - x, x)
        v = np.where(below | above, -v, v)
        np.clip(x, lo, hi, out=x)

        f = _values(M, W, x)
        evals += cfg.particles
        better = f > pbest_f
        pbest[better] = x[better]
        pbest_f[better] = f[better]
        g = int(np.argmax(pbest_f))
        if pbest_f[g] > gbest_f:
            gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
        if gbest_f - last_gain_val >= cfg.min_improvement:
            last_gain_val, last_gain_it = gbest_f, it
        elif it - last_gain_it >= cfg.patience:
            break
    return gbest, gbest_f, evals


def pso_max_violation(b: BlochForm, coeffs: BellCoefficients,
                      cfg: SwarmConfig = SwarmConfig()) -> SearchResult:
    """Maximize the Bell value over all qubit observables with restarted PSO.

    Restart ``r`` draws from its own PCG64 stream seeded by ``(cfg.seed, r)``,
    so results do not depend on how restarts are scheduled.
    """
    M = np.asarray(b.M, dtype=float)
    W = np.asarray(coeffs.weights, dtype=float)
    best_pos, best_val = None, -np.inf
    history, evals = [], 0
    for r in range(cfg.restarts):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, r])))
        pos, val, ne = _run_swarm(M, W, cfg, rng)
        history.append(val)
        evals += ne
        if val > best_val:
            best_pos, best_val = pos, val
    ms = _measurements(best_pos, *W.shape)
    return SearchResult(bell_value(b, ms, coeffs), ms, history, evals)


def _grid_directions(resolution: int, planar: bool) -> np.ndarray:
    if planar:
        t = 2 * np.pi * np.arange(resolution) / resolution
        return np.stack([np.sin(t), np.zeros_like(t), np.cos(t)], axis=1)
    theta = np.pi * np.arange(resolution) / max(resolution - 1, 1)
    phi = 2 * np.pi * np.arange(resolution) / resolution
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return angles_to_vectors(T.ravel(), P.ravel())


def grid_oracle(b: BlochForm, coeffs: BellCoefficients, resolution: int,
                planar: bool = False, chunk: int = 200_000) -> SearchResult:
    """Exhaustive search over a grid of Bob's directions.

    For fixed Bob vectors the best Alice vector for setting x is the unit
    vector along M·Σ_y w_xy b_y, giving value Σ_x |M Σ_y w_xy b_y|; only
    Bob's directions are gridded. ``planar`` restricts them to the x-z
    plane (resolution points on the circle) instead of a θ-φ grid.
    """
    W = np.asarray(coeffs.weights, dtype=float)
    n_a, n_b = W.shape
    if max(n_a, n_b) > 3 or resolution > 60:
        raise ValueError("grid oracle supports at most 3 settings and resolution <= 60")
    dirs = _grid_directions(resolution, planar)
    G = dirs.shape[0]
    total = G ** n_b
    if total > MAX_GRID_EVALUATIONS:
        raise BudgetExceeded(f"{total} grid points exceed the budget of {MAX_GRID_EVALUATIONS}")
    M = np.asarray(b.M, dtype=float)
    best_val, best_idx = -np.inf, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(idx, (G,) * n_b), axis=1)  # (c, n_b)
        bob = dirs[digits]  # (c, n_b, 3)
        combo = np.einsum("xy,cyj->cxj", W, bob)
        vals = np.linalg.norm(combo @ M.T, axis=2).sum(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_idx = float(vals[i]), digits[i]
    bob = dirs[best_idx]
    alice = []
    for x in range(n_a):
        u = M @ (W[x] @ bob)
        nu = np.linalg.norm(u)
        alice.append(u / nu if nu > 1e-15 else np.array([0.0, 0.0, 1.0]))
    ms = MeasurementSet(np.array(alice), bob)
    return SearchResult(bell_value(b, ms, coeffs), ms, [best_val], total)


def search_setting_pairs(n_a: int, n_b: int):
    return list(itertools.product(range(n_a), range(n_b)))
