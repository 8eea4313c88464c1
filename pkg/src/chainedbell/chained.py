"""The n-setting chained Bell functional and the singular-value bound on it.

Chained expression (settings 1..n, outcomes ±1)::

    C^n = Σ_{k<n} [<A_k B_k> + <A_{k+1} B_k>] + <A_n B_n> − <A_1 B_n>

For a two-qubit state with correlation matrix M and observables
A_i = a_i·σ, B_j = b_j·σ, each correlator is a_iᵀ M b_j, which is what
makes the bound 2n·cos(π/2n)·σ_max(M) possible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import sdp
from .qstate import BlochForm, DEFAULT_REL_TOL, correlation_svd


def _check_n(n: int) -> int:
    if int(n) != n or n < 2:
        raise ValueError(f"setting count must be an integer >= 2, got {n}")
    return int(n)


class DegenerateCorrelation(ValueError):
    """The correlation matrix vanishes, so no saturating witness exists."""


class InvalidBehavior(ValueError):
    pass


# -- data types --------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementSet:
    """Unit Bloch vectors of Alice's (n_a, 3) and Bob's (n_b, 3) observables."""

    alice: np.ndarray
    bob: np.ndarray

    def __post_init__(self):
        for name in ("alice", "bob"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValueError(f"{name} must have shape (settings, 3)")
            norms = np.linalg.norm(arr, axis=1)
            if np.max(np.abs(norms - 1)) > 1e-12:
                raise ValueError(f"{name} vectors are not unit vectors: norms {norms}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.alice.shape[0]


@dataclass(frozen=True)
class BellCoefficients:
    """Weights of <A_x B_y>; ``weights[x, y]`` with 0-based setting indices."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2:
            raise ValueError("weights must be a 2-d array")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_a(self) -> int:
        return self.weights.shape[0]

    @property
    def n_b(self) -> int:
        return self.weights.shape[1]

    @property
    def n(self) -> int:
        return max(self.weights.shape)


@dataclass(frozen=True)
class Behavior:
    """Joint table ``table[x, y, a, b]``; outcome index 0 is +1, index 1 is −1."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 4 or t.shape[2:] != (2, 2):
            raise InvalidBehavior("table must have shape (n_a, n_b, 2, 2)")
        if t.min() < -1e-12:
            raise InvalidBehavior(f"negative probability {t.min():.3e}")
        norm = np.abs(t.sum(axis=(2, 3)) - 1).max()
        if norm > 1e-10:
            raise InvalidBehavior(f"normalization violated by {norm:.3e}")
        sig = no_signaling_violation(t)
        if sig > 1e-10:
            raise InvalidBehavior(f"no-signaling violated by {sig:.3e}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_a(self) -> int:
        return self.table.shape[0]

    @property
    def n_b(self) -> int:
        return self.table.shape[1]

    def correlators(self) -> np.ndarray:
        """<A_x B_y> as an (n_a, n_b) array."""
        t = self.table
        return t[..., 0, 0] - t[..., 0, 1] - t[..., 1, 0] + t[..., 1, 1]

    def marginal_a(self) -> np.ndarray:
        """p(a=+1 | x), read off at y = 0."""
        return self.table[:, 0, 0, :].sum(axis=-1)

    def marginal_b(self) -> np.ndarray:
        return self.table[0, :, :, 0].sum(axis=-1)


def no_signaling_violation(table: np.ndarray) -> float:
    pa = table.sum(axis=3)  # (x, y, a)
    pb = table.sum(axis=2)  # (x, y, b)
    return float(max(np.abs(pa - pa[:, :1]).max(), np.abs(pb - pb[:1]).max()))


# -- bounds ------------------------------------------------------------------

def chained_coefficients(n: int, transpose: bool = False) -> BellCoefficients:
    n = _check_n(n)
    w = np.zeros((n, n))
    for k in range(n):
        w[k, k] += 1
    for k in range(n - 1):
        w[k + 1, k] += 1
    w[0, n - 1] -= 1
    return BellCoefficients(w.T if transpose else w)


def classical_bound(n: int) -> float:
    return float(2 * _check_n(n) - 2)


def tsirelson_bound(n: int) -> float:
    n = _check_n(n)
    return 2 * n * np.cos(np.pi / (2 * n))


def theorem1_bound(b: BlochForm, n: int) -> float:
    """2n·cos(π/2n)·σ_max(M): an upper bound on |C^n| over all qubit observables."""
    return tsirelson_bound(n) * float(np.linalg.norm(b.M, 2))


def werner_witness_threshold(n: int) -> float:
    n = _check_n(n)
    return (n - 1) / (n * np.cos(np.pi / (2 * n)))


def xstate_entangled(nu: float, l: float) -> bool:
    return (1 - 2 * nu + l > 0) and (1 - 2 * nu - l < 0) and (0 < l < 1)


def j_gamma_coefficients(gamma: float) -> BellCoefficients:
    """<A0B0> + c(<A0B1> + <A1B0> − <A1B1>) with c = 4cos²(γ + π/6) − 1."""
    if not -1e-12 <= gamma <= np.pi / 12 + 1e-12:
        raise ValueError(f"gamma must lie in [0, pi/12], got {gamma}")
    c = 4 * np.cos(gamma + np.pi / 6) ** 2 - 1
    return BellCoefficients(np.array([[1.0, c], [c, -c]]))


# -- measurements, correlators and behaviors ---------------------------------

def canonical_measurements(n: int) -> MeasurementSet:
    """Settings that reach 2n·cos(π/2n) on the singlet."""
    n = _check_n(n)
    i = np.arange(n)
    alpha = i * np.pi / n
    beta = (2 * i + 1) * np.pi / (2 * n)
    alice = np.stack([-np.sin(alpha), np.zeros(n), -np.cos(alpha)], axis=1)
    bob = np.stack([np.sin(beta), np.zeros(n), np.cos(beta)], axis=1)
    return MeasurementSet(alice, bob)


def correlator(b: BlochForm, a, bv) -> float:
    return float(np.asarray(a) @ b.M @ np.asarray(bv))


def marginals(b: BlochForm, ms: MeasurementSet):
    """(<A_x>, <B_y>) = (r·a_x, s·b_y)."""
    return ms.alice @ b.r, ms.bob @ b.s


def correlator_table(b: BlochForm, ms: MeasurementSet) -> np.ndarray:
    return ms.alice @ b.M @ ms.bob.T


def bell_value(b: BlochForm, ms: MeasurementSet, coeffs: BellCoefficients) -> float:
    if coeffs.weights.shape != (ms.alice.shape[0], ms.bob.shape[0]):
        raise ValueError(f"coefficients {coeffs.weights.shape} do not match settings "
                         f"({ms.alice.shape[0]}, {ms.bob.shape[0]})")
    return float(np.sum(coeffs.weights * correlator_table(b, ms)))


def bell_value_of_behavior(beh: Behavior, coeffs: BellCoefficients) -> float:
    return float(np.sum(coeffs.weights * beh.correlators()))


def behavior_from_state(b: BlochForm, ms: MeasurementSet) -> Behavior:
    EA, EB = marginals(b, ms)
    E = correlator_table(b, ms)
    sign = np.array([1.0, -1.0])
    table = 0.25 * (1
                    + sign[None, None, :, None] * EA[:, None, None, None]
                    + sign[None, None, None, :] * EB[None, :, None, None]
                    + (sign[:, None] * sign[None, :])[None, None] * E[:, :, None, None])
    return Behavior(table)


def uniform_behavior(n_a: int, n_b: Optional[int] = None) -> Behavior:
    return Behavior(np.full((n_a, n_a if n_b is None else n_b, 2, 2), 0.25))


def noisy_behavior(q: Behavior, p: float) -> Behavior:
    """White-noise mixture p·q + (1 − p)·(uniform)."""
    if not 0 <= p <= 1:
        raise ValueError(f"visibility must lie in [0, 1], got {p}")
    return Behavior(p * q.table + (1 - p) * 0.25)


def ideal_behavior(n: int) -> Behavior:
    """Singlet with the canonical settings: the maximal chained violation."""
    from .qstate import bloch_decompose, make_singlet
    return behavior_from_state(bloch_decompose(make_singlet()), canonical_measurements(n))


# -- saturation --------------------------------------------------------------

def tightness_check(b: BlochForm, n: int, rel_tol: float = DEFAULT_REL_TOL) -> dict:
    """Decide whether the singular-value bound is attained and build the settings.

    A top singular value of multiplicity >= 2 is sufficient. Bob's vectors
    are then spread in the plane of the two leading right singular vectors
    at angles π(2i−1)/(2n), and each Alice vector is aligned with M applied
    to the combination of Bob vectors it multiplies.
    """
    n = _check_n(n)
    rep = correlation_svd(b, rel_tol)
    if rep.sigma_max <= 1e-12:
        raise DegenerateCorrelation(
            "correlation matrix is zero: the bound is 0 and trivially attained")
    if rep.degeneracy < 2:
        return {"sufficient": False,
                "reason": f"largest singular value has degeneracy {rep.degeneracy}",
                "witness": None}
    v1, v2 = rep.right_vectors[:, 0], rep.right_vectors[:, 1]
    phi = np.pi * (2 * np.arange(1, n + 1) - 1) / (2 * n)
    bob = np.cos(phi)[:, None] * v1 + np.sin(phi)[:, None] * v2
    combos = [bob[0] - bob[-1]] + [bob[k] + bob[k + 1] for k in range(n - 1)]
    alice = []
    for c in combos:
        mc = b.M @ c
        alice.append(mc / np.linalg.norm(mc))
    witness = MeasurementSet(np.array(alice), bob)
    return {"sufficient": True,
            "reason": f"largest singular value has degeneracy {rep.degeneracy}",
            "witness": witness}


# -- Gram-matrix program -----------------------------------------------------

def gram_weight_matrix(n: int) -> np.ndarray:
    """W with ½tr(GW) = Σ_k <b_k, b_{k+1}> − <b_1, b_n> for a Gram matrix G."""
    n = _check_n(n)
    W = np.zeros((n, n))
    for k in range(n - 1):
        W[k, k + 1] += 1
        W[k + 1, k] += 1
    W[0, n - 1] -= 1
    W[n - 1, 0] -= 1
    return W


def gram_problem(n: int) -> sdp.SdpProblem:
    W = gram_weight_matrix(n)
    cons = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        cons.append(([E], 1.0))
    return sdp.SdpProblem.from_constraints([n], [W / 2], cons, sense="maximize")


def solve_gram_sdp(n: int, solver: Callable = sdp.solve, **opts) -> dict:
    """Maximize ½tr(GW) over unit-diagonal PSD G; the optimum is n·cos(π/n)."""
    prob = gram_problem(n)
    sol = solver(prob, **opts)
    if not sol.optimal:
        raise sdp.SolverFailure(f"Gram program for n={n} ended with status {sol.status.value}")
    return {"primal": sol.primal_value, "dual": sol.dual_value, "gram": sol.X[0],
            "gap": sol.gap, "solution": sol}
