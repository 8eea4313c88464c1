"""Two-qubit states, their Bloch form and the correlation-matrix SVD.

A two-qubit density matrix is written as

    rho = 1/4 [ I⊗I + Σ r_i σ_i⊗I + Σ s_j I⊗σ_j + Σ m_kl σ_k⊗σ_l ]

and everything downstream (Bell values, the singular-value bound) only
needs the triple ``(r, s, M)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
DEFAULT_REL_TOL = 1e-8

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)


class StateError(ValueError):
    """Base class for invalid density matrices."""

    def __init__(self, message: str, magnitude: float):
        super().__init__(message)
        self.magnitude = magnitude


class NotHermitian(StateError):
    pass


class TraceNotOne(StateError):
    pass


class NotPositive(StateError):
    pass


@dataclass(frozen=True)
class TwoQubitState:
    rho: np.ndarray

    def __post_init__(self):
        self.rho.setflags(write=False)


@dataclass(frozen=True)
class BlochForm:
    """Local Bloch vectors ``r`` (Alice), ``s`` (Bob) and correlation matrix ``M``."""

    r: np.ndarray
    s: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        for name in ("r", "s", "M"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.r.shape != (3,) or self.s.shape != (3,) or self.M.shape != (3, 3):
            raise ValueError("BlochForm needs r, s of shape (3,) and M of shape (3, 3)")

    @classmethod
    def from_correlations(cls, M) -> "BlochForm":
        return cls(np.zeros(3), np.zeros(3), np.asarray(M, dtype=float))


@dataclass(frozen=True)
class SvdReport:
    singular_values: np.ndarray
    sigma_max: float
    degeneracy: int
    left_vectors: np.ndarray
    right_vectors: np.ndarray


def validate_state(rho) -> TwoQubitState:
    """Check that ``rho`` is a 4x4 density matrix and wrap it.

    Raises
    ------
    NotHermitian, TraceNotOne, NotPositive
        Carrying the size of the violation in ``.magnitude``.
    """
    rho = np.array(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {rho.shape}")
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    if herm > HERMITIAN_TOL:
        raise NotHermitian(f"rho is not Hermitian: max |rho - rho^dag| = {herm:.3e}", herm)
    tr_err = abs(np.trace(rho) - 1.0)
    if tr_err > TRACE_TOL:
        raise TraceNotOne(f"trace(rho) deviates from 1 by {tr_err:.3e}", tr_err)
    lam_min = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0])
    if lam_min < -PSD_TOL:
        raise NotPositive(f"rho has a negative eigenvalue {lam_min:.3e}", -lam_min)
    return TwoQubitState(rho)


def bloch_decompose(state: TwoQubitState) -> BlochForm:
    rho = state.rho
    r = np.array([np.trace(rho @ np.kron(P, I2)).real for P in PAULIS])
    s = np.array([np.trace(rho @ np.kron(I2, P)).real for P in PAULIS])
    M = np.array([[np.trace(rho @ np.kron(P, Q)).real for Q in PAULIS] for P in PAULIS])
    return BlochForm(r, s, M)


def bloch_compose(b: BlochForm) -> TwoQubitState:
    """Inverse of :func:`bloch_decompose`; raises NotPositive for unphysical input."""
    rho = np.kron(I2, I2).astype(complex)
    for i, P in enumerate(PAULIS):
        rho = rho + b.r[i] * np.kron(P, I2) + b.s[i] * np.kron(I2, P)
        for j, Q in enumerate(PAULIS):
            rho = rho + b.M[i, j] * np.kron(P, Q)
    return validate_state(rho / 4)


def correlation_svd(b: BlochForm, rel_tol: float = DEFAULT_REL_TOL) -> SvdReport:
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    U, sv, Vt = np.linalg.svd(b.M)
    sigma_max = float(sv[0])
    degeneracy = int(np.sum((sigma_max - sv) / max(sigma_max, 1e-300) <= rel_tol))
    return SvdReport(sv, sigma_max, degeneracy, U, Vt.T)


def rayleigh_singular_bound(A, x, y) -> dict:
    """Compare |xᵀAy| with σ_max(A)·‖x‖·‖y‖.

    The inequality always holds; equality needs x and y along a top
    singular pair.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.shape != (x.shape[0], y.shape[0]):
        raise ValueError(f"dimension mismatch: A {A.shape}, x {x.shape}, y {y.shape}")
    lhs = abs(float(x @ A @ y))
    rhs = float(np.linalg.norm(A, 2) * np.linalg.norm(x) * np.linalg.norm(y))
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + 1e-10}


# -- state constructors ------------------------------------------------------

def make_singlet() -> TwoQubitState:
    psi = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)
    return validate_state(np.outer(psi, psi.conj()))


def make_werner(p: float) -> TwoQubitState:
    if not 0 <= p <= 1:
        raise ValueError(f"Werner visibility must lie in [0, 1], got {p}")
    return validate_state(p * make_singlet().rho + (1 - p) * np.eye(4) / 4)


def make_xstate(nu: float, l: float) -> TwoQubitState:
    """ρ(ν, l) = 1/4 [I⊗I + ν σx⊗σy + ν σy⊗σx + l σz⊗σz]."""
    M = np.array([[0.0, nu, 0.0], [nu, 0.0, 0.0], [0.0, 0.0, l]])
    return bloch_compose(BlochForm.from_correlations(M))


def maximally_mixed() -> TwoQubitState:
    return validate_state(np.eye(4, dtype=complex) / 4)


def random_state(rng: np.random.Generator, weight: Optional[float] = None) -> TwoQubitState:
    """Haar-random pure state mixed with white noise at a random (or given) weight."""
    z = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi = z / np.linalg.norm(z)
    w = rng.uniform() if weight is None else weight
    rho = w * np.outer(psi, psi.conj()) + (1 - w) * np.eye(4) / 4
    rho = (rho + rho.conj().T) / 2
    return validate_state(rho / np.trace(rho).real)


def parse_state(spec: str) -> TwoQubitState:
    """Parse ``singlet``, ``mixed``, ``werner:<p>`` or ``xstate:<nu>,<l>``."""
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "singlet":
        return make_singlet()
    if name in ("mixed", "maximally_mixed"):
        return maximally_mixed()
    if name == "werner":
        return make_werner(float(arg))
    if name == "xstate":
        nu, l = (float(v) for v in arg.split(","))
        return make_xstate(nu, l)
    raise ValueError(f"unknown state spec {spec!r}")
