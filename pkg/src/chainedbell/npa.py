"""NPA relaxations for two parties with binary outcomes, and DI randomness bounds.

Moment variables are expectation values of words in the projectors
Π^A_x, Π^B_y onto outcome +1. Words are stored as a pair of tuples
``(alice_settings, bob_settings)``: Alice's operators commute with Bob's,
so only the order inside each party matters. Since behaviors are real we
work with the real part of the moment matrix, which identifies a word with
its adjoint.

Two bounds on the guessing probability of the outcome pair at inputs
``target = (x, y)`` (0-based) are provided:

* :func:`max_prob_given_violation` only knows the value of one Bell
  expression and maximizes each p(ab|xy) separately;
* :func:`max_guess_full_statistics` knows the full behavior and lets the
  adversary split it into four sub-normalized pieces, one per guess.
"""
from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from . import sdp
from .chained import Behavior, BellCoefficients, no_signaling_violation

Word = Tuple[Tuple[int, ...], Tuple[int, ...]]
IDENTITY: Word = ((), ())
OUTCOMES = ((0, 0), (0, 1), (1, 0), (1, 1))  # (a, b) indices, 0 is +1


class Level(str, enum.Enum):
    Q1 = "q1"
    ONE_PLUS_AB = "1+ab"
    Q2 = "q2"

    @classmethod
    def parse(cls, value) -> "Level":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace(" ", "")
        aliases = {"q1": cls.Q1, "1": cls.Q1, "1+ab": cls.ONE_PLUS_AB,
                   "oneplusab": cls.ONE_PLUS_AB, "q1+ab": cls.ONE_PLUS_AB,
                   "q2": cls.Q2, "2": cls.Q2}
        if key not in aliases:
            raise ValueError(f"unknown NPA level {value!r}; use q1, 1+ab or q2")
        return aliases[key]


class Mode(str, enum.Enum):
    VIOLATION_ONLY = "violation"
    FULL_STATISTICS = "full"


class Infeasible(ValueError):
    def __init__(self, message: str, relaxation_max: Optional[float] = None):
        super().__init__(message)
        self.relaxation_max = relaxation_max


@dataclass(frozen=True)
class Scenario:
    n_a: int
    n_b: int

    def __post_init__(self):
        if self.n_a < 2 or self.n_b < 2:
            raise ValueError("each party needs at least two settings")

    @classmethod
    def chained(cls, n: int) -> "Scenario":
        return cls(n, n)


# -- words -------------------------------------------------------------------

def _collapse(seq: Sequence[int]) -> Tuple[int, ...]:
    out: List[int] = []
    for s in seq:
        if not out or out[-1] != s:
            out.append(s)
    return tuple(out)


def reduce_word(alice: Sequence[int], bob: Sequence[int]) -> Word:
    """Apply Π² = Π inside each party."""
    return _collapse(alice), _collapse(bob)


def canonical(word: Word) -> Word:
    adj = (word[0][::-1], word[1][::-1])
    return min(word, adj)


def product(left: Word, right: Word) -> Word:
    """Canonical form of left† · right."""
    return canonical(reduce_word(left[0][::-1] + right[0], left[1][::-1] + right[1]))


@dataclass(frozen=True)
class MonomialBasis:
    level: Level
    scenario: Scenario
    words: Tuple[Word, ...]

    @functools.cached_property
    def index(self) -> Dict[Word, int]:
        return {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)


def build_basis(s: Scenario, level) -> MonomialBasis:
    level = Level.parse(level)
    words: List[Word] = [IDENTITY]
    words += [((x,), ()) for x in range(s.n_a)]
    words += [((), (y,)) for y in range(s.n_b)]
    if level in (Level.ONE_PLUS_AB, Level.Q2):
        words += [((x,), (y,)) for x in range(s.n_a) for y in range(s.n_b)]
    if level is Level.Q2:
        words += [((x, xp), ()) for x, xp in itertools.permutations(range(s.n_a), 2)]
        words += [((), (y, yp)) for y, yp in itertools.permutations(range(s.n_b), 2)]
    return MonomialBasis(level, s, tuple(words))


@dataclass
class MomentMatrix:
    """Γ = Σ_k v_k F_k over the distinct moments ``variables``."""

    basis: MonomialBasis
    variables: List[Word]
    var_index: Dict[Word, int]
    F: np.ndarray  # (n_vars, d, d) 0/1 indicator matrices
    entry_vars: np.ndarray  # (d, d) variable id of each entry

    @property
    def dim(self) -> int:
        return len(self.basis)

    def var(self, word: Word) -> int:
        return self.var_index[canonical(word)]


@functools.lru_cache(maxsize=None)
def moment_matrix(s: Scenario, level) -> MomentMatrix:
    basis = build_basis(s, level)
    d = len(basis)
    variables: List[Word] = []
    var_index: Dict[Word, int] = {}
    ids = np.zeros((d, d), dtype=int)
    for i, wi in enumerate(basis.words):
        for j in range(i, d):
            w = product(wi, basis.words[j])
            if w not in var_index:
                var_index[w] = len(variables)
                variables.append(w)
            ids[i, j] = ids[j, i] = var_index[w]
    F = np.zeros((len(variables), d, d))
    for k in range(len(variables)):
        F[k][ids == k] = 1.0
    F.setflags(write=False)
    return MomentMatrix(basis, variables, var_index, F, ids)


# -- linear functionals over moments ----------------------------------------

def _pa(x: int) -> Word:
    return (x,), ()


def _pb(y: int) -> Word:
    return (), (y,)


def _pab(x: int, y: int) -> Word:
    return (x,), (y,)


def prob_functional(x: int, y: int, a: int, b: int) -> Dict[Word, float]:
    """p(ab|xy) as a combination of projector moments (a, b are outcome indices)."""
    sa = 1.0 if a == 0 else -1.0
    sb = 1.0 if b == 0 else -1.0
    # p(++) = P_AB, p(+-) = P_A - P_AB, p(-+) = P_B - P_AB, p(--) = 1 - P_A - P_B + P_AB
    out = {_pab(x, y): sa * sb,
           _pa(x): 0.0 if b == 0 else (1.0 if a == 0 else -1.0),
           _pb(y): 0.0 if a == 0 else (1.0 if b == 0 else -1.0),
           IDENTITY: 1.0 if (a, b) == (1, 1) else 0.0}
    return {w: c for w, c in out.items() if c != 0.0}


def bell_functional(coeffs: BellCoefficients) -> Dict[Word, float]:
    """Σ w_xy <A_x B_y> with <A_x B_y> = 1 − 2Π^A_x − 2Π^B_y + 4Π^A_xΠ^B_y."""
    out: Dict[Word, float] = {}
    for (x, y), w in np.ndenumerate(coeffs.weights):
        if w == 0:
            continue
        for word, c in ((IDENTITY, 1.0), (_pa(x), -2.0), (_pb(y), -2.0), (_pab(x, y), 4.0)):
            out[word] = out.get(word, 0.0) + w * c
    return out


# -- generic moment program --------------------------------------------------

@dataclass
class MomentProgram:
    """Maximize gᵀv subject to E v = f and a list of LMIs Σ_k v_k F_k(+F0) ⪰ 0.

    ``blocks`` holds ``(offset, MomentMatrix)`` pairs: the block's moment
    variables are v[offset : offset + n_vars]. ``scalar_rows`` are extra
    1x1 blocks ``h·v − c ⪰ 0``.
    """

    n_vars: int
    blocks: List[Tuple[int, MomentMatrix]]
    E: np.ndarray
    f: np.ndarray
    g: np.ndarray
    scalar_rows: List[Tuple[np.ndarray, float]] = field(default_factory=list)


def _eliminate(E: np.ndarray, f: np.ndarray, tol: float = 1e-10):
    """Particular solution v0 and basis N with {v : Ev = f} = {v0 + N t}."""
    n = E.shape[1]
    if E.shape[0] == 0:
        return np.zeros(n), np.eye(n)
    _, R, piv = sla.qr(E, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0)))
    P, Fr = piv[:rank], piv[rank:]
    EP = E[:, P]
    sol, *_ = np.linalg.lstsq(EP, np.column_stack([f, E[:, Fr]]), rcond=None)
    v0 = np.zeros(n)
    v0[P] = sol[:, 0]
    if np.max(np.abs(E @ v0 - f), initial=0.0) > 1e-8:
        raise Infeasible("linear moment constraints are inconsistent")
    N = np.zeros((n, n - rank))
    N[P] = -sol[:, 1:]
    N[Fr, np.arange(n - rank)] = 1.0
    return v0, N


def to_sdp(prog: MomentProgram):
    """Lower to the standard form whose dual slack Z holds the moment matrices."""
    v0, N = _eliminate(prog.E, prog.f)
    m = N.shape[1]
    dims, C, A = [], [], []
    for off, mm in prog.blocks:
        Fb = mm.F
        nb = Fb.shape[0]
        Nb = N[off:off + nb]
        flat = Fb.reshape(nb, -1)
        C.append((v0[off:off + nb] @ flat).reshape(mm.dim, mm.dim))
        A.append(-(Nb.T @ flat).reshape(m, mm.dim, mm.dim))
        dims.append(mm.dim)
    for h, c in prog.scalar_rows:
        dims.append(1)
        C.append(np.array([[h @ v0 - c]]))
        A.append(-(h @ N).reshape(m, 1, 1))
    b = N.T @ prog.g
    const = float(prog.g @ v0)
    return sdp.SdpProblem(tuple(dims), C, A, b, "minimize"), v0, N, const


@dataclass
class ProgramResult:
    """Outcome of one moment program.

    ``upper`` comes from the certificate side and bounds the relaxation
    optimum from above once the solve is Optimal. ``lower`` is the objective
    at the final moment matrices, which satisfy every linear constraint
    exactly and are positive semidefinite. ``value`` is ``upper`` for an
    Optimal solve and ``lower`` otherwise: on programs whose moment matrices
    have no interior (the exact maximal violation, an extremal behavior) the
    certificate side diverges while the moment side still converges.
    """

    value: float
    upper: float
    lower: float
    moment_residual: float
    v: np.ndarray
    status: sdp.Status
    gap: float
    solution: sdp.SdpSolution = field(repr=False)


def solve_program(prog: MomentProgram, **opts) -> ProgramResult:
    prob, v0, N, const = to_sdp(prog)
    sol = sdp.solve(prob, **opts)
    v = v0 + N @ sol.y
    upper = sol.primal_value + const
    lower = sol.dual_value + const
    value = upper if sol.optimal else lower
    resid = sol.history[-1][3] if sol.history else float("nan")
    return ProgramResult(value, upper, lower, resid, v, sol.status, upper - lower, sol)


def _vector(mm: MomentMatrix, functional: Dict[Word, float], n_vars: int,
            offset: int = 0) -> np.ndarray:
    out = np.zeros(n_vars)
    for w, c in functional.items():
        out[offset + mm.var(w)] += c
    return out


# -- certification -----------------------------------------------------------

@dataclass
class CertResult:
    p_guess: float
    min_entropy_bits: float
    level: Level
    setting: Tuple[int, int]
    constraint_mode: Mode
    solver_status: str
    gap: float
    outcome_values: Optional[List[float]] = None
    relaxation_max: Optional[float] = None


def min_entropy(p_guess: float) -> float:
    if not p_guess > 0:
        raise ValueError(f"guessing probability must be positive, got {p_guess}")
    return -math.log2(p_guess)


def _result(values, statuses, gaps, level, target, mode, relaxation_max=None) -> CertResult:
    p = min(float(max(values)), 1.0)
    worst = "Optimal"
    for s in statuses:
        if s is not sdp.Status.OPTIMAL:
            worst = s.value
    return CertResult(p_guess=p, min_entropy_bits=max(0.0, min_entropy(p)), level=level,
                      setting=tuple(target), constraint_mode=mode, solver_status=worst,
                      gap=float(max(gaps)), outcome_values=[float(v) for v in values],
                      relaxation_max=relaxation_max)


def _single_block(s: Scenario, level) -> Tuple[MomentMatrix, int, np.ndarray, np.ndarray]:
    mm = moment_matrix(s, Level.parse(level))
    nv = len(mm.variables)
    E = np.zeros((1, nv))
    E[0, mm.var(IDENTITY)] = 1.0
    return mm, nv, E, np.array([1.0])


@functools.lru_cache(maxsize=256)
def _bell_range_cached(s: Scenario, level: Level, weights: bytes, shape: tuple):
    coeffs = BellCoefficients(np.frombuffer(weights).reshape(shape))
    mm, nv, E, f = _single_block(s, level)
    h = _vector(mm, bell_functional(coeffs), nv)
    hi = solve_program(MomentProgram(nv, [(0, mm)], E, f, h))
    lo = solve_program(MomentProgram(nv, [(0, mm)], E, f, -h))
    return hi.value, -lo.value


def bell_range(s: Scenario, coeffs: BellCoefficients, level) -> Tuple[float, float]:
    """(max, min) of the Bell expression over the relaxation; the max is a certified upper bound."""
    w = np.ascontiguousarray(coeffs.weights, dtype=float)
    return _bell_range_cached(s, Level.parse(level), w.tobytes(), w.shape)


def max_prob_given_violation(s: Scenario, coeffs: BellCoefficients, value: float,
                             target: Tuple[int, int], level, inequality: bool = False,
                             feas_tol: float = 1e-6, **opts) -> CertResult:
    """Bound the guessing probability from the observed Bell value alone.

    Solves one program per outcome pair (a, b), each maximizing p(ab|xy)
    subject to the Bell value being equal to ``value`` (or at least
    ``value`` when ``inequality`` is set).
    """
    level = Level.parse(level)
    x, y = target
    if coeffs.weights.shape != (s.n_a, s.n_b):
        raise ValueError("coefficients do not match the scenario")
    upper, lower = bell_range(s, coeffs, level)
    if value > upper + feas_tol or (not inequality and value < lower - feas_tol):
        raise Infeasible(f"Bell value {value} lies outside the relaxation range "
                         f"[{lower}, {upper}]", relaxation_max=upper)
    value = min(value, upper) if inequality else min(max(value, lower), upper)
    mm, nv, E, f = _single_block(s, level)
    h = _vector(mm, bell_functional(coeffs), nv)
    scalar_rows = []
    if inequality:
        scalar_rows.append((h, value))
    else:
        E = np.vstack([E, h])
        f = np.append(f, value)
    vals, statuses, gaps = [], [], []
    for a, b in OUTCOMES:
        g = _vector(mm, prob_functional(x, y, a, b), nv)
        res = solve_program(MomentProgram(nv, [(0, mm)], E, f, g, scalar_rows), **opts)
        vals.append(res.value)
        statuses.append(res.status)
        gaps.append(res.gap)
    return _result(vals, statuses, gaps, level, target, Mode.VIOLATION_ONLY, upper)


def behavior_constraints(mm: MomentMatrix, beh: Behavior) -> Dict[Word, float]:
    """Values of Π^A_x, Π^B_y and Π^A_xΠ^B_y implied by the behavior."""
    if no_signaling_violation(beh.table) > 1e-8:
        raise Infeasible("behavior violates no-signaling")
    pa = beh.marginal_a()
    pb = beh.marginal_b()
    out = {IDENTITY: 1.0}
    for x in range(beh.n_a):
        out[_pa(x)] = float(pa[x])
    for y in range(beh.n_b):
        out[_pb(y)] = float(pb[y])
    for x in range(beh.n_a):
        for y in range(beh.n_b):
            out[_pab(x, y)] = float(beh.table[x, y, 0, 0])
    return out


def full_statistics_program(s: Scenario, beh: Behavior, target, level) -> MomentProgram:
    level = Level.parse(level)
    if (beh.n_a, beh.n_b) != (s.n_a, s.n_b):
        raise ValueError("behavior does not match the scenario")
    x, y = target
    mm = moment_matrix(s, level)
    nb = len(mm.variables)
    nv = 4 * nb
    pinned = behavior_constraints(mm, beh)
    rows, rhs = [], []
    for w, val in pinned.items():
        row = np.zeros(nv)
        k = mm.var(w)
        for e in range(4):
            row[e * nb + k] = 1.0
        rows.append(row)
        rhs.append(val)
    g = np.zeros(nv)
    for e, (a, b) in enumerate(OUTCOMES):
        g += _vector(mm, prob_functional(x, y, a, b), nv, offset=e * nb)
    return MomentProgram(nv, [(e * nb, mm) for e in range(4)], np.array(rows),
                         np.array(rhs), g)


def max_guess_full_statistics(s: Scenario, beh: Behavior, target: Tuple[int, int],
                              level, **opts) -> CertResult:
    """Guessing probability of an adversary who splits the behavior four ways."""
    level = Level.parse(level)
    prog = full_statistics_program(s, beh, target, level)
    res = solve_program(prog, **opts)
    if res.status is not sdp.Status.OPTIMAL and not res.moment_residual <= 1e-6:
        raise Infeasible(f"full-statistics program did not converge ({res.status.value}); "
                         "the behavior may lie outside the relaxation")
    return _result([res.value], [res.status], [res.gap], level, target, Mode.FULL_STATISTICS)


def eve_blocks(prog: MomentProgram, v: np.ndarray) -> List[np.ndarray]:
    """Moment matrices Γ_e = Σ_k v_k F_k for each block of a solved program."""
    out = []
    for off, mm in prog.blocks:
        nb = mm.F.shape[0]
        out.append(np.tensordot(v[off:off + nb], mm.F, axes=1))
    return out
