"""Dense primal-dual interior-point solver for small block-diagonal SDPs.

Standard form (``sense="minimize"``)::

    (P)  min  <C, X>   s.t.  <A_i, X> = b_i,  X ⪰ 0
    (D)  max  bᵀy      s.t.  Σ y_i A_i + Z = C,  Z ⪰ 0

For ``sense="maximize"`` the roles flip: max <C, X> over the same primal
constraints, with dual  min bᵀy  s.t.  Σ y_i A_i − C = Z ⪰ 0.

X, Z and every A_i are block diagonal. Each block is stored densely; the
constraint matrices of block ``k`` live in one array of shape (m, d_k, d_k).

The iteration is an infeasible-start HKM method with Mehrotra
predictor-corrector steps.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

STEP_FRACTION = 0.98


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    NUMERICAL_TROUBLE = "NumericalTrouble"


class DimensionMismatch(ValueError):
    pass


class NumericalTrouble(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    """Raised by callers that need an optimal certificate and did not get one."""


@dataclass
class SdpProblem:
    blocks: tuple
    C: List[np.ndarray]
    A: List[np.ndarray]
    b: np.ndarray
    sense: str = "minimize"

    def __post_init__(self):
        self.blocks = tuple(int(d) for d in self.blocks)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        m = self.b.shape[0]
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"sense must be 'minimize' or 'maximize', got {self.sense!r}")
        if len(self.C) != len(self.blocks) or len(self.A) != len(self.blocks):
            raise DimensionMismatch("C and A need one entry per block")
        self.C = [np.asarray(c, dtype=float) for c in self.C]
        self.A = [np.asarray(a, dtype=float).reshape(m, d, d) if m else np.zeros((0, d, d))
                  for a, d in zip(self.A, self.blocks)]
        for d, c, a in zip(self.blocks, self.C, self.A):
            if d < 1:
                raise DimensionMismatch("block dimensions must be >= 1")
            if c.shape != (d, d) or a.shape != (m, d, d):
                raise DimensionMismatch(
                    f"block of size {d}: C has shape {c.shape}, A has shape {a.shape}")
            if np.max(np.abs(c - c.T), initial=0.0) > 1e-12:
                raise ValueError("objective block is not symmetric")
            if m and np.max(np.abs(a - a.transpose(0, 2, 1))) > 1e-12:
                raise ValueError("constraint block is not symmetric")
        n_free = sum(d * (d + 1) // 2 for d in self.blocks)
        if m > n_free:
            raise DimensionMismatch(
                f"{m} equality constraints exceed the {n_free} free entries of X")

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @classmethod
    def from_constraints(cls, blocks, C, constraints, sense="minimize") -> "SdpProblem":
        """Build from a list of ``(A_i, b_i)`` where each ``A_i`` is a list of blocks."""
        blocks = tuple(blocks)
        m = len(constraints)
        A = [np.zeros((m, d, d)) for d in blocks]
        b = np.zeros(m)
        for i, (Ai, bi) in enumerate(constraints):
            for k, blk in enumerate(Ai):
                A[k][i] = blk
            b[i] = bi
        return cls(blocks, list(C), A, b, sense)

    def apply(self, X: Sequence[np.ndarray]) -> np.ndarray:
        """The linear map X -> (<A_i, X>)_i."""
        out = np.zeros(self.m)
        for a, x in zip(self.A, X):
            out += a.reshape(self.m, -1) @ x.reshape(-1)
        return out

    def adjoint(self, y: np.ndarray) -> List[np.ndarray]:
        """y -> Σ y_i A_i, blockwise."""
        return [np.tensordot(y, a, axes=1) for a in self.A]


@dataclass
class SdpSolution:
    X: List[np.ndarray]
    y: np.ndarray
    Z: List[np.ndarray]
    primal_value: float
    dual_value: float
    gap: float
    status: Status
    iterations: int
    history: list = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class ResidualReport:
    primal_residual: float
    dual_residual: float
    min_eig_X: float
    min_eig_Z: float
    gap: float
    primal_value: float
    dual_value: float

    def passes(self, tol_eq: float = 1e-7, tol_eig: float = 1e-8, tol_gap: float = 1e-6,
               tol_dual: float = 1e-7) -> bool:
        return (self.primal_residual <= tol_eq
                and self.dual_residual <= tol_dual
                and self.min_eig_X >= -tol_eig
                and self.min_eig_Z >= -tol_eig
                and abs(self.gap) <= tol_gap * (1 + abs(self.primal_value)))


def _inner(U: Sequence[np.ndarray], V: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(u, v) for u, v in zip(U, V)))


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest α with X + α dX ⪰ 0 (X must be positive definite)."""
    L = np.linalg.cholesky(X)
    Li = sla.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(_sym(Li @ dX @ Li.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def feasibility_certificate(sol: SdpSolution, p: SdpProblem) -> ResidualReport:
    """Recompute residuals of ``sol`` from scratch; nothing is reused from the solver."""
    X = [_sym(np.asarray(x)) for x in sol.X]
    Z = [_sym(np.asarray(z)) for z in sol.Z]
    y = np.asarray(sol.y, dtype=float)
    r_p = float(np.max(np.abs(p.apply(X) - p.b), initial=0.0))
    sgn = 1.0 if p.sense == "minimize" else -1.0
    # minimize: C - Σ y A - Z = 0;  maximize: Σ y A - C - Z = 0
    Ay = p.adjoint(y)
    r_d = max(float(np.max(np.abs(sgn * (c - ay) - z))) for c, ay, z in zip(p.C, Ay, Z))
    pv = _inner(p.C, X)
    dv = float(p.b @ y)
    return ResidualReport(
        primal_residual=r_p,
        dual_residual=r_d,
        min_eig_X=min(float(np.linalg.eigvalsh(x)[0]) for x in X),
        min_eig_Z=min(float(np.linalg.eigvalsh(z)[0]) for z in Z),
        gap=dv - pv if p.sense == "maximize" else pv - dv,
        primal_value=pv,
        dual_value=dv,
    )


def format_problem(p: SdpProblem) -> str:
    """Human-readable listing of a problem, for reproducing solver failures."""
    lines = [f"sense {p.sense}", f"blocks {' '.join(map(str, p.blocks))}", f"m {p.m}"]
    with np.printoptions(precision=17, linewidth=200, threshold=10**7):
        for k, c in enumerate(p.C):
            lines.append(f"C[{k}] =\n{c}")
        for i in range(p.m):
            lines.append(f"b[{i}] = {float(p.b[i])!r}")
            for k in range(len(p.blocks)):
                a = p.A[k][i]
                if np.any(a):
                    lines.append(f"A[{i}][{k}] =\n{a}")
    return "\n".join(lines) + "\n"


class _Schur:
    """Assembles and factors  M_ij = Σ_k tr(A_i X_k A_j Z_k⁻¹)."""

    def __init__(self, p: SdpProblem):
        self.p = p
        self.active = []
        for a in p.A:
            idx = np.flatnonzero(np.any(a.reshape(p.m, -1) != 0, axis=1))
            self.active.append(idx)

    def factor(self, X, Zinv):
        m = self.p.m
        M = np.zeros((m, m))
        for a, idx, x, zi in zip(self.p.A, self.active, X, Zinv):
            if idx.size == 0:
                continue
            Ak = a[idx]
            G = np.matmul(np.matmul(x, Ak), zi)
            M[np.ix_(idx, idx)] += G.reshape(idx.size, -1) @ Ak.reshape(idx.size, -1).T
        M = _sym(M)
        self.M = M
        scale = max(1.0, float(np.max(np.abs(np.diag(M))))) if m else 1.0
        reg = 0.0
        while True:
            try:
                self.cho = sla.cho_factor(M + reg * scale * np.eye(m), lower=True)
                return reg
            except np.linalg.LinAlgError:
                reg = 1e-12 if reg == 0.0 else reg * 10
                if reg > 1e-6:
                    raise NumericalTrouble("Schur complement is not positive definite")

    def solve(self, rhs, refine: int = 3):
        x = sla.cho_solve(self.cho, rhs)
        for _ in range(refine):
            r = rhs - self.M @ x
            if np.linalg.norm(r) <= 1e-15 * (1 + np.linalg.norm(rhs)):
                break
            x = x + sla.cho_solve(self.cho, r)
        return x


def _stalled(history, window: int = 20) -> bool:
    """True when none of μ, primal or dual residual fell tenfold over ``window`` steps."""
    if len(history) <= window:
        return False
    for col in (2, 3, 4):
        vals = [h[col] for h in history]
        if min(vals[-window:]) < 0.1 * min(vals[:-window]):
            return False
    return True


def solve(p: SdpProblem, tol_gap: float = 1e-7, tol_feas: float = 1e-8,
          max_iter: int = 200, dump_path: Optional[str] = None) -> SdpSolution:
    """Solve ``p`` and return primal and dual iterates with a status flag.

    A solve that stalls returns the last iterate with status MaxIter or
    NumericalTrouble; it does not raise. Callers that need a certificate
    should check :attr:`SdpSolution.optimal` or run
    :func:`feasibility_certificate`.
    """
    if dump_path:
        with open(dump_path, "w") as fh:
            fh.write(format_problem(p))

    sgn = 1.0 if p.sense == "minimize" else -1.0
    C = [sgn * c for c in p.C]
    b = p.b
    m = p.m
    N = sum(p.blocks)

    tau = 1.0 + (float(np.max(np.abs(b))) if m else 0.0) + max(
        (float(np.max(np.linalg.norm(a.reshape(m, -1), axis=1))) if m else 0.0) for a in p.A)
    X = [tau * np.eye(d) for d in p.blocks]
    Z = [tau * np.eye(d) for d in p.blocks]
    y = np.zeros(m)

    norm_b = 1.0 + float(np.linalg.norm(b))
    norm_C = 1.0 + float(np.sqrt(sum(np.sum(c * c) for c in C)))
    schur = _Schur(p)
    status = Status.MAX_ITER
    history = []
    it = 0

    for it in range(max_iter + 1):
        r_p = b - p.apply(X)
        Ay = p.adjoint(y)
        R_d = [c - z - ay for c, z, ay in zip(C, Z, Ay)]
        pobj = _inner(C, X)
        dobj = float(b @ y)
        mu = _inner(X, Z) / N
        rel_gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        p_inf = float(np.linalg.norm(r_p)) / norm_b
        d_inf = float(np.sqrt(sum(np.sum(r * r) for r in R_d))) / norm_C
        history.append((pobj, dobj, p_inf, d_inf, mu))
        log.debug("it %3d  pobj % .10e  dobj % .10e  pinf %.2e  dinf %.2e  mu %.2e",
                  it, pobj, dobj, p_inf, d_inf, mu)
        if rel_gap <= tol_gap and p_inf <= tol_feas and d_inf <= tol_feas:
            status = Status.OPTIMAL
            break
        if it == max_iter:
            break
        if _stalled(history):
            log.debug("stalled at iteration %d", it)
            status = Status.NUMERICAL_TROUBLE
            break

        try:
            Zinv = [np.linalg.inv(z) for z in Z]
            Zinv = [_sym(zi) for zi in Zinv]
            schur.factor(X, Zinv)
        except (NumericalTrouble, np.linalg.LinAlgError):
            status = Status.NUMERICAL_TROUBLE
            break

        XRZ = [x @ r @ zi for x, r, zi in zip(X, R_d, Zinv)]

        def direction(H):
            rhs = r_p - p.apply(H) + p.apply(XRZ)
            dy = schur.solve(rhs)
            Ady = p.adjoint(dy)
            dZ = [r - a for r, a in zip(R_d, Ady)]
            dX = [_sym(h - x @ dz @ zi) for h, x, dz, zi in zip(H, X, dZ, Zinv)]
            return dX, dy, dZ

        def steps(dX, dZ):
            try:
                ap = min(_max_step(x, dx) for x, dx in zip(X, dX))
                ad = min(_max_step(z, dz) for z, dz in zip(Z, dZ))
            except np.linalg.LinAlgError:
                raise NumericalTrouble("iterate lost positive definiteness")
            return ap, ad

        try:
            # predictor
            dXa, dya, dZa = direction([-x for x in X])
            ap, ad = steps(dXa, dZa)
            ap, ad = min(1.0, ap), min(1.0, ad)
            mu_aff = _inner([x + ap * dx for x, dx in zip(X, dXa)],
                            [z + ad * dz for z, dz in zip(Z, dZa)]) / N
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            # corrector
            H = [sigma * mu * zi - x - dxa @ dza @ zi
                 for zi, x, dxa, dza in zip(Zinv, X, dXa, dZa)]
            dX, dy, dZ = direction(H)
            ap, ad = steps(dX, dZ)
        except NumericalTrouble:
            status = Status.NUMERICAL_TROUBLE
            break
        ap = min(1.0, STEP_FRACTION * ap)
        ad = min(1.0, STEP_FRACTION * ad)
        X = [x + ap * dx for x, dx in zip(X, dX)]
        y = y + ad * dy
        Z = [z + ad * dz for z, dz in zip(Z, dZ)]

    pv = _inner(p.C, X)
    if p.sense == "minimize":
        yy, dv = y, float(b @ y)
        gap = pv - dv
    else:
        yy = -y
        dv = float(b @ yy)
        gap = dv - pv
    return SdpSolution(X=X, y=yy, Z=Z, primal_value=pv, dual_value=dv, gap=gap,
                       status=status, iterations=it, history=history)
