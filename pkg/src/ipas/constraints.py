"""Linear equality constraints and projections onto them.

A constraint set is the affine subspace {x : A x = b} for a full row rank
A of shape (m, n), m <= n.  Projections come in two flavours: an exact one
through a cached Cholesky factorisation of A A^T, and an inexact one that
solves the same normal system with conjugate gradients stopped at an
absolute residual tolerance.  The inexact projection is the workhorse of
the solver; the exact one doubles as its oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import CgStalled, DimensionMismatch, RankDeficient

# Relative pivot threshold below which A A^T is treated as rank deficient.
_PIVOT_RTOL = 1e-12

# CG iteration cap, as a multiple of the system size m.
_CG_MAX_ITER_FACTOR = 10


@dataclass(frozen=True)
class ConstraintSet:
    """Validated constraint data with cached factorisations.

    Attributes
    ----------
    A : (m, n) constraint matrix, full row rank.
    b : (m,) right-hand side.
    AAt : (m, m) cached Gram matrix A A^T.
    chol : Cholesky factorisation of AAt as returned by scipy's cho_factor.
    """

    A: np.ndarray
    b: np.ndarray
    AAt: np.ndarray
    chol: tuple

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of an inexact projection.

    ``residual_norm`` is the feasibility gap ||A point - b|| of the returned
    point, which equals the normal-system residual at the returned
    multiplier.  It is computed from the point itself so that downstream
    feasibility checks reproduce it exactly.
    """

    point: np.ndarray
    residual_norm: float
    cg_iterations: int
    multiplier: np.ndarray


def build_constraint_set(A: np.ndarray, b: np.ndarray) -> ConstraintSet:
    """Validate (A, b) and cache the Cholesky factorisation of A A^T.

    Raises DimensionMismatch for inconsistent shapes and RankDeficient when
    the factorisation breaks down or its smallest pivot falls below
    1e-12 times the largest.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"A must be 2-D, got ndim={A.ndim}")
    m, n = A.shape
    if m < 1 or n < m:
        raise DimensionMismatch(f"need 1 <= m <= n, got m={m}, n={n}")
    if b.shape != (m,):
        raise DimensionMismatch(f"b must have shape ({m},), got {b.shape}")
    if not (np.isfinite(A).all() and np.isfinite(b).all()):
        raise DimensionMismatch("A and b must be finite")

    AAt = A @ A.T
    try:
        chol = scipy.linalg.cho_factor(AAt, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise RankDeficient(f"Cholesky of A A^T failed: {exc}") from exc
    pivots = np.diag(chol[0])
    if pivots.min() < _PIVOT_RTOL * pivots.max():
        raise RankDeficient(
            "A A^T is numerically rank deficient "
            f"(pivot ratio {pivots.min() / pivots.max():.3e})"
        )

    A.setflags(write=False)
    b.setflags(write=False)
    AAt.setflags(write=False)
    return ConstraintSet(A=A, b=b, AAt=AAt, chol=chol)


def feasibility_gap(cs: ConstraintSet, x: np.ndarray) -> float:
    """Euclidean norm of the constraint violation, ||A x - b||."""
    x = np.asarray(x, dtype=float)
    if x.shape != (cs.n,):
        raise DimensionMismatch(f"x must have shape ({cs.n},), got {x.shape}")
    return float(np.linalg.norm(cs.A @ x - cs.b))


def exact_project(cs: ConstraintSet, y: np.ndarray) -> np.ndarray:
    """Orthogonal projection of y onto {x : A x = b} via the cached factorisation."""
    y = np.asarray(y, dtype=float)
    if y.shape != (cs.n,):
        raise DimensionMismatch(f"y must have shape ({cs.n},), got {y.shape}")
    lam = scipy.linalg.cho_solve(cs.chol, cs.A @ y - cs.b)
    return y - cs.A.T @ lam


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol_abs: float,
    max_iter: int,
) -> tuple[np.ndarray, float, int]:
    """Conjugate gradients on an SPD operator, cold started from zero.

    Terminates on the absolute residual norm ||rhs - apply(x)|| <= tol_abs;
    the returned norm is recomputed from the candidate solution rather than
    the recurrence, so callers can rely on it.  Raises CgStalled when the
    tolerance is not met within max_iter iterations.
    """
    x = np.zeros_like(rhs, dtype=float)
    r = np.array(rhs, dtype=float)
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol_abs:
        return x, rnorm, 0

    p = r.copy()
    rs = rnorm * rnorm
    best_norm = rnorm
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0.0:
            raise CgStalled(
                f"CG curvature p^T A p = {pAp:.3e} is not positive; operator is not SPD",
                residual_norm=best_norm,
                iterations=it,
            )
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol_abs:
            # Recurrence residuals drift from the truth; confirm before exiting.
            true_r = rhs - apply(x)
            true_norm = float(np.linalg.norm(true_r))
            if true_norm <= tol_abs:
                return x, true_norm, it
            r = true_r
            rs_new = true_norm * true_norm
            p = r.copy()
            rs = rs_new
            best_norm = min(best_norm, true_norm)
            continue
        beta = rs_new / rs
        p = r + beta * p
        rs = rs_new
        best_norm = min(best_norm, float(np.sqrt(rs_new)))

    raise CgStalled(
        f"CG did not reach tolerance {tol_abs:.3e} in {max_iter} iterations "
        f"(best residual {best_norm:.3e})",
        residual_norm=best_norm,
        iterations=max_iter,
    )


def inexact_project(cs: ConstraintSet, y: np.ndarray, eta: float) -> ProjectionResult:
    """Approximate projection of y with normal-system residual at most eta.

    Solves A A^T lam = A y - b by CG (cold start, absolute tolerance eta,
    at most 10*m iterations) and returns y - A^T lam.  The feasibility gap
    of the returned point equals the reported residual norm up to roundoff.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (cs.n,):
        raise DimensionMismatch(f"y must have shape ({cs.n},), got {y.shape}")
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    rhs = cs.A @ y - cs.b
    lam, _, iters = cg_solve(
        lambda v: cs.AAt @ v, rhs, tol_abs=eta, max_iter=_CG_MAX_ITER_FACTOR * cs.m
    )
    point = y - cs.A.T @ lam
    # Report the residual in the same association the feasibility gap uses,
    # so the two agree bit for bit; CG certified the recurrence form <= eta
    # and the reassociation shifts it only at the roundoff scale of ||y||.
    res_norm = float(np.linalg.norm(cs.A @ point - cs.b))
    return ProjectionResult(
        point=point, residual_norm=res_norm, cg_iterations=iters, multiplier=lam
    )


def projected_direction(cs: ConstraintSet, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Exact projected-gradient direction: project(x - g) - x.

    At a feasible x this equals minus the orthogonal projection of g onto
    the null space of A, so its inner product with g is -||d||^2.  A zero
    direction certifies first-order stationarity of x for any objective
    with gradient g.  This uses the exact projection and serves as the
    reference metric; the solver's own steps use the inexact variant.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != (cs.n,):
        raise DimensionMismatch(f"g must have shape ({cs.n},), got {g.shape}")
    return exact_project(cs, x - g) - x


def save_constraints(cs: ConstraintSet, path) -> None:
    """Write a constraint set as text: 'm n', the m rows of A, then b."""
    lines = [f"{cs.m} {cs.n}"]
    for row in cs.A:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append(" ".join(repr(float(v)) for v in cs.b))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_constraints(path) -> ConstraintSet:
    """Inverse of save_constraints; revalidates through build_constraint_set."""
    from .errors import ParseError

    try:
        with open(path) as fh:
            tokens = [line.split() for line in fh if line.strip()]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not tokens:
        raise ParseError(f"{path}: empty constraint file")
    try:
        m, n = (int(t) for t in tokens[0])
        if len(tokens) != m + 2:
            raise ValueError(f"expected {m + 2} lines, found {len(tokens)}")
        rows = tokens[1 : m + 1]
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ValueError(f"row {i + 1} has {len(row)} entries, expected {n}")
        if len(tokens[m + 1]) != m:
            raise ValueError(
                f"b has {len(tokens[m + 1])} entries, expected {m}"
            )
        A = np.array([[float(v) for v in row] for row in rows])
        b = np.array([float(v) for v in tokens[m + 1]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return build_constraint_set(A, b)
