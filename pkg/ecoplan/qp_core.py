"""Convex quadratic programming by operator splitting.

Problems have the form

    minimize    0.5 x^T H x + f^T x
    subject to  lower <= x <= upper
                A_eq x = b_eq
                A_in x <= b_in

and are converted to the stacked form l <= A x <= u. The solver runs ADMM on
the quasi-definite KKT system (factored once per rho with a sparse LU), then
polishes the iterate on the guessed active set. A solution is reported as
optimal only when its primal violation, stationarity and complementarity
residuals are all within tolerance. Convexity is checked, and unconstrained
problems solved, with a banded Cholesky factorization of the hessian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr, splu

from .const import (
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    QP_ADAPT_EVERY,
    QP_ALPHA,
    QP_CHECK_EVERY,
    QP_INFEASIBLE_TOL,
    QP_POLISH_DELTA,
    QP_POLISH_REFINE_STEPS,
    QP_PSD_SHIFT,
    QP_RHO,
    QP_RHO_EQ_SCALE,
    QP_SIGMA,
    QPStatus,
)
from .errors import NonConvexError

_LOGGER = logging.getLogger(__name__)

_SYMMETRY_TOL = 1e-12
_RHO_MIN = 1e-6
_RHO_MAX = 1e6
# Refactor only when the adapted rho moves by more than this factor
_RHO_REFACTOR_RATIO = 5.0


def _as_csc(matrix: Any, n_cols: int) -> sp.csc_matrix:
    if matrix is None:
        return sp.csc_matrix((0, n_cols))
    return sp.csc_matrix(matrix, dtype=float)


def _vector(values: ArrayLike | None, size: int, fill: float) -> NDArray[np.float64]:
    if values is None:
        return np.full(size, fill)
    return np.asarray(values, dtype=float).reshape(size)


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """A convex QP with box, equality and inequality constraints."""

    hessian: Any
    linear_term: Any
    lower: Any = None
    upper: Any = None
    a_eq: Any = None
    b_eq: Any = None
    a_in: Any = None
    b_in: Any = None

    def __post_init__(self) -> None:
        """Normalize storage and validate shapes after initialization."""
        f = np.asarray(self.linear_term, dtype=float).ravel()
        n = f.size
        hessian = sp.csc_matrix(self.hessian, dtype=float)
        if hessian.shape != (n, n):
            raise ValueError("hessian must be square and match linear_term")
        asymmetry = abs(hessian - hessian.T)
        if asymmetry.nnz and asymmetry.max() > _SYMMETRY_TOL:
            raise ValueError("hessian must be symmetric")
        lower = _vector(self.lower, n, -np.inf)
        upper = _vector(self.upper, n, np.inf)
        if np.any(lower > upper):
            raise ValueError("box bounds must satisfy lower <= upper")
        a_eq = _as_csc(self.a_eq, n)
        a_in = _as_csc(self.a_in, n)
        b_eq = _vector(self.b_eq, a_eq.shape[0], 0.0)
        b_in = _vector(self.b_in, a_in.shape[0], 0.0)
        if a_eq.shape[1] != n or a_in.shape[1] != n:
            raise ValueError("constraint matrices must have one column per variable")
        for name, value in (
            ("hessian", hessian),
            ("linear_term", f),
            ("lower", lower),
            ("upper", upper),
            ("a_eq", a_eq),
            ("b_eq", b_eq),
            ("a_in", a_in),
            ("b_in", b_in),
        ):
            object.__setattr__(self, name, value)

    @property
    def num_variables(self) -> int:
        """Number of decision variables."""
        return int(self.linear_term.size)

    def objective(self, x: ArrayLike) -> float:
        """Evaluate 0.5 x^T H x + f^T x."""
        x_arr = np.asarray(x, dtype=float)
        return float(0.5 * x_arr @ (self.hessian @ x_arr) + self.linear_term @ x_arr)

    def stacked(self) -> tuple[sp.csc_matrix, NDArray[np.float64], NDArray[np.float64]]:
        """Return (A, l, u) with box rows only for finitely bounded variables."""
        n = self.num_variables
        boxed = np.flatnonzero(np.isfinite(self.lower) | np.isfinite(self.upper))
        box_rows = sp.csc_matrix(
            (np.ones(boxed.size), (np.arange(boxed.size), boxed)), shape=(boxed.size, n)
        )
        a = sp.vstack([self.a_eq, self.a_in, box_rows], format="csc")
        lo = np.concatenate(
            [self.b_eq, np.full(self.b_in.size, -np.inf), self.lower[boxed]]
        )
        hi = np.concatenate([self.b_eq, self.b_in, self.upper[boxed]])
        return a, lo, hi


@dataclass(frozen=True)
class QPSolution:
    """Result of a QP solve with its certification residuals."""

    x: NDArray[np.float64]
    objective: float
    status: QPStatus
    primal_residual: float
    dual_residual: float
    complementarity_residual: float = 0.0
    iterations: int = 0
    polished: bool = False
    multipliers: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    @property
    def is_optimal(self) -> bool:
        """Whether the solve certified an optimum."""
        return self.status is QPStatus.OPTIMAL


@dataclass(frozen=True)
class ConvexityReport:
    """Spectral summary of a QP hessian."""

    min_eigenvalue: float
    bandwidth: int
    convex: bool


def hessian_bandwidth(hessian: Any) -> int:
    """Largest |i - j| over the nonzero entries of a matrix."""
    coo = sp.coo_matrix(hessian)
    mask = coo.data != 0
    if not np.any(mask):
        return 0
    return int(np.max(np.abs(coo.row[mask] - coo.col[mask])))


def validate_convexity(qp: QuadraticProgram) -> ConvexityReport:
    """Report the minimum eigenvalue and bandwidth of the hessian."""
    dense = qp.hessian.toarray()
    if dense.size == 0:
        return ConvexityReport(min_eigenvalue=0.0, bandwidth=0, convex=True)
    eigenvalues = scipy.linalg.eigvalsh(dense)
    min_eig = float(eigenvalues[0])
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))
    return ConvexityReport(
        min_eigenvalue=min_eig,
        bandwidth=hessian_bandwidth(dense),
        convex=min_eig >= -QP_PSD_SHIFT * scale,
    )


def banded_upper(hessian: Any, shift: float = 0.0) -> NDArray[np.float64]:
    """Upper banded storage of a symmetric matrix, as ``cholesky_banded`` reads it.

    Row ``b - k`` holds superdiagonal ``k`` right-aligned, where ``b`` is the
    bandwidth; ``shift`` is added to the main diagonal.
    """
    matrix = sp.csr_matrix(hessian, dtype=float)
    bandwidth = hessian_bandwidth(matrix)
    n = matrix.shape[0]
    banded = np.zeros((bandwidth + 1, n))
    for k in range(bandwidth + 1):
        banded[bandwidth - k, k:] = matrix.diagonal(k)
    banded[bandwidth] += shift
    return banded


def _check_psd(qp: QuadraticProgram) -> None:
    if qp.num_variables == 0:
        return
    try:
        scipy.linalg.cholesky_banded(banded_upper(qp.hessian, QP_PSD_SHIFT))
    except scipy.linalg.LinAlgError as err:
        raise NonConvexError("QP hessian is not positive semidefinite") from err


def _residuals(
    qp: QuadraticProgram,
    a: sp.csc_matrix,
    lo: NDArray[np.float64],
    hi: NDArray[np.float64],
    x: NDArray[np.float64],
    y: NDArray[np.float64],
) -> tuple[float, float, float]:
    """Primal violation, stationarity and complementarity (infinity norms).

    Multiplier convention: y > 0 on upper-active rows, y < 0 on lower-active
    rows. A multiplier on an infinite bound counts fully against
    complementarity.
    """
    ax = a @ x
    violation = np.maximum(lo - ax, 0.0) + np.maximum(ax - hi, 0.0)
    primal = float(np.max(violation)) if violation.size else 0.0
    grad = qp.hessian @ x + qp.linear_term + a.T @ y
    dual = float(np.max(np.abs(grad))) if grad.size else 0.0
    if y.size == 0:
        return primal, dual, 0.0
    with np.errstate(invalid="ignore"):
        upper_gap = np.where(np.isfinite(hi), np.abs(hi - ax), 1.0)
        lower_gap = np.where(np.isfinite(lo), np.abs(ax - lo), 1.0)
    slack = np.where(y > 0, upper_gap, np.where(y < 0, lower_gap, 0.0))
    complementarity = float(np.max(np.abs(y) * slack))
    return primal, dual, complementarity


def _solve_unconstrained(qp: QuadraticProgram, tol: float) -> QPSolution:
    try:
        factor = scipy.linalg.cholesky_banded(banded_upper(qp.hessian))
        x = scipy.linalg.cho_solve_banded((factor, False), -qp.linear_term)
    except (scipy.linalg.LinAlgError, ValueError):
        # Singular hessian: minimum-norm stationary point
        x = lsqr(qp.hessian, -qp.linear_term, atol=1e-14, btol=1e-14)[0]
    empty = sp.csc_matrix((0, qp.num_variables))
    primal, dual, comp = _residuals(qp, empty, np.zeros(0), np.zeros(0), x, np.zeros(0))
    return QPSolution(
        x=x,
        objective=qp.objective(x),
        status=QPStatus.OPTIMAL if dual <= tol else QPStatus.MAX_ITER,
        primal_residual=primal,
        dual_residual=dual,
        complementarity_residual=comp,
    )


def _solve_equality(
    qp: QuadraticProgram, a: sp.csc_matrix, b: NDArray[np.float64], tol: float
) -> QPSolution:
    n = qp.num_variables
    m = a.shape[0]
    kkt = sp.bmat([[qp.hessian, a.T], [a, None]], format="csc")
    rhs = np.concatenate([-qp.linear_term, b])
    try:
        sol = splu(kkt).solve(rhs)
    except RuntimeError:
        sol = lsqr(kkt, rhs, atol=1e-14, btol=1e-14)[0]
    x, y = sol[:n], sol[n : n + m]
    primal, dual, comp = _residuals(qp, a, b, b, x, y)
    status = QPStatus.OPTIMAL
    if primal > tol:
        status = QPStatus.INFEASIBLE
    elif dual > tol:
        status = QPStatus.MAX_ITER
    return QPSolution(
        x=x,
        objective=qp.objective(x),
        status=status,
        primal_residual=primal,
        dual_residual=dual,
        complementarity_residual=comp,
        multipliers=y,
    )


class _AdmmWorkspace:
    """ADMM iterates and the factored KKT system for one solve."""

    def __init__(
        self,
        qp: QuadraticProgram,
        a: sp.csc_matrix,
        lo: NDArray[np.float64],
        hi: NDArray[np.float64],
    ) -> None:
        self.qp = qp
        self.a = a
        self.lo = lo
        self.hi = hi
        self.n = qp.num_variables
        self.m = a.shape[0]
        self.equality = lo == hi
        self.rho_scale = QP_RHO
        self.x = np.zeros(self.n)
        self.z = np.clip(np.zeros(self.m), lo, hi)
        self.y = np.zeros(self.m)
        self.delta_y = np.zeros(self.m)
        self._factor()

    @property
    def rho(self) -> NDArray[np.float64]:
        return np.where(self.equality, QP_RHO_EQ_SCALE, 1.0) * self.rho_scale

    def _factor(self) -> None:
        rho_inv = 1.0 / self.rho
        kkt = sp.bmat(
            [
                [self.qp.hessian + QP_SIGMA * sp.identity(self.n), self.a.T],
                [self.a, -sp.diags(rho_inv)],
            ],
            format="csc",
        )
        self._lu = splu(kkt)

    def step(self) -> None:
        rho = self.rho
        rhs = np.concatenate([QP_SIGMA * self.x - self.qp.linear_term, self.z - self.y / rho])
        sol = self._lu.solve(rhs)
        x_tilde = sol[: self.n]
        z_tilde = self.z + (sol[self.n :] - self.y) / rho
        x_new = QP_ALPHA * x_tilde + (1.0 - QP_ALPHA) * self.x
        z_relaxed = QP_ALPHA * z_tilde + (1.0 - QP_ALPHA) * self.z
        z_new = np.clip(z_relaxed + self.y / rho, self.lo, self.hi)
        y_new = self.y + rho * (z_relaxed - z_new)
        self.delta_y = y_new - self.y
        self.x, self.z, self.y = x_new, z_new, y_new

    def admm_residuals(self) -> tuple[float, float, float, float]:
        """Return (primal, dual, primal scale, dual scale) of the iterate."""
        ax = self.a @ self.x
        px = self.qp.hessian @ self.x
        aty = self.a.T @ self.y
        primal = float(np.max(np.abs(ax - self.z)))
        dual = float(np.max(np.abs(px + self.qp.linear_term + aty)))
        primal_scale = max(float(np.max(np.abs(ax))), float(np.max(np.abs(self.z))))
        dual_scale = max(
            float(np.max(np.abs(px))) if self.n else 0.0,
            float(np.max(np.abs(aty))) if self.n else 0.0,
            float(np.max(np.abs(self.qp.linear_term))) if self.n else 0.0,
        )
        return primal, dual, primal_scale, dual_scale

    def adapt_rho(self, primal: float, dual: float, p_scale: float, d_scale: float) -> None:
        ratio = (primal / max(p_scale, 1e-12)) / max(dual / max(d_scale, 1e-12), 1e-12)
        new_scale = float(np.clip(self.rho_scale * np.sqrt(ratio), _RHO_MIN, _RHO_MAX))
        change = max(new_scale / self.rho_scale, self.rho_scale / new_scale)
        if change > _RHO_REFACTOR_RATIO:
            _LOGGER.debug("Adapting rho %.3e -> %.3e", self.rho_scale, new_scale)
            self.rho_scale = new_scale
            self._factor()

    def primal_infeasible(self) -> bool:
        """Check the delta-y certificate of primal infeasibility."""
        norm = float(np.max(np.abs(self.delta_y))) if self.m else 0.0
        if norm <= QP_INFEASIBLE_TOL:
            return False
        direction = self.delta_y / norm
        positive = direction > QP_INFEASIBLE_TOL
        negative = direction < -QP_INFEASIBLE_TOL
        if np.any(positive & ~np.isfinite(self.hi)) or np.any(negative & ~np.isfinite(self.lo)):
            return False
        support = float(
            self.hi[positive] @ direction[positive] + self.lo[negative] @ direction[negative]
        )
        if support >= -QP_INFEASIBLE_TOL:
            return False
        return float(np.max(np.abs(self.a.T @ direction))) < QP_INFEASIBLE_TOL

    def active_set(self) -> tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.intp]]:
        """Guess equality, lower-active and upper-active rows."""
        free = ~self.equality
        eq_rows = np.flatnonzero(self.equality)
        low_rows = np.flatnonzero(free & (self.z - self.lo < -self.y))
        upp_rows = np.flatnonzero(free & (self.hi - self.z < self.y))
        return eq_rows, low_rows, upp_rows

    def polish(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        """Solve the equality QP on the guessed active set."""
        eq_rows, low_rows, upp_rows = self.active_set()
        rows = np.concatenate([eq_rows, low_rows, upp_rows])
        a_red = self.a[rows]
        k = rows.size
        shifted = self.qp.hessian + QP_POLISH_DELTA * sp.identity(self.n)
        if k == 0:
            regularized = sp.csc_matrix(shifted)
            exact = self.qp.hessian
        else:
            regularized = sp.bmat(
                [[shifted, a_red.T], [a_red, -QP_POLISH_DELTA * sp.identity(k)]],
                format="csc",
            )
            exact = sp.bmat(
                [[self.qp.hessian, a_red.T], [a_red, sp.csc_matrix((k, k))]], format="csc"
            )
        rhs = np.concatenate(
            [-self.qp.linear_term, self.lo[eq_rows], self.lo[low_rows], self.hi[upp_rows]]
        )
        try:
            lu = splu(regularized)
        except RuntimeError:
            return None
        sol = lu.solve(rhs)
        for _ in range(QP_POLISH_REFINE_STEPS):
            sol = sol + lu.solve(rhs - exact @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        x = sol[: self.n]
        y = np.zeros(self.m)
        y[rows] = sol[self.n :]
        # Multiplier signs must match the side of the active bound
        y[low_rows] = np.minimum(y[low_rows], 0.0)
        y[upp_rows] = np.maximum(y[upp_rows], 0.0)
        return x, y


def solve(
    qp: QuadraticProgram,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> QPSolution:
    """Solve a convex QP and certify the result against ``tol``.

    Raises NonConvexError when the hessian is not positive semidefinite.
    Infeasible constraint sets and iteration exhaustion are reported through
    the solution status, never raised.
    """
    _check_psd(qp)
    a, lo, hi = qp.stacked()
    if a.shape[0] == 0:
        return _solve_unconstrained(qp, tol)
    if np.all(lo == hi):
        return _solve_equality(qp, a, lo, tol)

    work = _AdmmWorkspace(qp, a, lo, hi)
    last_polish_guess: tuple[bytes, ...] | None = None

    def try_polish(iteration: int) -> QPSolution | None:
        nonlocal last_polish_guess
        guess = tuple(rows.tobytes() for rows in work.active_set())
        if guess == last_polish_guess:
            return None
        last_polish_guess = guess
        polished = work.polish()
        if polished is None:
            return None
        x, y = polished
        primal, dual, comp = _residuals(qp, a, lo, hi, x, y)
        if max(primal, dual, comp) > tol:
            return None
        return QPSolution(
            x=x,
            objective=qp.objective(x),
            status=QPStatus.OPTIMAL,
            primal_residual=primal,
            dual_residual=dual,
            complementarity_residual=comp,
            iterations=iteration,
            polished=True,
            multipliers=y,
        )

    for iteration in range(1, max_iter + 1):
        work.step()
        if iteration % QP_CHECK_EVERY and iteration != max_iter:
            continue
        primal, dual, p_scale, d_scale = work.admm_residuals()
        result = try_polish(iteration)
        if result is not None:
            return result
        if primal <= tol and dual <= tol:
            primal_v, dual_v, comp = _residuals(qp, a, lo, hi, work.x, work.y)
            if max(primal_v, dual_v, comp) <= tol:
                return QPSolution(
                    x=work.x.copy(),
                    objective=qp.objective(work.x),
                    status=QPStatus.OPTIMAL,
                    primal_residual=primal_v,
                    dual_residual=dual_v,
                    complementarity_residual=comp,
                    iterations=iteration,
                    multipliers=work.y.copy(),
                )
        elif primal > tol and work.primal_infeasible():
            _LOGGER.debug("QP primal infeasible after %d iterations", iteration)
            primal_v, dual_v, comp = _residuals(qp, a, lo, hi, work.x, work.y)
            return QPSolution(
                x=work.x.copy(),
                objective=qp.objective(work.x),
                status=QPStatus.INFEASIBLE,
                primal_residual=primal_v,
                dual_residual=dual_v,
                complementarity_residual=comp,
                iterations=iteration,
                multipliers=work.delta_y.copy(),
            )
        if iteration % QP_ADAPT_EVERY == 0:
            work.adapt_rho(primal, dual, p_scale, d_scale)

    primal_v, dual_v, comp = _residuals(qp, a, lo, hi, work.x, work.y)
    _LOGGER.debug(
        "QP hit max_iter=%d (primal %.2e, dual %.2e)", max_iter, primal_v, dual_v
    )
    return QPSolution(
        x=work.x.copy(),
        objective=qp.objective(work.x),
        status=QPStatus.MAX_ITER,
        primal_residual=primal_v,
        dual_residual=dual_v,
        complementarity_residual=comp,
        iterations=max_iter,
        multipliers=work.y.copy(),
    )


def closest_feasible_point(
    qp: QuadraticProgram,
    target: ArrayLike,
    weight: ArrayLike = 1.0,
    *,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> QPSolution:
    """Weighted least-squares projection of ``target`` onto the constraints of ``qp``.

    The objective of ``qp`` is ignored; weights must be positive.
    """
    n = qp.num_variables
    w = np.broadcast_to(np.asarray(weight, dtype=float), (n,))
    point = np.asarray(target, dtype=float).reshape(n)
    projection = QuadraticProgram(
        hessian=sp.diags(2 * w, format="csc"),
        linear_term=-2 * w * point,
        lower=qp.lower,
        upper=qp.upper,
        a_eq=qp.a_eq,
        b_eq=qp.b_eq,
        a_in=qp.a_in,
        b_in=qp.b_in,
    )
    return solve(projection, tol=tol, max_iter=max_iter)
