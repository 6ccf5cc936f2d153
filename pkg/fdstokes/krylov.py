"""
Preconditioned MINRES, full GMRES and CG.

All solvers start from the zero vector and stop on the true relative
residual ||b - A x|| / ||b||. Non-convergence is reported, not raised.
"""

import logging
import time
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .config import Config
from .errors import NotSPDError, ShapeError
from .models import SolveReport

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


def as_matvec(op) -> Callable[[np.ndarray], np.ndarray]:
    """Matrix-vector product of a matrix, sparse matrix, LinearOperator or callable."""
    if hasattr(op, "matvec"):
        return op.matvec
    if hasattr(op, "dot"):
        return op.dot
    if callable(op):
        return op
    raise ShapeError(f"Cannot use an object of type {type(op).__name__} as an operator")


class _TimedPreconditioner:
    def __init__(self, prec):
        if prec is None:
            self._apply = None
        elif hasattr(prec, "apply"):
            self._apply = prec.apply
        elif hasattr(prec, "matvec"):
            self._apply = prec.matvec
        else:
            self._apply = prec
        self.seconds = 0.0
        self.calls = 0

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self._apply is None:
            return r.copy()
        start = time.perf_counter()
        out = np.asarray(self._apply(r), dtype=float)
        self.seconds += time.perf_counter() - start
        self.calls += 1
        return out


def _prepare(op, rhs, prec, tol, maxit):
    b = np.asarray(rhs, dtype=float).ravel()
    tol = Config.KRYLOV_TOL if tol is None else tol
    maxit = Config.KRYLOV_MAXIT if maxit is None else maxit
    return as_matvec(op), b, _TimedPreconditioner(prec), tol, maxit


def _report(iterations, residuals, converged, start, timed, preconditioned=()):
    return SolveReport(
        iterations=iterations,
        residuals=[float(r) for r in residuals],
        preconditioned_residuals=[float(r) for r in preconditioned],
        converged=converged,
        wall_time=time.perf_counter() - start,
        prec_time=timed.seconds,
        prec_applications=timed.calls,
    )


def minres(op, rhs, prec=None, tol: float | None = None, maxit: int | None = None):
    """
    Preconditioned MINRES for symmetric (possibly singular, consistent) systems.

    The preconditioner must be symmetric positive definite. A x is updated
    alongside x from the Lanczos vectors, so the true residual is tracked
    without extra products; it is recomputed explicitly before declaring
    convergence.

    :return: (x, SolveReport); ``preconditioned_residuals`` holds the
        monotone residual estimate in the preconditioner norm.
    """
    start = time.perf_counter()
    A, b, M, tol, maxit = _prepare(op, rhs, prec, tol, maxit)
    n = b.size
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, _report(0, [0.0], True, start, M, [0.0])

    r1 = b.copy()
    y = M(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise NotSPDError("MINRES preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)

    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    r2 = r1.copy()
    w = np.zeros(n)
    w2 = np.zeros(n)
    Aw = np.zeros(n)
    Aw2 = np.zeros(n)
    Ax = np.zeros(n)

    residuals = [1.0]
    estimates = [1.0]
    converged = False
    itn = 0
    while itn < maxit:
        itn += 1
        v = y / beta
        Av = A(v)
        y = Av.copy()
        if itn >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        y -= (alfa / beta) * r2
        r1, r2 = r2, y
        y = M(r2)
        oldb = beta
        beta = float(r2 @ y)
        if beta < 0:
            raise NotSPDError("MINRES preconditioner is not positive definite")
        beta = np.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), EPS)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        Aw1, Aw2 = Aw2, Aw
        w = (v - oldeps * w1 - delta * w2) / gamma
        Aw = (Av - oldeps * Aw1 - delta * Aw2) / gamma
        x += phi * w
        Ax += phi * Aw

        relres = np.linalg.norm(b - Ax) / bnorm
        residuals.append(relres)
        estimates.append(phibar / beta1)
        logger.debug(f"MINRES it {itn}: rel. residual {relres:.3e}, estimate {phibar / beta1:.3e}")

        breakdown = beta <= EPS * beta1
        if relres <= tol or breakdown:
            Ax = A(x)
            relres = np.linalg.norm(b - Ax) / bnorm
            residuals[-1] = relres
            if relres <= tol:
                converged = True
                break
            if breakdown:
                logger.warning(f"MINRES Lanczos breakdown at iteration {itn}, rel. residual {relres:.3e}")
                break

    report = _report(itn, residuals, converged, start, M, estimates)
    _log_summary("MINRES", report, tol)
    return x, report


def _givens(a: float, b: float) -> tuple[float, float, float]:
    if b == 0.0:
        return 1.0, 0.0, a
    r = np.hypot(a, b)
    return a / r, b / r, r


def gmres(op, rhs, prec=None, tol: float | None = None, maxit: int | None = None):
    """
    Right-preconditioned GMRES without restarts.

    Arnoldi uses modified Gram-Schmidt with a second pass whenever the new
    vector keeps a component above GMRES_REORTH_THRESHOLD along the basis.
    The Arnoldi residual estimate triggers an explicit true-residual check.

    :return: (x, SolveReport); ``residuals`` holds the true relative residuals
        at the start and at every explicit check, ``preconditioned_residuals``
        the Arnoldi estimate of every iteration.
    """
    start = time.perf_counter()
    A, b, M, tol, maxit = _prepare(op, rhs, prec, tol, maxit)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), _report(0, [0.0], True, start, M)

    capacity = min(maxit + 1, 64)
    V = np.zeros((n, capacity))
    V[:, 0] = b / bnorm
    R = np.zeros((capacity, capacity))
    cs, sn = [], []
    g = [bnorm]
    residuals = [1.0]
    estimates = [1.0]
    x = np.zeros(n)
    converged = False
    j = 0
    threshold = Config.GMRES_REORTH_THRESHOLD

    while j < maxit:
        z = M(V[:, j])
        w = A(z)
        h = np.zeros(j + 2)
        for i in range(j + 1):
            h[i] = V[:, i] @ w
            w -= h[i] * V[:, i]
        wnorm = np.linalg.norm(w)
        if wnorm > 0:
            leak = V[:, : j + 1].T @ w
            if np.max(np.abs(leak)) > threshold * wnorm:
                for i in range(j + 1):
                    c = V[:, i] @ w
                    h[i] += c
                    w -= c * V[:, i]
                wnorm = np.linalg.norm(w)
        h[j + 1] = wnorm

        for i in range(j):
            h[i], h[i + 1] = cs[i] * h[i] + sn[i] * h[i + 1], -sn[i] * h[i] + cs[i] * h[i + 1]
        c, s, rho = _givens(h[j], h[j + 1])
        cs.append(c)
        sn.append(s)
        h[j] = rho
        g.append(-s * g[j])
        g[j] = c * g[j]

        if j + 1 >= R.shape[0]:
            grown = min(2 * R.shape[0], maxit + 1)
            R = np.pad(R, ((0, grown - R.shape[0]), (0, grown - R.shape[1])))
            V = np.pad(V, ((0, 0), (0, grown - V.shape[1])))
        R[: j + 1, j] = h[: j + 1]
        j += 1

        estimate = abs(g[j]) / bnorm
        estimates.append(estimate)
        logger.debug(f"GMRES it {j}: residual estimate {estimate:.3e}")

        breakdown = wnorm <= EPS * bnorm
        if estimate <= tol or breakdown or j == maxit:
            y = _back_substitute(R[:j, :j], np.asarray(g[:j]))
            x = M(V[:, :j] @ y)
            true = np.linalg.norm(b - A(x)) / bnorm
            residuals.append(true)
            if true <= tol:
                converged = True
                break
            if breakdown:
                logger.warning(f"GMRES Arnoldi breakdown at iteration {j}, rel. residual {true:.3e}")
                break
        V[:, j] = w / wnorm

    report = _report(j, residuals, converged, start, M, estimates)
    _log_summary("GMRES", report, tol)
    return x, report


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    return solve_triangular(R, g, lower=False)


def cg(op, rhs, prec=None, tol: float | None = None, maxit: int | None = None):
    """Preconditioned conjugate gradients for SPD systems."""
    start = time.perf_counter()
    A, b, M, tol, maxit = _prepare(op, rhs, prec, tol, maxit)
    x = np.zeros(b.size)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, _report(0, [0.0], True, start, M)

    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    residuals = [1.0]
    converged = False
    itn = 0
    while itn < maxit:
        itn += 1
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            logger.warning(f"CG curvature breakdown at iteration {itn} (p^T A p = {pAp:.3e})")
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        relres = np.linalg.norm(r) / bnorm
        residuals.append(relres)
        if relres <= tol:
            converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    report = _report(itn, residuals, converged, start, M)
    logger.debug(
        f"CG finished after {itn} its, rel. residual {residuals[-1]:.3e}, converged={converged}"
    )
    return x, report


def _log_summary(name: str, report: SolveReport, tol: float) -> None:
    if report.converged:
        logger.info(
            f"{name} converged in {report.iterations} iterations "
            f"(rel. residual {report.final_residual:.3e}, {report.wall_time:.2f}s, "
            f"preconditioner {100 * report.prec_share:.1f}%)"
        )
    else:
        logger.warning(
            f"{name} did not reach tol {tol:.1e} in {report.iterations} iterations "
            f"(rel. residual {report.final_residual:.3e})"
        )
