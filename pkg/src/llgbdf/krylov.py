"""Matrix-free restarted GMRES(m).

Arnoldi uses modified Gram-Schmidt with a second pass whenever the new
vector keeps more than ``1e-8`` of its norm along the existing basis.
Preconditioning may be applied from the left (the monitored residual is then
``M^-1 (b - A x)``) or from the right (true residual).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

LinearOperator = Callable[[np.ndarray], np.ndarray]

_REORTH_TOL = 1e-8


@dataclass(frozen=True)
class KrylovConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-13
    restart: int = 40
    max_iters: int = 2000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.restart < 2:
            raise ValueError("restart must be at least 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class SolveStats:
    iterations: int = 0
    final_residual: float = 0.0
    converged: bool = False
    wall_time: float = 0.0
    true_residual: float = 0.0
    breakdown: bool = False
    history: list[float] = field(default_factory=list, repr=False)


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _upper_solve(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    if R.size == 0:
        return np.zeros(0)
    if np.all(np.diag(R) != 0.0):
        return solve_triangular(R, g)
    return np.linalg.lstsq(np.triu(R), g, rcond=None)[0]


def gmres(apply: LinearOperator, b: np.ndarray, x0: np.ndarray | None = None,
          cfg: KrylovConfig = KrylovConfig(), precond: LinearOperator | None = None,
          side: str = "left") -> tuple[np.ndarray, SolveStats]:
    """Solve ``A x = b`` with restarted GMRES.

    Converged means the monitored residual is at most
    ``max(rel_tol * |b|, abs_tol)``, where both norms are preconditioned when
    ``side == "left"``.  A non-converged solve returns the best iterate with
    ``converged=False``; it never raises.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    t_start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    stats = SolveStats()
    left = precond is not None and side == "left"
    right = precond is not None and side == "right"

    def monitored(r):
        return precond(r) if left else r

    bnorm = float(np.linalg.norm(monitored(b)))
    if bnorm == 0.0:
        x[:] = 0.0
        stats.converged = True
        stats.wall_time = time.perf_counter() - t_start
        return x, stats
    target = max(cfg.rel_tol * bnorm, cfg.abs_tol)

    n = b.size
    m = cfg.restart
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)

    r = monitored(b - apply(x))
    beta = float(np.linalg.norm(r))
    stats.history.append(beta)
    while beta > target and stats.iterations < cfg.max_iters:
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        H[:] = 0.0
        j_done = 0
        for j in range(m):
            w = apply(precond(V[j])) if right else apply(V[j])
            if left:
                w = precond(w)
            if np.may_share_memory(w, V):
                # operators may hand back their input; orthogonalisation works in place
                w = w.copy()
            wnorm0 = float(np.linalg.norm(w))
            for i in range(j + 1):
                hij = float(V[i] @ w)
                H[i, j] += hij
                w -= hij * V[i]
            wnorm = float(np.linalg.norm(w))
            overlap = V[: j + 1] @ w
            if wnorm > 0 and np.max(np.abs(overlap)) > _REORTH_TOL * wnorm:
                for i in range(j + 1):
                    hij = float(V[i] @ w)
                    H[i, j] += hij
                    w -= hij * V[i]
                wnorm = float(np.linalg.norm(w))
            H[j + 1, j] = wnorm
            stats.iterations += 1
            j_done = j + 1
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            stats.history.append(abs(g[j + 1]))
            if wnorm <= 1e-14 * max(wnorm0, 1e-300):
                stats.breakdown = True
                break
            if abs(g[j + 1]) <= target or stats.iterations >= cfg.max_iters:
                break
            V[j + 1] = w / wnorm
        y = _upper_solve(H[:j_done, :j_done], g[:j_done])
        dx = y @ V[:j_done]
        x += precond(dx) if right else dx
        r = monitored(b - apply(x))
        beta = float(np.linalg.norm(r))
        if stats.breakdown:
            break

    stats.final_residual = beta
    stats.converged = beta <= target
    stats.true_residual = float(np.linalg.norm(b - apply(x))) if precond is not None else beta
    stats.wall_time = time.perf_counter() - t_start
    return x, stats
