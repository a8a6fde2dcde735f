"""Generic numerical solvers used by the reconstruction loop.

Conjugate gradients for the regularized normal equations, a projected
limited-memory quasi-Newton method for the bounded non-linear parameter fit,
and the proximal scalar operator used by the sparsity baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class SolverError(RuntimeError):
    """Raised when a solver encounters non-finite values."""


@dataclass(frozen=True)
class BoxBounds:
    """Per-parameter box constraints, in physical units.

    Defaults keep the maps in generous physiological ranges for brain tissue.
    """

    r1: tuple[float, float] = (0.0, 20.0)
    m0: tuple[float, float] = (0.0, 10.0)
    flip: tuple[float, float] = (0.1, 89.0)

    def __post_init__(self):
        for lo, hi in (self.r1, self.m0, self.flip):
            if not lo < hi:
                raise ValueError("lower bound must be < upper bound")

    def stacked(self, n_pixels: int, scales=(1.0, 1.0, 1.0)):
        """(lower, upper) flat arrays for the stacked (r1, m0, flip) vector.

        `scales` divides the physical bounds, matching solver variables that
        are normalized per parameter.
        """
        lower = np.concatenate(
            [np.full(n_pixels, b[0] / s) for b, s in zip((self.r1, self.m0, self.flip), scales)]
        )
        upper = np.concatenate(
            [np.full(n_pixels, b[1] / s) for b, s in zip((self.r1, self.m0, self.flip), scales)]
        )
        return lower, upper


def cg_solve(
    apply_h: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    iters: int = 5,
    tol: float = 1e-10,
) -> tuple[np.ndarray, list[float]]:
    """Conjugate gradients for H x = b with symmetric PSD H, from x0 = 0.

    Returns the iterate after `iters` steps (earlier if the residual norm
    drops below `tol`) together with the residual-norm history, starting at
    ||b||.
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.vdot(r, r).real
    history = [float(np.sqrt(rs))]
    if history[0] < tol:
        return x, history
    for _ in range(iters):
        hp = apply_h(p)
        denom = np.vdot(p, hp).real
        if not np.isfinite(denom):
            raise SolverError("non-finite values in CG operator application")
        if denom <= 0:
            break  # numerically singular direction; current iterate is best
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * hp
        rs_new = np.vdot(r, r).real
        history.append(float(np.sqrt(rs_new)))
        if not np.isfinite(rs_new):
            raise SolverError("non-finite residual in CG")
        if history[-1] < tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, history


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    n_iters: int
    warning: str | None = None


def _project(x, lower, upper):
    return np.minimum(np.maximum(x, lower), upper)


def lbfgs_bounded(
    f_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_iter: int = 100,
    memory: int = 10,
    pg_tol: float = 1e-8,
    f_tol: float = 1e-12,
) -> LbfgsResult:
    """Projected limited-memory quasi-Newton minimization over a box.

    Two-loop L-BFGS directions with projection onto the bounds at every
    trial point and an Armijo backtracking line search (c = 1e-4). Curvature
    pairs are skipped when the active set changes or curvature is lost, which
    keeps the inverse-Hessian model consistent near the bounds. The returned
    point is always feasible and f never increases.
    """
    c_armijo = 1e-4
    x = _project(np.asarray(x0, dtype=float).copy(), lower, upper)
    f, g = f_and_grad(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise SolverError("non-finite objective or gradient at the initial point")

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    warning = None

    def active_set(xv, gv):
        return ((xv <= lower) & (gv > 0)) | ((xv >= upper) & (gv < 0))

    def proj_grad_norm(xv, gv):
        return float(np.max(np.abs(xv - _project(xv - gv, lower, upper))))

    n_done = 0
    for it in range(max_iter):
        if proj_grad_norm(x, g) <= pg_tol:
            break

        # two-loop recursion on the free gradient
        active = active_set(x, g)
        q = np.where(active, 0.0, g)
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q = q - a * y
        if y_list:
            gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
            q = gamma * q
        for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
            q = q + (rho * np.dot(y, q) - a) * s
        d = -q

        if np.dot(d, g) >= 0:
            # model direction lost descent; fall back to steepest descent
            s_list.clear(), y_list.clear(), rho_list.clear()
            d = -np.where(active, 0.0, g)

        # unit-length first step makes the path invariant to uniform
        # rescaling of the objective
        step = 1.0 if y_list else 1.0 / max(np.max(np.abs(d)), 1e-30)
        f_new = f
        x_new = x
        ok = False
        for _ in range(30):
            x_trial = _project(x + step * d, lower, upper)
            delta = x_trial - x
            if np.max(np.abs(delta)) == 0.0:
                break
            f_trial, g_trial = f_and_grad(x_trial)
            if np.isfinite(f_trial) and f_trial <= f + c_armijo * np.dot(g, delta):
                x_new, f_new, g_new = x_trial, f_trial, g_trial
                ok = True
                break
            step *= 0.5
        if not ok:
            warning = "line search failed; returning current iterate"
            break

        s = x_new - x
        y = g_new - g
        same_active = np.array_equal(active_set(x, g), active_set(x_new, g_new))
        sy = np.dot(s, y)
        if same_active and sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0), y_list.pop(0), rho_list.pop(0)

        f_prev = f
        x, f, g = x_new, f_new, g_new
        n_done = it + 1
        if abs(f_prev - f) <= f_tol * max(1.0, abs(f_prev)):
            break

    return LbfgsResult(x=x, fun=f, n_iters=n_done, warning=warning)


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    """Elementwise sign(v) * max(|v| - lam, 0)."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
