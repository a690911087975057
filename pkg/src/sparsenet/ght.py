"""Gradient hard thresholding for sparsity-constrained smooth convex problems.

Solves ``min f(x) s.t. ||x||_0 <= k`` by repeating three moves: a gradient
step, keeping the k largest-magnitude coordinates, and minimizing f over the
retained support.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "SmoothObjective",
    "GhtConfig",
    "GhtState",
    "DivergenceError",
    "hard_threshold",
    "top_k_support",
    "support",
    "least_squares",
    "separable_quadratic",
    "estimate_lipschitz",
    "gradient_step",
    "restricted_minimize",
    "ght_solve",
    "read_matrix",
    "write_matrix",
    "write_trace_csv",
]


class DivergenceError(RuntimeError):
    pass


@dataclass
class SmoothObjective:
    """A smooth function on R^d with its gradient.

    ``restricted_solver(F)`` when given returns the exact minimizer supported
    on the index array ``F`` (or None when that subproblem is singular).
    """

    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    restricted_solver: Optional[Callable[[np.ndarray], Optional[np.ndarray]]] = None
    # largest Hessian eigenvalue if known; used for the default step size
    lipschitz: Optional[Callable[[], float]] = None


@dataclass
class GhtConfig:
    k: int
    step_size: Optional[float] = None  # None -> 1/L from the objective
    max_iterations: int = 200
    inner_restricted_steps: int = 50
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.inner_restricted_steps < 1:
            raise ValueError("inner_restricted_steps must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")


@dataclass
class GhtState:
    x: np.ndarray
    support: np.ndarray
    step_size: float
    iteration: int = 0
    objective_value: float = float("nan")
    converged: bool = False
    trace: list = field(default_factory=list)


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(np.ravel(v)))
        raise ValueError(f"{what} has non-finite entries at flat indices {bad[:8].tolist()}")


def top_k_support(v, k):
    """Indices of the k largest |v| entries, ties going to the lower index.

    Returned in ascending index order.
    """
    v = np.asarray(v)
    flat = v.ravel()
    k = int(k)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k >= flat.size:
        return np.arange(flat.size)
    order = np.argsort(-np.abs(flat), kind="stable")
    return np.sort(order[:k])


def hard_threshold(v, k):
    """Keep the k largest-magnitude entries of ``v`` and zero the rest.

    Works on arrays of any shape (ranked over the flattened row-major order).
    Ties at the cutoff keep the lowest flat index.
    """
    v = np.asarray(v, dtype=float)
    _check_finite(v, "hard_threshold input")
    keep = top_k_support(v, k)
    out = np.zeros_like(v)
    out.ravel()[keep] = v.ravel()[keep]
    return out


def support(v):
    return np.flatnonzero(np.asarray(v))


def least_squares(A, b):
    """f(x) = 0.5 * ||Ax - b||^2 with an exact restricted solver."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if A.ndim != 2 or A.shape[0] != b.size:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    _check_finite(A, "A")
    _check_finite(b, "b")
    d = A.shape[1]

    def value(x):
        r = A @ x - b
        return 0.5 * float(r @ r)

    def gradient(x):
        return A.T @ (A @ x - b)

    def restricted(F):
        x = np.zeros(d)
        if len(F) == 0:
            return x
        sub = A[:, F]
        if np.linalg.matrix_rank(sub) < len(F):
            return None
        x[F] = np.linalg.solve(sub.T @ sub, sub.T @ b)
        return x

    return SmoothObjective(d, value, gradient, restricted, lambda: estimate_lipschitz(A))


def separable_quadratic(b):
    """f(x) = 0.5 * ||x - b||^2."""
    b = np.asarray(b, dtype=float).ravel()
    _check_finite(b, "b")

    def restricted(F):
        x = np.zeros_like(b)
        x[F] = b[F]
        return x

    return SmoothObjective(
        b.size,
        lambda x: 0.5 * float((x - b) @ (x - b)),
        lambda x: x - b,
        restricted,
        lambda: 1.0,
    )


def estimate_lipschitz(A, iterations=20, seed=0):
    """Largest eigenvalue of A^T A by power iteration."""
    A = np.asarray(A, dtype=float)
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = A.T @ (A @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def gradient_step(state, obj):
    """x - eta * grad f(x), not thresholded."""
    if state.step_size < 0:
        raise ValueError("step size must be non-negative")
    g = obj.gradient(state.x)
    _check_finite(g, "gradient")
    return state.x - state.step_size * g


def restricted_minimize(obj, F, x_init, steps=50, step_size=None):
    """Minimize ``obj`` over vectors supported on ``F``, starting at ``x_init``.

    Uses ``obj.restricted_solver`` when present. Otherwise, or when the exact
    system is singular, runs ``steps`` projected gradient steps with
    backtracking so the objective never goes up.
    """
    F = np.asarray(F, dtype=int)
    x_init = np.asarray(x_init, dtype=float)
    mask = np.zeros(obj.dim, dtype=bool)
    mask[F] = True
    if np.any(x_init[~mask] != 0):
        raise ValueError("x_init has nonzeros outside F")
    if F.size == 0:
        return np.zeros(obj.dim)

    if obj.restricted_solver is not None:
        x = obj.restricted_solver(F)
        if x is not None:
            _check_finite(x, "restricted solution")
            # the exact solve can only lose to x_init through round-off
            if obj.value(x) <= obj.value(x_init):
                return x
            return x_init.copy()
        warnings.warn(
            "restricted system is singular; falling back to projected descent",
            RuntimeWarning,
            stacklevel=2,
        )

    eta = step_size
    if eta is None:
        L = obj.lipschitz() if obj.lipschitz is not None else 1.0
        eta = 1.0 / L if L > 0 else 1.0
    x = x_init.copy()
    fx = obj.value(x)
    for _ in range(steps):
        g = obj.gradient(x)
        _check_finite(g, "gradient")
        g[~mask] = 0.0
        if not np.any(g):
            break
        t = eta
        for _ in range(60):
            trial = x - t * g
            ft = obj.value(trial)
            if ft <= fx - 0.5 * t * float(g @ g):
                break
            t *= 0.5
        else:
            break
        x, fx = trial, ft
    return x


def ght_solve(obj, cfg, x0=None):
    """Run gradient hard thresholding until the iterate stops moving.

    Returns the final ``GhtState``; ``state.trace`` holds one dict per
    iteration with keys iteration, objective, support_size, support_change.
    """
    if cfg.k > obj.dim:
        raise ValueError(f"k={cfg.k} exceeds dimension {obj.dim}")
    eta = cfg.step_size
    if eta is None:
        if obj.lipschitz is None:
            raise ValueError("objective has no Lipschitz estimate; pass step_size")
        L = obj.lipschitz()
        eta = 1.0 / L if L > 0 else 1.0

    x = np.zeros(obj.dim) if x0 is None else hard_threshold(x0, cfg.k)
    f0 = obj.value(x)
    limit = 1e12 * max(abs(f0), 1e-300)
    state = GhtState(x=x, support=support(x), step_size=eta, objective_value=f0)
    prev_support = state.support

    for t in range(1, cfg.max_iterations + 1):
        x_prev = state.x
        x_tilde = gradient_step(state, obj)                      # S1
        F = top_k_support(x_tilde, cfg.k)                        # S2
        x_tilde = np.where(np.isin(np.arange(obj.dim), F), x_tilde, 0.0)
        x_new = restricted_minimize(                             # S3
            obj, F, x_tilde, steps=cfg.inner_restricted_steps, step_size=eta
        )
        fx = obj.value(x_new)
        if not np.isfinite(fx) or fx > limit:
            raise DivergenceError(
                f"objective reached {fx:.3g} at iteration {t} "
                f"(initial {f0:.3g}); step size too large"
            )
        new_support = support(x_new)
        change = len(np.setdiff1d(new_support, prev_support))
        state.trace.append(
            {
                "iteration": t,
                "objective": fx,
                "support_size": int(new_support.size),
                "support_change": int(change),
            }
        )
        state.x, state.support = x_new, F
        state.iteration, state.objective_value = t, fx
        prev_support = new_support
        if np.max(np.abs(x_new - x_prev)) < cfg.tolerance:
            state.converged = True
            break

    log.debug("ght finished after %d iterations, f=%g", state.iteration, state.objective_value)
    return state


def read_matrix(path):
    """Plain-text matrix: first line 'rows cols', then row-major values."""
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: missing 'rows cols' header")
    rows, cols = int(tokens[0]), int(tokens[1])
    values = tokens[2:]
    if len(values) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} entries, found {len(values)}")
    M = np.array([float(v) for v in values]).reshape(rows, cols)
    _check_finite(M, path)
    return M


def write_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w") as f:
        f.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_trace_csv(path, trace):
    cols = ["iteration", "objective", "support_size", "support_change"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        w.writerows(trace)
