"""Baseline optimizers: GRAPE-style fixed-step gradient descent with an
amplitude penalty, a native box-constrained limited-memory quasi-Newton
method (gradient projection + backtracking line search), and the
band-limit/box/smoothing post-processing filter used for the fairness
baselines."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .dynamics import TaskSpec, fidelity_and_gradient, task_fidelity
from .records import Counters, RunRecord
from .structure import bandlimit_project, box_project, complexity_metrics
from . import rng


class BaselineError(ValueError):
    """Invalid baseline configuration."""


class DivergenceError(RuntimeError):
    """Non-finite iterate in a baseline run."""


@dataclass(frozen=True)
class GrapeConfig:
    """Fixed-budget gradient descent on 1 - F + lambda_a * mean(u^2)."""

    iterations: int
    lambda_a: float = 0.0
    step: float = 0.25

    def __post_init__(self):
        if self.iterations < 1:
            raise BaselineError("iterations must be >= 1")
        if self.lambda_a < 0:
            raise BaselineError("lambda_a must be >= 0")
        if self.step <= 0:
            raise BaselineError("step must be > 0")


@dataclass(frozen=True)
class QuasiNewtonConfig:
    """Limited-memory quasi-Newton with box projection."""

    max_iters: int
    memory: int = 10
    grad_tol: float = 1e-9
    f_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise BaselineError("max_iters must be >= 1")
        if self.memory < 1:
            raise BaselineError("memory must be >= 1")
        if self.grad_tol <= 0 or self.f_tol <= 0:
            raise BaselineError("tolerances must be > 0")


def default_grape_step(task: TaskSpec) -> float:
    """0.5 divided by the largest control-operator spectral norm."""
    norms = [float(np.linalg.norm(np.linalg.eigvalsh(H), ord=np.inf))
             for H in task.controls]
    return 0.5 / max(norms)


def run_grape(task: TaskSpec, cfg: GrapeConfig, seed: int,
              method: str = "grape") -> RunRecord:
    """Plain projected gradient descent for exactly cfg.iterations steps.

    Objective: 1 - F(u) + lambda_a * mean(u^2).  Accounting: one
    gradient and two objective evaluations per iteration plus one final
    objective evaluation.
    """
    started = time.perf_counter()
    counters = Counters()
    M, N = task.shape
    reg = cfg.lambda_a * 2.0 / (M * N)
    u = rng.initial_field(task.name, method, seed, M, N, task.init_scale)

    def objective(v):
        counters.add(objective=1)
        return 1.0 - task_fidelity(task, v) + cfg.lambda_a * float(np.mean(v**2))

    for it in range(cfg.iterations):
        F, g = fidelity_and_gradient(task, u)
        counters.add(objective=1, gradient=1)
        if reg:
            g = g + reg * u
        u = box_project(u - cfg.step * g, task.u_max)
        val = objective(u)
        if not (np.isfinite(val) and np.all(np.isfinite(u))):
            raise DivergenceError(f"non-finite iterate at iteration {it}")

    counters.add(objective=1)
    fid = task_fidelity(task, u)
    return RunRecord(
        task=task.name, method=method, seed=seed, final_field=u,
        fidelity=fid, metrics=complexity_metrics(u, task.cutoff, task.dt),
        wall_clock_s=time.perf_counter() - started,
        objective_evals=counters.objective_evals,
        gradient_evals=counters.gradient_evals,
    )


@dataclass
class BoxMinimizeResult:
    x: np.ndarray
    f: float
    iterations: int
    objective_evals: int
    gradient_evals: int
    converged: bool
    line_search_failed: bool


def projected_gradient_norm(x, g, lower, upper) -> float:
    """Sup-norm of the natural residual x - P_box(x - g)."""
    return float(np.abs(x - np.clip(x - g, lower, upper)).max())


def _two_loop(g, pairs):
    """Standard L-BFGS two-loop recursion; returns the descent direction."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    gamma = np.dot(s, y) / np.dot(y, y)
    q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def minimize_lbfgs_box(fun, fun_and_grad, x0, lower, upper,
                       cfg: QuasiNewtonConfig) -> BoxMinimizeResult:
    """Limited-memory quasi-Newton minimization subject to box bounds.

    Directions come from the two-loop recursion on raw gradients; every
    trial point is projected onto the box and accepted under an Armijo
    condition on the realized (projected) step, so accepted objective
    values are non-increasing.  Stops on projected-gradient sup-norm
    <= grad_tol, relative objective decrease <= f_tol, or max_iters;
    line-search failure terminates gracefully at the best iterate.

    `fun` evaluates the objective alone (used by line-search trials),
    `fun_and_grad` returns (objective, gradient).
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    n_obj = n_grad = 0

    def eval_fg(v):
        nonlocal n_obj, n_grad
        f, g = fun_and_grad(v)
        n_obj += 1
        n_grad += 1
        return f, np.asarray(g, dtype=float)

    def eval_f(v):
        nonlocal n_obj
        n_obj += 1
        return fun(v)

    f, g = eval_fg(x)
    best_x, best_f = x.copy(), f
    pairs = deque(maxlen=cfg.memory)
    converged = False
    ls_failed = False
    c1 = 1e-4
    it = 0

    def line_search(d, alpha0):
        # backtracking Armijo on the realized (projected) step; returns
        # (accepted point, its objective) or None
        alpha = alpha0
        while alpha >= 1e-14 * alpha0:
            trial = np.clip(x + alpha * d, lower, upper)
            s = trial - x
            if not np.any(s):
                return None
            decrease = np.dot(g, s)
            if decrease < 0:
                f_trial = eval_f(trial)
                if np.isfinite(f_trial) and f_trial <= f + c1 * decrease:
                    return trial, f_trial
            alpha *= 0.5
        return None

    small_drops = 0
    for it in range(1, cfg.max_iters + 1):
        if projected_gradient_norm(x, g, lower, upper) <= cfg.grad_tol:
            converged = True
            break
        # components pressed against their bound by the gradient are
        # frozen when building the quasi-Newton direction
        active = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        gm = np.where(active, 0.0, g)
        gmax = float(np.abs(gm).max())
        steepest_alpha0 = min(1e6, 1.0 / max(gmax, 1e-16))
        step = None
        if pairs:
            d = _two_loop(gm, pairs)
            d[active] = 0.0
            if np.dot(d, g) < 0:
                step = line_search(d, 1.0)
        # the projected quasi-Newton step may lose descent at the box
        # boundary; the projected steepest step never does
        if step is None:
            step = line_search(-g, steepest_alpha0)
        if step is None:
            ls_failed = True
            break
        x_new, f_new = step

        _, g_new = eval_fg(x_new)
        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        rel_drop = (f - f_new) / max(1.0, abs(f), abs(f_new))
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_x, best_f = x.copy(), f
        # a single truncated boundary step can show a tiny decrease while
        # far from stationarity; require two consecutive small drops
        small_drops = small_drops + 1 if rel_drop <= cfg.f_tol else 0
        if small_drops >= 2:
            converged = True
            break

    return BoxMinimizeResult(x=best_x, f=best_f, iterations=it,
                             objective_evals=n_obj, gradient_evals=n_grad,
                             converged=converged, line_search_failed=ls_failed)


def run_quasi_newton(task: TaskSpec, cfg: QuasiNewtonConfig, seed: int,
                     method: str = "quasi-newton") -> RunRecord:
    """Box-constrained quasi-Newton minimization of the gate infidelity."""
    started = time.perf_counter()
    M, N = task.shape
    u0 = rng.initial_field(task.name, method, seed, M, N, task.init_scale)

    def fun(x):
        return 1.0 - task_fidelity(task, x.reshape(M, N))

    def fun_and_grad(x):
        F, g = fidelity_and_gradient(task, x.reshape(M, N))
        return 1.0 - F, g.ravel()

    res = minimize_lbfgs_box(fun, fun_and_grad, u0.ravel(), -task.u_max, task.u_max, cfg)
    u = res.x.reshape(M, N)
    flags = ("line-search-failure",) if res.line_search_failed else ()
    return RunRecord(
        task=task.name, method=method, seed=seed, final_field=u,
        fidelity=1.0 - res.f, metrics=complexity_metrics(u, task.cutoff, task.dt),
        wall_clock_s=time.perf_counter() - started,
        objective_evals=res.objective_evals, gradient_evals=res.gradient_evals,
        flags=flags,
    )


@dataclass(frozen=True)
class FilterStages:
    """Intermediate fields of the fairness filter, in application order."""

    banded: np.ndarray
    boxed: np.ndarray
    smoothed: np.ndarray


def smooth3(u: np.ndarray) -> np.ndarray:
    """One pass of a centered 3-point moving average, reflecting ends."""
    padded = np.pad(np.atleast_2d(u), ((0, 0), (1, 1)), mode="reflect")
    return (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0


def filter_stages(u: np.ndarray, task: TaskSpec,
                  cutoff: float | None = None) -> FilterStages:
    """Band-limit projection, box projection, then mild smoothing."""
    cutoff = task.cutoff if cutoff is None else cutoff
    banded = bandlimit_project(u, cutoff, task.dt)
    boxed = box_project(banded, task.u_max)
    return FilterStages(banded=banded, boxed=boxed, smoothed=smooth3(boxed))


def filter_baseline(u: np.ndarray, task: TaskSpec,
                    cutoff: float | None = None) -> np.ndarray:
    """Post-process an unconstrained baseline field for the fairness check."""
    return filter_stages(u, task, cutoff).smoothed
