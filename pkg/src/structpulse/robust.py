"""Perturbation ensembles, the sample-average robust objective and
gradient, robust-mode training, and post-training robustness evaluation.

Scenario semantics: detuning scales the drift Hamiltonian by
(1 + detune_frac); an amplitude error evaluates the scaled field
(1 + amp_err) * u (contributing the same factor to the chain rule); a
control-drift scenario evaluates u + drift_strength * u_max * shape for
a seeded, smooth, max-abs-normalized profile.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dynamics import TaskSpec, fidelity_and_gradient, task_fidelity
from .padmm import (Counters, GradientOracle, PadmmConfig, RunRecord,
                    padmm_loop, warm_start, finalize_record, INIT_METHOD_KEY)
from .structure import bandlimit_project
from . import rng

SCENARIO_KINDS = ("nominal", "detuning", "amplitude", "drift")


class RobustError(ValueError):
    """Invalid scenario or ensemble."""


@dataclass(frozen=True)
class PerturbationScenario:
    kind: str
    detune_frac: float = 0.0
    amp_err: float = 0.0
    drift_strength: float = 0.0
    drift_shape: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise RobustError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "nominal" and (self.detune_frac or self.amp_err
                                       or self.drift_strength):
            raise RobustError("nominal scenario must have all perturbations zero")
        if self.kind == "drift":
            if self.drift_shape is None:
                raise RobustError("drift scenario requires a shape profile")
            peak = float(np.abs(self.drift_shape).max())
            if abs(peak - 1.0) > 1e-9:
                raise RobustError(f"drift shape must be max-abs normalized, got {peak}")


@dataclass(frozen=True)
class EnsembleSpec:
    """Fixed scenario set with uniform weights 1 / N_s."""

    scenarios: tuple

    def __post_init__(self):
        if not self.scenarios:
            raise RobustError("ensemble must contain at least one scenario")
        n_nominal = sum(1 for s in self.scenarios if s.kind == "nominal")
        if n_nominal != 1:
            raise RobustError(f"ensemble needs exactly one nominal scenario, got {n_nominal}")

    @property
    def size(self) -> int:
        return len(self.scenarios)

    @property
    def nominal_only(self) -> bool:
        return self.size == 1


def drift_profile(task: TaskSpec, seed: int, index: int) -> np.ndarray:
    """Seeded smooth low-frequency drift profile, max-abs normalized.

    Gaussian noise per channel, band-limited to at most two cycles over
    the horizon.
    """
    gen = rng.keyed_generator(task.name, "drift", seed, index)
    raw = gen.normal(size=task.shape)
    smooth = bandlimit_project(raw, 2.0 / task.horizon, task.dt)
    return smooth / np.abs(smooth).max()


def build_ensemble(task: TaskSpec, detuning_fracs=(), amp_errors=(),
                   drift_strengths=(), seed: int = 0) -> EnsembleSpec:
    """Nominal scenario plus +/- detunings, listed amplitude errors, and
    one seeded drift profile per listed strength.  Empty lists give a
    nominal-only ensemble."""
    scenarios = [PerturbationScenario(kind="nominal")]
    for f in detuning_fracs:
        scenarios.append(PerturbationScenario(kind="detuning", detune_frac=+abs(f)))
        scenarios.append(PerturbationScenario(kind="detuning", detune_frac=-abs(f)))
    for e in amp_errors:
        scenarios.append(PerturbationScenario(kind="amplitude", amp_err=e))
    for i, s in enumerate(drift_strengths):
        scenarios.append(PerturbationScenario(
            kind="drift", drift_strength=s, drift_shape=drift_profile(task, seed, i)))
    return EnsembleSpec(scenarios=tuple(scenarios))


def _scenario_args(task: TaskSpec, u: np.ndarray, s: PerturbationScenario):
    """(field, drift override, gradient chain factor) for one scenario."""
    if s.kind == "nominal":
        return u, None, 1.0
    if s.kind == "detuning":
        return u, (1.0 + s.detune_frac) * task.drift, 1.0
    if s.kind == "amplitude":
        return (1.0 + s.amp_err) * u, None, 1.0 + s.amp_err
    return u + s.drift_strength * task.u_max * s.drift_shape, None, 1.0


def perturbed_propagate(task: TaskSpec, u: np.ndarray,
                        scenario: PerturbationScenario) -> float:
    """Gate fidelity under the scenario-modified dynamics."""
    if scenario.kind == "nominal":
        return task_fidelity(task, u)
    field, drift, _ = _scenario_args(task, u, scenario)
    F, _ = fidelity_and_gradient(task, field, drift=drift)
    return F


def robust_objective_and_gradient(task: TaskSpec, u: np.ndarray,
                                  ensemble: EnsembleSpec, mode: str = "exact"):
    """Uniform sample average of scenario infidelities and its gradient.

    Each scenario contributes one adjoint forward-backward pass; the
    amplitude scenarios carry the (1 + amp_err) chain-rule factor.  The
    reduction runs in fixed scenario order, so results are bit-stable.
    """
    total_f = 0.0
    total_g = np.zeros_like(np.asarray(u, dtype=float))
    for s in ensemble.scenarios:
        field, drift, factor = _scenario_args(task, u, s)
        F, g = fidelity_and_gradient(task, field, mode=mode, drift=drift)
        total_f += 1.0 - F
        total_g += factor * g if factor != 1.0 else g
    n = ensemble.size
    return total_f / n, total_g / n


class RobustOracle(GradientOracle):
    """Smooth-term oracle averaging over a perturbation ensemble; each
    call costs ensemble.size evaluations in the counters."""

    def __init__(self, task: TaskSpec, ensemble: EnsembleSpec, mode: str = "exact"):
        super().__init__(task, mode)
        self.ensemble = ensemble
        self.cost = ensemble.size

    def value_and_grad(self, u):
        J, g = robust_objective_and_gradient(self.task, u, self.ensemble, self.mode)
        return 1.0 - J, g

    def value(self, u):
        total = 0.0
        for s in self.ensemble.scenarios:
            total += perturbed_propagate(self.task, u, s)
        return total / self.ensemble.size


def run_padmm_robust(task: TaskSpec, cfg: PadmmConfig, ensemble: EnsembleSpec,
                     seed: int, method: str = "padmm-warm-robust") -> RunRecord:
    """Warm-started proximal-ADMM with every smooth-term evaluation
    replaced by the ensemble average; proximal machinery untouched.

    A nominal-only ensemble reproduces the non-robust warm run exactly.
    The reported fidelity is the nominal one (for N_s > 1 this adds one
    terminal nominal evaluation to the objective counter).
    """
    started = time.perf_counter()
    counters = Counters()
    oracle = RobustOracle(task, ensemble, cfg.gradient_mode)
    u0 = rng.initial_field(task.name, INIT_METHOD_KEY, seed,
                           task.channels, task.slices, task.init_scale)
    if cfg.warm_start_steps > 0:
        u0 = warm_start(task, cfg, u0, oracle, counters)
    u, trace, trace_fid = padmm_loop(task, cfg, u0, oracle, counters)
    if ensemble.nominal_only:
        fid = trace_fid
    else:
        fid = task_fidelity(task, u)
        counters.add(objective=1)
    return finalize_record(task, cfg, method, seed, u, trace, fid, counters, started)


@dataclass(frozen=True)
class RobustEvalGrid:
    """Post-training robustness evaluation grid (defaults are symmetric
    +/- levels for detuning and amplitude, seeded shapes for drift)."""

    detuning_levels: tuple = (0.02, 0.05)
    amplitude_levels: tuple = (0.02, 0.05)
    drift_strengths: tuple = (0.01, 0.02)
    drift_shapes: int = 3
    seed: int = 0


def robustness_rows(u: np.ndarray, task: TaskSpec,
                    grid: RobustEvalGrid | None = None):
    """Per-level robustness detail: (family, level, mean fidelity) rows.

    Drift rows average over the grid's seeded shapes at each strength;
    detuning and amplitude use signed levels as separate rows.
    """
    grid = grid or RobustEvalGrid()
    rows = [("nominal", 0.0, task_fidelity(task, u))]
    for lv in grid.detuning_levels:
        for sign in (+1.0, -1.0):
            s = PerturbationScenario(kind="detuning", detune_frac=sign * lv)
            rows.append(("detuning", sign * lv, perturbed_propagate(task, u, s)))
    for lv in grid.amplitude_levels:
        for sign in (+1.0, -1.0):
            s = PerturbationScenario(kind="amplitude", amp_err=sign * lv)
            rows.append(("amplitude", sign * lv, perturbed_propagate(task, u, s)))
    for strength in grid.drift_strengths:
        vals = []
        for idx in range(grid.drift_shapes):
            shape = drift_profile(task, grid.seed, idx)
            s = PerturbationScenario(kind="drift", drift_strength=strength,
                                     drift_shape=shape)
            vals.append(perturbed_propagate(task, u, s))
        rows.append(("drift", strength, float(np.mean(vals))))
    return rows


def evaluate_robustness(u: np.ndarray, task: TaskSpec,
                        grid: RobustEvalGrid | None = None) -> dict:
    """Mean perturbed fidelity per family: nominal, detuning, amplitude,
    drift (uniform average over the family's level rows)."""
    rows = robustness_rows(u, task, grid)
    out = {}
    for family in ("nominal", "detuning", "amplitude", "drift"):
        vals = [fid for fam, _, fid in rows if fam == family]
        out[family] = float(np.mean(vals))
    return out
