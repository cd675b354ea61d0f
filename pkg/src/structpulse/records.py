"""Run-level result containers shared by the solvers and the benchmark
harness, plus their JSON (de)serialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .structure import ComplexityMetrics


@dataclass
class Counters:
    """Objective/gradient evaluation bookkeeping for one run."""

    objective_evals: int = 0
    gradient_evals: int = 0

    def add(self, objective: int = 0, gradient: int = 0):
        self.objective_evals += objective
        self.gradient_evals += gradient


@dataclass(frozen=True)
class ResidualTrace:
    """Per-outer-iteration split diagnostics of a proximal-ADMM run.

    primal is the largest Euclidean constraint-gap norm over the three
    blocks, dual the largest rho-scaled z-step norm, violation the
    max-norm constraint gap, fidelity the gate fidelity of the current
    iterate (mean scenario fidelity for robust runs).
    """

    primal: np.ndarray
    dual: np.ndarray
    violation: np.ndarray
    fidelity: np.ndarray

    def __len__(self):
        return len(self.primal)

    def rows(self):
        """Iterate (iteration, primal, dual, violation, fidelity) tuples."""
        for i in range(len(self.primal)):
            yield (i, float(self.primal[i]), float(self.dual[i]),
                   float(self.violation[i]), float(self.fidelity[i]))


@dataclass(frozen=True)
class RunRecord:
    """Outputs of one optimization run on one (task, method, seed) cell."""

    task: str
    method: str
    seed: int
    final_field: np.ndarray
    fidelity: float
    metrics: ComplexityMetrics
    wall_clock_s: float
    objective_evals: int
    gradient_evals: int
    residual_trace: ResidualTrace | None = None
    flags: tuple = ()

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "method": self.method,
            "seed": self.seed,
            "final_field": [[float(x) for x in row] for row in self.final_field],
            "fidelity": float(self.fidelity),
            "metrics": {
                "total_variation": self.metrics.total_variation,
                "bandwidth_excess": self.metrics.bandwidth_excess,
                "l1_norm": self.metrics.l1_norm,
                "max_amp": self.metrics.max_amp,
            },
            "wall_clock_s": float(self.wall_clock_s),
            "objective_evals": int(self.objective_evals),
            "gradient_evals": int(self.gradient_evals),
            "flags": list(self.flags),
        }
        if self.residual_trace is not None:
            out["residual_trace"] = [list(r) for r in self.residual_trace.rows()]
        return out

    @staticmethod
    def from_dict(d: dict) -> "RunRecord":
        trace = None
        if "residual_trace" in d:
            rows = np.asarray(d["residual_trace"], dtype=float)
            if rows.size:
                trace = ResidualTrace(primal=rows[:, 1], dual=rows[:, 2],
                                      violation=rows[:, 3], fidelity=rows[:, 4])
        return RunRecord(
            task=d["task"], method=d["method"], seed=int(d["seed"]),
            final_field=np.asarray(d["final_field"], dtype=float),
            fidelity=float(d["fidelity"]),
            metrics=ComplexityMetrics(**d["metrics"]),
            wall_clock_s=float(d["wall_clock_s"]),
            objective_evals=int(d["objective_evals"]),
            gradient_evals=int(d["gradient_evals"]),
            residual_trace=trace,
            flags=tuple(d.get("flags", ())),
        )
