"""Experiment configuration: built-in task presets, JSON config parsing
with strict unknown-key rejection, and round-trippable serialization.

Config files are JSON.  Matrices are stored row-major as (re, im)
pairs, i.e. a d x d x 2 nested list.  A minimal file selects a preset:

    {"preset": "qutrit-x"}

Task blocks may start from a preset and override any field, including
nested method-parameter blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import GrapeConfig, QuasiNewtonConfig
from .dynamics import TaskSpec
from .padmm import PadmmConfig
from .robust import RobustEvalGrid

PRESET_NAMES = ("1q-x", "qutrit-x", "2q-ent")
METHODS = ("grape", "quasi-newton", "padmm", "padmm-warm", "padmm-warm-robust")
DEFAULT_SEEDS = (3, 7, 11, 19, 23, 29, 31, 37, 41, 43)


class ConfigError(ValueError):
    """Config file problem; message carries the offending path."""


@dataclass(frozen=True)
class EnsembleLists:
    """Robust-training ensemble construction lists."""

    detuning_fracs: tuple = (0.05,)
    amp_errors: tuple = (-0.05, 0.05)
    drift_strengths: tuple = (0.02,)
    seed: int = 0


@dataclass(frozen=True)
class ParetoGrid:
    """Multiplicative factor grids applied to the preset PADMM values."""

    lambda1_factors: tuple = (0.2, 1.0, 5.0)
    lambda_tv_factors: tuple = (0.2, 1.0, 5.0)
    cutoff_factors: tuple = (0.6, 1.0)
    eta_factors: tuple = (1.0,)


@dataclass(frozen=True)
class SensitivityAxes:
    """One-at-a-time sensitivity perturbations."""

    rho_scales: tuple = (0.5, 1.0, 2.0)
    eta_factors: tuple = (0.75, 1.0, 1.25)
    inner_deltas: tuple = (-2, 0, 2)


@dataclass(frozen=True)
class TaskBundle:
    """One task with its per-method solver settings."""

    task: TaskSpec
    grape: GrapeConfig
    quasi_newton: QuasiNewtonConfig
    padmm: PadmmConfig
    ensemble: EnsembleLists = EnsembleLists()
    robust_eval: RobustEvalGrid = RobustEvalGrid()


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment plan."""

    bundles: tuple
    methods: tuple = METHODS
    seeds: tuple = DEFAULT_SEEDS
    output_dir: str = "results"
    workers: int = 1
    scan_seed: int = 3
    pareto: ParetoGrid = ParetoGrid()
    sensitivity: SensitivityAxes = SensitivityAxes()

    def bundle(self, task_name: str) -> TaskBundle:
        for b in self.bundles:
            if b.task.name == task_name:
                return b
        raise ConfigError(f"no task named {task_name!r} in this config")


# ---------------------------------------------------------------------------
# Built-in presets (task models and solver settings)

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_I2 = np.eye(2, dtype=complex)


def _preset_1q() -> TaskBundle:
    task = TaskSpec(
        name="1q-x", dim=2, drift=0.1 * _SZ, controls=(_SX, _SY), target=_SX,
        horizon=4.80, slices=40, u_max=4.00, init_scale=0.020, cutoff=1.8)
    return TaskBundle(
        task=task,
        grape=GrapeConfig(iterations=120, lambda_a=0.25, step=0.5),
        quasi_newton=QuasiNewtonConfig(max_iters=80),
        padmm=PadmmConfig(lambda1=0.0005, lambda_tv=0.0008, rho1=1.0, rho_tv=1.0,
                          rho_bw=1.0, eta=0.04, inner_steps=6, outer_steps=120,
                          cutoff=1.8, warm_start_steps=25, warm_step=0.5),
    )


def _preset_qutrit() -> TaskBundle:
    omega01, anharm = 1.0, -0.22
    lower = np.zeros((3, 3), dtype=complex)
    lower[0, 1] = 1.0
    lower[1, 2] = math.sqrt(2.0)
    x_quad = lower + lower.conj().T
    y_quad = 1j * (lower.conj().T - lower)
    drift = np.diag([0.0, omega01, 2 * omega01 + anharm]).astype(complex)
    target = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex)
    step = 0.5 / math.sqrt(3.0)  # largest quadrature spectral norm is sqrt(3)
    task = TaskSpec(
        name="qutrit-x", dim=3, drift=drift, controls=(x_quad, y_quad),
        target=target, horizon=4.80, slices=60, u_max=2.80, init_scale=0.015,
        cutoff=2.5)
    return TaskBundle(
        task=task,
        grape=GrapeConfig(iterations=180, lambda_a=12.0, step=step),
        quasi_newton=QuasiNewtonConfig(max_iters=120),
        padmm=PadmmConfig(lambda1=0.0001, lambda_tv=0.0001, rho1=1.0, rho_tv=1.0,
                          rho_bw=1.0, eta=0.05, inner_steps=8, outer_steps=220,
                          cutoff=2.5, warm_start_steps=40, warm_step=step),
    )


def _preset_2q() -> TaskBundle:
    omega1, omega2, coupling = 0.3, 0.36, 0.15
    drift = (omega1 / 2) * np.kron(_SZ, _I2) + (omega2 / 2) * np.kron(_I2, _SZ) \
        + coupling * np.kron(_SX, _SX)
    controls = (np.kron(_SX, _I2), np.kron(_I2, _SX),
                np.kron(_SY, _I2) + np.kron(_I2, _SY))
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
                    dtype=complex)
    task = TaskSpec(
        name="2q-ent", dim=4, drift=drift, controls=controls, target=cnot,
        horizon=3.20, slices=40, u_max=3.20, init_scale=0.010, cutoff=1.0)
    return TaskBundle(
        task=task,
        grape=GrapeConfig(iterations=80, lambda_a=10.0, step=0.25),
        quasi_newton=QuasiNewtonConfig(max_iters=60),
        padmm=PadmmConfig(lambda1=0.001, lambda_tv=0.0012, rho1=1.0, rho_tv=1.0,
                          rho_bw=1.0, eta=0.03, inner_steps=4, outer_steps=80,
                          cutoff=1.0, warm_start_steps=25, warm_step=0.25),
    )


_PRESET_BUILDERS = {"1q-x": _preset_1q, "qutrit-x": _preset_qutrit, "2q-ent": _preset_2q}


def preset_bundle(name: str) -> TaskBundle:
    """Built-in TaskBundle for one of the preset names."""
    if name not in _PRESET_BUILDERS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return _PRESET_BUILDERS[name]()


def default_config() -> ExperimentConfig:
    """All three presets, all methods, the default ten seeds."""
    return ExperimentConfig(bundles=tuple(preset_bundle(n) for n in PRESET_NAMES))


# ---------------------------------------------------------------------------
# Serialization

def matrix_to_pairs(M: np.ndarray):
    # + 0.0 canonicalizes negative zeros so serialization round-trips
    return [[[float(z.real) + 0.0, float(z.imag) + 0.0] for z in row]
            for row in np.asarray(M)]


def pairs_to_matrix(obj, path: str) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != 2:
        raise ConfigError(f"{path}: expected a d x d x 2 (re, im) matrix, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def task_to_dict(task: TaskSpec) -> dict:
    return {
        "name": task.name, "dim": task.dim,
        "drift": matrix_to_pairs(task.drift),
        "controls": [matrix_to_pairs(H) for H in task.controls],
        "target": matrix_to_pairs(task.target),
        "horizon": task.horizon, "slices": task.slices, "u_max": task.u_max,
        "init_scale": task.init_scale, "cutoff": task.cutoff,
    }


def bundle_to_dict(b: TaskBundle) -> dict:
    g, q, p = b.grape, b.quasi_newton, b.padmm
    return {
        **task_to_dict(b.task),
        "grape": {"iterations": g.iterations, "lambda_a": g.lambda_a, "step": g.step},
        "quasi_newton": {"max_iters": q.max_iters, "memory": q.memory,
                         "grad_tol": q.grad_tol, "f_tol": q.f_tol},
        "padmm": {"lambda1": p.lambda1, "lambda_tv": p.lambda_tv, "rho1": p.rho1,
                  "rho_tv": p.rho_tv, "rho_bw": p.rho_bw, "eta": p.eta,
                  "inner_steps": p.inner_steps, "outer_steps": p.outer_steps,
                  "cutoff": p.cutoff, "warm_start_steps": p.warm_start_steps,
                  "gradient_mode": p.gradient_mode, "warm_step": p.warm_step,
                  "warm_lambda_a": p.warm_lambda_a},
        "ensemble": {"detuning_fracs": list(b.ensemble.detuning_fracs),
                     "amp_errors": list(b.ensemble.amp_errors),
                     "drift_strengths": list(b.ensemble.drift_strengths),
                     "seed": b.ensemble.seed},
        "robust_eval": {"detuning_levels": list(b.robust_eval.detuning_levels),
                        "amplitude_levels": list(b.robust_eval.amplitude_levels),
                        "drift_strengths": list(b.robust_eval.drift_strengths),
                        "drift_shapes": b.robust_eval.drift_shapes,
                        "seed": b.robust_eval.seed},
    }


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "tasks": [bundle_to_dict(b) for b in cfg.bundles],
        "methods": list(cfg.methods),
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
        "workers": cfg.workers,
        "scan_seed": cfg.scan_seed,
        "pareto": {"lambda1_factors": list(cfg.pareto.lambda1_factors),
                   "lambda_tv_factors": list(cfg.pareto.lambda_tv_factors),
                   "cutoff_factors": list(cfg.pareto.cutoff_factors),
                   "eta_factors": list(cfg.pareto.eta_factors)},
        "sensitivity": {"rho_scales": list(cfg.sensitivity.rho_scales),
                        "eta_factors": list(cfg.sensitivity.eta_factors),
                        "inner_deltas": list(cfg.sensitivity.inner_deltas)},
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Parsing with strict key checking

_TASK_KEYS = {"preset", "name", "dim", "drift", "controls", "target", "horizon",
              "slices", "u_max", "init_scale", "cutoff", "grape", "quasi_newton",
              "padmm", "ensemble", "robust_eval"}
_TOP_KEYS = {"preset", "tasks", "methods", "seeds", "output_dir", "workers",
             "grad_mode", "scan_seed", "pareto", "sensitivity"}
_GRAPE_KEYS = {"iterations", "lambda_a", "step"}
_QN_KEYS = {"max_iters", "memory", "grad_tol", "f_tol"}
_PADMM_KEYS = {"lambda1", "lambda_tv", "rho1", "rho_tv", "rho_bw", "eta",
               "inner_steps", "outer_steps", "cutoff", "warm_start_steps",
               "gradient_mode", "warm_step", "warm_lambda_a"}
_ENSEMBLE_KEYS = {"detuning_fracs", "amp_errors", "drift_strengths", "seed"}
_ROBUST_EVAL_KEYS = {"detuning_levels", "amplitude_levels", "drift_strengths",
                     "drift_shapes", "seed"}
_PARETO_KEYS = {"lambda1_factors", "lambda_tv_factors", "cutoff_factors", "eta_factors"}
_SENS_KEYS = {"rho_scales", "eta_factors", "inner_deltas"}


def _check_keys(d: dict, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}: unknown key {k!r}")


def _merged(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merged(out[k], v)
        else:
            out[k] = v
    return out


def _parse_bundle(block: dict, path: str, grad_mode: str | None) -> TaskBundle:
    _check_keys(block, _TASK_KEYS, path)
    block = dict(block)
    explicit_grad_mode = "gradient_mode" in (block.get("padmm") or {})
    preset = block.pop("preset", None)
    if preset is not None:
        base = bundle_to_dict(preset_bundle(preset))
        block = _merged(base, block)
    for key, allowed in (("grape", _GRAPE_KEYS), ("quasi_newton", _QN_KEYS),
                         ("padmm", _PADMM_KEYS), ("ensemble", _ENSEMBLE_KEYS),
                         ("robust_eval", _ROBUST_EVAL_KEYS)):
        if key in block:
            _check_keys(block[key], allowed, f"{path}.{key}")
    missing = {"name", "dim", "drift", "controls", "target", "horizon", "slices",
               "u_max", "init_scale", "cutoff", "grape", "quasi_newton",
               "padmm"} - set(block)
    if missing:
        raise ConfigError(f"{path}: missing required keys {sorted(missing)} "
                          f"(use a preset or give a full task block)")
    try:
        task = TaskSpec(
            name=str(block["name"]), dim=int(block["dim"]),
            drift=pairs_to_matrix(block["drift"], f"{path}.drift"),
            controls=tuple(pairs_to_matrix(c, f"{path}.controls[{i}]")
                           for i, c in enumerate(block["controls"])),
            target=pairs_to_matrix(block["target"], f"{path}.target"),
            horizon=float(block["horizon"]), slices=int(block["slices"]),
            u_max=float(block["u_max"]), init_scale=float(block["init_scale"]),
            cutoff=float(block["cutoff"]))
        padmm_kwargs = dict(block["padmm"])
        if grad_mode is not None and not explicit_grad_mode:
            padmm_kwargs["gradient_mode"] = grad_mode
        ens = block.get("ensemble", {})
        rev = block.get("robust_eval", {})
        return TaskBundle(
            task=task,
            grape=GrapeConfig(**block["grape"]),
            quasi_newton=QuasiNewtonConfig(**block["quasi_newton"]),
            padmm=PadmmConfig(**padmm_kwargs),
            ensemble=EnsembleLists(
                detuning_fracs=tuple(ens.get("detuning_fracs", (0.05,))),
                amp_errors=tuple(ens.get("amp_errors", (-0.05, 0.05))),
                drift_strengths=tuple(ens.get("drift_strengths", (0.02,))),
                seed=int(ens.get("seed", 0))),
            robust_eval=RobustEvalGrid(
                detuning_levels=tuple(rev.get("detuning_levels", (0.02, 0.05))),
                amplitude_levels=tuple(rev.get("amplitude_levels", (0.02, 0.05))),
                drift_strengths=tuple(rev.get("drift_strengths", (0.01, 0.02))),
                drift_shapes=int(rev.get("drift_shapes", 3)),
                seed=int(rev.get("seed", 0))),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config_dict(data: dict, origin: str = "config") -> ExperimentConfig:
    _check_keys(data, _TOP_KEYS, origin)
    grad_mode = data.get("grad_mode")
    if grad_mode is not None and grad_mode not in ("paper-form", "exact"):
        raise ConfigError(f"{origin}.grad_mode: expected 'paper-form' or 'exact', "
                          f"got {grad_mode!r}")

    if "tasks" in data:
        blocks = data["tasks"]
        if not isinstance(blocks, list) or not blocks:
            raise ConfigError(f"{origin}.tasks: expected a non-empty list")
    elif "preset" in data:
        blocks = [{"preset": data["preset"]}]
    else:
        blocks = [{"preset": n} for n in PRESET_NAMES]
    bundles = tuple(_parse_bundle(b, f"{origin}.tasks[{i}]", grad_mode)
                    for i, b in enumerate(blocks))
    names = [b.task.name for b in bundles]
    if len(set(names)) != len(names):
        raise ConfigError(f"{origin}.tasks: duplicate task names {names}")

    methods = tuple(data.get("methods", METHODS))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"{origin}.methods: unknown method {m!r}; "
                              f"expected subset of {list(METHODS)}")
    seeds = tuple(int(s) for s in data.get("seeds", DEFAULT_SEEDS))
    if not seeds:
        raise ConfigError(f"{origin}.seeds: must be non-empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"{origin}.seeds: seeds must be distinct, got {list(seeds)}")
    workers = int(data.get("workers", 1))
    if workers < 1:
        raise ConfigError(f"{origin}.workers: must be >= 1")

    pareto = ParetoGrid()
    if "pareto" in data:
        _check_keys(data["pareto"], _PARETO_KEYS, f"{origin}.pareto")
        pareto = ParetoGrid(**{k: tuple(v) for k, v in data["pareto"].items()})
    sens = SensitivityAxes()
    if "sensitivity" in data:
        _check_keys(data["sensitivity"], _SENS_KEYS, f"{origin}.sensitivity")
        sens = SensitivityAxes(**{k: tuple(v) for k, v in data["sensitivity"].items()})

    return ExperimentConfig(
        bundles=bundles, methods=methods, seeds=seeds,
        output_dir=str(data.get("output_dir", "results")),
        workers=workers, scan_seed=int(data.get("scan_seed", 3)),
        pareto=pareto, sensitivity=sens,
    )


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON config file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return parse_config_dict(data, origin=str(p))
