"""Structured quantum-control pulse synthesis toolkit.

Modules: dynamics (propagation, fidelity, adjoint gradients), structure
(regularizers and projectors), padmm (the proximal-ADMM solver),
baselines (GRAPE, box-constrained quasi-Newton, fairness filter),
robust (perturbation ensembles and robust training), stats and bench
(multi-seed statistics and orchestration), config and cli (presets,
parsing, command-line entry point).
"""

from .dynamics import (TaskSpec, PropagationTrace, hermitian_expm, propagate,
                       gate_fidelity, fidelity_gradient, fidelity_and_gradient,
                       task_fidelity)
from .structure import (StructureParams, ComplexityMetrics, soft_threshold,
                        diff_forward, diff_adjoint, total_variation,
                        bandlimit_project, bandwidth_excess, box_project,
                        structured_objective, complexity_metrics)
from .padmm import (PadmmConfig, SplitState, augmented_gradient, inner_u_update,
                    outer_update, run_padmm, run_padmm_warm)
from .baselines import (GrapeConfig, QuasiNewtonConfig, run_grape,
                        run_quasi_newton, filter_baseline, filter_stages,
                        minimize_lbfgs_box)
from .robust import (PerturbationScenario, EnsembleSpec, build_ensemble,
                     perturbed_propagate, robust_objective_and_gradient,
                     run_padmm_robust, evaluate_robustness, RobustEvalGrid)
from .records import RunRecord, ResidualTrace, Counters
from .stats import aggregate, welch_test, bh_adjust, nondominated_front
from .config import (ExperimentConfig, TaskBundle, parse_config, default_config,
                     preset_bundle, PRESET_NAMES, METHODS, DEFAULT_SEEDS)

__version__ = "0.1.0"
