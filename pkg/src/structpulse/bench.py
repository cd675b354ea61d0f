"""Experiment orchestration and delimited-output layer.

Runs (task, method, seed) cells over a worker pool, stores one JSON
record per run plus per-iteration residual CSVs for the proximal-ADMM
family, and emits the aggregate tables:

    benchmark.csv efficiency.csv pareto.csv ablation.csv
    sensitivity.csv fairness.csv robustness.csv significance.csv
    residuals_<task>_<method>_<seed>.csv

A manifest.json captures the resolved config, the seed list, and a
content hash of every CSV; wall-clock columns are excluded from the
hashes because timing is inherently nondeterministic.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import filter_baseline, run_grape, run_quasi_newton
from .config import ExperimentConfig, TaskBundle, config_to_dict
from .dynamics import task_fidelity
from .padmm import run_padmm, run_padmm_warm
from .records import RunRecord
from .robust import build_ensemble, robustness_rows, run_padmm_robust
from .stats import aggregate, bh_adjust, nondominated_front, welch_test
from .structure import bandwidth_excess, total_variation

log = logging.getLogger("structpulse")


class BenchDataError(RuntimeError):
    """Stored run data required by a subcommand is missing."""


# ---------------------------------------------------------------------------
# Single-cell execution

def run_cell(bundle: TaskBundle, method: str, seed: int) -> RunRecord:
    """Execute one (task, method, seed) cell with the bundle's settings."""
    task = bundle.task
    if method == "grape":
        return run_grape(task, bundle.grape, seed)
    if method == "quasi-newton":
        return run_quasi_newton(task, bundle.quasi_newton, seed)
    if method == "padmm":
        return run_padmm(task, bundle.padmm, seed)
    if method == "padmm-warm":
        return run_padmm_warm(task, bundle.padmm, seed)
    if method == "padmm-warm-robust":
        ens = bundle.ensemble
        ensemble = build_ensemble(task, ens.detuning_fracs, ens.amp_errors,
                                  ens.drift_strengths, ens.seed)
        return run_padmm_robust(task, bundle.padmm, ensemble, seed)
    raise ValueError(f"unknown method {method!r}")


def _run_cell_safe(args):
    bundle, method, seed = args
    try:
        return (bundle.task.name, method, seed), run_cell(bundle, method, seed), None
    except Exception as exc:  # per-cell isolation: failures degrade n
        return (bundle.task.name, method, seed), None, f"{type(exc).__name__}: {exc}"


def execute_cells(cells, workers: int = 1):
    """Run cells (bundle, method, seed), returning ({key: record}, {key: error}).

    Results are reduced in sorted key order regardless of scheduling, so
    downstream aggregation is deterministic for any worker count.
    """
    results, failures = {}, {}
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_cell_safe, cells))
    else:
        outputs = [_run_cell_safe(c) for c in cells]
    for key, record, error in sorted(outputs, key=lambda t: str(t[0])):
        if error is None:
            results[key] = record
        else:
            failures[key] = error
            log.warning("cell %s failed: %s", key, error)
    return results, failures


# ---------------------------------------------------------------------------
# Delimited output helpers

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    return rows[0], rows[1:]


def csv_content_hash(path: Path) -> str:
    """SHA-256 of a CSV with wall-clock columns removed."""
    header, rows = read_csv(path)
    keep = [i for i, name in enumerate(header) if "wall_clock" not in name]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([header[i] for i in keep])
    for row in rows:
        writer.writerow([row[i] for i in keep])
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def update_manifest(cfg: ExperimentConfig, out: Path) -> dict:
    """Rewrite manifest.json from the CSVs currently present in out."""
    out = Path(out)
    files = {}
    for p in sorted(out.glob("*.csv")):
        header, rows = read_csv(p)
        files[p.name] = {"sha256": csv_content_hash(p), "rows": len(rows)}
    manifest = {
        "config": config_to_dict(cfg),
        "seeds": list(cfg.seeds),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


# ---------------------------------------------------------------------------
# Run storage

def _run_path(out: Path, task: str, method: str, seed: int) -> Path:
    return Path(out) / "runs" / f"{task}__{method}__{seed}.json"


def store_record(out: Path, record: RunRecord):
    path = _run_path(out, record.task, record.method, record.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record.to_dict(), sort_keys=True))


def load_records(out: Path) -> dict:
    """Load stored RunRecords keyed by (task, method, seed)."""
    records = {}
    runs_dir = Path(out) / "runs"
    if not runs_dir.is_dir():
        return records
    for p in sorted(runs_dir.glob("*.json")):
        rec = RunRecord.from_dict(json.loads(p.read_text()))
        records[(rec.task, rec.method, rec.seed)] = rec
    return records


def require_records(out: Path, keys) -> dict:
    records = load_records(out)
    missing = [k for k in keys if k not in records]
    if missing:
        raise BenchDataError(
            f"missing stored runs for {missing[:4]}{'...' if len(missing) > 4 else ''}; "
            f"run the bench subcommand first")
    return records


def write_residuals(out: Path, record: RunRecord):
    if record.residual_trace is None:
        return
    path = Path(out) / f"residuals_{record.task}_{record.method}_{record.seed}.csv"
    write_csv(path, ["iteration", "primal", "dual", "violation", "fidelity"],
              record.residual_trace.rows())


# ---------------------------------------------------------------------------
# Multi-seed benchmark

BENCHMARK_HEADER = [
    "task", "method", "n", "fidelity_mean", "fidelity_std", "fidelity_median",
    "fidelity_best", "fidelity_sem", "fidelity_ci_low", "fidelity_ci_high",
    "tv_mean", "tv_std", "excess_mean", "excess_std", "l1_mean", "l1_std",
    "max_amp_mean", "max_amp_std",
]
EFFICIENCY_HEADER = [
    "task", "method", "n", "wall_clock_mean", "wall_clock_std",
    "objective_evals_mean", "objective_evals_std",
    "gradient_evals_mean", "gradient_evals_std",
]


def _group(records: dict):
    groups = {}
    for (task, method, seed), rec in sorted(records.items(), key=lambda kv: str(kv[0])):
        groups.setdefault((task, method), []).append(rec)
    return groups


def benchmark_rows(records: dict, cfg: ExperimentConfig):
    rows = []
    for bundle in cfg.bundles:
        for method in cfg.methods:
            group = _group(records).get((bundle.task.name, method))
            if not group:
                continue
            fid = aggregate([r.fidelity for r in group], best="max")
            tv = aggregate([r.metrics.total_variation for r in group], best="min")
            ex = aggregate([r.metrics.bandwidth_excess for r in group], best="min")
            l1 = aggregate([r.metrics.l1_norm for r in group], best="min")
            ma = aggregate([r.metrics.max_amp for r in group], best="min")
            rows.append([bundle.task.name, method, fid.n, fid.mean, fid.std,
                         fid.median, fid.best, fid.stderr, fid.ci_low, fid.ci_high,
                         tv.mean, tv.std, ex.mean, ex.std, l1.mean, l1.std,
                         ma.mean, ma.std])
    return rows


def efficiency_rows(records: dict, cfg: ExperimentConfig):
    rows = []
    for bundle in cfg.bundles:
        for method in cfg.methods:
            group = _group(records).get((bundle.task.name, method))
            if not group:
                continue
            wc = aggregate([r.wall_clock_s for r in group], best="min")
            ob = aggregate([float(r.objective_evals) for r in group], best="min")
            gr = aggregate([float(r.gradient_evals) for r in group], best="min")
            rows.append([bundle.task.name, method, wc.n, wc.mean, wc.std,
                         ob.mean, ob.std, gr.mean, gr.std])
    return rows


def bench_multiseed(cfg: ExperimentConfig, out: Path):
    """Run every (task, method, seed) cell, store records and residual
    traces, and write the benchmark and efficiency aggregates."""
    out = Path(out)
    cells = [(bundle, method, seed)
             for bundle in cfg.bundles for method in cfg.methods for seed in cfg.seeds]
    records, failures = execute_cells(cells, cfg.workers)
    for rec in records.values():
        store_record(out, rec)
        write_residuals(out, rec)
    write_csv(out / "benchmark.csv", BENCHMARK_HEADER, benchmark_rows(records, cfg))
    write_csv(out / "efficiency.csv", EFFICIENCY_HEADER, efficiency_rows(records, cfg))
    update_manifest(cfg, out)
    return records, failures


def report_aggregates(cfg: ExperimentConfig, out: Path):
    """Regenerate aggregate CSVs from stored records without re-running."""
    out = Path(out)
    records = load_records(out)
    if not records:
        raise BenchDataError(f"no stored runs under {out}/runs; run bench first")
    write_csv(out / "benchmark.csv", BENCHMARK_HEADER, benchmark_rows(records, cfg))
    write_csv(out / "efficiency.csv", EFFICIENCY_HEADER, efficiency_rows(records, cfg))
    if (out / "robustness_runs.csv").exists():
        _write_robustness_aggregate(cfg, out)
    update_manifest(cfg, out)
    return records


# ---------------------------------------------------------------------------
# Pareto scan

PARETO_HEADER = ["task", "point_id", "kind", "method", "lambda1", "lambda_tv",
                 "cutoff", "eta", "seed", "fidelity", "total_variation",
                 "bandwidth_excess", "on_front", "flags"]


def pareto_scan(cfg: ExperimentConfig, out: Path):
    """One cold proximal-ADMM run per grid cell at the fixed scan seed,
    with GRAPE and quasi-Newton overlay points; complexity metrics are
    measured at the task's reference cutoff."""
    out = Path(out)
    rows = []
    for bundle in cfg.bundles:
        task, base = bundle.task, bundle.padmm
        ref_cutoff = base.cutoff
        grid = []
        for fl1 in cfg.pareto.lambda1_factors:
            for fltv in cfg.pareto.lambda_tv_factors:
                for fwc in cfg.pareto.cutoff_factors:
                    for feta in cfg.pareto.eta_factors:
                        grid.append(replace(
                            base, lambda1=base.lambda1 * fl1,
                            lambda_tv=base.lambda_tv * fltv,
                            cutoff=base.cutoff * fwc, eta=base.eta * feta))
        points, task_rows = [], []
        for i, variant in enumerate(grid):
            pid = f"cfg{i:03d}"
            try:
                rec = run_padmm(task, variant, cfg.scan_seed)
                tv = total_variation(rec.final_field)
                ex = bandwidth_excess(rec.final_field, ref_cutoff, task.dt)
                points.append((rec.fidelity, tv))
                task_rows.append([task.name, pid, "scan", "padmm", variant.lambda1,
                                  variant.lambda_tv, variant.cutoff, variant.eta,
                                  cfg.scan_seed, rec.fidelity, tv, ex, False, ""])
            except Exception as exc:
                task_rows.append([task.name, pid, "scan", "padmm", variant.lambda1,
                                  variant.lambda_tv, variant.cutoff, variant.eta,
                                  cfg.scan_seed, float("nan"), float("nan"),
                                  float("nan"), False, f"{type(exc).__name__}"])
        finite = [i for i, r in enumerate(task_rows) if r[13] == ""]
        for j in nondominated_front(points):
            task_rows[finite[j]][12] = True
        for method, runner, mcfg in (("grape", run_grape, bundle.grape),
                                     ("quasi-newton", run_quasi_newton,
                                      bundle.quasi_newton)):
            rec = runner(task, mcfg, cfg.scan_seed)
            tv = total_variation(rec.final_field)
            ex = bandwidth_excess(rec.final_field, ref_cutoff, task.dt)
            task_rows.append([task.name, method, "baseline", method, "", "", "", "",
                              cfg.scan_seed, rec.fidelity, tv, ex, False, ""])
        rows.extend(task_rows)
    write_csv(out / "pareto.csv", PARETO_HEADER, rows)
    update_manifest(cfg, out)
    return rows


# ---------------------------------------------------------------------------
# Ablation

ABLATION_HEADER = ["task", "variant", "fidelity", "bandwidth_excess", "total_variation"]
ABLATION_VARIANTS = ("full", "l1-only", "tv-only", "bandlimit-only", "no-constraints")


def _ablation_cfg(base, variant: str, full_band: float):
    if variant == "full":
        return base
    if variant == "l1-only":
        return replace(base, lambda_tv=0.0, cutoff=full_band)
    if variant == "tv-only":
        return replace(base, lambda1=0.0, cutoff=full_band)
    if variant == "bandlimit-only":
        return replace(base, lambda1=0.0, lambda_tv=0.0)
    if variant == "no-constraints":
        # fully inert splitting: plain projected gradient descent
        return replace(base, lambda1=0.0, lambda_tv=0.0, cutoff=full_band,
                       rho1=0.0, rho_tv=0.0, rho_bw=0.0)
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(cfg: ExperimentConfig, out: Path):
    """Constraint-component ablation at the fixed scan seed; bandwidth
    excess is reported against the task's reference cutoff."""
    out = Path(out)
    rows = []
    for bundle in cfg.bundles:
        task, base = bundle.task, bundle.padmm
        full_band = 1.0 / task.dt  # above Nyquist: all-pass mask
        for variant in ABLATION_VARIANTS:
            rec = run_padmm(task, _ablation_cfg(base, variant, full_band), cfg.scan_seed)
            rows.append([task.name, variant, rec.fidelity,
                         bandwidth_excess(rec.final_field, base.cutoff, task.dt),
                         total_variation(rec.final_field)])
    write_csv(out / "ablation.csv", ABLATION_HEADER, rows)
    update_manifest(cfg, out)
    return rows


# ---------------------------------------------------------------------------
# Sensitivity

SENSITIVITY_HEADER = ["task", "axis", "variant", "fidelity", "bandwidth_excess",
                      "total_variation", "is_default", "window_member", "window_best"]


def run_sensitivity(cfg: ExperimentConfig, out: Path):
    """One-at-a-time hyperparameter scan around each task's defaults,
    with per-axis stability windows (top settings by fidelity)."""
    out = Path(out)
    rows = []
    for bundle in cfg.bundles:
        task, base = bundle.task, bundle.padmm
        default_rec = run_padmm(task, base, cfg.scan_seed)

        def metrics(rec):
            return (rec.fidelity,
                    bandwidth_excess(rec.final_field, base.cutoff, task.dt),
                    total_variation(rec.final_field))

        default_m = metrics(default_rec)
        axes = []
        for s in cfg.sensitivity.rho_scales:
            label = f"rho-scale={s:g}"
            variant = replace(base, rho1=base.rho1 * s, rho_tv=base.rho_tv * s,
                              rho_bw=base.rho_bw * s)
            axes.append(("rho-scale", label, variant, s == 1.0))
        for f in cfg.sensitivity.eta_factors:
            eta = base.eta * f
            label = f"learning-rate={eta:.4f}"
            axes.append(("learning-rate", label, replace(base, eta=eta), f == 1.0))
        for d in cfg.sensitivity.inner_deltas:
            inner = max(1, base.inner_steps + d)
            label = f"inner-steps={inner}"
            axes.append(("inner-steps", label, replace(base, inner_steps=inner), d == 0))

        axis_rows = {}
        for axis, label, variant, is_default in axes:
            m = default_m if is_default else metrics(run_padmm(task, variant, cfg.scan_seed))
            axis_rows.setdefault(axis, []).append([task.name, axis, label, m[0],
                                                   m[1], m[2], is_default])
        for axis, arows in axis_rows.items():
            ranked = sorted(range(len(arows)), key=lambda i: -arows[i][3])
            window = set(ranked[:2])
            best = ranked[0]
            for i, row in enumerate(arows):
                rows.append(row + [i in window, i == best])
    write_csv(out / "sensitivity.csv", SENSITIVITY_HEADER, rows)
    update_manifest(cfg, out)
    return rows


# ---------------------------------------------------------------------------
# Fairness

FAIRNESS_HEADER = ["task", "method", "n", "fidelity_mean", "fidelity_std",
                   "fidelity_ci_low", "fidelity_ci_high", "excess_mean",
                   "excess_std", "tv_mean", "tv_std"]


def run_fairness(cfg: ExperimentConfig, out: Path):
    """Filter each stored GRAPE / quasi-Newton field through the task's
    reference band limit, box, and smoother, then re-aggregate."""
    out = Path(out)
    keys = [(b.task.name, m, s) for b in cfg.bundles
            for m in ("grape", "quasi-newton") if m in cfg.methods
            for s in cfg.seeds]
    records = require_records(out, keys)
    rows = []
    for bundle in cfg.bundles:
        task = bundle.task
        ref_cutoff = bundle.padmm.cutoff
        for method in ("grape", "quasi-newton"):
            if method not in cfg.methods:
                continue
            fids, exs, tvs = [], [], []
            for seed in cfg.seeds:
                rec = records[(task.name, method, seed)]
                filtered = filter_baseline(rec.final_field, task, ref_cutoff)
                fids.append(task_fidelity(task, filtered))
                exs.append(bandwidth_excess(filtered, ref_cutoff, task.dt))
                tvs.append(total_variation(filtered))
            fa = aggregate(fids, best="max")
            ea = aggregate(exs, best="min")
            ta = aggregate(tvs, best="min")
            rows.append([task.name, f"{method}-filtered", fa.n, fa.mean, fa.std,
                         fa.ci_low, fa.ci_high, ea.mean, ea.std, ta.mean, ta.std])
    write_csv(out / "fairness.csv", FAIRNESS_HEADER, rows)
    update_manifest(cfg, out)
    return rows


# ---------------------------------------------------------------------------
# Robustness

ROBUSTNESS_RUNS_HEADER = ["task", "method", "seed", "family", "level", "fidelity"]
ROBUSTNESS_HEADER = ["task", "method", "family", "level", "fidelity_mean",
                     "fidelity_std", "fidelity_sem", "n"]


def run_robustness(cfg: ExperimentConfig, out: Path):
    """Evaluate every stored final field on the post-training
    perturbation grid; emits per-seed rows and cross-seed aggregates."""
    out = Path(out)
    keys = [(b.task.name, m, s) for b in cfg.bundles for m in cfg.methods
            for s in cfg.seeds]
    records = require_records(out, keys)
    per_seed = []
    for bundle in cfg.bundles:
        for method in cfg.methods:
            for seed in cfg.seeds:
                rec = records[(bundle.task.name, method, seed)]
                for family, level, fid in robustness_rows(
                        rec.final_field, bundle.task, bundle.robust_eval):
                    per_seed.append([bundle.task.name, method, seed, family,
                                     level, fid])
    write_csv(out / "robustness_runs.csv", ROBUSTNESS_RUNS_HEADER, per_seed)
    _write_robustness_aggregate(cfg, out)
    update_manifest(cfg, out)
    return per_seed


def _write_robustness_aggregate(cfg: ExperimentConfig, out: Path):
    header, raw = read_csv(Path(out) / "robustness_runs.csv")
    idx = {name: i for i, name in enumerate(header)}
    table = {}
    for row in raw:
        key = (row[idx["task"]], row[idx["method"]], row[idx["family"]],
               row[idx["level"]])
        table.setdefault(key, {})[int(row[idx["seed"]])] = float(row[idx["fidelity"]])
    rows = []
    seen_family = {}
    for (task, method, family, level), by_seed in sorted(table.items()):
        agg = aggregate(list(by_seed.values()), best="max")
        rows.append([task, method, family, level, agg.mean, agg.std, agg.stderr, agg.n])
        seen_family.setdefault((task, method, family), []).append(by_seed)
    for (task, method, family), level_maps in sorted(seen_family.items()):
        seeds = sorted(set().union(*[set(m) for m in level_maps]))
        per_seed_means = [float(np.mean([m[s] for m in level_maps if s in m]))
                          for s in seeds]
        agg = aggregate(per_seed_means, best="max")
        rows.append([task, method, family, "mean", agg.mean, agg.std, agg.stderr, agg.n])
    rows.sort(key=lambda r: (r[0], r[1], r[2], str(r[3])))
    write_csv(Path(out) / "robustness.csv", ROBUSTNESS_HEADER, rows)


# ---------------------------------------------------------------------------
# Significance

SIGNIFICANCE_HEADER = ["comparison", "task", "n_a", "n_b", "delta_mean", "ci_low",
                       "ci_high", "hedges_g", "welch_p", "bh_q", "degenerate"]


def _drift_mean(bundle: TaskBundle, record: RunRecord) -> float:
    rows = robustness_rows(record.final_field, bundle.task, bundle.robust_eval)
    vals = [fid for fam, _, fid in rows if fam == "drift"]
    return float(np.mean(vals))


def run_significance(cfg: ExperimentConfig, out: Path):
    """Welch tests with Hedges g and Benjamini-Hochberg correction for
    the warm-vs-cold fidelity and robust-vs-warm drift comparisons."""
    out = Path(out)
    needed = [(b.task.name, m, s) for b in cfg.bundles
              for m in ("padmm", "padmm-warm", "padmm-warm-robust")
              for s in cfg.seeds]
    records = require_records(out, needed)
    comparisons = []
    for bundle in cfg.bundles:
        name = bundle.task.name
        warm = [records[(name, "padmm-warm", s)].fidelity for s in cfg.seeds]
        cold = [records[(name, "padmm", s)].fidelity for s in cfg.seeds]
        comparisons.append(("padmm-warm - padmm : fidelity", name, warm, cold))
    for bundle in cfg.bundles:
        name = bundle.task.name
        rob = [_drift_mean(bundle, records[(name, "padmm-warm-robust", s)])
               for s in cfg.seeds]
        warm = [_drift_mean(bundle, records[(name, "padmm-warm", s)])
                for s in cfg.seeds]
        comparisons.append(("padmm-warm-robust - padmm-warm : drift", name, rob, warm))

    results = [welch_test(a, b) for _, _, a, b in comparisons]
    qvals = bh_adjust([r.p for r in results])
    rows = []
    for (label, task, a, b), res, q in zip(comparisons, results, qvals):
        rows.append([label, task, len(a), len(b), res.delta_mean, res.ci_low,
                     res.ci_high, res.hedges_g, res.p, float(q), res.degenerate])
    write_csv(out / "significance.csv", SIGNIFICANCE_HEADER, rows)
    update_manifest(cfg, out)
    return rows
