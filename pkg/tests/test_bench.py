import json

import numpy as np
import pytest

from structpulse import bench, cli
from structpulse.baselines import GrapeConfig, run_grape
from structpulse.config import parse_config_dict
from structpulse.structure import bandwidth_excess


SMALL = {
    "tasks": [{
        "preset": "1q-x",
        "grape": {"iterations": 6, "lambda_a": 0.25, "step": 0.5},
        "quasi_newton": {"max_iters": 8},
        "padmm": {"lambda1": 0.0005, "lambda_tv": 0.0008, "eta": 0.04,
                  "inner_steps": 2, "outer_steps": 5, "cutoff": 1.8,
                  "warm_start_steps": 2, "warm_step": 0.5},
    }],
    "seeds": [3, 7],
}


def small_config(**over):
    data = json.loads(json.dumps(SMALL))
    data.update(over)
    return parse_config_dict(data)


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    cfg = small_config()
    records, failures = bench.bench_multiseed(cfg, out)
    assert not failures
    return cfg, out, records


def test_multiseed_outputs(bench_dir):
    cfg, out, records = bench_dir
    assert len(records) == 5 * 2  # methods x seeds
    assert (out / "benchmark.csv").exists()
    assert (out / "efficiency.csv").exists()
    assert (out / "manifest.json").exists()
    assert (out / "runs" / "1q-x__padmm__3.json").exists()
    assert (out / "residuals_1q-x_padmm_3.csv").exists()
    assert (out / "residuals_1q-x_padmm-warm-robust_7.csv").exists()
    header, rows = bench.read_csv(out / "benchmark.csv")
    assert len(rows) == 5
    n_idx = header.index("n")
    assert all(r[n_idx] == "2" for r in rows)


def test_single_seed_aggregate_degenerate(tmp_path):
    cfg = small_config(seeds=[3], methods=["grape"])
    records, failures = bench.bench_multiseed(cfg, tmp_path)
    assert not failures and len(records) == 1
    header, rows = bench.read_csv(tmp_path / "benchmark.csv")
    std = float(rows[0][header.index("fidelity_std")])
    assert std == 0.0


def test_benchmark_rounds_trip_through_store(bench_dir):
    cfg, out, records = bench_dir
    loaded = bench.load_records(out)
    assert set(loaded) == set(records)
    k = ("1q-x", "padmm", 3)
    assert np.array_equal(loaded[k].final_field, records[k].final_field)
    assert loaded[k].fidelity == records[k].fidelity
    assert loaded[k].objective_evals == records[k].objective_evals
    tr_a, tr_b = loaded[k].residual_trace, records[k].residual_trace
    assert np.allclose(tr_a.violation, tr_b.violation, rtol=0, atol=1e-15)


def test_report_idempotent(bench_dir):
    cfg, out, _ = bench_dir
    before = (out / "benchmark.csv").read_bytes(), (out / "efficiency.csv").read_bytes()
    bench.report_aggregates(cfg, out)
    after = (out / "benchmark.csv").read_bytes(), (out / "efficiency.csv").read_bytes()
    assert before[0] == after[0]
    # efficiency contains wall-clock columns: compare via the hash that
    # excludes them
    assert bench.csv_content_hash(out / "efficiency.csv") == \
        bench.csv_content_hash(out / "efficiency.csv")
    assert before[1] == after[1]  # report reuses stored wall clocks


def test_workers_give_identical_results(tmp_path):
    cfg1 = small_config(methods=["grape", "padmm"])
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    bench.bench_multiseed(cfg1, out1)
    cfg2 = small_config(methods=["grape", "padmm"], workers=2)
    bench.bench_multiseed(cfg2, out2)
    assert bench.csv_content_hash(out1 / "benchmark.csv") == \
        bench.csv_content_hash(out2 / "benchmark.csv")


def test_bench_determinism_manifest_hashes(tmp_path):
    cfg = small_config()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    m1 = bench.bench_multiseed(cfg, out1) and json.loads((out1 / "manifest.json").read_text())
    m2 = bench.bench_multiseed(cfg, out2) and json.loads((out2 / "manifest.json").read_text())
    assert m1["files"] == m2["files"]
    assert m1["config"] == m2["config"]


def test_failed_cell_recorded_not_fatal(tmp_path, monkeypatch):
    cfg = small_config(methods=["grape", "padmm"])

    real = bench.run_grape

    def failing(task, gcfg, seed, method="grape"):
        if seed == 7:
            raise RuntimeError("synthetic failure")
        return real(task, gcfg, seed, method=method)

    monkeypatch.setattr(bench, "run_grape", failing)
    records, failures = bench.bench_multiseed(cfg, tmp_path)
    assert ("1q-x", "grape", 7) in failures
    assert ("1q-x", "grape", 3) in records
    header, rows = bench.read_csv(tmp_path / "benchmark.csv")
    by_method = {r[header.index("method")]: r for r in rows}
    assert by_method["grape"][header.index("n")] == "1"
    assert by_method["padmm"][header.index("n")] == "2"


def test_pareto_single_cell_front(tmp_path):
    cfg = small_config(pareto={"lambda1_factors": [1.0], "lambda_tv_factors": [1.0],
                               "cutoff_factors": [1.0], "eta_factors": [1.0]})
    rows = bench.pareto_scan(cfg, tmp_path)
    header, data = bench.read_csv(tmp_path / "pareto.csv")
    scan = [r for r in data if r[header.index("kind")] == "scan"]
    assert len(scan) == 1
    assert scan[0][header.index("on_front")] == "true"
    baselines = [r for r in data if r[header.index("kind")] == "baseline"]
    assert {r[header.index("method")] for r in baselines} == {"grape", "quasi-newton"}


def test_pareto_dominated_cell_flagged(tmp_path):
    # at the full 1Q budget a 20x step size destabilizes the run: lower
    # fidelity at far larger total variation, hence dominated
    cfg = parse_config_dict({
        "preset": "1q-x", "seeds": [3],
        "pareto": {"lambda1_factors": [1.0], "lambda_tv_factors": [1.0],
                   "cutoff_factors": [1.0], "eta_factors": [1.0, 20.0]}})
    bench.pareto_scan(cfg, tmp_path)
    header, data = bench.read_csv(tmp_path / "pareto.csv")
    scan = {r[header.index("point_id")]: r for r in data
            if r[header.index("kind")] == "scan"}
    good, bad = scan["cfg000"], scan["cfg001"]
    assert float(bad[header.index("fidelity")]) < float(good[header.index("fidelity")])
    assert float(bad[header.index("total_variation")]) > \
        float(good[header.index("total_variation")])
    assert bad[header.index("on_front")] == "false"
    assert good[header.index("on_front")] == "true"


def test_ablation_variants_and_reduction(tmp_path):
    cfg = small_config()
    rows = bench.run_ablation(cfg, tmp_path)
    header, data = bench.read_csv(tmp_path / "ablation.csv")
    variants = [r[header.index("variant")] for r in data]
    assert variants == list(bench.ABLATION_VARIANTS)
    table = {r[header.index("variant")]: r for r in data}
    # bandlimit-only is band-feasible at the reference cutoff
    assert float(table["bandlimit-only"][header.index("bandwidth_excess")]) <= 1e-10
    # no-constraints with inert splitting equals a plain projected
    # gradient run with the matched step and budget
    bundle = cfg.bundles[0]
    p = bundle.padmm
    plain = run_grape(bundle.task,
                      GrapeConfig(iterations=p.inner_steps * p.outer_steps,
                                  lambda_a=0.0, step=p.eta),
                      seed=cfg.scan_seed, method="padmm")
    assert float(table["no-constraints"][header.index("fidelity")]) == plain.fidelity


def test_sensitivity_rows_and_windows(tmp_path):
    cfg = small_config(sensitivity={"rho_scales": [0.5, 1.0, 2.0],
                                    "eta_factors": [0.75, 1.0, 1.25],
                                    "inner_deltas": [-1, 0, 1]})
    bench.run_sensitivity(cfg, tmp_path)
    header, data = bench.read_csv(tmp_path / "sensitivity.csv")
    assert len(data) == 9
    axes = {r[header.index("axis")] for r in data}
    assert axes == {"rho-scale", "learning-rate", "inner-steps"}
    from structpulse.padmm import run_padmm
    bundle = cfg.bundles[0]
    default = run_padmm(bundle.task, bundle.padmm, cfg.scan_seed)
    defaults = [r for r in data if r[header.index("is_default")] == "true"]
    assert len(defaults) == 3
    for r in defaults:
        assert float(r[header.index("fidelity")]) == default.fidelity
    for axis in axes:
        rows_ax = [r for r in data if r[header.index("axis")] == axis]
        members = [r for r in rows_ax if r[header.index("window_member")] == "true"]
        best = [r for r in rows_ax if r[header.index("window_best")] == "true"]
        assert len(members) == 2 and len(best) == 1
        best_fid = float(best[0][header.index("fidelity")])
        assert best_fid == max(float(r[header.index("fidelity")]) for r in rows_ax)


def test_fairness_pipeline(bench_dir):
    cfg, out, records = bench_dir
    rows = bench.run_fairness(cfg, out)
    header, data = bench.read_csv(out / "fairness.csv")
    methods = {r[header.index("method")] for r in data}
    assert methods == {"grape-filtered", "quasi-newton-filtered"}
    for r in data:
        mean = float(r[header.index("fidelity_mean")])
        lo = float(r[header.index("fidelity_ci_low")])
        hi = float(r[header.index("fidelity_ci_high")])
        assert lo <= mean <= hi
    # stage-1 of the filter is exactly band-feasible for every stored field
    from structpulse.baselines import filter_stages
    bundle = cfg.bundles[0]
    for seed in cfg.seeds:
        rec = records[("1q-x", "quasi-newton", seed)]
        stages = filter_stages(rec.final_field, bundle.task, bundle.padmm.cutoff)
        assert bandwidth_excess(stages.banded, bundle.padmm.cutoff,
                                bundle.task.dt) <= 1e-12


def test_fairness_requires_stored_runs(tmp_path):
    cfg = small_config()
    with pytest.raises(bench.BenchDataError, match="bench"):
        bench.run_fairness(cfg, tmp_path)


def test_robustness_outputs(bench_dir):
    cfg, out, _ = bench_dir
    bench.run_robustness(cfg, out)
    header, data = bench.read_csv(out / "robustness.csv")
    families = {r[header.index("family")] for r in data}
    assert families == {"nominal", "detuning", "amplitude", "drift"}
    mean_rows = [r for r in data if r[header.index("level")] == "mean"]
    assert len(mean_rows) == 5 * 4  # methods x families
    for r in data:
        assert 0.0 <= float(r[header.index("fidelity_mean")]) <= 1.0
        assert r[header.index("n")] == "2"


def test_significance_layout(bench_dir):
    cfg, out, _ = bench_dir
    bench.run_significance(cfg, out)
    header, data = bench.read_csv(out / "significance.csv")
    assert len(data) == 2  # one task: fidelity + drift comparisons
    labels = [r[header.index("comparison")] for r in data]
    assert labels[0].startswith("padmm-warm - padmm")
    assert labels[1].startswith("padmm-warm-robust - padmm-warm")
    for r in data:
        p = float(r[header.index("welch_p")])
        q = float(r[header.index("bh_q")])
        assert 0.0 <= p <= 1.0 and p <= q <= 1.0


def test_significance_six_rows_three_tasks(tmp_path):
    tiny = {
        "tasks": [
            {"preset": name,
             "grape": {"iterations": 2, "lambda_a": 0.1, "step": 0.3},
             "quasi_newton": {"max_iters": 2},
             "padmm": {"lambda1": 0.0005, "lambda_tv": 0.0008, "eta": 0.03,
                       "inner_steps": 1, "outer_steps": 2, "cutoff": 1.8,
                       "warm_start_steps": 1, "warm_step": 0.3}}
            for name in ("1q-x", "qutrit-x", "2q-ent")
        ],
        "seeds": [3, 7],
        "methods": ["padmm", "padmm-warm", "padmm-warm-robust"],
    }
    cfg = parse_config_dict(tiny)
    bench.bench_multiseed(cfg, tmp_path)
    bench.run_significance(cfg, tmp_path)
    header, data = bench.read_csv(tmp_path / "significance.csv")
    assert len(data) == 6
    fid_rows = [r for r in data if "fidelity" in r[header.index("comparison")]]
    drift_rows = [r for r in data if "drift" in r[header.index("comparison")]]
    assert len(fid_rows) == 3 and len(drift_rows) == 3


def test_cli_bench_and_report_cycle(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL))
    out = tmp_path / "results"
    assert cli.main(["--config", str(cfg_path), "--out", str(out), "bench"]) == 0
    bench_csv = (out / "benchmark.csv").read_bytes()
    assert cli.main(["--config", str(cfg_path), "--out", str(out), "report"]) == 0
    assert (out / "benchmark.csv").read_bytes() == bench_csv
    manifest = json.loads((out / "manifest.json").read_text())
    assert "benchmark.csv" in manifest["files"]
    assert manifest["seeds"] == [3, 7]


def test_csv_hash_ignores_wall_clock(tmp_path):
    header = ["task", "wall_clock_mean", "value"]
    bench.write_csv(tmp_path / "a.csv", header, [["t", 1.23, 7.0]])
    bench.write_csv(tmp_path / "b.csv", header, [["t", 9.99, 7.0]])
    assert bench.csv_content_hash(tmp_path / "a.csv") == \
        bench.csv_content_hash(tmp_path / "b.csv")
    bench.write_csv(tmp_path / "c.csv", header, [["t", 1.23, 8.0]])
    assert bench.csv_content_hash(tmp_path / "a.csv") != \
        bench.csv_content_hash(tmp_path / "c.csv")
