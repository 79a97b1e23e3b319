import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdelab import attractor as att
from rdelab import harness
from rdelab.cli import main
from rdelab.harness import (CHECK_INVENTORY, ConfigError, ExperimentConfig, missing_checks,
                            run_sweep, run_verify, summarize)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def tiny(tmp_path, **kw):
    doc = {"grid": {"L": 8.0, "N": 32}, "solver": {"dt": 0.005},
           "epsilons": [0.25, 0.5], "seeds": [0, 1], "T_pullback": 4.0,
           "ensemble_count": 3, "absorbing_M": 1.0, "output_dir": str(tmp_path / "out")}
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


# --- config ---

def test_defaults_match_shipped_config():
    assert ExperimentConfig.load(CONFIGS / "default.json").to_dict() == ExperimentConfig().to_dict()


def test_epsilons_sorted_descending(tmp_path):
    assert tiny(tmp_path).epsilons == [0.5, 0.25]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=6),
       st.lists(st.integers(0, 10**6), min_size=1, max_size=5),
       st.sampled_from([0.5, 1.0, 2.0]), st.integers(3, 500))
def test_config_roundtrip(eps, seeds, lam, N):
    cfg = ExperimentConfig(N=N, lam=lam, epsilons=eps, seeds=seeds, T_pullback=2.0, dt=0.01)
    again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
    assert again == cfg
    assert ExperimentConfig.from_dict(again.to_dict()) == again


@pytest.mark.parametrize("bad", [
    {"epsilons": []}, {"epsilons": [0.0]}, {"epsilons": [1.5]}, {"seeds": []},
    {"solver": {"dt": 0.003}}, {"ensemble_count": 0}, {"eta": 0.0}, {"typo": 1},
])
def test_config_validation(tmp_path, bad):
    with pytest.raises(ConfigError):
        tiny(tmp_path, **bad)


def test_empty_epsilons_cli_writes_nothing(tmp_path, capsys):
    doc = json.loads((CONFIGS / "quick.json").read_text())
    doc["epsilons"] = []
    doc["output_dir"] = str(tmp_path / "never")
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["sweep", "--config", str(path)]) == 2
    assert "epsilons" in capsys.readouterr().err
    assert not (tmp_path / "never").exists()


# --- sweep ---

def test_sweep_outputs_and_determinism(tmp_path):
    a = tiny(tmp_path / "a")
    b = tiny(tmp_path / "b")
    res = run_sweep(a)
    run_sweep(b, jobs=2)
    for name in ("sweep.csv", "sweep_probes.csv"):
        assert (Path(a.output_dir) / name).read_bytes() == (Path(b.output_dir) / name).read_bytes()
    rows = list(csv.DictReader(open(Path(a.output_dir) / "sweep.csv")))
    assert list(rows[0]) == harness.SWEEP_COLUMNS
    assert len(rows) == 4 and all(float(r["dist_to_A0"]) >= 0 for r in rows)
    assert {(float(r["epsilon"]), int(r["seed"])) for r in rows} == {
        (e, s) for e in (0.5, 0.25) for s in (0, 1)}
    assert all(r["wall_time"] == "" for r in rows)
    meta = json.loads((Path(a.output_dir) / "sweep_meta.json").read_text())
    assert meta["failures"] == [] and len(meta["wall_time"]) == 4
    assert {p["condition"] for p in res.probes} == {"convergence", "absorbing_radius",
                                                    "precompactness"}
    A0 = att.AttractorCloud.from_json(json.loads(
        (Path(a.output_dir) / "attractor_eps0.json").read_text()))
    assert np.array_equal(A0.points, res.A0.points)


def test_sweep_crash_isolation(tmp_path, monkeypatch):
    real = att.pullback_attractor

    def flaky(spec, cfg, omega, *args, **kw):
        if spec.epsilon == 0.25 and omega is not None and omega.seed == 1:
            raise RuntimeError("injected failure")
        return real(spec, cfg, omega, *args, **kw)

    monkeypatch.setattr(harness.att, "pullback_attractor", flaky)
    config = tiny(tmp_path)
    res = run_sweep(config)
    failed = [r for r in res.rows if r.failed]
    assert [(r.epsilon, r.seed) for r in failed] == [(0.25, 1)]
    assert math.isnan(failed[0].dist_to_A0)
    assert sum(not r.failed for r in res.rows) == 3
    meta = json.loads((Path(config.output_dir) / "sweep_meta.json").read_text())
    assert "injected failure" in meta["failures"][0]["error"]


def test_linear_sweep_ratio_constant(tmp_path):
    config = tiny(tmp_path, problem={"a": 0.0, "b": None}, solver={"dt": 0.01},
                  T_pullback=20.0, epsilons=[0.5, 0.25, 0.125, 0.0625])
    res = run_sweep(config, write=False)
    for seed in config.seeds:
        ratios = [r.dist_to_A0 / r.epsilon for r in res.rows if r.seed == seed]
        assert (max(ratios) - min(ratios)) / np.mean(ratios) <= 0.01


# --- verify ---

@pytest.fixture(scope="module")
def quick_verify(tmp_path_factory):
    out = tmp_path_factory.mktemp("quick")
    doc = json.loads((CONFIGS / "quick.json").read_text())
    doc["output_dir"] = str(out)
    config = ExperimentConfig.from_dict(doc)
    return config, run_verify(config, jobs=2)


def test_verify_inventory_complete(quick_verify):
    config, rows = quick_verify
    assert missing_checks(rows) == []
    summary = list(csv.DictReader(open(Path(config.output_dir) / "verify.csv")))
    assert len(summary) == len(CHECK_INVENTORY)
    assert [r["check"] for r in summary] == list(CHECK_INVENTORY)
    detail = list(csv.DictReader(open(Path(config.output_dir) / "verify_detail.csv")))
    assert len(detail) == len(rows)


def test_verify_cocycle_and_tail_rows(quick_verify):
    _, rows = quick_verify
    cocycle = [r for r in rows if r.check == "cocycle_law"]
    assert cocycle and all(r.value <= 1e-10 and r.pass_flag for r in cocycle)
    tails = [r for r in rows if r.check == "tail_uniformity"]
    assert tails and {r.epsilon for r in tails} == {0.5, 0.25, 0.125}


def test_summarize_marks_missing_and_crashes():
    rows = harness._guarded("ou_oracle", lambda: 1 / 0)
    assert len(rows) == 1 and not rows[0].pass_flag
    assert "ZeroDivisionError" in rows[0].quantity_name
    summary = summarize(rows)
    assert len(summary) == len(CHECK_INVENTORY)
    assert not any(r.pass_flag for r in summary)


# --- CLI ---

def test_cli_simulate_and_attractor(tmp_path, capsys):
    cfg = str(CONFIGS / "quick.json")
    out = str(tmp_path)
    assert main(["simulate", "--config", cfg, "--out", out, "--seed", "3", "--epsilon", "0.5",
                 "--time", "1", "--every", "50"]) == 0
    rows = list(csv.reader(open(tmp_path / "trajectory_eps0.5_seed3.csv")))
    assert rows[0] == ["t", "l2", "h1_semi", "lp_p", "tail_mass"] and len(rows) == 12
    assert main(["attractor", "--config", cfg, "--out", out, "--epsilon", "0.25"]) == 0
    doc = json.loads((tmp_path / "attractor_eps0.25_seed0.json").read_text())
    assert doc["pullback_time"] == 8.0 and len(doc["points"]) >= 1
    assert main(["attractor", "--config", cfg, "--out", out, "--epsilon", "0"]) == 0


def test_cli_sweep(tmp_path, capsys):
    config = tiny(tmp_path)
    path = tmp_path / "c.json"
    path.write_text(config.dumps())
    assert main(["sweep", "--config", str(path), "--jobs", "2"]) == 0
    assert "median" in capsys.readouterr().out
    assert (tmp_path / "out" / "sweep.csv").exists()


def test_cli_missing_config(capsys):
    assert main(["sweep", "--config", "/nonexistent.json"]) == 2
