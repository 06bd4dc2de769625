"""CLI subcommands, pipeline determinism, and the golden end-to-end fixture."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from geocausal.cli import main
from geocausal.io import dump_json, load_json, write_ascii_grid, write_events_csv
from geocausal.simulate import simulate_series
from geocausal.validation import default_dgp

GOLDEN = Path(__file__).parent / "golden"


def make_workspace(tmp_path, T=160, seed=11, estimands=("ate",), extra=None):
    """Synthetic events + covariates + config in a temp dir."""
    dgp = default_dgp(treatment_rate=0.5, mediator=True, mediator_bonus=4.0)
    series = simulate_series(dgp, T, seed)
    write_events_csv(series, tmp_path / "events.csv")
    covdir = tmp_path / "covs"
    covdir.mkdir()
    for name, raster in dgp.covariates.items():
        write_ascii_grid(raster, covdir / ("%s.asc" % name))
    config = {
        "window": {"bounds": [0.0, 0.0, 10.0, 10.0]},
        "grid": {"nx": 32, "ny": 32},
        "events": "events.csv",
        "covariates": {"dir": "covs"},
        "smoothing": {"bandwidth": 0.5},
        "propensity": {"covariates": sorted(dgp.covariates)},
        "interventions": {
            "A": {"type": "intensify", "count": 1.0,
                  "baseline_from": {"stream": "treatment", "bandwidth": 1.2}},
            "B": {"type": "intensify", "count": 0.4,
                  "baseline_from": {"stream": "treatment", "bandwidth": 1.2}},
        },
        "L": [2, 3],
        "estimands": list(estimands),
        "region": "window",
        "seed": 7,
        "out": "out",
    }
    if extra:
        config.update(extra)
    dump_json(config, tmp_path / "config.json")
    return tmp_path / "config.json"


def test_missing_events_exit_code_2(tmp_path):
    cfg = make_workspace(tmp_path)
    (tmp_path / "events.csv").unlink()
    with pytest.raises(SystemExit) as exc:
        main(["ate", "--config", str(cfg)])
    assert exc.value.code == 2


def test_unknown_flag_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["ate", "--definitely-not-a-flag"])
    assert exc.value.code == 2


def test_missing_config_exit_code_2():
    with pytest.raises(SystemExit) as exc:
        main(["ate", "--config", "/nonexistent/config.json"])
    assert exc.value.code == 2


def test_ate_pipeline_deterministic_across_threads(tmp_path):
    cfg = make_workspace(tmp_path)
    assert main(["ate", "--config", str(cfg), "--threads", "1",
                 "--out", str(tmp_path / "run1")]) == 0
    assert main(["ate", "--config", str(cfg), "--threads", "4",
                 "--out", str(tmp_path / "run2")]) == 0
    b1 = (tmp_path / "run1" / "results.json").read_bytes()
    b2 = (tmp_path / "run2" / "results.json").read_bytes()
    assert b1 == b2  # byte-identical across thread counts

    report = json.loads(b1)
    assert report["status"]["ate"] == "ok"
    ate = report["estimands"]["ate"]
    assert set(k for k in ate if k.startswith("L=")) == {"L=2", "L=3"}
    for key in ("ipw", "hajek", "sigma2_star", "hajek_var", "ci90", "ci95", "ess",
                "per_t", "region", "L"):
        assert key in ate["L=3"]
    ci90, ci95 = ate["L=3"]["ci90"], ate["L=3"]["ci95"]
    assert ci95[0] <= ci90[0] <= ci90[1] <= ci95[1]
    assert (tmp_path / "run1" / "effect_vs_L.svg").exists()
    assert (tmp_path / "run1" / "effect_surface.asc").exists()
    assert (tmp_path / "run1" / "model.json").exists()

    # results.json round-trips through the JSON layer unchanged
    parsed = load_json(tmp_path / "run1" / "results.json")
    assert json.loads(json.dumps(parsed, sort_keys=True)) == parsed


def test_identical_interventions_yield_zero(tmp_path):
    cfg = make_workspace(tmp_path, extra={
        "interventions": {
            "A": {"type": "intensify", "count": 1.0,
                  "baseline_from": {"stream": "treatment", "bandwidth": 1.2}},
            "B": {"type": "intensify", "count": 1.0,
                  "baseline_from": {"stream": "treatment", "bandwidth": 1.2}},
        },
        "L": 2,
    })
    assert main(["ate", "--config", str(cfg)]) == 0
    report = load_json(tmp_path / "out" / "results.json")
    assert report["estimands"]["ate"]["L=2"]["ipw"] == 0.0
    assert report["estimands"]["ate"]["L=2"]["hajek"] == 0.0


def test_mediate_and_cate_subcommands(tmp_path):
    T = 160
    mods = "pixel_row,pixel_col,t,name,value\n"
    rows = []
    for t in range(1, T + 1):
        for pr in range(4):
            for pc in range(4):
                rows.append("%d,%d,%d,mech,%g" % (pr, pc, t, 0.3 * pr + 0.1 * pc))
    cfg = make_workspace(tmp_path, estimands=("mediate",), extra={
        "interventions": {
            "A": {"type": "mediator-delta", "count": 0.5, "delta": 2.0,
                  "target_mark": "hit",
                  "baseline_from": {"stream": "treatment", "bandwidth": 1.2}},
            "B": {"type": "intensify", "count": 0.5,
                  "baseline_from": {"stream": "treatment", "bandwidth": 1.2}},
        },
        "L": 2,
        "mediation": {"tree": "binary", "positive": "hit", "negative": "none",
                      "covariates": ["bump_a"]},
        "cate": {"moderators_csv": "mods.csv", "moderator": "mech",
                 "pixel_factor": 8, "basis": {"df": 1}},
    })
    (tmp_path / "mods.csv").write_text(mods + "\n".join(rows) + "\n")

    assert main(["mediate", "--config", str(cfg),
                 "--out", str(tmp_path / "med")]) == 0
    med = load_json(tmp_path / "med" / "results.json")
    blocks = med["estimands"]["mediate"]
    for key in ("total", "direct", "indirect"):
        assert key in blocks
    te, de, ie = (blocks[k]["hajek"] for k in ("total", "direct", "indirect"))
    assert te == pytest.approx(de + ie, abs=1e-10)
    assert (tmp_path / "med" / "mediation.svg").exists()

    assert main(["cate", "--config", str(cfg), "--out", str(tmp_path / "cat")]) == 0
    cat = load_json(tmp_path / "cat" / "results.json")
    assert cat["status"]["cate"] == "ok"
    assert len(cat["estimands"]["cate"]["beta_bar"]) == 2
    assert (tmp_path / "cat" / "cate_curve.svg").exists()


def test_simulate_and_fit_propensity_commands(tmp_path):
    out = tmp_path / "syn"
    assert main(["simulate", "--T", "120", "--seed", "3", "--out", str(out)]) == 0
    assert (out / "events.csv").exists()
    assert (out / "bump_a.asc").exists()

    config = {
        "window": {"bounds": [0.0, 0.0, 10.0, 10.0]},
        "grid": {"nx": 32, "ny": 32},
        "events": str(out / "events.csv"),
        "covariates": {"dir": str(out)},
        "propensity": {"covariates": ["bump_a", "bump_b", "bump_c", "bump_d"]},
        "seed": 1,
        "out": str(tmp_path / "fitout"),
    }
    cfg = tmp_path / "fit_config.json"
    dump_json(config, cfg)
    model_path = tmp_path / "model.json"
    assert main(["fit-propensity", "--config", str(cfg),
                 "--model-out", str(model_path)]) == 0
    model = load_json(model_path)
    assert model["convergence"]["converged"]
    assert "bump_a" in model["coefficients"]


def test_design_intervention_command(tmp_path):
    cfg = make_workspace(tmp_path)
    out = tmp_path / "ivA.asc"
    assert main(["design-intervention", "--config", str(cfg), "--name", "A",
                 "--raster-out", str(out)]) == 0
    from geocausal.io import read_ascii_grid
    from geocausal.geometry import integrate_raster

    raster = read_ascii_grid(out)
    assert integrate_raster(raster) == pytest.approx(1.0, rel=1e-6)


def test_report_command(tmp_path):
    cfg = make_workspace(tmp_path)
    assert main(["ate", "--config", str(cfg)]) == 0
    results = tmp_path / "out" / "results.json"
    assert main(["report", "--results", str(results),
                 "--out", str(tmp_path / "figs")]) == 0
    svg = (tmp_path / "figs" / "effect_vs_L.svg").read_text()
    assert svg.startswith("<svg") and "polyline" not in svg.split("</svg>")[1:] != []


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "geocausal.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "geocausal" in proc.stdout


@pytest.mark.skipif(not (GOLDEN / "results.json").exists(),
                    reason="golden fixture not generated yet")
def test_golden_end_to_end(tmp_path):
    """Bundled synthetic fixture matches the committed golden output to 1e-9."""
    workdir = tmp_path / "golden_run"
    shutil.copytree(GOLDEN / "workspace", workdir)
    assert main(["ate", "--config", str(workdir / "config.json"),
                 "--out", str(workdir / "out")]) == 0
    got = load_json(workdir / "out" / "results.json")
    want = load_json(GOLDEN / "results.json")

    def compare(a, b, path=""):
        assert type(a) is type(b), path
        if isinstance(a, dict):
            assert set(a) == set(b), path
            for k in a:
                compare(a[k], b[k], path + "/" + str(k))
        elif isinstance(a, list):
            assert len(a) == len(b), path
            for i, (x, y) in enumerate(zip(a, b)):
                compare(x, y, "%s[%d]" % (path, i))
        elif isinstance(a, float):
            assert a == pytest.approx(b, rel=1e-9, abs=1e-12), path
        else:
            assert a == b, path

    compare(got, want)
