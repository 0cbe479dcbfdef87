import json

import pytest

from crossing_lab.campaign import CSV_COLUMNS
from crossing_lab.cli import main

SMALL_PLAN = """
[plan]
hO_fractions = [0.25, 0.5]
vc_levels_mps = [3, 9, 15]
cAV_levels_Nspm = [400, 1600, 6400]
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """campaign + fit on a small grid, run once for the module."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.toml"
    cfg.write_text(SMALL_PLAN)
    out = root / "out"
    assert main(["campaign", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 0
    return {"config": cfg, "out": out}


def test_help_lists_schemas_and_exit_codes(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "config v1" in text and "exit codes" in text and "7  optimize: no feasible damping" in text


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert "crossing-lab" in capsys.readouterr().out


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--hO", "50%"])
    assert exc.value.code == 2


class TestSimulate:
    def test_writes_outputs(self, tmp_path):
        assert main(["simulate", "--hO", "50%", "--vc", "6", "--cav", "1600",
                     "--out", str(tmp_path)]) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["outcome"] == "cleared"
        assert metrics["hO"] == pytest.approx(0.03725)
        header = (tmp_path / "series.csv").read_text().split("\n", 1)[0].split(",")
        assert header[:3] == ["t", "x_c", "z_c"]

    def test_idempotent(self, tmp_path):
        args = ["simulate", "--hO", "0.02", "--vc", "9", "--cav", "3200"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        for name in ("metrics.json", "series.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CROSSING_LAB_OUT", str(tmp_path / "env"))
        main(["simulate", "--hO", "25%", "--vc", "6", "--cav", "1600"])
        assert (tmp_path / "env" / "metrics.json").exists()
        main(["simulate", "--hO", "25%", "--vc", "6", "--cav", "1600", "--out", str(tmp_path / "flag")])
        assert (tmp_path / "flag" / "metrics.json").exists()

    @pytest.mark.parametrize("args", [["--cav", "0"], ["--vc", "30"], ["--hO", "300%"],
                                      ["--hO", "tall"]])
    def test_invalid_values(self, tmp_path, capsys, args):
        base = {"--hO": "50%", "--vc": "6", "--cav": "1600"}
        base.update(dict(zip(args[::2], args[1::2])))
        argv = ["simulate", "--out", str(tmp_path)] + [x for kv in base.items() for x in kv]
        assert main(argv) == 1
        assert capsys.readouterr().err.startswith("error:")
        assert not (tmp_path / "metrics.json").exists()

    def test_failed_trial_exit_code(self, tmp_path):
        cfg = tmp_path / "short.toml"
        cfg.write_text("[solver]\nhorizon = 0.01\n")
        assert main(["simulate", "--config", str(cfg), "--hO", "50%", "--vc", "6", "--cav", "1600",
                     "--out", str(tmp_path)]) == 6

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[vehicle]\nwheel_radius = -1\n")
        assert main(["simulate", "--config", str(cfg), "--hO", "50%", "--vc", "6",
                     "--cav", "1600"]) == 1
        assert "vehicle.wheel_radius" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "none.toml"), "--hO", "50%",
                     "--vc", "6", "--cav", "1600"]) == 1
        assert "not found" in capsys.readouterr().err


class TestPipeline:
    def test_campaign_files(self, pipeline):
        out = pipeline["out"]
        lines = (out / "campaign.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 19
        meta = json.loads((out / "campaign.meta.json").read_text())
        assert meta["schema_version"] == 1

    def test_fit_files(self, pipeline):
        out = pipeline["out"]
        surfaces = json.loads((out / "surfaces.json").read_text())
        assert len(surfaces) == 6
        assert sorted(p.name for p in (out / "plot").iterdir())[0] == "cdwo_hO_18.625mm.csv"

    def test_optimize_and_idempotence(self, pipeline, tmp_path):
        out, cfg = pipeline["out"], str(pipeline["config"])
        q = tmp_path / "q.json"
        q.write_text(json.dumps({"hO_m": 0.03, "vc_mps": 9.0, "weights": [1, 1, 1]}))
        assert main(["optimize", "--config", cfg, "--out", str(out), "--query", str(q)]) == 0
        first = (out / "decision.json").read_bytes()
        assert main(["optimize", "--config", cfg, "--out", str(out), "--hO", "0.03", "--vc", "9"]) == 0
        assert (out / "decision.json").read_bytes() == first
        assert 400 <= json.loads(first)["cAV_star"] <= 6400

    def test_optimize_bad_weights(self, pipeline, capsys):
        out, cfg = pipeline["out"], str(pipeline["config"])
        assert main(["optimize", "--config", cfg, "--out", str(out), "--hO", "0.03", "--vc", "9",
                     "--weights", "0,0,0"]) == 1
        assert "weights" in capsys.readouterr().err

    def test_optimize_infeasible(self, pipeline, tmp_path):
        cfg = tmp_path / "tight.toml"
        cfg.write_text(SMALL_PLAN + "\n[strategy]\nstroke_limit = 0.0\n")
        assert main(["optimize", "--config", str(cfg), "--out", str(pipeline["out"]),
                     "--hO", "0.03", "--vc", "9"]) == 7

    def test_fit_reports_underdetermined_cells(self, pipeline, tmp_path, capsys):
        lines = (pipeline["out"] / "campaign.csv").read_text().splitlines()
        short = tmp_path / "short.csv"
        short.write_text("\n".join(lines[:7]) + "\n")
        assert main(["fit", str(short), "--out", str(tmp_path)]) == 1
        assert "points for" in capsys.readouterr().err

    def test_fit_missing_column(self, pipeline, tmp_path, capsys):
        lines = (pipeline["out"] / "campaign.csv").read_text().splitlines()
        drop = CSV_COLUMNS.index("cdwo_s")
        cut = [",".join(f for j, f in enumerate(ln.split(",")) if j != drop) for ln in lines]
        path = tmp_path / "cut.csv"
        path.write_text("\n".join(cut) + "\n")
        assert main(["fit", str(path), "--out", str(tmp_path)]) == 1
        assert "cdwo_s" in capsys.readouterr().err

    def test_plot_data(self, pipeline, tmp_path):
        out = pipeline["out"]
        assert main(["plot-data", "--out", str(tmp_path), "--surfaces", str(out / "surfaces.json"),
                     "--campaign", str(out / "campaign.csv")]) == 0
        assert len(list((tmp_path / "plot").iterdir())) == 6

    def test_resume(self, pipeline, tmp_path):
        cfg = str(pipeline["config"])
        assert main(["campaign", "--config", cfg, "--out", str(tmp_path), "--resume"]) == 0
        assert (tmp_path / "campaign.recovery.jsonl").exists()
        assert main(["campaign", "--config", cfg, "--out", str(tmp_path), "--resume"]) == 0
        assert (tmp_path / "campaign.csv").read_bytes() == (pipeline["out"] / "campaign.csv").read_bytes()
