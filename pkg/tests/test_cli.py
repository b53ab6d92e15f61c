import json
from pathlib import Path

import pytest

from gasshock.cli import main
from gasshock.pipeline import PipelineConfig, run_pipeline
from gasshock.timeseries import load_macro

ROOT = Path(__file__).resolve().parents[1]


def run_cli(*args):
    return main([str(a) for a in args])


def test_simulate_subcommand(tmp_path):
    assert run_cli("--out-dir", tmp_path, "simulate", "--preset", "paper-like", "--t", "40", "--seed", "1",
                   "--out", "data.csv", "--shocks-out", "shocks.csv") == 0
    d = load_macro(tmp_path / "data.csv")
    assert d.T == 40 and d.names == ("rgas", "core", "exp", "unemp", "conf")
    assert load_macro(tmp_path / "shocks.csv").names[0] == "gas"


def test_stage_chain(tmp_path, panel_csv):
    o = ["--out-dir", tmp_path]
    assert run_cli(*o, "simulate", "--t", "124", "--seed", "2") == 0
    assert run_cli(*o, "indexes", "--panel", tmp_path / "panel.csv", "--factor", "raw_materials", "--out", "raw.csv") == 0
    assert (tmp_path / "raw.csv").read_text().startswith("date,value,lo,hi,n\n")
    assert run_cli(*o, "indexes", "--panel", tmp_path / "panel.csv", "--uncertainty", "--base", "0.5",
                   "--p0", "0.2", "--out", "unc.csv", "--state-out", "state.csv") == 0
    assert run_cli(*o, "estimate", "--data", "data.csv", "--end", "2020Q1", "--lags", "4", "--delta", "0",
                   "--optimize-lambda", "--draws", "200", "--seed", "42", "--out", "post") == 0
    meta = json.loads((tmp_path / "post" / "meta.json").read_text())
    assert meta["dates"][-1] == "2020Q1" and meta["n_draws"] == 200
    assert run_cli(*o, "identify", "--posterior", "post", "--restrictions", "builtin:gas", "--accepted", "30",
                   "--max-tries", "1000", "--seed", "7", "--data", "data.csv", "--shocks-out", "shocks.csv",
                   "--out", "ds") == 0
    assert run_cli(*o, "irf", "--drawset", "ds", "--out", "irf.csv") == 0
    assert run_cli(*o, "hd", "--drawset", "ds", "--data", "data.csv", "--out", "hd.csv") == 0
    assert run_cli(*o, "girf", "--data", "shocks.csv", "--data", "data.csv", "--columns", "gas,rgas,core,exp",
                   "--lags", "2", "--covid-correction", "--draws", "100", "--out", "girf.csv") == 0
    assert run_cli(*o, "lp", "--data", "data.csv", "--data", "shocks.csv", "--data", "state.csv", "--y", "core",
                   "--shock", "gas", "--z", "z", "--s-from", "unemp", "--horizons", "4", "--nw", "auto",
                   "--out", "lp.csv") == 0
    head = (tmp_path / "lp.csv").read_text().splitlines()[0]
    assert head.startswith("horizon,beta_high,se_high,beta_low,se_low")
    girf = (tmp_path / "girf.csv").read_text().splitlines()
    assert girf[1].startswith("gas,gas,0,")


def test_restriction_file(tmp_path):
    run_cli("--out-dir", tmp_path, "simulate", "--t", "80")
    run_cli("--out-dir", tmp_path, "estimate", "--data", "data.csv", "--draws", "50", "--out", "post")
    (tmp_path / "grid.txt").write_text(
        "shocks: gas as expectation ad sentiment\n"
        "+ - 0 + 0\n+ + 0 + 0\n+ + + + +\n+ + 0 - +\n0 - * + +\n"
    )
    assert run_cli("--out-dir", tmp_path, "identify", "--posterior", "post", "--restrictions",
                   tmp_path / "grid.txt", "--accepted", "3", "--out", "ds") == 0


def test_stage_errors_are_reported(tmp_path, capsys):
    assert run_cli("--out-dir", tmp_path, "estimate", "--data", "missing.csv") == 1
    err = capsys.readouterr().err
    assert "estimate" in err and "missing.csv" in err
    with pytest.raises(SystemExit):
        run_cli("estimate", "--bogus", "1")


def write_config(path, body):
    path.write_text(body)
    return path


def test_run_simulate_only(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[run]\nseed = 5\nout_dir = out\n\n[simulate]\nt = 30\n")
    status, manifest = run_pipeline(PipelineConfig.read(cfg))
    assert status == 0
    m = json.loads(manifest.read_text())
    paths = [o["path"] for s in m["stages"] for o in s["outputs"]]
    assert paths == ["data.csv", "shocks_true.csv"]
    assert m["seed"] == 5 and m["status"] == "ok"
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["data.csv", "manifest.json", "shocks_true.csv"]


def test_run_missing_input_names_stage(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nseed = 1\n\n[simulate]\nt = 30\n\n[estimate]\ndata = nowhere.csv\ndraws = 10\n",
    )
    assert run_cli("run", cfg) == 1
    err = capsys.readouterr().err
    assert "estimate" in err and "nowhere.csv" in err
    out = tmp_path / "out"
    assert (out / "FAILED").read_text().startswith("stage: estimate")
    assert (out / "data.csv").exists()
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "failed" and m["failed_stage"] == "estimate"


def test_run_rejects_out_of_order(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[estimate]\ndata = d.csv\n\n[simulate]\n")
    with pytest.raises(ValueError, match="out of order"):
        PipelineConfig.read(cfg)
    with pytest.raises(ValueError, match="unknown stage"):
        PipelineConfig.read(write_config(tmp_path / "d.ini", "[fit]\n"))


def test_out_dir_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.ini", "[run]\nseed = 2\n\n[simulate]\nt = 20\n")
    monkeypatch.setenv("GASSHOCK_OUT_DIR", str(tmp_path / "elsewhere"))
    assert run_cli("run", cfg) == 0
    assert (tmp_path / "elsewhere" / "manifest.json").exists()


def test_master_seed_drives_stages(tmp_path):
    body = "[run]\nseed = {}\n\n[simulate]\nt = 20\n"
    hashes = []
    for i, seed in enumerate((1, 1, 2)):
        cfg = write_config(tmp_path / f"c{i}.ini", body.format(seed))
        _, manifest = run_pipeline(PipelineConfig.read(cfg, out_dir=tmp_path / f"o{i}"))
        hashes.append(json.loads(manifest.read_text())["stages"][0]["outputs"][0]["sha256"])
    assert hashes[0] == hashes[1] != hashes[2]


def test_shipped_config_parses():
    cfg = PipelineConfig.read(ROOT / "configs" / "paper_like.ini")
    kinds = [k for _, k, _ in cfg.stages]
    assert kinds == ["simulate", "indexes", "indexes", "estimate", "identify", "irf", "hd", "girf", "lp"]
