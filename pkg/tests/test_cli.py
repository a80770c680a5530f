import json

import pytest

from boltshare.cli import EXIT_CODES, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def strip_elapsed(path):
    lines = path.read_text().splitlines()
    return [line.rsplit(",", 1)[0] for line in lines]


def test_gauge_single(capsys):
    code, out, _ = run_cli(capsys, "gauge", "--sigma", "4,3,2,1", "--manifest", "/dev/null")
    assert code == 0
    ratios = json.loads(out)["ratios"]
    assert ratios == pytest.approx([1 / 3] * 3)


def test_gauge_batch(tmp_path, capsys):
    data = tmp_path / "g.csv"
    data.write_text("s1,s2,s3,s4\n6,3,2,1\n4,3,2,1\n")
    code, out, _ = run_cli(capsys, "gauge", "--csv", str(data), "--out", str(tmp_path / "g.json"))
    assert code == 0
    assert json.loads(out)["ratios"][0] == pytest.approx([0.6, 0.2, 0.2])
    assert (tmp_path / "g.manifest.json").exists()


def test_simulate_writes_history_summary_and_manifest(tmp_path, capsys):
    hist = tmp_path / "h.csv"
    code, out, _ = run_cli(capsys, "simulate", "--bhc", "0.1,0.1,0.1", "--torque", "7,7,7",
                           "--out", str(hist), "--figure", str(tmp_path / "h.png"))
    assert code == 0
    assert hist.read_text().splitlines()[0] == "u_mm,P_N,F1_N,F2_N,F3_N,phase1,phase2,phase3"
    summary = json.loads((tmp_path / "h.summary.json").read_text())
    assert sum(summary["ratios"]) == pytest.approx(1.0)
    assert summary["ratios"][0] == pytest.approx(summary["ratios"][2], rel=1e-9)
    manifest = json.loads((tmp_path / "h.manifest.json").read_text())
    assert manifest["subcommand"] == "simulate"
    assert set(manifest["outputs"]) == {str(hist), str(tmp_path / "h.png"), str(tmp_path / "h.summary.json")}
    assert (tmp_path / "h.png").stat().st_size > 0


def test_verify_reference_optimum(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "verify", "--bhc", "0.4,0.2,0.4", "--torque", "11,10,15",
                           "--manifest", str(tmp_path / "m.json"))
    assert code == 0
    assert json.loads(out)["ratios"] == pytest.approx([0.321, 0.347, 0.332], abs=0.025)


@pytest.mark.parametrize("argv,kind", [
    (["simulate", "--bogus"], "usage"),
    (["frobnicate"], "usage"),
    (["gauge"], "usage"),
    (["simulate", "--bhc", "a,b", "--torque", "1,2,3"], "usage"),
    (["optimize", "--method", "ga", "--backend", "surrogate"], "usage"),
    (["verify", "--config", "missing.json", "--bhc", "0.1,0.1,0.1", "--torque", "7,7,7"], "missing_file"),
    (["train", "--data", "missing.csv"], "missing_file"),
    (["verify", "--bhc", "2,2,2", "--torque", "0.5,0.5,0.5"], "target_not_reached"),
    (["verify", "--bhc", "3,0.1,0.1", "--torque", "7,7,7"], "invalid_value"),
    (["gauge", "--sigma", "1,2,3,1"], "invalid_value"),
])
def test_error_exit_codes(argv, kind, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run_cli(capsys, *argv)
    assert code == EXIT_CODES[kind]
    assert json.loads(err.strip().splitlines()[-1])["error"] == kind


def test_schema_violation(tmp_path, capsys):
    bad = tmp_path / "joint.json"
    bad.write_text(json.dumps({"l_p_mm": 60.0}))
    code, _, err = run_cli(capsys, "verify", "--config", str(bad), "--bhc", "0.1,0.1,0.1", "--torque", "7,7,7")
    assert code == EXIT_CODES["schema"]
    assert json.loads(err)["error"] == "schema"
    bad.write_text("{not json")
    code, _, _ = run_cli(capsys, "verify", "--config", str(bad), "--bhc", "0.1,0.1,0.1", "--torque", "7,7,7")
    assert code == EXIT_CODES["schema"]


def pipeline(root, capsys):
    """gen-data -> train -> optimize (surrogate GA and solver PSO) -> search, all seeded."""
    root.mkdir()
    d = str(root)
    assert main(["gen-data", "--n", "60", "--seed", "4", "--out", f"{d}/data.csv"]) == 0
    assert main(["train", "--data", f"{d}/data.csv", "--out", f"{d}/model.json",
                 "--metrics", f"{d}/metrics.csv", "--seed", "4", "--max-epochs", "40"]) == 0
    assert main(["optimize", "--method", "ga", "--backend", "surrogate", "--model", f"{d}/model.json",
                 "--seed", "4", "--out", f"{d}/ga.csv", "--best", f"{d}/ga.json"]) == 0
    assert main(["optimize", "--method", "pso", "--backend", "solver", "--seed", "4", "--max-iter", "5",
                 "--out", f"{d}/pso.csv", "--best", f"{d}/pso.json"]) == 0
    assert main(["search", "--model", f"{d}/model.json", "--clearance-levels", "0.2,0.4",
                 "--torque-levels", "5,10,15", "--database", f"{d}/db.csv", "--best", f"{d}/grid.json"]) == 0
    capsys.readouterr()
    return root


def test_pipeline_reruns_are_byte_identical(tmp_path, capsys):
    a = pipeline(tmp_path / "a", capsys)
    b = pipeline(tmp_path / "b", capsys)
    for name in ("data.csv", "data.rejected.csv", "model.json", "metrics.csv", "ga.json", "pso.json",
                 "grid.json", "db.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for name in ("ga.csv", "pso.csv"):
        # the wall-time column is the only nondeterministic field
        assert strip_elapsed(a / name) == strip_elapsed(b / name), name
    best = json.loads((a / "ga.json").read_text())
    assert len(best["x"]) == 6 and {"u_backend", "u_exact"} <= set(best)
    assert (a / "ga.csv").read_text().splitlines()[0] == "iter,best_u,mean_u,elapsed_s"
    ma = json.loads((a / "model.manifest.json").read_text())
    assert ma["seeds"] == {"seed": 4}
    assert len(ma["inputs"]) == 2 and len(ma["outputs"]) == 2


def test_log_level_env(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("BOLTSHARE_LOG", "debug")
    code, _, _ = run_cli(capsys, "gauge", "--sigma", "6,3,2,1", "--manifest", str(tmp_path / "m.json"))
    assert code == 0


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("simulate", "gen-data", "train", "search", "optimize", "verify", "gauge"):
        assert name in out
