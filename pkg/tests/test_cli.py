import csv
import json

import numpy as np
import pytest

from hsfusion import SpectralCube, cli
from hsfusion.cubefile import read_cube, read_header, write_cube
from hsfusion.solver import _Problem
from hsfusion.synthetic import low_rank_scene

SMALL = ["--kernel-size", "3", "--downsample", "2", "--ms-bands", "0,3,5,7", "--subspace-dim", "3",
         "--outer-iters", "3", "--inner-iters", "5"]


@pytest.fixture
def truth_path(tmp_path):
    path = tmp_path / "truth.cube"
    assert cli.main(["synth", str(path), "--rows", "16", "--cols", "16", "--bands", "8", "--rank", "3"]) == 0
    return path


def _simulate(truth_path, out, *extra):
    return cli.main(["simulate", str(truth_path), "--out-dir", str(out), *SMALL, *extra])


def test_synth_writes_truth(truth_path):
    cube = read_cube(truth_path)
    assert cube.shape == (16, 16, 8)
    assert np.array_equal(cube.data, low_rank_scene(16, 16, 8, 3, 0).data)


def test_simulate_outputs(truth_path, tmp_path):
    out = tmp_path / "sim"
    assert _simulate(truth_path, out, "--seed", "5") == 0
    h, m = read_cube(out / "H.cube"), read_cube(out / "M.cube")
    assert h.shape == (8, 8, 8) and m.shape == (16, 16, 4)
    lam = json.loads((out / "lambdas.json").read_text())
    assert lam["seed"] == 5 and len(lam["hs_variances"]) == 8 and len(lam["ms_variances"]) == 4
    assert lam["ms_band_indices"] == [0, 3, 5, 7]
    assert read_header(out / "H.cube")["provenance"]["config"]["seed"] == 5


def test_simulate_same_seed_byte_identical(truth_path, tmp_path):
    for name in ("a", "b"):
        assert _simulate(truth_path, tmp_path / name, "--seed", "2") == 0
    for f in ("H.cube", "M.cube", "lambdas.json", "H.cube.json", "M.cube.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert _simulate(truth_path, tmp_path / "c", "--seed", "3") == 0
    assert (tmp_path / "a" / "H.cube").read_bytes() != (tmp_path / "c" / "H.cube").read_bytes()


def test_simulate_non_dividing_factor(tmp_path, capsys):
    path = tmp_path / "t.cube"
    write_cube(path, SpectralCube(np.random.default_rng(0).random((18, 22, 6))))
    code = cli.main(["simulate", str(path), "--out-dir", str(tmp_path), "--downsample", "4",
                     "--kernel-size", "3", "--ms-bands", "0,2,9"])
    assert code == cli.EXIT_INVALID
    err = capsys.readouterr().err
    assert "rows=18" in err and "cols=22" in err and "[9]" in err


def test_invalid_fields_reported_together(truth_path, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"kernel_size": 4, "noise": "laplace", "typo": 1}))
    assert cli.main(["simulate", str(truth_path), "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "kernel_size" in err and "noise" in err and "typo" in err


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate"])
    assert exc.value.code == 2


def test_fuse_round_trip(truth_path, tmp_path):
    sim = tmp_path / "sim"
    _simulate(truth_path, sim)
    out = tmp_path / "fused"
    code = cli.main(["fuse", str(sim / "H.cube"), str(sim / "M.cube"), "--lambdas", str(sim / "lambdas.json"),
                     "--out-dir", str(out)])
    assert code == 0
    f = read_cube(out / "F.cube")
    assert f.shape == (16, 16, 8)
    diag = json.loads((out / "diagnostics.json").read_text())
    for key in ("objective_history", "residual_history", "fusion_time_s", "alg_time_s", "stop_reason"):
        assert key in diag
    assert diag["fusion_time_s"] <= diag["alg_time_s"]
    lines = (out / "iterations.jsonl").read_text().splitlines()
    assert len(lines) == diag["outer_iterations"]
    assert {"iteration", "objective", "residual_LR_W1"} <= set(json.loads(lines[0]))
    assert json.loads((out / "subspace.json").read_text())["basis"]


def test_fuse_without_noise_information(truth_path, tmp_path, capsys):
    sim = tmp_path / "sim"
    _simulate(truth_path, sim)
    args = ["fuse", str(sim / "H.cube"), str(sim / "M.cube"), "--out-dir", str(tmp_path / "f"), *SMALL]
    assert cli.main(args) == 2
    assert "guessed SNR" in capsys.readouterr().err
    assert cli.main(args + ["--hs-snr-db", "12"]) == 0
    assert read_cube(tmp_path / "f" / "F.cube").shape == (16, 16, 8)


def test_fuse_dim_mismatch(truth_path, tmp_path, capsys):
    sim = tmp_path / "sim"
    _simulate(truth_path, sim)
    code = cli.main(["fuse", str(sim / "H.cube"), str(sim / "M.cube"), "--lambdas", str(sim / "lambdas.json"),
                     "--downsample", "4", "--out-dir", str(tmp_path / "f")])
    assert code == 2
    assert "not downsample 4" in capsys.readouterr().err


def test_fuse_numerical_failure_exit_3(truth_path, tmp_path, capsys, monkeypatch):
    sim = tmp_path / "sim"
    _simulate(truth_path, sim)
    real = _Problem.update_R
    calls = {"n": 0}

    def broken(self, s):
        calls["n"] += 1
        out = real(self, s)
        if calls["n"] > 6:
            out[0, 0] = np.inf
        return out

    monkeypatch.setattr(_Problem, "update_R", broken)
    code = cli.main(["fuse", str(sim / "H.cube"), str(sim / "M.cube"), "--lambdas", str(sim / "lambdas.json"),
                     "--out-dir", str(tmp_path / "f")])
    assert code == cli.EXIT_NUMERICAL
    err = capsys.readouterr().err
    assert "iteration 7" in err
    assert '"iteration": 1' in err  # the per-iteration trace precedes the failure


def test_tissue_shaped_inputs(tmp_path):
    """Non-square scene, many bands, few MS bands and d = 4."""
    truth = low_rank_scene(48, 52, 20, 3, 1)
    write_cube(tmp_path / "t.cube", truth)
    out = tmp_path / "run"
    assert cli.main(["simulate", str(tmp_path / "t.cube"), "--out-dir", str(out), "--kernel-size", "5",
                     "--downsample", "4", "--subspace-dim", "3", "--outer-iters", "2"]) == 0
    assert read_cube(out / "H.cube").shape == (12, 13, 20)
    assert read_cube(out / "M.cube").shape == (48, 52, 4)
    assert cli.main(["fuse", str(out / "H.cube"), str(out / "M.cube"), "--lambdas", str(out / "lambdas.json"),
                     "--out-dir", str(out)]) == 0
    assert read_cube(out / "F.cube").shape == (48, 52, 20)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_evaluate_identity(truth_path, tmp_path):
    out = tmp_path / "ev"
    assert cli.main(["evaluate", str(truth_path), str(truth_path), "--out-dir", str(out)]) == 0
    text = (out / "report.csv").read_text().splitlines()
    assert text[0] == "method,psnr_db,rmse,sam_deg,uiqi,ergas,dd,alg_time_s"
    assert text[1] == "proposed,inf,0.0,0.0,1.0,0.0,0.0,"
    per_band = _read_csv(out / "per_band.csv")
    assert len(per_band) == 8 and [int(r["band"]) for r in per_band] == list(range(8))
    assert read_cube(out / "sam_map.cube").shape == (16, 16, 1)
    rep = json.loads((out / "report.json").read_text())
    assert rep["rmse_paper"] == 0.0 and rep["excluded_pixels"] == 0


def test_evaluate_mismatch(truth_path, tmp_path):
    other = tmp_path / "o.cube"
    write_cube(other, SpectralCube(np.ones((8, 8, 8))))
    assert cli.main(["evaluate", str(truth_path), str(other), "--out-dir", str(tmp_path)]) == 2


def test_evaluate_heatmap(truth_path, tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "ev"
    assert cli.main(["evaluate", str(truth_path), str(truth_path), "--heatmap", "--out-dir", str(out)]) == 0
    assert (out / "sam_map.png").read_bytes()[:4] == b"\x89PNG"


def test_pipeline_artifacts(truth_path, tmp_path):
    out = tmp_path / "p"
    assert cli.main(["pipeline", str(truth_path), "--out-dir", str(out), *SMALL]) == 0
    summary = json.loads((out / "summary.json").read_text())
    (run,) = summary["runs"]
    for rel in run["artifacts"].values():
        assert (out / rel).exists(), rel
    assert run["alg_time_s"] >= run["fusion_time_s"] > 0
    assert run["metrics"]["psnr_db"] > 20
    assert _read_csv(out / "report.csv")[0]["alg_time_s"] == ""


def test_pipeline_snr_sweep(truth_path, tmp_path):
    out = tmp_path / "p"
    code = cli.main(["pipeline", str(truth_path), "--out-dir", str(out), "--snr-sweep", "5,8,10",
                     "--record-time", *SMALL])
    assert code == 0
    rows = _read_csv(out / "report.csv")
    assert [r["method"] for r in rows] == ["proposed@5dB", "proposed@8dB", "proposed@10dB"]
    assert all(float(r["alg_time_s"]) > 0 for r in rows)
    for level in ("5", "8", "10"):
        assert (out / f"snr_{level}dB" / "F.cube").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert [r["hs_snr_db"] for r in summary["runs"]] == [5.0, 8.0, 10.0]


def test_pipeline_repeatable_metrics(truth_path, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["pipeline", str(truth_path), "--out-dir", str(tmp_path / name), *SMALL]) == 0
    a = json.loads((tmp_path / "a" / "summary.json").read_text())["runs"][0]["metrics"]
    b = json.loads((tmp_path / "b" / "summary.json").read_text())["runs"][0]["metrics"]
    assert a == b
