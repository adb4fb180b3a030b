import json
import subprocess
import sys

import pytest

from selrec.cli import main

BASE = {
    "n": 2,
    "i_star": 1,
    "s": 0.8,
    "rho": [0.0, 0.6],
    "initial": {"vector": [0.35, 0.15, 0.05, 0.45]},
    "t_max": 0.75,
    "grid_steps": 256,
    "quad_tol": 1e-7,
    "seed": 11,
    "replicates": 3000,
    "dual_flavor": "all",
    "z_threshold": 4.5,
    "agreement_tol": 1e-5,
    "moran_population_sizes": [50, 200],
    "moran_replicates": 4,
}


def write_config(tmp_path, name="exp.json", **overrides):
    raw = {**BASE, **overrides}
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def test_solve_ode_outputs(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["solve", "--config", str(cfgp), "--out", str(out), "--method", "ode"]) == 0
    csv = (out / "solve_ode.csv").read_text().splitlines()
    assert csv[0].startswith("# selrec")
    assert csv[1].startswith("# sites")
    meta = json.loads((out / "solve_meta.json").read_text())
    assert "config_hash" in meta and "version" in meta


def test_solve_all_methods_agree(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["solve", "--config", str(cfgp), "--out", str(out), "--method", "all"]) == 0
    meta = json.loads((out / "solve_meta.json").read_text())
    assert meta["max_pairwise_l1"] <= BASE["agreement_tol"]
    for name in ("solve_ode.csv", "solve_recursion.csv", "solve_semigroup.csv"):
        assert (out / name).exists()


def test_dual_estimates_within_threshold(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["dual", "--config", str(cfgp), "--out", str(out)]) == 0
    payload = json.loads((out / "dual_estimates.json").read_text())
    assert set(payload["flavors"]) == {"counts", "partition", "runtimes"}
    for entry in payload["flavors"].values():
        assert entry["max_abs_z"] < BASE["z_threshold"]
    assert payload["max_abs_z"] < BASE["z_threshold"]


def test_moran_report(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["moran", "--config", str(cfgp), "--out", str(out)]) == 0
    payload = json.loads((out / "moran_lln.json").read_text())
    assert payload["population_sizes"] == [50, 200]
    assert len(payload["mean_distance"]) == 2


def test_asymptotics_outputs(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["asymptotics", "--config", str(cfgp), "--out", str(out)]) == 0
    payload = json.loads((out / "asymptotics_limit.json").read_text())
    assert payload["final_distance"] < 1e-3
    assert payload["horizon"] >= BASE["t_max"]
    assert (out / "asymptotics_convergence.csv").exists()


def test_asymptotics_needs_positive_rates(tmp_path):
    cfgp = write_config(tmp_path, rho=[0.0, 0.0])
    out = tmp_path / "run"
    assert main(["asymptotics", "--config", str(cfgp), "--out", str(out)]) == 1


def test_ld_rates_match_nominal(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["ld", "--config", str(cfgp), "--out", str(out)]) == 0
    payload = json.loads((out / "ld_rates.json").read_text())
    by_site = {lvl["site"]: lvl for lvl in payload["levels"]}
    assert abs(by_site[2]["fitted_rate"] - 0.6) < 1e-3
    assert (out / "ld_norms.csv").exists()


def test_verify_passes_and_is_deterministic(tmp_path):
    cfgp = write_config(tmp_path)
    outs = []
    for run, threads in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / run
        code = main([
            "verify", "--config", str(cfgp), "--out", str(out), "--threads", threads,
        ])
        assert code == 0
        outs.append((out / "verify_report.json").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] == outs[2]
    report = json.loads(outs[0])
    assert report["passed"] is True
    assert all(c["passed"] for c in report["checks"])


def test_missing_config_exits_one(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path), "--method", "ode"]) == 1


def test_unknown_field_exits_one(tmp_path):
    cfgp = write_config(tmp_path, extra_field=1)
    assert main(["solve", "--config", str(cfgp), "--out", str(tmp_path),
                 "--method", "ode"]) == 1


def test_invalid_json_exits_one(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path),
                 "--method", "ode"]) == 1


def test_missing_argument_exits_one():
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == 1


def test_unknown_subcommand_exits_one():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_coarse_grid_exits_two(tmp_path):
    cfgp = write_config(tmp_path, t_max=5.0, grid_steps=8, quad_tol=1e-10)
    out = tmp_path / "run"
    assert main(["solve", "--config", str(cfgp), "--out", str(out),
                 "--method", "recursion"]) == 2


def test_module_entrypoint(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "selrec.cli", "solve", "--config", str(cfgp),
         "--out", str(out), "--method", "semigroup"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert (out / "solve_semigroup.csv").exists()
    version = subprocess.run(
        [sys.executable, "-m", "selrec.cli", "--version"],
        capture_output=True, text=True,
    )
    assert version.returncode == 0
    assert version.stdout.startswith("selrec")
