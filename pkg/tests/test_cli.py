import json

import pytest

from ruinlevy.cli import main
from ruinlevy.limitlaw import edpf_limit
from ruinlevy.model import build_model
from conftest import CONFIGS, load

M0 = str(CONFIGS / "m0.json")
M1 = str(CONFIGS / "m1.json")


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_constants_m1(capsys):
    code, out, _ = run(capsys, "constants", "--config", M1, "--phi-hat", "1")
    payload = json.loads(out)
    assert code == 0
    assert payload["constants"]["q"] == pytest.approx(1.0)
    assert payload["phi_hat"]["1"] == pytest.approx(2 ** -0.5, abs=1e-10)
    assert set(payload["meta"]) == {"config_hash", "seed", "version"}


def test_constants_m0_schema(capsys):
    code, out, _ = run(capsys, "constants", "--config", M0)
    consts = json.loads(out)["constants"]
    assert code == 0
    assert {"alpha", "q", "d_H", "A", "B", "C", "kappa_0_minus_alpha"} == set(consts)
    assert all(isinstance(v, float) for v in consts.values())


def test_malformed_config(capsys, tmp_path):
    cfg = load("m0")
    cfg["claim"]["shape"] = 2
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "constants", "--config", str(path))
    assert code == 2 and "claim.shape" in err


def test_missing_config_is_io_error(capsys, tmp_path):
    code, _, _ = run(capsys, "constants", "--config", str(tmp_path / "none.json"))
    assert code == 3


def test_ruin_prob(capsys):
    code, out, _ = run(capsys, "ruin-prob", "--config", M1, "--u", "0", "2")
    rows = dict(line.split(",") for line in out.splitlines() if not line.startswith("#"))
    assert code == 0
    assert float(rows["0"]) == pytest.approx(0.5, abs=1e-5)
    assert float(rows["2"]) == pytest.approx(0.18394, abs=1e-5)


def test_ruin_prob_negative_level(capsys):
    code, _, err = run(capsys, "ruin-prob", "--config", M1, "--u", "-1")
    assert code == 2 and "levels" in err


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 2
    capsys.readouterr()


def test_simulate_bytes_identical(capsys, tmp_path):
    args = ["simulate", "--config", M0, "--u", "2", "--n", "3000", "--seed", "9", "--workers", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()
    assert (tmp_path / "a" / "ensemble_report.json").read_bytes() == (tmp_path / "b" / "ensemble_report.json").read_bytes()


def test_simulate_empty(capsys):
    code, out, _ = run(capsys, "simulate", "--config", M1, "--u", "1", "--n", "0")
    assert code == 0
    assert out.splitlines()[-1].startswith("stream_id,ruined,tau")


def test_simulate_conditioned(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--config", M0, "--u", "4", "--n", "50", "--conditioned",
                     "--out", str(tmp_path))
    report = json.loads((tmp_path / "ensemble_report.json").read_text())
    assert code == 0 and report["n_ruined"] == 50 and report["meta"]["config_hash"]


def test_limits_overshoot(capsys):
    code, out, _ = run(capsys, "limits", "--config", M0, "--which", "overshoot", "--grid", "0,1")
    assert code == 0
    assert "# total_mass=1" in out
    assert out.splitlines()[-2].startswith("0,0,")


def test_limits_ruin_time_needs_artifact(capsys):
    code, _, err = run(capsys, "limits", "--config", M0, "--which", "ruin-time")
    assert code == 2 and "--running-sup" in err


def test_limits_unknown(capsys):
    code, _, err = run(capsys, "limits", "--config", M0, "--which", "nope")
    assert code == 2 and "overshoot" in err and "running-sup" in err


def test_limits_ruin_time_from_artifact(capsys, tmp_path):
    assert main(["limits", "--config", M0, "--which", "running-sup", "--grid", "0:20:201", "--n", "500",
                 "--out", str(tmp_path)]) == 0
    sup = str(tmp_path / "running_sup.csv")
    code, out, _ = run(capsys, "limits", "--config", M0, "--which", "ruin-time", "--running-sup", sup,
                       "--grid", "0,1,20")
    rows = [line.split(",") for line in out.splitlines() if line[0].isdigit()]
    assert code == 0 and float(rows[0][3]) == 1.0 and float(rows[-1][3]) < 0.02
    code, _, _ = run(capsys, "limits", "--config", M0, "--which", "ruin-time", "--running-sup", sup,
                     "--grid", "0,30")
    assert code == 2


def test_edpf(capsys):
    code, out, _ = run(capsys, "edpf", "--config", M0, "--name", "ladder_times_overshoot",
                       "--param", "nu=0", "zeta=0", "eta=0")
    assert code == 0 and json.loads(out)["value"] == pytest.approx(1.0, abs=1e-12)
    code, out, _ = run(capsys, "edpf", "--config", M0, "--name", "ruin_time_overshoot",
                       "--param", "zeta=0.5", "eta=0.2")
    m0 = build_model(load("m0"))
    assert json.loads(out)["value"] == edpf_limit(m0, "ruin_time_overshoot", zeta=0.5, eta=0.2)


def test_edpf_repeated_param_flags_accumulate(capsys):
    code, out, _ = run(capsys, "edpf", "--config", M0, "--name", "ruin_time_overshoot",
                       "--param", "zeta=0.5", "--param", "eta=0.2")
    assert code == 0 and json.loads(out)["params"] == {"zeta": 0.5, "eta": 0.2}


def test_edpf_side_condition(capsys):
    code, _, err = run(capsys, "edpf", "--config", M0, "--name", "max_undershoot_joint",
                       "--param", "nu=0", "zeta=0", "eta=0", "lam=1")
    assert code == 2 and "lam != alpha + eta" in err


def test_sample_limit(capsys, tmp_path):
    assert main(["sample-limit", "--config", M0, "--n", "100", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "decomposition.csv").read_text().splitlines()
    assert lines[[i for i, ln in enumerate(lines) if not ln.startswith("#")][0]].startswith("stream_id,rho,")
    assert len([ln for ln in lines if not ln.startswith("#")]) == 101


def test_validate_identities_m1(capsys, tmp_path):
    code, _, _ = run(capsys, "validate", "--config", M1, "--suite", "identities", "--pk-n", "100000",
                     "--out", str(tmp_path))
    payload = json.loads((tmp_path / "validation.json").read_text())
    assert code == 0 and all(r["passed"] for r in payload["reports"])
    assert (tmp_path / "validation.md").exists()


def test_validate_limits_underpowered(capsys, tmp_path):
    code, _, err = run(capsys, "validate", "--config", M0, "--suite", "limits", "--levels", "2", "4",
                       "--n", "100", "--sup-n", "1000", "--out", str(tmp_path))
    assert code == 0 and "underpowered" in err


def test_validate_corrupt_table(capsys, tmp_path):
    bad = tmp_path / "table.csv"
    bad.write_text("x,V,qVbar\n0,oops,1\n")
    code, _, _ = run(capsys, "validate", "--config", M1, "--table", str(bad))
    assert code == 3


def test_env_override(capsys, monkeypatch):
    monkeypatch.setenv("RUINLEVY_RENEWAL_STEP", "0.05")
    code, _, err = run(capsys, "ruin-prob", "--config", M1, "--u", "1")
    assert code == 2 and "step" in err
