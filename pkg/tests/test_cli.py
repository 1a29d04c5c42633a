"""Command-line pipelines: config parsing, artifacts, exit codes."""

import json

import pytest

from stealthpath import cli
from stealthpath import detection as D
from stealthpath import mitigation as M


TINY = """
[experiment]
scenario = unicycle
mode = attack_only
lambda = 2.0
rollouts = 64
replan_every = 100
eval_runs = 2
master_seed = 7
output_dir = {out}
"""


def write_tiny(tmp_path, name="cfg.ini", **edits):
    text = TINY.format(out=tmp_path / "runs")
    for key, val in edits.items():
        lines = []
        for line in text.strip().split("\n"):
            if line.split("=")[0].strip() == key:
                line = f"{key} = {val}"
            lines.append(line)
        text = "\n".join(lines)
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfigParsing:
    def test_round_trip(self, tmp_path):
        cfg = cli.ExperimentConfig(
            scenario="cruise", mode="game", lam=1.5, rollouts=500,
            replan_every=10, lookahead_steps=150, eval_runs=7,
            master_seed=3, output_dir="x",
        )
        p = tmp_path / "echo.ini"
        cli.write_config(cfg, p)
        back, det = cli.load_config(p)
        assert back == cfg
        assert det is None

    def test_inline_comments_are_stripped(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(
            "[experiment]\n"
            "scenario = cruise        ; unicycle | cruise\n"
            "lambda = 1.5             # attacker KL price\n"
        )
        cfg, _ = cli.load_config(p)
        assert cfg.scenario == "cruise"
        assert cfg.lam == 1.5

    def test_unknown_field_is_an_error(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[experiment]\nscenario = unicycle\nwarp_drive = 9\n")
        with pytest.raises(cli.ConfigError, match="warp_drive"):
            cli.load_config(p)

    def test_unknown_section_is_an_error(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[experiments]\nscenario = unicycle\n")
        with pytest.raises(cli.ConfigError, match="experiments"):
            cli.load_config(p)

    def test_bad_literal_names_field(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[experiment]\nrollouts = many\n")
        with pytest.raises(cli.ConfigError, match="rollouts"):
            cli.load_config(p)

    def test_malformed_file_exit_2(self, tmp_path, capsys):
        p = tmp_path / "broken.ini"
        p.write_text("scenario = unicycle\n")  # key before any section header
        rc = cli.main(["synth", "--config", str(p)])
        assert rc == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_validation_catches_bad_values(self):
        with pytest.raises(cli.ConfigError, match="lam"):
            cli.ExperimentConfig(lam=-1.0).validate()
        with pytest.raises(cli.ConfigError, match="scenario"):
            cli.ExperimentConfig(scenario="tricycle").validate()
        with pytest.raises(cli.ConfigError, match="analytic_1d"):
            cli.ExperimentConfig(scenario="analytic_1d").validate()


class TestSynth:
    def test_artifacts_and_schema(self, tmp_path):
        rc = cli.main(["synth", "--config", str(write_tiny(tmp_path))])
        assert rc == cli.EXIT_OK
        out = tmp_path / "runs" / "synth"
        for name in ("trajectories.csv", "kl_report.txt", "crash_report.csv",
                     "manifest.json"):
            assert (out / name).exists()
        header = (out / "trajectories.csv").read_text().split("\n", 1)[0]
        assert header == "run_id,step,t,px,py,s,phi,u_0,u_1,theta_0,theta_1"
        crash = (out / "crash_report.csv").read_text().strip().split("\n")
        assert crash[0] == "run_id,crashed,crash_step,p_crash"
        assert crash[-1].startswith("summary,")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["version"]
        assert manifest["config"]["master_seed"] == 7
        assert manifest["config"]["scenario_parameters"]["dt"] == 0.01
        assert "p_crash" in manifest["results"]
        assert manifest["ess"]["replans"] == 2 * 5  # 2 runs, 5 replan events

    def test_identical_config_identical_bytes(self, tmp_path, monkeypatch):
        a = write_tiny(tmp_path, name="a.ini")
        cli.main(["synth", "--config", str(a), "--out", str(tmp_path / "r1")])
        monkeypatch.setenv("STEALTHPATH_THREADS", "2")
        cli.main(["synth", "--config", str(a), "--out", str(tmp_path / "r2")])
        t1 = (tmp_path / "r1" / "synth" / "trajectories.csv").read_bytes()
        t2 = (tmp_path / "r2" / "synth" / "trajectories.csv").read_bytes()
        assert t1 == t2

    def test_seed_flag_changes_bytes(self, tmp_path):
        a = write_tiny(tmp_path)
        cli.main(["synth", "--config", str(a), "--out", str(tmp_path / "r1")])
        cli.main(["synth", "--config", str(a), "--out", str(tmp_path / "r2"),
                  "--seed", "8"])
        t1 = (tmp_path / "r1" / "synth" / "trajectories.csv").read_bytes()
        t2 = (tmp_path / "r2" / "synth" / "trajectories.csv").read_bytes()
        assert t1 != t2

    def test_mode_subcommand_mismatch(self, tmp_path, capsys):
        p = write_tiny(tmp_path, mode="mitigate")
        rc = cli.main(["synth", "--config", str(p)])
        assert rc == cli.EXIT_CONFIG
        assert "mode" in capsys.readouterr().err


class TestMitigate:
    def test_uncertifiable_lam_exit_3(self, tmp_path, capsys):
        p = write_tiny(tmp_path, mode="mitigate", **{"lambda": "0.005"})
        rc = cli.main(["mitigate", "--config", str(p)])
        assert rc == cli.EXIT_ASSUMPTION
        assert "assumption violated" in capsys.readouterr().err
        cert = (tmp_path / "runs" / "mitigate" / "certificate.txt").read_text()
        assert "valid=false" in cert

    # 64 rollouts over the full horizon degenerate the soft-min weights;
    # harmless for a plumbing test
    @pytest.mark.filterwarnings("ignore:exponential weights are degenerate")
    def test_small_game_run_writes_certificate(self, tmp_path):
        p = write_tiny(tmp_path, mode="mitigate", **{"lambda": "0.1"})
        rc = cli.main(["mitigate", "--config", str(p)])
        assert rc == cli.EXIT_OK
        out = tmp_path / "runs" / "mitigate"
        cert = (out / "certificate.txt").read_text()
        assert "valid=true" in cert
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["certificate"] == cert


class TestDetect:
    def test_single_tau_matches_closed_forms(self, tmp_path):
        p = tmp_path / "d.ini"
        p.write_text("[detect]\nK = 100\nsigma = 1.1\ntaus = 1.0\n")
        rc = cli.main(["detect", "--config", str(p), "--out", str(tmp_path)])
        assert rc == cli.EXIT_OK
        rows = (tmp_path / "detect" / "curve.csv").read_text().strip().split("\n")
        assert rows[0] == "tau,alpha,beta"
        tau, alpha, beta = map(float, rows[1].split(","))
        spec = D.DetectorSpec(K=100, sigma=1.1, h_step=0.01)
        assert alpha == D.np_alpha(spec, 1.0)
        assert beta == D.np_beta(spec, 1.0)

    def test_sigma_one_exit_2(self, tmp_path, capsys):
        p = tmp_path / "d.ini"
        p.write_text("[detect]\nK = 100\nsigma = 1.0\n")
        rc = cli.main(["detect", "--config", str(p), "--out", str(tmp_path)])
        assert rc == cli.EXIT_CONFIG
        assert "sigma" in capsys.readouterr().err

    def test_default_grid_size(self, tmp_path):
        rc = cli.main(["detect", "--out", str(tmp_path)])
        assert rc == cli.EXIT_OK
        rows = (tmp_path / "detect" / "curve.csv").read_text().strip().split("\n")
        assert len(rows) == 1 + 50


class TestValidate:
    def test_quick_passes(self, tmp_path):
        rc = cli.main(["validate", "--quick", "--out", str(tmp_path / "v")])
        assert rc == cli.EXIT_OK
        report = (tmp_path / "v" / "validation_report.txt").read_text()
        assert "FAIL" not in report
        assert "gamma_identity" in report

    def test_sabotaged_gamma_exit_4(self, monkeypatch, capsys):
        monkeypatch.setattr(M, "gamma_from_xi", lambda xi, lam: xi * lam / (lam + xi))
        rc = cli.main(["validate", "--quick"])
        assert rc == cli.EXIT_NUMERICAL
        out = capsys.readouterr().out
        assert "[FAIL] gamma_identity" in out
