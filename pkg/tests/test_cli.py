import numpy as np
import pytest

from surge.cli import OUTPUT_DIR_ENV, ConfigError, main, validate_config
from surge.systems import read_scenario_csv

SMALL = ["--system", "linear_gaussian", "--n", "32", "--k", "4", "--t", "3", "--seed", "1"]


def run(tmp_path, *extra, name="out"):
    out = tmp_path / name
    code = main(["run", *SMALL, "--output-dir", str(out), *extra])
    return code, out


class TestValidate:
    def test_threshold_out_of_range(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"seed": "1", "threshold": "1.5"})
        assert any("threshold" in e for e in err.value.errors)

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            validate_config({"system": "lorenz63"})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key 'particles'"):
            validate_config({"seed": "1", "particles": "3"})

    def test_collects_all_errors(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"n": "-1", "threshold": "0", "bogus": "x"})
        assert len(err.value.errors) == 4

    def test_lorenz_defaults(self):
        cfg = validate_config("system = lorenz63\nseed = 0  # comment\n")
        assert (cfg.k, cfg.n, cfg.lam, cfg.threshold) == (600, 3, 1.0, 0.75)
        assert validate_config({"system": "lorenz63", "method": "bpf", "seed": "0"}).n == 20

    def test_incompatible_choices(self):
        with pytest.raises(ConfigError):
            validate_config({"seed": "0", "system": "lorenz63", "method": "kalman"})
        with pytest.raises(ConfigError):
            validate_config({"seed": "0", "system": "lorenz63", "guidance": "doob"})

    def test_digest_ignores_workers_and_output(self):
        a = validate_config({"seed": "0", "workers": "1", "output_dir": "a"})
        b = validate_config({"seed": "0", "workers": "4", "output_dir": "b"})
        c = validate_config({"seed": "1"})
        assert a.digest == b.digest != c.digest


class TestRun:
    def test_writes_reports(self, tmp_path, capsys):
        code, out = run(tmp_path)
        assert code == 0
        assert capsys.readouterr().out.startswith("surge: rmse=")
        for name in ("metrics.csv", "estimates.csv", "ess_trace.csv"):
            lines = (out / name).read_text().splitlines()
            assert lines[-1].startswith("# config_sha256=")
        assert (out / "estimates.csv").read_text().splitlines()[0] == "t,mean1,true1"
        assert (out / "ess_trace.csv").read_text().splitlines()[0] == "t,k,ess,did_resample"

    def test_byte_identical_across_reruns_and_workers(self, tmp_path):
        _, a = run(tmp_path, name="a")
        _, b = run(tmp_path, name="b")
        _, c = run(tmp_path, "--workers", "3", name="c")
        for name in ("metrics.csv", "estimates.csv", "ess_trace.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()

    def test_weight_trace(self, tmp_path):
        _, out = run(tmp_path, "--weight-trace")
        lines = (out / "weight_trace.csv").read_text().splitlines()
        assert lines[0] == "t,k,particle,log_beta,reward_part,girsanov_part"
        assert len(lines) == 2 + 3 * 4 * 32

    @pytest.mark.parametrize("method", ["kalman", "bpf", "enkf", "guided_unweighted"])
    def test_other_methods(self, tmp_path, method, capsys):
        code, out = run(tmp_path, "--method", method)
        assert code == 0 and capsys.readouterr().out.startswith(f"{method}: ")
        assert (out / "metrics.csv").exists()

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("seed = 1\nn = 32\nk = 4\nt = 2\nlambda = 0.5\n")
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--t", "3", "--output-dir", str(out)]) == 0
        assert len((out / "estimates.csv").read_text().splitlines()) == 5

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
        assert main(["run", *SMALL]) == 0
        assert (tmp_path / "env" / "metrics.csv").exists()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        code, _ = run(tmp_path, "--threshold", "1.5")
        assert code == 2
        assert "threshold" in capsys.readouterr().err

    def test_scenario_file(self, tmp_path):
        scen_dir = tmp_path / "scen"
        assert main(["generate-scenario", "--t", "3", "--seed", "0", "--scenario-seed", "9",
                     "--output-dir", str(scen_dir)]) == 0
        text = (scen_dir / "scenario.csv").read_text()
        assert text.splitlines()[-1].startswith("# config_sha256=")
        scen = read_scenario_csv(text)
        assert scen.observations.shape == (3, 1) and scen.seed == 9
        code, out = run(tmp_path, "--scenario", str(scen_dir / "scenario.csv"))
        truth = np.loadtxt(out / "estimates.csv", delimiter=",", skiprows=1, comments="#")[:, 2]
        np.testing.assert_array_equal(truth, scen.true_trajectory[1:, 0])


class TestExitCodes:
    def test_weight_collapse(self, tmp_path, monkeypatch, capsys):
        from surge import cli
        from surge.core import WeightCollapseError

        def collapse(config):
            raise WeightCollapseError(t=2, k=5)

        monkeypatch.setattr(cli, "run_experiment", collapse)
        code, _ = run(tmp_path)
        assert code == 3
        assert "t=2, k=5" in capsys.readouterr().err

    def test_lorenz_blow_up(self, tmp_path, monkeypatch):
        from surge import cli
        from surge.systems import LorenzBlowUpError

        def blow_up(config):
            raise LorenzBlowUpError("diverged")

        monkeypatch.setattr(cli, "run_experiment", blow_up)
        assert run(tmp_path)[0] == 1
