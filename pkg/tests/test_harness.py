import subprocess
import sys

import numpy as np
import pytest

from pcd.errors import ConfigError
from pcd.harness import ExperimentConfig, dump_config, parse_config, run_convergence, run_divergence_demo, run_verify
from pcd.harness.cli import main, shipped_config
from pcd.harness.experiments import BATTERY, ExperimentError, decreasing
from pcd.harness.report import Table, csv_text, svg_plot
from pcd.lattice import read_trajectory

SHIPPED = ["converge", "diverge", "verify", "solve", "sample-ou", "renorm-constants", "phi-eps", "build-rough"]


class TestConfig:
    @pytest.mark.parametrize("name", SHIPPED)
    def test_shipped_configs_load(self, name):
        cfg = shipped_config(name)
        assert cfg.experiment_id == name

    @pytest.mark.parametrize("name", SHIPPED)
    def test_dump_parse_round_trip(self, name):
        cfg = shipped_config(name)
        back = parse_config(dump_config(cfg))
        assert back == cfg
        assert back.digest() == cfg.digest()

    def test_fractions_and_comments(self):
        cfg = parse_config("[experiment]\nid = diverge\n[schedule]\nepsilons = 1/2, 1/4   # halvings\n")
        assert cfg.epsilons == (0.5, 0.25)

    @pytest.mark.parametrize(
        "text",
        [
            "[experiment]\nid = nope\n",
            "[lattice]\nN = 7\n",
            "[lattice]\nd = 4\n",
            "[grid]\nT = 0.1\ndt = 0.03\n",
            "[exponents]\nz = 0.7\n",
            "[exponents]\nK = 0.1, 0.05, 0.1, 0.05\n",
            "[exponents]\nL = 0.1, 0.1\n",
            "[schedule]\nepsilons = -1/4\n",
            "[schedule]\nseeds = x\n",
            "[schedule]\nmin_monotone = 2\n",
            "[mollifier]\nplateau = 2\n",
            "[grid]\nwidth = 3\n",
            "[grid]\nT = abc\n",
            "[model]\nrenormalize = maybe\n",
            "no section header\n",
        ],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_tags_are_kept(self):
        cfg = parse_config("[tags]\nnote = hello\n")
        assert cfg.tags == {"note": "hello"}
        assert "note = hello" in dump_config(cfg)


class TestReport:
    def test_csv_is_deterministic(self):
        text = csv_text(("a", "b", "c"), [(0.1, None, True), (float("nan"), 3, False)])
        assert text == "a,b,c\n0.1,,1\nnan,3,0\n"
        assert csv_text(("x", "y", "z"), [(np.float64(0.5), np.int64(2), np.bool_(True))]) == "x,y,z\n0.5,2,1\n"

    def test_row_width_checked(self):
        t = Table("t", ("x", "y"))
        with pytest.raises(ValueError):
            t.add(1)

    def test_svg(self):
        t = Table("t", ("eps", "c1"))
        t.add(0.5, 1.0)
        t.add(0.25, 2.0)
        svg = svg_plot(t)
        assert svg.startswith("<svg") and "<polyline" in svg


class TestExperiments:
    def _small(self, **kw):
        base = dict(experiment_id="converge", dim=1, n=16, T=0.01, dt=1e-3, snapshots=5, seeds=(0,))
        base.update(kw)
        return ExperimentConfig(**base)

    def test_single_level_is_not_asserted(self):
        rep = run_convergence(self._small(epsilons=(0.5,)))
        assert len(rep.table.rows) == 1
        assert not rep.asserted and rep.passed

    def test_fully_mollified_levels_are_settled(self):
        rep = run_convergence(self._small(epsilons=(2.0, 1.0, 1.0), seeds=(0, 1)))
        assert rep.asserted and rep.passed
        d_u = [d for d in rep.table.column("d_u") if d is not None]
        assert len(d_u) == 4 and all(d == 0.0 for d in d_u)
        assert len(rep.table.rows) == 6

    def test_decreasing(self):
        assert decreasing([3, 2, 1]) and decreasing([1, 0.0, 0.0]) and not decreasing([1, 2])

    def test_divergence_constants_only(self):
        cfg = ExperimentConfig(experiment_id="diverge", dim=3, epsilons=(0.5, 0.25, 0.125))
        rep = run_divergence_demo(cfg)
        assert rep.resonant is None
        eps_c1 = rep.constants.column("eps_c1")
        assert rep.c1_spread == pytest.approx(abs(eps_c1[-1] - eps_c1[-2]) / eps_c1[-1])

    def test_verify_battery_passes(self):
        rep = run_verify(shipped_config("verify"), exponents=False)
        assert rep.passed, rep.failures

    @pytest.mark.parametrize("name", sorted(BATTERY))
    def test_injection_is_detected(self, name):
        rep = run_verify(shipped_config("verify"), checks=[name], inject=[name], exponents=False)
        assert rep.failures == [name]

    def test_empty_battery(self):
        rep = run_verify(shipped_config("verify"), checks=[], exponents=False)
        assert rep.passed and rep.checks == []

    def test_unknown_check(self):
        with pytest.raises(ExperimentError):
            run_verify(shipped_config("verify"), checks=["nope"])


class TestCli:
    def test_bad_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[lattice]\nN = 7\n")
        assert main(["verify", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert main(["verify", "--config", str(tmp_path / "missing.ini")]) == 2
        assert main(["renorm-constants", "--epsilon", "-0.5", "--out", str(tmp_path / "o")]) == 2
        assert main(["verify", "--threads", "0", "--out", str(tmp_path / "o")]) == 2

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PCD_THREADS", "many")
        assert main(["phi-eps", "--out", str(tmp_path)]) == 2
        monkeypatch.setenv("PCD_THREADS", "2")
        assert main(["phi-eps", "--out", str(tmp_path)]) == 0

    def test_argparse_errors(self):
        with pytest.raises(SystemExit) as info:
            main(["no-such-command"])
        assert info.value.code == 2

    def test_csv_is_reproducible(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["renorm-constants", "--out", str(tmp_path / name), "--epsilon", "0.5", "--epsilon", "0.25"]) == 0
        a = (tmp_path / "a" / "constants.csv").read_bytes()
        assert a == (tmp_path / "b" / "constants.csv").read_bytes()
        lines = a.decode().splitlines()
        assert lines[0] == "epsilon,c1,c2_plain,c2_block,c_combined"
        c1, plain, block, comb = map(float, lines[1].split(",")[1:])
        assert plain == block and comb == 3 * (c1 - 3 * block)
        out = capsys.readouterr().out
        assert "sha256:" in out

    def test_sample_ou_writes_trajectories(self, tmp_path):
        assert main(["sample-ou", "--out", str(tmp_path), "--seed", "5"]) == 0
        traj, meta = read_trajectory(tmp_path / "ou_0.pcd")
        assert meta
        assert traj.spec.dim == 3 and len(traj) >= 2
        assert (tmp_path / "ou_0.pcd.jsonl").exists()

    def test_solve_both_modes(self, tmp_path):
        cfg = tmp_path / "solve.ini"
        text = dump_config(shipped_config("solve").replace(dim=2, T=0.02, dt=1e-3, snapshots=4))
        cfg.write_text(text)
        common = ["--config", str(cfg), "--u0-amplitude", "0.2"]
        assert main(["solve", "--out", str(tmp_path / "d"), *common]) == 0
        assert main(["solve", "--out", str(tmp_path / "p"), "--mode", "paracontrolled", *common]) == 0
        assert (tmp_path / "p" / "picard.csv").exists()
        direct = (tmp_path / "d" / "solution.csv").read_text().splitlines()
        para = (tmp_path / "p" / "solution.csv").read_text().splitlines()
        assert direct[0] == para[0] == "t,mean,l2,sup"
        sup_d, sup_p = float(direct[-1].split(",")[-1]), float(para[-1].split(",")[-1])
        assert sup_p == pytest.approx(sup_d, rel=0.05)

    def test_verify_inject_exit_code(self, tmp_path):
        assert main(["verify", "--out", str(tmp_path), "--inject", "grid_roundtrip"]) == 1

    def test_svg_flag(self, tmp_path):
        assert main(["phi-eps", "--out", str(tmp_path), "--svg"]) == 0
        assert (tmp_path / "phi.svg").exists()

    def test_console_script(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "pcd.harness.cli", "phi-eps", "--out", str(tmp_path)], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
