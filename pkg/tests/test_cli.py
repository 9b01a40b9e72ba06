import csv
import math
from importlib.resources import files

import pytest

from deceptive_control.cli import main

FIXTURES = files("deceptive_control") / "fixtures"


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_cfg(tmp_path, text):
    f = tmp_path / "c.toml"
    f.write_text(text)
    return str(f)


class TestRun:
    def test_outputs(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--samples", "200", "--episodes", "3", "--lambda", "0.5",
                     "--out-dir", str(out)]) == 0
        paths = read(out / "paths.csv")
        assert list(paths[0]) == ["episode", "t", "px", "py", "s", "theta", "a", "omega"]
        assert len(paths) == 3 * 51
        assert paths[50]["a"] == "" and paths[49]["a"] != ""
        llr = read(out / "llr.csv")
        assert len(llr) == 3 * 51 and float(llr[0]["cum_llr"]) == 0.0
        (row,) = read(out / "summary.csv")
        assert row["lambda"] == "0.5" and row["N"] == "200" and 0 <= float(row["pr_safe"]) <= 1

    def test_zero_horizon_single_row(self, tmp_path):
        cfg = write_cfg(tmp_path, "[scenario]\nhorizon = 0\n[run]\nepisodes = 1\nsamples = 10\n")
        out = tmp_path / "o"
        assert main(["run", cfg, "--out-dir", str(out)]) == 0
        rows = read(out / "paths.csv")
        assert len(rows) == 1 and rows[0]["t"] == "0"

    def test_flags_override_file(self, tmp_path):
        cfg = write_cfg(tmp_path, "[run]\nlambda = 2.0\nsamples = 10\nepisodes = 5\nseed = 3\n")
        out = tmp_path / "o"
        assert main(["run", "--config", cfg, "--episodes", "2", "--lambda", "3", "--out-dir", str(out)]) == 0
        (row,) = read(out / "summary.csv")
        assert (row["lambda"], row["N"], row["episodes"], row["seed"]) == ("3", "10", "2", "3")

    def test_reference_run(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--reference", "--episodes", "4", "--out-dir", str(out)]) == 0
        (row,) = read(out / "summary.csv")
        assert row["lambda"] == "inf" and float(row["mean_final_llr"]) == 0.0

    @pytest.mark.parametrize("threads", ["2", "3"])
    def test_byte_identical_across_threads(self, tmp_path, threads):
        args = ["run", "--samples", "300", "--episodes", "4", "--seed", "17", "--lambda", "2"]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        assert main(args + ["--out-dir", str(tmp_path / "b"), "--threads", threads]) == 0
        for name in ("paths.csv", "llr.csv", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestExitCodes:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.toml")]) == 1
        assert "config error" in capsys.readouterr().err

    def test_invalid_lambda(self, tmp_path):
        cfg = write_cfg(tmp_path, "[run]\nlambda = 0\n")
        assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 1

    def test_unknown_key(self, tmp_path):
        cfg = write_cfg(tmp_path, "[run]\nlambda = 1\nbogus = 2\n")
        assert main(["run", cfg]) == 1

    def test_no_admissible_rollout(self, tmp_path, capsys):
        # fire costs are always finite, so inject the failure
        from deceptive_control import cli, sampler

        def boom(*a, **k):
            raise sampler.NoAdmissibleRollout("no admissible rollout")

        mp = pytest.MonkeyPatch()
        mp.setattr(cli, "run_episodes", boom)
        try:
            assert main(["run", "--out-dir", str(tmp_path / "o")]) == 2
        finally:
            mp.undo()
        assert "no admissible rollout" in capsys.readouterr().err

    def test_bad_lambda_list(self, tmp_path):
        assert main(["sweep", "--lambdas", "1,-2", "--out-dir", str(tmp_path)]) == 1


class TestSweep:
    def test_rows_and_layout(self, tmp_path, capsys):
        out = tmp_path / "s"
        assert main(["sweep", "--samples", "100", "--episodes", "3", "--lambdas", "3,0.5",
                     "--out-dir", str(out)]) == 0
        rows = read(out / "summary.csv")
        assert [r["lambda"] for r in rows] == ["inf", "3", "0.5"]
        for sub in ("reference", "lambda_3", "lambda_0.5"):
            assert (out / sub / "paths.csv").exists()
        assert "strictly increasing" in capsys.readouterr().out

    def test_huge_lambda_matches_reference(self, tmp_path):
        out = tmp_path / "s"
        assert main(["sweep", "--samples", "100", "--episodes", "100", "--lambdas", "1e6",
                     "--out-dir", str(out)]) == 0
        ref, big = (float(r["pr_safe"]) for r in read(out / "summary.csv"))
        p = 0.5 * (ref + big)
        assert abs(ref - big) <= 3 * math.sqrt(2 * max(p * (1 - p), 0.01) / 100)

    def test_ordering_check_puts_reference_first(self, tmp_path, capsys, monkeypatch):
        from deceptive_control import cli
        from deceptive_control.metrics import LLRSeries, RunSummary
        import numpy as np
        safe = {None: 0.04, 3.0: 0.4, 0.5: 0.9}

        def fake(cfg, lam, threads):
            return [], LLRSeries(np.zeros((1, 1))), RunSummary(lam, 1, 1, safe[lam], 0.0, 0.0, 0)

        monkeypatch.setattr(cli, "run_config", fake)
        monkeypatch.setattr(cli, "_emit", lambda *a: None)
        assert main(["sweep", "--lambdas", "0.5,3", "--out-dir", str(tmp_path)]) == 0
        assert "increasing as lambda decreases: yes" in capsys.readouterr().out
        safe[3.0] = 0.01
        assert main(["sweep", "--lambdas", "0.5,3", "--out-dir", str(tmp_path)]) == 0
        assert "increasing as lambda decreases: NO" in capsys.readouterr().out

    def test_single_lambda_matches_run(self, tmp_path):
        common = ["--samples", "100", "--episodes", "2", "--seed", "5"]
        assert main(["sweep", "--lambdas", "2", "--no-reference", "--out-dir", str(tmp_path / "s")] + common) == 0
        assert main(["run", "--lambda", "2", "--out-dir", str(tmp_path / "r")] + common) == 0
        assert (tmp_path / "s" / "summary.csv").read_bytes() == (tmp_path / "r" / "summary.csv").read_bytes()
        assert (tmp_path / "s" / "lambda_2" / "paths.csv").read_bytes() == (tmp_path / "r" / "paths.csv").read_bytes()


class TestCompareOracle:
    def test_two_action(self, tmp_path):
        out = tmp_path / "c"
        assert main(["compare-oracle", str(FIXTURES / "two_action.toml"), "--samples", "100,10000",
                     "--episodes", "2000", "--out-dir", str(out)]) == 0
        rows = read(out / "tv.csv")
        assert list(rows[0]) == ["t", "x", "N", "tv_empirical", "tv_conditional"]
        tv = {int(r["N"]): float(r["tv_empirical"]) for r in rows}
        ctv = {int(r["N"]): float(r["tv_conditional"]) for r in rows}
        assert tv[10000] < 0.02 + 3 * math.sqrt(0.75 * 0.25 / 2000)
        assert ctv[10000] < ctv[100]

    def test_zero_cost(self, tmp_path):
        out = tmp_path / "c"
        assert main(["compare-oracle", str(FIXTURES / "zero_cost.toml"), "--samples", "10000",
                     "--episodes", "300", "--out-dir", str(out)]) == 0
        for r in read(out / "tv.csv"):
            assert float(r["tv_conditional"]) < 0.02

    def test_missing_fixture(self, tmp_path):
        assert main(["compare-oracle", str(tmp_path / "none.toml")]) == 1
