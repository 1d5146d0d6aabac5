import json

import numpy as np
import pytest

from eulerci.harness import (
    ConfigError, RunManifest, build, config_hash, execute, parse_range, roundtrip_stable,
    run_sweep, seed_from_hash, verify_manifest, SweepError,
)
from eulerci.harness.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from eulerci.harness.csvio import format_value, parse_value, read_csv, render_csv, write_csv
from eulerci.harness.report import render_report, summarize
from eulerci.harness.suites import PropertyResult, run_suite

BASE = {"mode": "relaxed", "delta": [1.0, 0.25], "lambda": [6], "mu": [8], "stages": 1,
        "grid": 32, "window": [0.5, 0.5078125], "energy": [1.0], "snapshots": "last"}


def write_config(tmp_path, **overrides):
    cfg = dict(BASE, **overrides)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture(scope="module")
def stage1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, execute(build(BASE), out)


class TestConfig:
    def test_valid(self):
        cfg = build(BASE)
        assert cfg.grids == [32] and cfg.window == (0.5, 0.5078125) and cfg.grid0 == 16
        assert cfg.schedule.mu == [8]

    @pytest.mark.parametrize("patch", [
        {"mode": "sloppy"}, {"stages": -1}, {"grid": 4}, {"unknown": 1}, {"energy": []},
        {"step": {"flow_method": "magic"}}, {"window": [0.6, 0.5]}, {"grids": [32, 64]},
        {"energy": [0.5, 1.0]},
    ])
    def test_invalid(self, patch):
        with pytest.raises(ConfigError):
            build(dict(BASE, **patch))

    def test_strict_requires_exponents(self):
        with pytest.raises(ConfigError):
            build({"mode": "strict", "stages": 1, "energy": [1.0], "grid": 32})

    def test_relaxed_requires_sequences(self):
        cfg = {k: v for k, v in BASE.items() if k != "mu"}
        with pytest.raises(ConfigError):
            build(cfg)

    def test_hash_ignores_output_and_key_order(self):
        a = config_hash(BASE)
        b = config_hash(dict(reversed(list(BASE.items())), output="elsewhere"))
        assert a == b and len(a) == 64
        assert config_hash(dict(BASE, grid=64)) != a

    def test_seed_from_hash(self):
        assert seed_from_hash("f" * 64) == (1 << 63) - 1
        assert build(BASE).seed == seed_from_hash(config_hash(BASE))
        assert build(dict(BASE, seed=7)).seed == 7


class TestCsv:
    @pytest.mark.parametrize("value,text", [
        (0.1, "0.1"), (float("nan"), "nan"), (True, "true"), (None, ""), (3, "3"),
        (np.float64(2.5), "2.5"), ("4 5", "4 5"),
    ])
    def test_format(self, value, text):
        assert format_value(value) == text

    def test_parse_inverts_format(self):
        for v in (0.1, 1e-300, -3, True, "x y"):
            assert parse_value(format_value(v)) == v

    def test_roundtrip(self, tmp_path):
        rows = [{"a": 0.1, "b": 1, "c": "x"}, {"a": float("nan"), "b": 2, "c": ""}]
        p = write_csv(tmp_path / "d.csv", rows, ["a", "b", "c"], kind="test", extra_header=["note=1"],
                      units={"a": "meters"})
        meta, cols, back = read_csv(p)
        assert meta["kind"] == "test" and cols == ["a", "b", "c"]
        assert "note=1" in meta["comments"]
        assert render_csv(back, cols, "test", ["note=1"], {"a": "meters"}) == p.read_text()

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(p)


class TestRun:
    def test_manifest_and_files(self, stage1_run):
        out, man = stage1_run
        assert man.status == "ok" and man.config_hash == config_hash(BASE)
        assert [s.q for s in man.stages] == [0, 1]
        assert man.stages[1].snapshots and not man.stages[0].snapshots
        assert man.stages[1].constants["M"] > 0
        report = verify_manifest(out / "manifest.json")
        assert report["ok"], report

    def test_manifest_roundtrip(self, stage1_run, tmp_path):
        out, man = stage1_run
        assert roundtrip_stable(out / "manifest.json")
        again = RunManifest.from_dict(json.loads(man.dumps()))
        assert again.dumps() == man.dumps()

    def test_rerun_is_byte_identical(self, stage1_run, tmp_path):
        out, _ = stage1_run
        execute(build(BASE), tmp_path)
        for name in ("diagnostics.csv", "manifest.json"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_zero_stage_run(self, tmp_path):
        man = execute(build(dict(BASE, stages=0, grid0=16)), tmp_path)
        assert man.stages[0].grid == 16 and man.stages[0].snapshots
        assert verify_manifest(tmp_path / "manifest.json")["ok"]

    def test_report(self, stage1_run):
        out, _ = stage1_run
        text = render_report(out / "diagnostics.csv")
        assert "stage 1" in text and "alias fraction" in text
        _, _, rows = read_csv(out / "diagnostics.csv")
        assert summarize(rows)[1]["samples"] == len(rows)


class TestSweeps:
    def test_parse_range(self):
        assert parse_range("1/8, 1/16", "cet") == [0.125, 0.0625]
        assert parse_range(None, "br-commutator") == [2, 4, 8, 16]
        for bad in ("", "0,1", "a"):
            with pytest.raises(SweepError):
                parse_range(bad, "cet")

    def test_unknown_check(self):
        with pytest.raises(SweepError):
            run_sweep("nope", [1.0])

    def test_stationary_phase_csv(self):
        res = run_sweep("stationary-phase", [2, 4, 8], grid=64, m=2)
        assert res.passed and res.order >= 1.9
        text = res.to_csv()
        assert text.startswith("# eulerci-diagnostics schema=1 kind=sweep-stationary-phase")
        assert "passed=true" in text


class TestSuites:
    def test_property_result_nan_fails(self):
        r = PropertyResult("s", "p", float("nan"), 1.0, "<=", {}, 0.0)
        assert not r.passed

    @pytest.mark.parametrize("suite", ["fields", "beltrami", "geometry"])
    def test_fast_suites_pass(self, suite):
        results = run_suite(suite, 3)
        assert results and all(r.passed for r in results), [r.to_dict() for r in results if not r.passed]


class TestCli:
    def test_run_and_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path, stages=0, grid0=16)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        assert (tmp_path / "o" / "manifest.json").is_file()

    def test_bad_config_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, mode="bogus")
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_unknown_suite(self):
        assert main(["verify", "--suite", "nope"]) == EXIT_USAGE

    def test_verify_writes_json(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert main(["verify", "--suite", "beltrami", "--seed", "1", "--out", str(out)]) == EXIT_OK
        rep = json.loads(out.read_text())
        assert rep["passed"] and rep["seed"] == 1

    def test_sweep_empty_range(self):
        assert main(["sweep", "--check", "cet", "--range", ""]) == EXIT_USAGE

    def test_sweep_failure_exit(self, capsys):
        # the measured order of exp(sin x1) over 2..8 is far below m - 0.1 = 39.9
        assert main(["sweep", "--check", "stationary-phase", "--range", "2,4,8", "--m", "40"]) == EXIT_FAIL

    def test_unresolved_sweep_is_usage_error(self, capsys):
        assert main(["sweep", "--check", "stationary-phase", "--range", "2,4", "--grid", "16"]) == EXIT_USAGE

    def test_report_cli(self, stage1_run, capsys):
        out, _ = stage1_run
        assert main(["report", str(out)]) == EXIT_OK
        assert "stage 1" in capsys.readouterr().out

    def test_usage_error(self):
        assert main([]) == EXIT_USAGE
