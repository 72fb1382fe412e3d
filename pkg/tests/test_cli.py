"""Command-line verbs end to end, in process via main()."""

import csv
import json
import math
import os

import numpy as np
import pytest

from esqmc.cli import _overrides, main


def write_band_csv(path, g=12, v=2.41):
    """Spectrum CSV with a planted v|sin k| band over g momentum sectors."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "sz", "S", "xi", "xi_exc", "err", "mult"])
        w.writerow([0, 0, 0, "0.9", "0.0", "", 1])
        for k in range(1, g // 2 + 1):
            xi = 0.9 + v * abs(math.sin(2 * math.pi * k / g))
            w.writerow([k, 0, 1, f"{xi:.12f}", f"{xi - 0.9:.12f}", "", 1])
    return path


class TestOverrideParsing:
    def test_dotted_keys_nest(self):
        out = _overrides(["model.length=12", "beta=32"])
        assert out == {"model": {"length": 12}, "beta": 32}

    def test_values_parsed_as_json(self):
        out = _overrides(['seeds=[1,2]', 'tag="x"', "label_spin=false"])
        assert out == {"seeds": [1, 2], "tag": "x", "label_spin": False}

    def test_bare_strings_pass_through(self):
        assert _overrides(["jackknife=sz0"]) == {"jackknife": "sz0"}

    def test_missing_equals_exits(self):
        with pytest.raises(SystemExit):
            _overrides(["beta32"])


class TestSimulate:
    def test_tiny_run_writes_artifacts(self, tmp_path, capsys):
        rc = main([
            "simulate", "afm-ladder-small",
            "--set", "model.length=2", "--set", "beta=2.0",
            "--set", "n_samples=20000", "--set", "n_bins=40",
            "--set", "n_therm=2000", "--set", "seeds=[11]",
            "--set", f'out_dir="{tmp_path}"', "--set", 'tag="t"',
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "levels" in out
        run_dir = next(p for p in tmp_path.iterdir() if p.is_dir())
        names = {p.name for p in run_dir.iterdir()}
        assert {"config.json", "spectrum.csv", "rdm.npz",
                "rdm.meta.json", "stats.json"} <= names
        echo = json.loads((run_dir / "config.json").read_text())
        assert echo["model"]["length"] == 2
        stats = json.loads((run_dir / "stats.json").read_text())
        assert len(stats) == 1  # one chain per seed
        assert stats[0]["seed"] == 11
        assert stats[0]["n_samples"] == 20000

    def test_unknown_preset_exits_2(self, capsys):
        rc = main(["simulate", "not-a-preset"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestSpectrumVerb:
    def test_no_write_prints_levels(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        rc = main([
            "spectrum", "afm-ladder-small", "--no-write", "--top", "5",
            "--set", "model.length=2", "--set", "beta=2.0",
            "--set", "n_samples=20000", "--set", "n_bins=40",
            "--set", "n_therm=2000",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        # the 2-rung region has a 4-dimensional matrix, so 4 levels print
        assert out.count("xi=") == 4
        assert "sz=" in out and "k=" in out
        assert not any(tmp_path.iterdir())  # --no-write leaves no artifacts


class TestOracleVerb:
    def test_ground_state_table_and_csv(self, tmp_path, capsys):
        out_csv = str(tmp_path / "oracle.csv")
        rc = main(["oracle", "afm-ladder-small", "--out", out_csv, "--top", "4"])
        assert rc == 0
        text = capsys.readouterr().out
        assert "xi=   0.88125" in text
        rows = list(csv.DictReader(open(out_csv)))
        assert float(rows[0]["xi"]) == pytest.approx(0.8812506866452742, abs=1e-9)

    def test_thermal_variant_runs(self, tmp_path, capsys):
        rc = main(["oracle", "afm-ladder-small", "--thermal",
                   "--set", "beta=2.0", "--top", "3"])
        assert rc == 0
        assert "xi=" in capsys.readouterr().out


class TestFitVerb:
    def test_fit_on_clean_band(self, tmp_path, capsys):
        path = write_band_csv(str(tmp_path / "band.csv"))
        out_json = str(tmp_path / "fit.json")
        rc = main(["fit", path, "--model", "sine", "--g", "12", "--out", out_json])
        assert rc == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["params"]["v"] == pytest.approx(2.41, abs=1e-9)
        saved = json.loads(open(out_json).read())
        assert saved["params"]["v"] == pytest.approx(2.41, abs=1e-9)

    def test_underdetermined_band_exits_1(self, tmp_path, capsys):
        path = write_band_csv(str(tmp_path / "short.csv"), g=4)
        rc = main(["fit", path, "--model", "sine", "--g", "4"])
        assert rc == 1
        assert "two distinct" in capsys.readouterr().err


class TestCompareVerb:
    def _oracle_csv(self, tmp_path, name="ref.csv"):
        out_csv = str(tmp_path / name)
        assert main(["oracle", "afm-ladder-small", "--out", out_csv]) == 0
        return out_csv

    def test_self_comparison_passes(self, tmp_path, capsys):
        ref = self._oracle_csv(tmp_path)
        report = str(tmp_path / "cmp.json")
        rc = main(["compare", ref, ref, "--out", report])
        assert rc == 0
        assert "all pass" in capsys.readouterr().out
        saved = json.loads(open(report).read())
        assert saved["all_pass"] is True
        assert saved["n_compared"] > 0

    def test_shifted_levels_fail(self, tmp_path, capsys):
        ref = self._oracle_csv(tmp_path)
        rows = list(csv.DictReader(open(ref)))
        bad = str(tmp_path / "bad.csv")
        with open(bad, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "sz", "S", "xi", "xi_exc", "err", "mult"])
            for row in rows:
                xi = float(row["xi"]) + 0.2
                w.writerow([row["k"], row["sz"], row["S"], f"{xi:.10f}",
                            row["xi_exc"], row["err"], row["mult"]])
        rc = main(["compare", bad, ref])
        assert rc == 1
        assert "FAIL" in capsys.readouterr().out
