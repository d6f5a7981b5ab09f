import json
import os

import numpy as np
import pytest

from secure_isac.cli import (
    TRACE_COLUMNS,
    build_manifest,
    main,
    read_trace,
    write_trace,
)
from secure_isac.config import (
    ConfigError,
    ScenarioConfig,
    StrategyId,
    config_from_dict,
    config_hash,
    parse_config,
    serialize_config,
)


def small_config_text(extra=""):
    return (
        "[hn]\ncount = 6\n\n"
        "[eve]\ncount = 2\n\n"
        "[run]\nslots = 3\nreplications = 1\nseed = 7\n"
        + extra
    )


class TestConfigParsing:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.ini"
        path.write_text("")
        config = parse_config(str(path))
        assert config == ScenarioConfig()

    def test_partial_file_keeps_other_defaults(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(small_config_text())
        config = parse_config(str(path))
        assert config.hn.count == 6
        assert config.eve.count == 2
        assert config.run.slots == 3
        assert config.bs.antennas == 128  # untouched default

    def test_invalid_value_names_field(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[gne]\ntolerance = -1\n")
        with pytest.raises(ConfigError) as err:
            parse_config(str(path))
        assert any("gne.tolerance" in e for e in err.value.errors)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"bs": {"warp_drive": "1"}})
        assert any("bs.warp_drive" in e for e in err.value.errors)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"quantum": {"x": "1"}})
        assert any("quantum" in e for e in err.value.errors)

    def test_all_violations_listed_at_once(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"gne": {"tolerance": "-1", "max_iters": "0"},
                              "run": {"slots": "0"}})
        joined = "\n".join(err.value.errors)
        assert "gne.tolerance" in joined
        assert "gne.max_iters" in joined
        assert "run.slots" in joined

    def test_round_trip(self, tmp_path):
        config = ScenarioConfig()
        config.run.slots = 42
        config.carrier.frequency_hz = 5e11
        config.eve.mobility = "waypoint"
        path = tmp_path / "rt.ini"
        path.write_text(serialize_config(config))
        assert parse_config(str(path)) == config

    def test_hash_stable_and_sensitive(self):
        a, b = ScenarioConfig(), ScenarioConfig()
        assert config_hash(a) == config_hash(b)
        b.run.seed = 999
        assert config_hash(a) != config_hash(b)

    def test_unparsable_number_reported(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"run": {"slots": "many"}})
        assert any("run.slots" in e for e in err.value.errors)


class TestManifest:
    def test_power_round_trips_to_dbm(self):
        manifest = build_manifest(ScenarioConfig(), StrategyId.IBEAMS, [], 0.1)
        assert manifest["bs_p_max_dbm"] == pytest.approx(43.0103, abs=1e-4)
        assert manifest["bs_p_init_dbm"] == pytest.approx(41.7609, abs=1e-4)
        assert manifest["hn_p_max_dbm"] == pytest.approx(31.7609, abs=1e-4)
        assert len(manifest["config_hash"]) == 64


def run_cli(tmp_path, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    out = tmp_path / "out"
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(small_config_text())
    argv = ["--config", str(cfg), "--out", str(out), *extra]
    return main(argv), out


class TestCliRun:
    def test_exit_zero_and_artifacts(self, tmp_path):
        code, out = run_cli(tmp_path, "--strategy", "fixed_an",
                            "--emit", "trace,summary,beliefs,beampattern,field")
        assert code == 0
        assert (out / "trace_fixed_an.csv").exists()
        assert (out / "summary_fixed_an.tsv").exists()
        assert (out / "beliefs_eve0.txt").exists()
        assert (out / "beampattern.txt").exists()
        assert (out / "jamming_field.txt").exists()
        assert (out / "manifest.json").exists()

    def test_trace_format_and_round_trip(self, tmp_path):
        code, out = run_cli(tmp_path, "--strategy", "fixed_an", "--slots", "1")
        assert code == 0
        path = out / "trace_fixed_an.csv"
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 2  # header + one slot
        assert lines[0].split(",") == TRACE_COLUMNS
        assert len(lines[1].split(",")) == 21
        parsed = read_trace(str(path))
        assert parsed["slot"] == [0]
        assert parsed["alpha"][0] == pytest.approx(0.6)

    def test_trace_round_trip_is_exact(self, tmp_path):
        from secure_isac.engine import run_simulation
        from secure_isac.config import ScenarioConfig
        cfg = ScenarioConfig()
        cfg.hn.count = 6
        cfg.eve.count = 2
        cfg.run.slots = 3
        result = run_simulation(cfg, StrategyId.IBEAMS)
        path = tmp_path / "t.csv"
        write_trace(result.traces[0], str(path))
        parsed = read_trace(str(path))
        for col in TRACE_COLUMNS:
            for rec, got in zip(result.traces[0], parsed[col]):
                assert got == getattr(rec, col)  # exact IEEE round trip

    def test_deterministic_outputs(self, tmp_path):
        code1, out1 = run_cli(tmp_path / "a", "--strategy", "ibeams",
                              "--emit", "trace,summary,beliefs,field")
        code2, out2 = run_cli(tmp_path / "b", "--strategy", "ibeams",
                              "--emit", "trace,summary,beliefs,field")
        assert code1 == code2 == 0
        for name in ("trace_ibeams.csv", "summary_ibeams.tsv",
                     "beliefs_eve0.txt", "jamming_field.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_compare_writes_five_rows(self, tmp_path):
        code, out = run_cli(tmp_path, "--compare", "--slots", "2")
        assert code == 0
        lines = (out / "summary_compare.tsv").read_text().strip().split("\n")
        assert len(lines) == 6  # header + five strategies
        strategies = [line.split("\t")[0] for line in lines[1:]]
        assert strategies == [s.value for s in StrategyId]

    def test_validation_error_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[gne]\ntolerance = -5\n")
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_emit_exit_code(self, tmp_path):
        assert main(["--emit", "sparkles", "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_uses_defaults(self, tmp_path):
        out = tmp_path / "o"
        code = main(["--out", str(out), "--strategy", "baseline", "--slots", "1",
                     "--emit", "summary"])
        assert code == 0
        assert (out / "summary_baseline.tsv").exists()

    def test_heatmap_rows_normalized(self, tmp_path):
        code, out = run_cli(tmp_path, "--strategy", "ibeams", "--emit", "beliefs")
        assert code == 0
        lines = (out / "beliefs_eve0.txt").read_text().strip().split("\n")
        data_rows = [np.array([float(x) for x in line.split()])
                     for line in lines[2:]]
        assert len(data_rows) == 3
        for row in data_rows:
            assert row.shape[0] == 181
            assert row.sum() == pytest.approx(1.0, abs=1e-6)

    def test_beampattern_peak_zero_db(self, tmp_path):
        code, out = run_cli(tmp_path, "--strategy", "ibeams", "--emit", "beampattern")
        assert code == 0
        lines = (out / "beampattern.txt").read_text().strip().split("\n")[1:]
        gains = np.array([float(line.split()[1]) for line in lines])
        assert gains.max() == pytest.approx(0.0, abs=1e-9)
