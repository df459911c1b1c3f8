import os
import subprocess
import sys

import numpy as np
import pytest

from uxrate import cli
from uxrate.experiment import (
    BLER_STREAM,
    CHANNEL_STREAM,
    ChannelConfig,
    ExperimentConfig,
    build_environment,
    config_from_dict,
    load_config,
    run_single,
    run_sweep,
    save_config,
    stream_rng,
)
from uxrate.metrics import read_cell_reports


def small_config(**overrides):
    base = dict(
        schemes=["prague"],
        n_ue_values=[1],
        seeds=[0],
        duration_s=20.0,
        channel=ChannelConfig(mean_mbps=30.0, position_spread_db=0.0),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfigValidation:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert len(cfg.schemes) == 8
        assert cfg.n_ue_values == list(range(1, 11))

    def test_short_duration_rejected(self):
        with pytest.raises(ValueError, match="20 seconds"):
            ExperimentConfig(duration_s=10.0)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError, match="unknown scheme"):
            ExperimentConfig(schemes=["bbr"])

    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            ExperimentConfig(seeds=[1, 1])

    def test_warmup_must_fit(self):
        with pytest.raises(ValueError, match="warmup"):
            ExperimentConfig(duration_s=20.0, warmup_ms=20_000.0)

    def test_scene_lengths_checked(self):
        with pytest.raises(ValueError, match="scene_mean_ms"):
            ExperimentConfig(scene_mean_ms=400.0, scene_min_ms=500.0)

    def test_channel_validation(self):
        with pytest.raises(ValueError, match="mean_mbps"):
            ChannelConfig(mean_mbps=0.0)


class TestConfigSerialization:
    def test_yaml_round_trip(self, tmp_path):
        cfg = small_config(seeds=[3, 4], gamma_db=36.0)
        path = tmp_path / "exp.yaml"
        save_config(path, cfg)
        back = load_config(path)
        assert back.to_dict() == cfg.to_dict()

    def test_unknown_top_level_key(self):
        with pytest.raises(ValueError, match="unknown option"):
            config_from_dict({"duration_sec": 30})

    def test_unknown_section_key(self):
        with pytest.raises(ValueError, match="channel: unknown"):
            config_from_dict({"channel": {"mean": 10}})

    def test_non_mapping_root(self):
        with pytest.raises(ValueError, match="mapping"):
            config_from_dict([1, 2])

    def test_partial_yaml_fills_defaults(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("schemes: [prague]\nn_ue_values: [2]\n")
        cfg = load_config(path)
        assert cfg.schemes == ["prague"]
        assert cfg.duration_s == 30.0
        assert cfg.control.util_target == 0.9


class TestRngStreams:
    def test_streams_reproducible(self):
        a = stream_rng(42, CHANNEL_STREAM, 3).random(8)
        b = stream_rng(42, CHANNEL_STREAM, 3).random(8)
        assert np.array_equal(a, b)

    def test_streams_independent(self):
        a = stream_rng(42, CHANNEL_STREAM, 0).random(8)
        b = stream_rng(42, CHANNEL_STREAM, 1).random(8)
        c = stream_rng(42, BLER_STREAM, 0).random(8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestBuildEnvironment:
    def test_deterministic_and_scheme_free(self):
        cfg = small_config()
        src_a, tr_a, gam_a = build_environment(cfg, 2, 7)
        src_b, tr_b, gam_b = build_environment(cfg, 2, 7)
        assert gam_a == gam_b == [35.0, 35.0]
        for ta, tb in zip(tr_a, tr_b):
            assert np.array_equal(ta.slot_bits, tb.slot_bits)
        for sa, sb in zip(src_a, src_b):
            assert sa.schedule.switch_times() == sb.schedule.switch_times()

    def test_seeds_differ(self):
        cfg = small_config()
        _, tr_a, _ = build_environment(cfg, 1, 0)
        _, tr_b, _ = build_environment(cfg, 1, 1)
        assert not np.array_equal(tr_a[0].slot_bits, tr_b[0].slot_bits)

    def test_position_spread_shifts_means(self):
        cfg = small_config(
            channel=ChannelConfig(mean_mbps=30.0, position_spread_db=6.0))
        _, traces, _ = build_environment(cfg, 4, 3)
        means = [float(np.mean(t.slot_bits)) * 4 / (0.5 * 1000)
                 for t in traces]
        assert max(means) / min(means) > 1.2

    def test_trace_dir_ingestion(self, tmp_path):
        from uxrate.channel import synth_trace, write_trace
        for ue in range(2):
            trace = synth_trace(ue, 40_000, 20.0, ue_id=ue)
            write_trace(trace, tmp_path / f"ue{ue}.txt")
        cfg = small_config(
            channel=ChannelConfig(trace_dir=str(tmp_path)))
        _, traces, _ = build_environment(cfg, 2, 0)
        assert traces[0].n_slots == 40_000
        with pytest.raises(ValueError, match="No such file|ue2"):
            build_environment(cfg, 3, 0)


class TestRunSingle:
    def test_deterministic_reports(self):
        cfg = small_config(schemes=["maxcap-central"])
        a = run_single(cfg, "maxcap-central", 2, 0)
        b = run_single(cfg, "maxcap-central", 2, 0)
        assert a.csv_values() == b.csv_values()
        assert a.constraint_utils == b.constraint_utils

    def test_single_ue_abundant_capacity_fully_satisfied(self):
        cfg = small_config(
            schemes=["maxcap-central"],
            channel=ChannelConfig(mean_mbps=300.0, position_spread_db=0.0,
                                  envelope_amplitude=0.1,
                                  shadow_sigma_db=1.0))
        rep = run_single(cfg, "maxcap-central", 1, 0)
        assert rep.satisfaction_ratio == 1.0
        assert rep.min_psnr_p5 >= 35.0
        assert rep.constraint_utils
        assert max(u for _, u in rep.constraint_utils) <= 0.92

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError, match="unknown scheme"):
            run_single(small_config(), "reno", 1, 0)


class TestRunSweep:
    def test_grid_files_and_cardinality(self, tmp_path):
        cfg = small_config(schemes=["prague", "rtt-baseline"],
                           n_ue_values=[1, 2], seeds=[0, 1])
        out = tmp_path / "sweep"
        reports, rows = run_sweep(cfg, out, log=None)
        assert len(reports) == 8
        assert len(rows) == 4
        assert (out / "cell_report.csv").exists()
        assert (out / "capacity.csv").exists()
        assert (out / "manifest.json").exists()
        back = read_cell_reports(out / "cell_report.csv")
        assert len(back) == 8
        keys = {(r.scheme, r.n_ue, r.seed) for r in back}
        assert ("prague", 2, 1) in keys
        assert ("rtt-baseline", 1, 0) in keys

    def test_resume_completes_missing_cells(self, tmp_path):
        cfg = small_config(seeds=[0, 1, 2])
        out = tmp_path / "sweep"
        run_sweep(cfg, out, log=None)
        full = (out / "cell_report.csv").read_text()
        # drop the last two rows to fake an interrupted sweep
        lines = full.splitlines()
        (out / "cell_report.csv").write_text("\n".join(lines[:-2]) + "\n")
        calls = []
        run_sweep(cfg, out, resume=True, log=calls.append)
        assert len(calls) == 2  # only the missing cells were simulated
        assert (out / "cell_report.csv").read_text() == full

    def test_resume_rejects_changed_config(self, tmp_path):
        out = tmp_path / "sweep"
        run_sweep(small_config(), out, log=None)
        changed = small_config(gamma_db=36.0)
        with pytest.raises(ValueError, match="different"):
            run_sweep(changed, out, resume=True, log=None)


class TestCli:
    def write_config(self, tmp_path, **overrides):
        path = tmp_path / "exp.yaml"
        save_config(path, small_config(**overrides))
        return str(path)

    def test_validate_ok(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        assert cli.main(["validate", "--config", path]) == 0
        assert "config ok" in capsys.readouterr().out

    def test_validate_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("duration_s: 5\n")
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "invalid config" in capsys.readouterr().err

    def test_run_writes_report_and_events(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        out = tmp_path / "run_out"
        code = cli.main(["run", "--config", path, "--scheme", "prague",
                         "--n-ue", "1", "--seed", "0", "--out", str(out),
                         "--verbose"])
        assert code == 0
        assert "satisfied=" in capsys.readouterr().out
        assert (out / "cell_report.csv").exists()
        events = (out / "events.log").read_text()
        assert "deliver" in events

    def test_sweep_and_report(self, tmp_path, capsys):
        path = self.write_config(tmp_path, seeds=[0, 1])
        out = tmp_path / "sweep_out"
        assert cli.main(["sweep", "--config", path, "--out", str(out),
                         "--quiet"]) == 0
        capsys.readouterr()
        assert cli.main(["report", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "mean_ratio" in text
        assert "ux capacity prague:" in text

    def test_report_missing_dir(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path / "nope")]) == 1

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "uxrate.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "sweep" in proc.stdout
