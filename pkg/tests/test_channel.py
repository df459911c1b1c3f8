import numpy as np
import pytest

from uxrate.channel import (CapacityTrace, estimate_capacity, ingest_trace,
                            is_downlink_slot, is_uplink_slot,
                            next_uplink_start_ms, slot_type, synth_trace,
                            write_trace)


class TestTddPattern:
    def test_slot_types(self):
        assert [slot_type(i) for i in range(10)] == list("DDDSUDDDSU")

    def test_downlink_uplink_flags(self):
        downlink = [i for i in range(10) if is_downlink_slot(i)]
        uplink = [i for i in range(10) if is_uplink_slot(i)]
        assert downlink == [0, 1, 2, 5, 6, 7]
        assert uplink == [4, 9]

    def test_next_uplink_start(self):
        assert next_uplink_start_ms(0.0) == 2.0
        assert next_uplink_start_ms(1.5) == 2.0
        assert next_uplink_start_ms(2.0) == 2.0
        assert next_uplink_start_ms(2.01) == 4.5


class TestCapacityTrace:
    def test_validation(self):
        with pytest.raises(ValueError):
            CapacityTrace(0, [])
        with pytest.raises(ValueError):
            CapacityTrace(0, [[1.0, 2.0]])
        with pytest.raises(ValueError):
            CapacityTrace(0, [100.0, -1.0])
        with pytest.raises(ValueError):
            CapacityTrace(0, [100.0], slot_ms=0.0)
        with pytest.raises(ValueError):
            CapacityTrace(0, [100.0], rbgs_per_slot=0)

    def test_duration(self):
        trace = CapacityTrace(3, [10.0] * 20)
        assert trace.n_slots == 20
        assert trace.duration_ms == 10.0


class TestSynthTrace:
    def test_deterministic(self):
        a = synth_trace(42, 5000, 30.0)
        b = synth_trace(42, 5000, 30.0)
        assert np.array_equal(a.slot_bits, b.slot_bits)
        c = synth_trace(43, 5000, 30.0)
        assert not np.array_equal(a.slot_bits, c.slot_bits)

    def test_flat_fade_arithmetic(self):
        # fade forced to 1: 16 Mbps over 0.5 ms split across 4 RBGs
        trace = synth_trace(7, 100, 16.0, envelope_amplitude=0.0,
                            shadow_sigma_db=0.0)
        assert np.all(trace.slot_bits == 2000.0)

    def test_long_run_mean(self):
        for seed in (0, 5, 99):
            trace = synth_trace(seed, 100_000, 50.0)
            mean_mbps = trace.slot_bits.mean() * 4 / (0.5 * 1000.0)
            assert abs(mean_mbps - 50.0) / 50.0 < 0.05

    def test_positive_and_smooth(self):
        trace = synth_trace(3, 60_000, 50.0)
        assert np.all(trace.slot_bits > 0.0)
        step = np.abs(np.diff(trace.slot_bits)) / trace.slot_bits[:-1]
        assert step.max() < 0.005

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            synth_trace(1, 0, 50.0)
        with pytest.raises(ValueError):
            synth_trace(1, 10, -1.0)
        with pytest.raises(ValueError):
            synth_trace(1, 10, 50.0, doppler_period_ms=0.0)
        with pytest.raises(ValueError):
            synth_trace(1, 10, 50.0, envelope_amplitude=1.0)
        with pytest.raises(ValueError):
            synth_trace(1, 10, 50.0, shadow_sigma_db=-0.1)


class TestEstimateCapacity:
    def test_full_tdd_cycle(self):
        # 2500 bits/RBG, 3 of 5 slots downlink: 2500*4*3 bits in 2.5 ms
        trace = CapacityTrace(0, [2500.0] * 10)
        assert estimate_capacity(trace, 2.5, 2.5) == 12.0

    def test_single_downlink_slot(self):
        trace = CapacityTrace(0, [2500.0] * 10)
        assert estimate_capacity(trace, 0.5, 0.5) == 20.0

    def test_all_zero(self):
        trace = CapacityTrace(0, [0.0] * 10)
        assert estimate_capacity(trace, 2.5, 2.5) == 0.0

    def test_linearity(self):
        base = synth_trace(9, 200, 40.0)
        scaled = CapacityTrace(0, base.slot_bits * 3.0)
        est = estimate_capacity(base, 50.0, 32.5)
        assert estimate_capacity(scaled, 50.0, 32.5) == pytest.approx(
            3.0 * est, rel=1e-12)

    def test_full_run_conservation(self):
        trace = synth_trace(3, 2000, 40.0)
        est = estimate_capacity(trace, trace.duration_ms, trace.duration_ms)
        idx = np.arange(trace.n_slots)
        deliverable = trace.slot_bits[idx % 5 < 3].sum() * 4
        assert est == pytest.approx(
            deliverable / (trace.duration_ms * 1000.0), rel=1e-12)

    def test_window_without_downlink_slot(self):
        trace = CapacityTrace(0, [2500.0] * 10)
        # slots 3 (S) and 4 (U) only
        with pytest.raises(ValueError):
            estimate_capacity(trace, 2.5, 1.0)

    def test_window_without_complete_slot(self):
        trace = CapacityTrace(0, [2500.0] * 10)
        with pytest.raises(ValueError):
            estimate_capacity(trace, 0.4, 0.3)

    def test_window_clamped_to_trace(self):
        trace = CapacityTrace(0, [2500.0] * 5)
        # slots outside the recorded trace count as zero capacity, the
        # requested window duration still divides
        assert estimate_capacity(trace, 5.0, 5.0) == 6.0


class TestTraceFiles:
    def test_round_trip(self, tmp_path):
        trace = synth_trace(5, 300, 25.0, ue_id=4)
        path = tmp_path / "trace.txt"
        write_trace(trace, path)
        back = ingest_trace(path)
        assert back.ue_id == 4
        assert back.slot_ms == 0.5
        assert back.rbgs_per_slot == 4
        assert back.n_slots == 300
        assert np.allclose(back.slot_bits, trace.slot_bits, atol=5e-7)

    def test_min_slots_enforced(self, tmp_path):
        path = tmp_path / "trace.txt"
        write_trace(synth_trace(1, 50, 25.0), path)
        assert ingest_trace(path, min_slots=50).n_slots == 50
        with pytest.raises(ValueError, match="needs 51"):
            ingest_trace(path, min_slots=51)

    HEADER = "ue_id 0\nslot_duration_ms 0.5\nrbgs_per_slot 4\n"

    @pytest.mark.parametrize("text,lineno", [
        (HEADER + "1000\n-5\n", 5),
        (HEADER + "1000\nabc\n", 5),
        (HEADER + "1000 2000\n", 4),
        ("ue_id 0\nslot_duration_ms 0.5\n1000\n", 3),
        (HEADER + "ue_id 1\n", 4),
        (HEADER + "1000\nue_id 1\n", 5),
        ("ue_id\n", 1),
    ])
    def test_errors_carry_line_numbers(self, tmp_path, text, lineno):
        path = tmp_path / "trace.txt"
        path.write_text(text)
        with pytest.raises(ValueError, match=f":{lineno}:"):
            ingest_trace(path)

    def test_empty_and_headers_only(self, tmp_path):
        path = tmp_path / "trace.txt"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            ingest_trace(path)
        path.write_text(self.HEADER)
        with pytest.raises(ValueError, match="no capacity values"):
            ingest_trace(path)
