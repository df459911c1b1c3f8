"""Slot-level downlink radio engine.

Frames arrive into per-UE queues, a proportional-fair scheduler (plain
or satisfaction-weighted) assigns the slot's RBGs, transmissions fail
at the configured block error rate and retry after a fixed delay, and
delivered frames drive display, RTT and ECN feedback.  The engine is
deterministic given (inputs, rng streams) and keeps integer bit
accounting so conservation checks are exact.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .channel import SLOT_MS, estimate_capacity, next_uplink_start_ms
from .controllers import satisfaction_factor

__all__ = [
    "RadioConfig",
    "pf_metric",
    "ux_pf_metric",
    "ecn_mark_probability",
    "measure_rtt",
    "detect_stalls",
    "draw_bler_table",
    "RunLog",
    "CellSimulator",
]


@dataclass
class RadioConfig:
    slot_ms: float = SLOT_MS
    rbgs_per_slot: int = 4
    bler: float = 0.10
    harq_delay_slots: int = 4
    ecn_low_ms: float = 4.0
    ecn_high_ms: float = 17.0
    packet_bits: int = 12000
    ewma_tau_ms: float = 100.0
    r_avg_floor_mbps: float = 0.01
    backhaul_ms: float = 1.0
    decode_ms: float = 1.0
    display_deadline_ms: float = 20.0
    # recompute scheduling metrics after every RBG grant (False scores
    # each UE once per slot)
    per_rbg_metrics: bool = True

    def __post_init__(self):
        if not 0.0 <= self.bler < 1.0:
            raise ValueError("bler must be in [0, 1)")
        if self.ecn_low_ms >= self.ecn_high_ms:
            raise ValueError("ecn_low_ms must be below ecn_high_ms")
        if self.harq_delay_slots < 1:
            raise ValueError("harq_delay_slots must be >= 1")


def pf_metric(r_inst_mbps, r_avg_mbps):
    """Proportional-fair score: instantaneous over average throughput."""
    return r_inst_mbps / max(r_avg_mbps, 1e-12)


def ux_pf_metric(r_inst_mbps, r_avg_mbps, s_factor):
    """PF score discounted by reported satisfaction; a fully satisfied
    UE scores 0 and an unsatisfied one scores plain PF."""
    return pf_metric(r_inst_mbps, r_avg_mbps) * (1.0 - s_factor)


def ecn_mark_probability(delay_ms, low_ms=4.0, high_ms=17.0):
    """Linear marking ramp on queueing delay: 0 at or below low_ms, 1 at
    or above high_ms."""
    if delay_ms <= low_ms:
        return 0.0
    if delay_ms >= high_ms:
        return 1.0
    return (delay_ms - low_ms) / (high_ms - low_ms)


def measure_rtt(t_generated, t_delivered, backhaul_ms=1.0, slot_ms=SLOT_MS):
    """Round-trip time of a delivered frame: downlink latency plus the
    wait for the next uplink slot and the uplink backhaul."""
    wait = next_uplink_start_ms(t_delivered, slot_ms) - t_delivered
    return (t_delivered - t_generated) + wait + backhaul_ms


def detect_stalls(display_times_ms, fps, tol_ms=1.0):
    """Find playback stalls in a sorted display-time sequence.

    A gap between consecutive displayed frames longer than the frame
    period plus tol_ms is a stall of (gap - period), starting one
    period after the earlier frame.  Returns (start_ms, duration_ms)
    pairs.
    """
    period = 1000.0 / fps
    stalls = []
    for prev, cur in zip(display_times_ms, display_times_ms[1:]):
        gap = cur - prev
        if gap > period + tol_ms:
            stalls.append((prev + period, gap - period))
    return stalls


def draw_bler_table(rng, n_slots, rbgs_per_slot=4, bler=0.10):
    """Pre-draw per-(slot, RBG) transmission failures so the error
    pattern is identical across schemes sharing a seed."""
    rng = np.random.default_rng(rng)
    return rng.random((n_slots, rbgs_per_slot)) < bler


class _UeState:
    __slots__ = ("queue", "arrivals", "pending_display", "remaining",
                 "r_avg", "s_factor", "last_display", "generated_bits",
                 "delivered_bits", "packet_cum", "frames", "displays",
                 "rtt_log", "rtt_events", "psnr_events", "mark_events",
                 "marked_total", "unmarked_total")

    def __init__(self):
        self.queue = deque()            # [frame, bits_left, t_enqueued]
        self.arrivals = deque()         # frames past encode+backhaul
        self.pending_display = deque()  # frames awaiting in-order display
        self.remaining = {}             # frame -> undelivered bits
        self.r_avg = 0.0
        self.s_factor = 0.0
        self.last_display = -math.inf
        self.generated_bits = 0
        self.delivered_bits = 0
        self.packet_cum = 0             # delivered bits, for packet edges
        self.frames = []
        self.displays = []              # (t_displayed, psnr)
        self.rtt_log = []               # (t_feedback, rtt_ms)
        self.rtt_events = deque()       # pending feedback for controllers
        self.psnr_events = deque()      # (t_feedback, psnr) for ott-ux
        self.mark_events = deque()      # (t_feedback, unmarked, marked)
        self.marked_total = 0
        self.unmarked_total = 0


class RunLog:
    """Raw per-run outputs consumed by the metrics layer."""

    __slots__ = ("scheme", "n_ue", "duration_ms", "slot_ms", "fps",
                 "frames", "displays", "rtt_log", "generated_bits",
                 "delivered_bits", "leftover_bits", "occupied_rbgs",
                 "available_rbgs", "rate_log", "marked_total",
                 "unmarked_total")

    def __init__(self, **kw):
        for key, value in kw.items():
            setattr(self, key, value)

    @property
    def utilization(self):
        if self.available_rbgs == 0:
            return 0.0
        return self.occupied_rbgs / self.available_rbgs


class CellSimulator:
    """One cell, one scheme, one run.

    sources and traces are parallel per-UE lists; controller is the
    scheme's controller object (or None to leave source rates fixed).
    bler_table can be passed explicitly for forced-outcome tests,
    otherwise it is drawn from bler_rng.
    """

    def __init__(self, scheme, sources, traces, controller,
                 ctl_cfg, radio_cfg=None, duration_ms=30_000.0,
                 bler_rng=None, ecn_rng=None, bler_table=None,
                 gammas=None, force_zero_satisfaction=False,
                 event_sink=None):
        self.scheme = scheme
        self.sources = sources
        self.traces = traces
        self.controller = controller
        self.ctl_cfg = ctl_cfg
        self.radio_cfg = radio_cfg if radio_cfg is not None else RadioConfig()
        self.duration_ms = float(duration_ms)
        self.gammas = list(gammas) if gammas is not None \
            else [ctl_cfg.psnr_target_db] * len(sources)
        self.force_zero_satisfaction = force_zero_satisfaction
        self.event_sink = event_sink

        n_slots = int(round(self.duration_ms / self.radio_cfg.slot_ms))
        for trace in traces:
            if trace.n_slots < n_slots:
                raise ValueError(
                    f"trace for ue {trace.ue_id} has {trace.n_slots} slots, "
                    f"run needs {n_slots}")
        self.n_slots = n_slots
        if bler_table is None:
            bler_table = draw_bler_table(bler_rng, n_slots,
                                         self.radio_cfg.rbgs_per_slot,
                                         self.radio_cfg.bler)
        self.bler_table = bler_table
        self.ecn_rng = np.random.default_rng(ecn_rng)

    def run(self) -> RunLog:
        cfg = self.radio_cfg
        ctl_cfg = self.ctl_cfg
        scheme = self.scheme
        sources = self.sources
        n_ue = len(sources)
        n_slots = self.n_slots
        slot_ms = cfg.slot_ms
        rbgs = cfg.rbgs_per_slot
        alpha = slot_ms / cfg.ewma_tau_ms
        one_minus_alpha = 1.0 - alpha
        r_floor = cfg.r_avg_floor_mbps
        pkt_bits = cfg.packet_bits
        ecn_low, ecn_span = cfg.ecn_low_ms, cfg.ecn_high_ms - cfg.ecn_low_ms
        decode_ms = cfg.decode_ms
        backhaul = cfg.backhaul_ms
        deadline = cfg.display_deadline_ms
        per_rbg = cfg.per_rbg_metrics
        ux_sched = scheme == "ux-pf"
        ecn_random = self.ecn_rng.random
        events = self.event_sink

        # integer bits per RBG keep the run's bit ledger exact
        tr_bits = [[int(b) for b in t.slot_bits[:n_slots]]
                   for t in self.traces]
        bler_rows = [list(map(bool, row)) for row in self.bler_table]

        # slots-per-tick cadences; every period is a slot multiple
        def cadence(period_ms):
            k = int(round(period_ms / slot_ms))
            if k < 1 or abs(k * slot_ms - period_ms) > 1e-9:
                raise ValueError(
                    f"controller period {period_ms} ms is not a whole "
                    f"number of {slot_ms} ms slots")
            return k

        # the controller object declares its feedback family; the scheduler
        # choice stays a property of the scheme name, so the same controller
        # can drive either scheduler in reduction tests
        ctl = self.controller
        family = getattr(ctl, "kind", None) if ctl is not None else None
        if family in ("central", "assisted", "uxabr"):
            ctl_every = cadence(ctl_cfg.control_period_ms)
        elif family in ("rtt", "ott"):
            ctl_every = cadence(ctl_cfg.rtt_period_ms)
        elif family == "prague":
            ctl_every = cadence(ctl_cfg.prague_period_ms)
        else:
            ctl_every = 0
        qoe_every = cadence(ctl_cfg.control_period_ms) if ux_sched else 0

        ues = [_UeState() for _ in range(n_ue)]
        for n, ue in enumerate(ues):
            ue.r_avg = max(r_floor, tr_bits[n][0] * rbgs / (slot_ms * 1000.0))

        harq_buckets = [[] for _ in range(n_slots + cfg.harq_delay_slots + 1)]
        harq_delay = cfg.harq_delay_slots
        occupied = 0
        available = 0
        rate_log = []
        rtt_window = ctl_cfg.rtt_window_ms

        for s in range(n_slots):
            t0 = s * slot_ms
            t1 = t0 + slot_ms

            # 1. controller ticks scheduled at this slot boundary
            if ctl_every and s and s % ctl_every == 0:
                rates = self._controller_tick(family, t0, ues)
                for n, rate in enumerate(rates):
                    sources[n].rate_mbps = rate
                rate_log.append((t0, rates))
                if events is not None:
                    events.append((t0, -1, "rates",
                                   " ".join(f"{r:.3f}" for r in rates)))
            if qoe_every and s and s % qoe_every == 0 \
                    and not self.force_zero_satisfaction:
                for n, ue in enumerate(ues):
                    curve = sources[n].schedule.active_at(t0).curve
                    ue.s_factor = satisfaction_factor(
                        ue.r_avg, curve, self.gammas[n],
                        ctl_cfg.satisfaction_temp)

            # 2. failed transmissions re-enter at the head of the queue
            bucket = harq_buckets[s]
            if bucket:
                for n, frame, bits, enq in reversed(bucket):
                    ues[n].queue.appendleft([frame, bits, enq])
                    if events is not None:
                        events.append((t0, n, "harq", f"{bits}b"))
                bucket.clear()

            # 3. frame generation and queue arrivals
            for n, ue in enumerate(ues):
                src = sources[n]
                if src.next_frame_time() < t1:
                    for frame in src.frames_until(t1):
                        frame.t_enqueued = frame.t_encoded + backhaul
                        ue.arrivals.append(frame)
                        ue.frames.append(frame)
                arr = ue.arrivals
                while arr and arr[0].t_enqueued <= t0 + 1e-9:
                    frame = arr.popleft()
                    size = frame.size_bits
                    ue.queue.append([frame, size, frame.t_enqueued])
                    ue.remaining[frame] = size
                    ue.pending_display.append(frame)
                    ue.generated_bits += size

            # 4. downlink scheduling
            granted = [0] * n_ue
            success_bits = [0] * n_ue
            if s % 5 < 3:
                available += rbgs
                bler_row = bler_rows[s]
                metrics = None
                if not per_rbg:
                    metrics = []
                    for n, ue in enumerate(ues):
                        r_inst = tr_bits[n][s] * rbgs / (slot_ms * 1000.0)
                        m = r_inst / max(ue.r_avg, 1e-12)
                        if ux_sched:
                            m *= 1.0 - ue.s_factor
                        metrics.append(m)
                for rbg in range(rbgs):
                    best = -1
                    best_metric = -1.0
                    for n, ue in enumerate(ues):
                        if not ue.queue:
                            continue
                        if per_rbg:
                            prov = one_minus_alpha * ue.r_avg + alpha * (
                                granted[n] / (slot_ms * 1000.0))
                            r_inst = tr_bits[n][s] * rbgs / (slot_ms * 1000.0)
                            m = r_inst / max(prov, 1e-12)
                            if ux_sched:
                                m *= 1.0 - ue.s_factor
                        else:
                            m = metrics[n]
                        if m > best_metric:
                            best_metric = m
                            best = n
                    if best < 0:
                        break
                    ue = ues[best]
                    cap = tr_bits[best][s]
                    segs = []
                    queue = ue.queue
                    left = cap
                    while left > 0 and queue:
                        chunk = queue[0]
                        take = chunk[1] if chunk[1] <= left else left
                        chunk[1] -= take
                        left -= take
                        segs.append((chunk[0], take, chunk[2]))
                        if chunk[1] == 0:
                            queue.popleft()
                    served = cap - left
                    if served == 0:
                        continue
                    occupied += 1
                    granted[best] += served
                    if bler_row[rbg]:
                        target = harq_buckets[s + harq_delay]
                        for frame, bits, enq in segs:
                            target.append((best, frame, bits, enq))
                        continue
                    success_bits[best] += served
                    remaining = ue.remaining
                    for frame, bits, enq in segs:
                        ue.delivered_bits += bits
                        before = ue.packet_cum // pkt_bits
                        ue.packet_cum += bits
                        n_pkts = ue.packet_cum // pkt_bits - before
                        if n_pkts:
                            delay = t1 - enq
                            if delay <= ecn_low:
                                p = 0.0
                            elif delay >= ecn_low + ecn_span:
                                p = 1.0
                            else:
                                p = (delay - ecn_low) / ecn_span
                            marked = 0
                            for _ in range(n_pkts):
                                if ecn_random() < p:
                                    marked += 1
                            if marked or n_pkts > marked:
                                ue.mark_events.append(
                                    (next_uplink_start_ms(t1, slot_ms)
                                     + backhaul, n_pkts - marked, marked))
                            ue.marked_total += marked
                            ue.unmarked_total += n_pkts - marked
                        left_f = remaining[frame] - bits
                        if left_f > 0:
                            remaining[frame] = left_f
                            continue
                        del remaining[frame]
                        frame.t_delivered = t1
                        uplink = next_uplink_start_ms(t1, slot_ms)
                        rtt = (t1 - frame.t_generated) + (uplink - t1) + backhaul
                        ue.rtt_log.append((uplink + backhaul, rtt))
                        ue.rtt_events.append((uplink + backhaul, rtt))
                        if events is not None:
                            events.append((t1, best, "deliver",
                                           f"frame={frame.index} rtt={rtt:.3f}"))

            # 5. slot-end bookkeeping: throughput average and display
            for n, ue in enumerate(ues):
                r_slot = success_bits[n] / (slot_ms * 1000.0)
                ue.r_avg = max(r_floor,
                               one_minus_alpha * ue.r_avg + alpha * r_slot)
                pend = ue.pending_display
                while pend:
                    frame = pend[0]
                    if frame.t_delivered is not None:
                        cand = frame.t_delivered + decode_ms
                        if cand < ue.last_display:
                            cand = ue.last_display
                        if cand <= frame.t_generated + deadline + 1e-9:
                            frame.t_displayed = cand
                            ue.last_display = cand
                            ue.displays.append((cand, frame.encode_psnr))
                            ue.psnr_events.append(
                                (next_uplink_start_ms(cand, slot_ms)
                                 + backhaul, frame.encode_psnr))
                            if events is not None:
                                events.append((t1, n, "display",
                                               f"frame={frame.index}"))
                        elif events is not None:
                            events.append((t1, n, "skip",
                                           f"frame={frame.index}"))
                        pend.popleft()
                    elif t1 > frame.t_generated + deadline:
                        # cannot make its deadline any more; skip it but
                        # let the radio finish delivering the bits
                        if events is not None:
                            events.append((t1, n, "skip",
                                           f"frame={frame.index}"))
                        pend.popleft()
                    else:
                        break

        leftover = []
        for n, ue in enumerate(ues):
            in_queue = sum(chunk[1] for chunk in ue.queue)
            in_harq = sum(bits for bucket in harq_buckets
                          for u, _, bits, _ in bucket if u == n)
            in_buffer = sum(f.size_bits for f in ue.arrivals)
            leftover.append(in_queue + in_harq + in_buffer)

        return RunLog(
            scheme=scheme,
            n_ue=n_ue,
            duration_ms=self.duration_ms,
            slot_ms=slot_ms,
            fps=sources[0].fps if sources else 60,
            frames=[ue.frames for ue in ues],
            displays=[ue.displays for ue in ues],
            rtt_log=[ue.rtt_log for ue in ues],
            generated_bits=[ue.generated_bits for ue in ues],
            delivered_bits=[ue.delivered_bits for ue in ues],
            leftover_bits=leftover,
            occupied_rbgs=occupied,
            available_rbgs=available,
            rate_log=rate_log,
            marked_total=[ue.marked_total for ue in ues],
            unmarked_total=[ue.unmarked_total for ue in ues],
        )

    def _controller_tick(self, family, now_ms, ues):
        ctl_cfg = self.ctl_cfg
        if family in ("central", "assisted"):
            period = ctl_cfg.control_period_ms
            rcfg = self.radio_cfg
            # every frame tail only partially fills its last RBG, so the
            # cell loses about half an RBG of payload per source frame;
            # deduct that padding from the capacity feed so the share
            # budget tracks grant occupancy instead of raw bits
            frames_per_s = sum(src.fps for src in self.sources)
            dl_fraction = 3.0 / 5.0  # DDDSU
            caps = []
            curves = []
            for n, trace in enumerate(self.traces):
                est = estimate_capacity(trace, now_ms, period)
                rbg_bits = (est * rcfg.slot_ms * 1000.0
                            / (dl_fraction * rcfg.rbgs_per_slot))
                pad_mbps = frames_per_s * rbg_bits * 0.5 * 1e-6
                caps.append(max(1e-6,
                                (1.0 - rcfg.bler) * (est - pad_mbps)))
                curves.append(self.sources[n].schedule.active_at(now_ms).curve)
            return self.controller.tick(curves, caps)
        if family == "rtt":
            rtts = [self._window_mean(ue.rtt_events, now_ms) for ue in ues]
            return self.controller.tick(rtts)
        if family == "ott":
            rtts = [self._window_mean(ue.rtt_events, now_ms) for ue in ues]
            psnrs = [self._window_mean(ue.psnr_events, now_ms) for ue in ues]
            return self.controller.tick(rtts, psnrs)
        if family == "uxabr":
            # scheduled-throughput average plus the sender backlog as the
            # time it would take to drain at that share (Mbps = bits/ms/1000)
            shares = [max(ue.r_avg, 1e-6) for ue in ues]
            backlogs = [sum(chunk[1] for chunk in ue.queue) / (sh * 1000.0)
                        for ue, sh in zip(ues, shares)]
            return self.controller.tick(shares, backlogs)
        # prague: consume everything acknowledged since the last tick
        feedbacks = []
        for ue in ues:
            unmarked = marked = 0
            rtt_sum = 0.0
            rtt_count = 0
            marks = ue.mark_events
            while marks and marks[0][0] <= now_ms + 1e-9:
                _, u, m = marks.popleft()
                unmarked += u
                marked += m
            rtts = ue.rtt_events
            while rtts and rtts[0][0] <= now_ms + 1e-9:
                _, rtt = rtts.popleft()
                rtt_sum += rtt
                rtt_count += 1
            rtt_mean = rtt_sum / rtt_count if rtt_count else None
            feedbacks.append((unmarked, marked, False, rtt_mean))
        return self.controller.tick(now_ms, feedbacks)

    def _window_mean(self, events, now_ms):
        horizon = now_ms - self.ctl_cfg.rtt_window_ms
        while events and events[0][0] <= horizon + 1e-9:
            events.popleft()
        total = 0.0
        count = 0
        for t_fb, value in events:
            if t_fb <= now_ms + 1e-9:
                total += value
                count += 1
            else:
                break
        return total / count if count else None
