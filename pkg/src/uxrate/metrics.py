"""Run-level quality metrics and report artifacts.

Turns raw simulation logs into per-UE outcomes (time at target
quality, worst stall, satisfaction), per-cell reports, and aggregated
capacity curves with bootstrap confidence intervals.  All evaluation
happens over a window that skips the start-up ramp.
"""

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

from .channel import estimate_capacity
from .radio import detect_stalls

__all__ = [
    "UeOutcome",
    "CellReport",
    "CapacityRow",
    "psnr_segments",
    "time_fraction_at_or_above",
    "time_percentile",
    "max_stall_in_window",
    "ue_outcome",
    "cell_report",
    "constraint_utilization",
    "ux_capacity",
    "aggregate",
    "write_cell_reports",
    "read_cell_reports",
    "write_capacity_rows",
]

CELL_COLUMNS = ("scheme", "n_ue", "seed", "satisfaction_ratio",
                "min_psnr_p5", "utilization", "mean_rate")
CAPACITY_COLUMNS = ("scheme", "n_ue", "mean_ratio", "ci_lo", "ci_hi")


@dataclass
class UeOutcome:
    ue_id: int
    satisfied: bool
    psnr_fraction: float
    max_stall_ms: float
    psnr_p5_db: float
    mean_rate_mbps: float


@dataclass
class CellReport:
    scheme: str
    n_ue: int
    seed: int
    satisfaction_ratio: float
    min_psnr_p5: float
    utilization: float
    mean_rate: float
    outcomes: list = field(default=None, repr=False)
    constraint_utils: list = field(default=None, repr=False)

    def csv_values(self):
        return (self.scheme, str(self.n_ue), str(self.seed),
                f"{self.satisfaction_ratio:.6f}",
                f"{self.min_psnr_p5:.6f}",
                f"{self.utilization:.6f}",
                f"{self.mean_rate:.6f}")


@dataclass
class CapacityRow:
    scheme: str
    n_ue: int
    mean_ratio: float
    ci_lo: float
    ci_hi: float


def psnr_segments(displays, t_start, t_end, hold_ms=None):
    """Piecewise-constant viewed quality over [t_start, t_end).

    displays is a sorted (time_ms, psnr_db) sequence.  Quality is 0 dB
    until the first display.  Each displayed value persists until the
    next display; when hold_ms is given it only counts as watchable
    for that long, after which the timeline drops to 0 dB until the
    next display (a frozen frame stops being the advertised quality,
    mirroring the stall bookkeeping).  hold_ms=None holds values
    indefinitely.  Returns (duration_ms, psnr_db) pieces summing to
    the window length.
    """
    if t_end <= t_start:
        raise ValueError("evaluation window is empty")
    segments = []
    prev_t = t_start
    current = 0.0
    expire = None

    def lay(until):
        if until <= prev_t:
            return
        if expire is not None and expire < until:
            cut = min(max(expire, prev_t), until)
            if cut > prev_t:
                segments.append((cut - prev_t, current))
            segments.append((until - cut, 0.0))
        else:
            segments.append((until - prev_t, current))

    for t, psnr in displays:
        if t <= t_start:
            current = psnr
            expire = None if hold_ms is None else t + hold_ms
            continue
        if t >= t_end:
            break
        lay(t)
        current = psnr
        expire = None if hold_ms is None else t + hold_ms
        prev_t = t
    lay(t_end)
    return segments


def time_fraction_at_or_above(segments, threshold_db):
    """Fraction of window time at or above the quality threshold."""
    total = sum(d for d, _ in segments)
    if total <= 0.0:
        return 0.0
    good = sum(d for d, p in segments if p >= threshold_db - 1e-9)
    return good / total


def time_percentile(segments, percentile):
    """Time-weighted lower percentile of a piecewise-constant timeline."""
    total = sum(d for d, _ in segments)
    if total <= 0.0:
        return 0.0
    target = total * percentile / 100.0
    acc = 0.0
    ordered = sorted(segments, key=lambda seg: seg[1])
    for dur, psnr in ordered:
        acc += dur
        if acc >= target - 1e-12:
            return psnr
    return ordered[-1][1]


def max_stall_in_window(display_times, fps, t_start, t_end, tol_ms=1.0):
    """Worst playback stall overlapping [t_start, t_end].

    Stalls are detected over the whole display history so an interval
    straddling the window edge counts only its in-window part.  A UE
    that never displays anything by t_end stalls for the whole window.
    """
    period = 1000.0 / fps
    times = [t for t in display_times if t <= t_end + 1e-9]
    if not times:
        return t_end - t_start
    stalls = detect_stalls(times, fps, tol_ms)
    tail_gap = t_end - times[-1]
    if tail_gap > period + tol_ms:
        stalls.append((times[-1] + period, tail_gap - period))
    if times[0] > t_start:
        head_gap = times[0] - t_start
        if head_gap > period + tol_ms:
            # nothing had ever been shown, so the whole wait counts
            stalls.append((t_start, head_gap))
    worst = 0.0
    for start, dur in stalls:
        lo = max(start, t_start)
        hi = min(start + dur, t_end)
        if hi - lo > worst:
            worst = hi - lo
    return worst


def ue_outcome(ue_id, displays, delivered, gamma_db, fps, t_start, t_end,
               stall_limit_ms=100.0, min_fraction=0.95, percentile=5.0):
    """Evaluate one UE over the window.

    displays: sorted (t_displayed_ms, psnr_db); delivered: sorted
    (t_delivered_ms, size_bits).  A UE is satisfied when it spends at
    least min_fraction of the window at or above its PSNR target and
    its worst stall stays below stall_limit_ms.  Displayed quality
    counts only while the frame is fresher than the stall budget;
    beyond that the screen is frozen and contributes 0 dB.
    """
    segments = psnr_segments(displays, t_start, t_end,
                             hold_ms=stall_limit_ms)
    fraction = time_fraction_at_or_above(segments, gamma_db)
    p_low = time_percentile(segments, percentile)
    stall = max_stall_in_window([t for t, _ in displays], fps,
                                t_start, t_end)
    bits = sum(size for t, size in delivered if t_start < t <= t_end)
    mean_rate = bits / ((t_end - t_start) * 1000.0)
    satisfied = fraction >= min_fraction - 1e-12 and stall < stall_limit_ms
    return UeOutcome(ue_id, satisfied, fraction, stall, p_low, mean_rate)


def cell_report(log, gammas, seed, warmup_ms=2000.0, stall_limit_ms=100.0,
                min_fraction=0.95, percentile=5.0):
    """Fold a run log into the per-cell report row."""
    t_end = log.duration_ms
    if warmup_ms >= t_end:
        raise ValueError("warmup consumes the whole run")
    outcomes = []
    for n in range(log.n_ue):
        delivered = [(f.t_delivered, f.size_bits) for f in log.frames[n]
                     if f.t_delivered is not None]
        outcomes.append(ue_outcome(
            n, log.displays[n], delivered, gammas[n], log.fps,
            warmup_ms, t_end, stall_limit_ms, min_fraction, percentile))
    ratio = sum(o.satisfied for o in outcomes) / len(outcomes)
    return CellReport(
        scheme=log.scheme,
        n_ue=log.n_ue,
        seed=seed,
        satisfaction_ratio=ratio,
        min_psnr_p5=min(o.psnr_p5_db for o in outcomes),
        utilization=log.utilization,
        mean_rate=sum(o.mean_rate_mbps for o in outcomes) / len(outcomes),
        outcomes=outcomes,
    )


def constraint_utilization(rate_log, traces, bler, period_ms):
    """Injected load against what the channel actually offered.

    For each controller period, sum over UEs of (rate in force) /
    (error-free share of the true trace capacity over that period).
    Values near the allocator's utilization target mean the controller
    is metering correctly; values above 1 mean oversubscription.
    Returns (t_ms, utilization) per fully elapsed period.
    """
    out = []
    derate = 1.0 - bler
    for t_k, rates in rate_log:
        end = t_k + period_ms
        if end > traces[0].duration_ms + 1e-9:
            break
        total = 0.0
        for n, rate in enumerate(rates):
            cap = derate * estimate_capacity(traces[n], end, period_ms)
            total += rate / max(cap, 1e-12)
        out.append((t_k, total))
    return out


def ux_capacity(mean_ratios, n_values=None, threshold=0.9):
    """Largest load whose mean satisfaction ratio meets the threshold,
    0 if none does.  Non-monotone curves count their largest
    qualifying load."""
    if n_values is None:
        n_values = range(1, len(mean_ratios) + 1)
    best = 0
    for n, ratio in zip(n_values, mean_ratios):
        if ratio >= threshold - 1e-12 and n > best:
            best = n
    return best


def _bootstrap_ci(values, seed_key, n_boot=2000, confidence=0.95):
    values = np.asarray(values, dtype=float)
    if len(values) == 1 or np.all(values == values[0]):
        return float(values[0]), float(values[0])
    rng = np.random.default_rng(zlib.crc32(seed_key.encode()))
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    means = values[idx].mean(axis=1)
    tail = (1.0 - confidence) / 2.0 * 100.0
    return (float(np.percentile(means, tail)),
            float(np.percentile(means, 100.0 - tail)))


def aggregate(reports, n_boot=2000, confidence=0.95):
    """Mean satisfaction ratio per (scheme, load) with bootstrap CIs.

    The bootstrap is seeded from the group's identity so re-running
    the same sweep reproduces the rows bit for bit.
    """
    groups = {}
    for rep in reports:
        groups.setdefault((rep.scheme, rep.n_ue), []).append(rep)
    rows = []
    for (scheme, n_ue), grp in sorted(groups.items()):
        grp = sorted(grp, key=lambda r: r.seed)
        values = [r.satisfaction_ratio for r in grp]
        seeds = ",".join(str(r.seed) for r in grp)
        lo, hi = _bootstrap_ci(values, f"{scheme}|{n_ue}|{seeds}",
                               n_boot, confidence)
        rows.append(CapacityRow(scheme, n_ue,
                                float(np.mean(values)), lo, hi))
    return rows


def write_cell_reports(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CELL_COLUMNS)
        for rep in reports:
            writer.writerow(rep.csv_values())


def read_cell_reports(path):
    reports = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CELL_COLUMNS):
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            if not row:
                continue
            reports.append(CellReport(
                scheme=row[0], n_ue=int(row[1]), seed=int(row[2]),
                satisfaction_ratio=float(row[3]),
                min_psnr_p5=float(row[4]),
                utilization=float(row[5]),
                mean_rate=float(row[6])))
    return reports


def write_capacity_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CAPACITY_COLUMNS)
        for row in rows:
            writer.writerow((row.scheme, str(row.n_ue),
                             f"{row.mean_ratio:.6f}",
                             f"{row.ci_lo:.6f}",
                             f"{row.ci_hi:.6f}"))
