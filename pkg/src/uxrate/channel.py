"""Radio channel model: per-slot capacity traces and capacity estimates.

A trace stores the achievable bits per resource-block group (RBG) per
scheduling slot for one UE, assuming ideal link adaptation; block
errors are applied downstream by the radio simulator.  Synthetic traces
combine a slow sinusoidal fading envelope with smooth log-normal
shadowing, slow enough that a controller ticking every few tens of ms
can track the channel.
"""

import math

import numpy as np

__all__ = [
    "SLOT_MS",
    "RBGS_PER_SLOT",
    "TDD_PATTERN",
    "CapacityTrace",
    "slot_type",
    "is_downlink_slot",
    "is_uplink_slot",
    "next_uplink_start_ms",
    "synth_trace",
    "write_trace",
    "ingest_trace",
    "estimate_capacity",
]

SLOT_MS = 0.5
RBGS_PER_SLOT = 4

# Repeating TDD pattern; slot i has type TDD_PATTERN[i % 5].  Special
# and uplink slots carry no downlink data.
TDD_PATTERN = "DDDSU"


def slot_type(slot_index: int) -> str:
    return TDD_PATTERN[slot_index % len(TDD_PATTERN)]


def is_downlink_slot(slot_index: int) -> bool:
    return slot_index % 5 < 3


def is_uplink_slot(slot_index: int) -> bool:
    return slot_index % 5 == 4


def next_uplink_start_ms(t_ms: float, slot_ms: float = SLOT_MS) -> float:
    """Start time of the first uplink slot beginning at or after t_ms."""
    idx = int(math.ceil(t_ms / slot_ms - 1e-9))
    idx += (4 - idx) % 5
    return idx * slot_ms


class CapacityTrace:
    """Per-slot achievable bits per RBG for one UE."""

    __slots__ = ("ue_id", "slot_bits", "slot_ms", "rbgs_per_slot")

    def __init__(self, ue_id, slot_bits, slot_ms=SLOT_MS,
                 rbgs_per_slot=RBGS_PER_SLOT):
        arr = np.asarray(slot_bits, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("trace needs a non-empty 1-D capacity array")
        if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("capacity entries must be finite and >= 0")
        if slot_ms <= 0.0:
            raise ValueError("slot duration must be positive")
        if rbgs_per_slot < 1:
            raise ValueError("need at least one RBG per slot")
        self.ue_id = ue_id
        self.slot_bits = arr
        self.slot_ms = float(slot_ms)
        self.rbgs_per_slot = int(rbgs_per_slot)

    @property
    def n_slots(self) -> int:
        return int(self.slot_bits.size)

    @property
    def duration_ms(self) -> float:
        return self.n_slots * self.slot_ms


def synth_trace(seed, duration_slots, mean_mbps, doppler_period_ms=4000.0,
                envelope_amplitude=0.2, shadow_sigma_db=3.0, shadow_tones=6,
                slot_ms=SLOT_MS, rbgs_per_slot=RBGS_PER_SLOT, ue_id=0):
    """Generate a deterministic synthetic capacity trace.

    The fade process is a sinusoidal envelope 1 + a*sin(2*pi*t/T) times
    log-normal shadowing built from a handful of slow dB tones with
    random phases.  Tone periods form a fixed geometric ladder (6.2 to
    30 doppler periods) so the process drifts by well under 2% over a
    capacity-estimation window; the combined fade is normalized by its
    realized mean, making the trace average exactly mean_mbps.  Accepts
    an int seed or an existing numpy Generator.
    """
    if duration_slots < 1:
        raise ValueError("duration_slots must be >= 1")
    if mean_mbps <= 0.0:
        raise ValueError("mean_mbps must be positive")
    if doppler_period_ms <= 0.0:
        raise ValueError("doppler_period_ms must be positive")
    if not 0.0 <= envelope_amplitude < 1.0:
        raise ValueError("envelope_amplitude must be in [0, 1)")
    if shadow_sigma_db < 0.0:
        raise ValueError("shadow_sigma_db must be >= 0")

    rng = np.random.default_rng(seed)
    t_ms = np.arange(duration_slots, dtype=np.float64) * slot_ms

    phase = rng.uniform(0.0, 2.0 * math.pi)
    fade = 1.0 + envelope_amplitude * np.sin(
        2.0 * math.pi * t_ms / doppler_period_ms + phase)

    if shadow_sigma_db > 0.0:
        tone_amp = shadow_sigma_db * math.sqrt(2.0 / shadow_tones)
        phases = rng.uniform(0.0, 2.0 * math.pi, shadow_tones)
        db = np.zeros(duration_slots)
        for k in range(shadow_tones):
            # well-separated periods avoid slow beat components that
            # would take minutes of trace to average out
            period = doppler_period_ms * 30.0 * 0.73 ** k
            db += np.sin(2.0 * math.pi * t_ms / period + phases[k])
        db *= tone_amp
        fade *= np.power(10.0, db / 10.0)

    np.maximum(fade, 0.02, out=fade)
    fade /= fade.mean()
    per_rbg = mean_mbps * 1000.0 * slot_ms / rbgs_per_slot
    return CapacityTrace(ue_id, per_rbg * fade, slot_ms=slot_ms,
                         rbgs_per_slot=rbgs_per_slot)


def write_trace(trace: CapacityTrace, path):
    """Write a trace file: three header lines, then one value per slot."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ue_id {trace.ue_id}\n")
        fh.write(f"slot_duration_ms {trace.slot_ms:g}\n")
        fh.write(f"rbgs_per_slot {trace.rbgs_per_slot}\n")
        for bits in trace.slot_bits:
            fh.write(f"{bits:.6f}\n")


def ingest_trace(path, min_slots=None) -> CapacityTrace:
    """Load a trace file written by write_trace.

    Header lines 'ue_id', 'slot_duration_ms' and 'rbgs_per_slot' may
    appear in any order but must all precede the per-slot capacity
    values ('#' comments and blank lines are ignored).  Raises
    ValueError with file:line context on malformed input, and rejects
    traces shorter than min_slots when given.
    """
    header = {}
    values = []

    def fail(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] in ("ue_id", "slot_duration_ms", "rbgs_per_slot"):
                if values:
                    fail(lineno, f"header line {parts[0]!r} after capacity values")
                if parts[0] in header:
                    fail(lineno, f"duplicate header line {parts[0]!r}")
                if len(parts) != 2:
                    fail(lineno, f"header line {parts[0]!r} needs one value")
                header[parts[0]] = parts[1]
                continue
            if len(header) < 3:
                missing = sorted(
                    {"ue_id", "slot_duration_ms", "rbgs_per_slot"} - set(header))
                fail(lineno, f"missing header line(s) {missing} before values")
            if len(parts) != 1:
                fail(lineno, "expected one capacity value per line")
            try:
                bits = float(parts[0])
            except ValueError:
                fail(lineno, f"capacity value {parts[0]!r} is not a number")
            if not math.isfinite(bits) or bits < 0.0:
                fail(lineno, f"capacity value {bits} must be finite and >= 0")
            values.append(bits)

    if len(header) < 3 and not values:
        raise ValueError(f"{path}: empty trace file")
    if not values:
        raise ValueError(f"{path}: no capacity values")
    try:
        ue_id = int(header["ue_id"])
        slot_ms = float(header["slot_duration_ms"])
        rbgs = int(header["rbgs_per_slot"])
    except ValueError as exc:
        raise ValueError(f"{path}: bad header value: {exc}") from None
    if min_slots is not None and len(values) < min_slots:
        raise ValueError(
            f"{path}: trace has {len(values)} slots, run needs {min_slots}")
    return CapacityTrace(ue_id, values, slot_ms=slot_ms, rbgs_per_slot=rbgs)


def estimate_capacity(trace: CapacityTrace, now_ms: float,
                      window_ms: float = 33.0) -> float:
    """Channel capacity in Mbps over the window [now_ms - window_ms, now_ms).

    The estimate is the rate the UE would get with every RBG of every
    downlink slot fully inside the window: summed per-RBG bits times
    RBGs per slot, divided by the window duration.  Special and uplink
    slots contribute nothing but still consume window time.
    """
    if window_ms <= 0.0:
        raise ValueError("window_ms must be positive")
    slot_ms = trace.slot_ms
    first = int(math.ceil((now_ms - window_ms) / slot_ms - 1e-9))
    last = int(math.floor(now_ms / slot_ms + 1e-9))  # exclusive
    first = max(first, 0)
    last = min(last, trace.n_slots)
    if first >= last:
        raise ValueError("window covers no complete slot")
    idx = np.arange(first, last)
    dl = idx[idx % 5 < 3]
    if dl.size == 0:
        raise ValueError("window covers no downlink slot")
    total_bits = float(trace.slot_bits[dl].sum()) * trace.rbgs_per_slot
    return total_bits / (window_ms * 1000.0)
