"""Video source model: quality-bitrate curves, scene schedules, frame generation.

Encoded video quality is modeled as a piecewise-linear function of
log-bitrate between calibration knots.  A source plays a schedule of
scenes, each with its own curve, and emits fixed-interval frames whose
size tracks a mutable target bitrate.
"""

import json
import math

__all__ = [
    "QBCurve",
    "Scene",
    "FrameRecord",
    "SceneSchedule",
    "build_schedule",
    "VideoSource",
    "default_library",
    "load_scene_library",
]


class QBCurve:
    """Monotone quality-bitrate mapping, interpolated in log-bitrate.

    knots: sequence of (bitrate_mbps, quality_db) pairs, strictly
    increasing in both coordinates.  Evaluation clamps outside the knot
    range instead of failing; inversion clamps to the curve's bitrate
    span the same way.
    """

    __slots__ = ("rates", "qualities", "_log_rates", "name")

    def __init__(self, knots, name=""):
        if len(knots) < 2:
            raise ValueError("curve needs at least 2 knots")
        rates = [float(r) for r, _ in knots]
        quals = [float(q) for _, q in knots]
        for i in range(1, len(rates)):
            if rates[i] <= rates[i - 1]:
                raise ValueError("knot bitrates must be strictly increasing")
            if quals[i] <= quals[i - 1]:
                raise ValueError("knot qualities must be strictly increasing")
        if rates[0] <= 0.0:
            raise ValueError("knot bitrates must be positive")
        self.rates = rates
        self.qualities = quals
        self._log_rates = [math.log(r) for r in rates]
        self.name = name

    @property
    def min_rate(self):
        return self.rates[0]

    @property
    def max_rate(self):
        return self.rates[-1]

    @property
    def min_quality(self):
        return self.qualities[0]

    @property
    def max_quality(self):
        return self.qualities[-1]

    def quality_at(self, rate_mbps: float) -> float:
        """Quality (dB) at a bitrate, clamped to the knot span."""
        if rate_mbps <= 0.0:
            raise ValueError("bitrate must be positive")
        rates = self.rates
        if rate_mbps <= rates[0]:
            return self.qualities[0]
        if rate_mbps >= rates[-1]:
            return self.qualities[-1]
        # locate segment; knot counts are tiny, linear scan wins
        i = 1
        while rates[i] < rate_mbps:
            i += 1
        if rates[i] == rate_mbps:
            return self.qualities[i]
        lo, hi = self._log_rates[i - 1], self._log_rates[i]
        frac = (math.log(rate_mbps) - lo) / (hi - lo)
        q0, q1 = self.qualities[i - 1], self.qualities[i]
        return q0 + frac * (q1 - q0)

    def rate_for(self, quality_db: float) -> float:
        """Minimum bitrate (Mbps) achieving a quality, clamped to the span."""
        quals = self.qualities
        if quality_db <= quals[0]:
            return self.rates[0]
        if quality_db >= quals[-1]:
            return self.rates[-1]
        i = 1
        while quals[i] < quality_db:
            i += 1
        if quals[i] == quality_db:
            return self.rates[i]
        frac = (quality_db - quals[i - 1]) / (quals[i] - quals[i - 1])
        lo, hi = self._log_rates[i - 1], self._log_rates[i]
        return math.exp(lo + frac * (hi - lo))


class Scene:
    """A content segment with a fixed quality-bitrate curve."""

    __slots__ = ("scene_id", "curve")

    def __init__(self, scene_id: str, curve: QBCurve):
        self.scene_id = scene_id
        self.curve = curve

    def __repr__(self):
        return f"Scene({self.scene_id!r})"


# Default two-scene library.  The high-motion curve needs ~19 Mbps for
# 35 dB, the low-motion one ~3 Mbps; both clamp at the 1..50 Mbps codec
# range and together span 28..44 dB.
def default_library():
    return [
        Scene("high_motion", QBCurve([(1.0, 28.0), (19.0, 35.0), (50.0, 40.0)],
                                     name="high_motion")),
        Scene("low_motion", QBCurve([(1.0, 32.0), (3.0, 35.0), (50.0, 44.0)],
                                    name="low_motion")),
    ]


def load_scene_library(path):
    """Parse a scene library file.

    Format, one directive per line ('#' comments and blanks ignored):

        scene <name>
        knots [[mbps, db], [mbps, db], ...]

    Every scene line must be followed by its knots line.  Raises
    ValueError with file:line context on any malformed input.
    """
    scenes = []
    pending_name = None
    seen = set()

    def fail(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("scene"):
                if pending_name is not None:
                    fail(lineno, f"scene {pending_name!r} has no knots line")
                parts = line.split(None, 1)
                if len(parts) != 2 or not parts[1].strip():
                    fail(lineno, "scene line needs a name")
                name = parts[1].strip()
                if name in seen:
                    fail(lineno, f"duplicate scene name {name!r}")
                seen.add(name)
                pending_name = name
            elif line.startswith("knots"):
                if pending_name is None:
                    fail(lineno, "knots line without a preceding scene line")
                try:
                    knots = json.loads(line[len("knots"):].strip())
                except json.JSONDecodeError as exc:
                    fail(lineno, f"knots are not valid JSON: {exc}")
                if (not isinstance(knots, list)
                        or any(not isinstance(k, list) or len(k) != 2 for k in knots)):
                    fail(lineno, "knots must be a list of [mbps, db] pairs")
                try:
                    curve = QBCurve(knots, name=pending_name)
                except ValueError as exc:
                    fail(lineno, str(exc))
                scenes.append(Scene(pending_name, curve))
                pending_name = None
            else:
                fail(lineno, f"unrecognized directive {line.split()[0]!r}")
    if pending_name is not None:
        fail(lineno, f"scene {pending_name!r} has no knots line")
    if not scenes:
        raise ValueError(f"{path}: no scenes defined")
    return scenes


class SceneSchedule:
    """Ordered (start_ms, scene) list covering a run; first entry at t=0."""

    __slots__ = ("entries",)

    def __init__(self, entries):
        if not entries or entries[0][0] != 0.0:
            raise ValueError("schedule must start at t=0")
        for i in range(1, len(entries)):
            if entries[i][0] <= entries[i - 1][0]:
                raise ValueError("start times must be strictly increasing")
        self.entries = entries

    def active_at(self, t_ms: float) -> Scene:
        entries = self.entries
        # schedules hold ~10 entries, scan from the back
        for start, scene in reversed(entries):
            if t_ms >= start:
                return scene
        return entries[0][1]

    def switch_times(self):
        return [start for start, _ in self.entries[1:]]


def build_schedule(library, duration_ms, rng,
                   mean_scene_ms=3500.0, min_scene_ms=500.0,
                   first_scene=None):
    """Draw a scene schedule cycling through the library.

    Starts at a random library index and cycles in order so every scene
    type gets comparable airtime; durations are i.i.d. shifted
    exponentials (min_scene_ms plus an exponential tail) so the mean is
    exactly mean_scene_ms and switch times almost surely never collide
    across UEs.  first_scene pins the opening scene by id so a run can
    begin in the most demanding content; the random index draw still
    happens, keeping downstream draws identical either way.
    """
    if mean_scene_ms <= min_scene_ms:
        raise ValueError("mean scene duration must exceed the minimum")
    idx = int(rng.integers(len(library)))
    if first_scene is not None:
        ids = [s.scene_id for s in library]
        if first_scene not in ids:
            raise ValueError(f"first_scene {first_scene!r} not in library")
        idx = ids.index(first_scene)
    entries = []
    t = 0.0
    while t < duration_ms:
        entries.append((t, library[idx % len(library)]))
        idx += 1
        t += min_scene_ms + float(rng.exponential(mean_scene_ms - min_scene_ms))
    return SceneSchedule(entries)


class FrameRecord:
    """Lifecycle timestamps of one frame, in ms from run start.

    t_delivered is when the last bit cleared the radio, t_displayed when
    the client showed the frame; both stay None if that never happened.
    """

    __slots__ = ("ue_id", "index", "t_generated", "size_bits", "encode_psnr",
                 "scene_id", "t_encoded", "t_enqueued", "t_delivered",
                 "t_displayed")

    def __init__(self, ue_id, index, t_generated, size_bits, encode_psnr,
                 scene_id):
        self.ue_id = ue_id
        self.index = index
        self.t_generated = t_generated
        self.size_bits = size_bits
        self.encode_psnr = encode_psnr
        self.scene_id = scene_id
        self.t_encoded = None
        self.t_enqueued = None
        self.t_delivered = None
        self.t_displayed = None


class VideoSource:
    """Fixed-fps frame generator with a mutable target bitrate.

    Frame size is round(target_bitrate / fps) bits and the frame's PSNR
    is the active scene curve evaluated at the target bitrate.  A target
    of 0 pauses the source (no frames).
    """

    __slots__ = ("ue_id", "schedule", "fps", "rate_mbps", "encode_delay_ms",
                 "phase_ms", "jitter_ms", "_frame_interval_ms", "_next_index",
                 "_jitter_rng", "_jitters")

    def __init__(self, ue_id, schedule: SceneSchedule, fps=60,
                 rate_mbps=1.0, encode_delay_ms=1.0, phase_ms=0.0,
                 jitter_ms=0.0, jitter_rng=None):
        self.ue_id = ue_id
        self.schedule = schedule
        self.fps = fps
        self.rate_mbps = rate_mbps
        self.encode_delay_ms = encode_delay_ms
        self.phase_ms = phase_ms
        # Encoder clocks drift a little frame to frame; jitter_ms bounds
        # the per-frame wobble.  Must stay below half the frame interval
        # so generation times remain strictly increasing.
        self.jitter_ms = float(jitter_ms)
        self._frame_interval_ms = 1000.0 / fps
        self._next_index = 0
        self._jitter_rng = jitter_rng
        self._jitters = []

    def _frame_time(self, index):
        t = self.phase_ms + index * self._frame_interval_ms
        if self.jitter_ms > 0.0 and self._jitter_rng is not None:
            while len(self._jitters) <= index:
                self._jitters.append(self._jitter_rng.uniform(
                    -self.jitter_ms, self.jitter_ms))
            t += self._jitters[index]
        return t

    def next_frame_time(self):
        return self._frame_time(self._next_index)

    def frames_until(self, t_end_ms):
        """Emit frames with generation time < t_end_ms (paused ones skipped)."""
        out = []
        t = self._frame_time(self._next_index)
        while t < t_end_ms:
            rate = self.rate_mbps
            if rate > 0.0:
                scene = self.schedule.active_at(t)
                size = int(round(rate * 1e6 / self.fps))
                frame = FrameRecord(self.ue_id, self._next_index, t, size,
                                    scene.curve.quality_at(rate),
                                    scene.scene_id)
                frame.t_encoded = t + self.encode_delay_ms
                out.append(frame)
            self._next_index += 1
            t = self._frame_time(self._next_index)
        return out
