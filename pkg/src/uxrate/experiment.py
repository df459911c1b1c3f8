"""Experiment orchestration: configs, seeded environments, sweeps.

A sweep runs every (scheme, load, seed) cell of a grid, writes one
cell_report.csv row per run plus an aggregated capacity.csv, and
records a manifest so interrupted sweeps resume with only the missing
cells.  Environment randomness (channel, scenes, block errors) is
derived from the cell seed alone, never from the scheme, so schemes
are compared on identical conditions.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .channel import ingest_trace, synth_trace
from .controllers import SCHEMES, ControllerConfig, make_controller
from .media import VideoSource, build_schedule, default_library, \
    load_scene_library
from .metrics import aggregate, cell_report, constraint_utilization, \
    read_cell_reports, write_capacity_rows, write_cell_reports
from .radio import CellSimulator, RadioConfig

__all__ = [
    "ChannelConfig",
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "save_config",
    "stream_rng",
    "build_environment",
    "run_single",
    "run_sweep",
]

# independent randomness lanes per cell seed
CHANNEL_STREAM = 0
SCENE_STREAM = 1
BLER_STREAM = 2
CONTROLLER_STREAM = 3
ECN_STREAM = 4
JITTER_STREAM = 5

MANIFEST_NAME = "manifest.json"
CELL_CSV = "cell_report.csv"
CAPACITY_CSV = "capacity.csv"


@dataclass
class ChannelConfig:
    mean_mbps: float = 60.0
    position_spread_db: float = 4.0
    doppler_period_ms: float = 4000.0
    envelope_amplitude: float = 0.2
    shadow_sigma_db: float = 3.0
    shadow_tones: int = 6
    trace_dir: str = None

    def __post_init__(self):
        if self.mean_mbps <= 0.0:
            raise ValueError("mean_mbps must be positive")
        if self.position_spread_db < 0.0:
            raise ValueError("position_spread_db must be >= 0")


@dataclass
class ExperimentConfig:
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    n_ue_values: list = field(default_factory=lambda: list(range(1, 11)))
    seeds: list = field(default_factory=lambda: list(range(5)))
    duration_s: float = 30.0
    warmup_ms: float = 2000.0
    fps: int = 60
    gamma_db: float = 35.0
    scene_mean_ms: float = 3500.0
    scene_min_ms: float = 500.0
    scene_library: str = None
    first_scene: str = None
    start_rate_mbps: float = 1.0
    frame_jitter_ms: float = 0.0
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    control: ControllerConfig = field(default_factory=ControllerConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)

    def __post_init__(self):
        if not self.schemes:
            raise ValueError("schemes must not be empty")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(
                f"unknown scheme(s) {unknown}; choose from {list(SCHEMES)}")
        if not self.n_ue_values or min(self.n_ue_values) < 1:
            raise ValueError("n_ue_values must be positive integers")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.duration_s < 20.0:
            raise ValueError("duration_s must be at least 20 seconds")
        if not 0.0 <= self.warmup_ms < self.duration_s * 1000.0:
            raise ValueError("warmup_ms must leave an evaluation window")
        if self.start_rate_mbps <= 0.0:
            raise ValueError("start_rate_mbps must be positive")
        if self.fps < 1:
            raise ValueError("fps must be at least 1")
        if not 0.0 <= self.frame_jitter_ms < 500.0 / self.fps:
            raise ValueError(
                "frame_jitter_ms must be in [0, half the frame interval)")
        if self.scene_min_ms <= 0.0 or self.scene_mean_ms <= self.scene_min_ms:
            raise ValueError("scene_mean_ms must exceed scene_min_ms > 0")

    @property
    def duration_ms(self):
        return self.duration_s * 1000.0

    def to_dict(self):
        return dataclasses.asdict(self)


def _build_section(cls, data, section):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{section}: expected a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValueError(f"{section}: unknown option(s) {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValueError(f"{section}: {exc}") from exc


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ValueError("config root must be a mapping")
    data = dict(data)
    channel = _build_section(ChannelConfig, data.pop("channel", {}), "channel")
    control = _build_section(ControllerConfig, data.pop("control", {}),
                             "control")
    radio = _build_section(RadioConfig, data.pop("radio", {}), "radio")
    top_allowed = {f.name for f in dataclasses.fields(ExperimentConfig)} \
        - {"channel", "control", "radio"}
    unknown = sorted(set(data) - top_allowed)
    if unknown:
        raise ValueError(f"config: unknown option(s) {unknown}")
    return ExperimentConfig(channel=channel, control=control, radio=radio,
                            **data)


def load_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(path, config):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def stream_rng(master_seed, stream, ue=0):
    """Generator for one randomness lane of one run; lanes never overlap
    and environment lanes are scheme-independent."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream, ue))
    return np.random.default_rng(seq)


def _scene_library(config):
    if config.scene_library:
        return load_scene_library(config.scene_library)
    return default_library()


def build_environment(config, n_ue, seed):
    """Construct the per-seed cell environment: one capacity trace and
    one scene-scheduled video source per UE, plus PSNR targets.

    Identical for every scheme at the same (n_ue, seed): channel and
    scene randomness come from dedicated streams keyed only by seed
    and UE index.
    """
    n_slots = int(round(config.duration_ms / config.radio.slot_ms))
    library = _scene_library(config)
    chan = config.channel
    sources = []
    traces = []
    for ue in range(n_ue):
        if chan.trace_dir:
            trace_path = os.path.join(chan.trace_dir, f"ue{ue}.txt")
            if not os.path.exists(trace_path):
                raise ValueError(
                    f"trace_dir has no trace for ue {ue}: {trace_path}")
            trace = ingest_trace(trace_path, min_slots=n_slots)
        else:
            rng = stream_rng(seed, CHANNEL_STREAM, ue)
            offset_db = rng.normal(0.0, chan.position_spread_db)
            ue_mean = chan.mean_mbps * 10.0 ** (offset_db / 10.0)
            trace = synth_trace(
                rng, n_slots, ue_mean,
                doppler_period_ms=chan.doppler_period_ms,
                envelope_amplitude=chan.envelope_amplitude,
                shadow_sigma_db=chan.shadow_sigma_db,
                shadow_tones=chan.shadow_tones,
                slot_ms=config.radio.slot_ms,
                rbgs_per_slot=config.radio.rbgs_per_slot,
                ue_id=ue)
        scene_rng = stream_rng(seed, SCENE_STREAM, ue)
        # "mixed" staggers the opening scene across UEs by cycling the
        # library, so a cell does not start with every session in the
        # same content type at once.
        first = config.first_scene
        if first == "mixed":
            first = library[ue % len(library)].scene_id
        schedule = build_schedule(library, config.duration_ms, scene_rng,
                                  mean_scene_ms=config.scene_mean_ms,
                                  min_scene_ms=config.scene_min_ms,
                                  first_scene=first)
        # Stagger frame clocks evenly with jitter, the way a server
        # paces concurrent sessions; lockstep bursts would stack every
        # frame of every UE into the same slots.
        interval = 1000.0 / config.fps
        phase = (ue + 0.5 + 0.4 * scene_rng.uniform(-1.0, 1.0)) \
            * interval / n_ue
        jitter_rng = stream_rng(seed, JITTER_STREAM, ue) \
            if config.frame_jitter_ms > 0.0 else None
        sources.append(VideoSource(ue, schedule, fps=config.fps,
                                   rate_mbps=1.0, phase_ms=phase,
                                   jitter_ms=config.frame_jitter_ms,
                                   jitter_rng=jitter_rng))
        traces.append(trace)
    gammas = [config.gamma_db] * n_ue
    return sources, traces, gammas


def run_single(config, scheme, n_ue, seed, event_sink=None):
    """Simulate one (scheme, load, seed) cell and fold it to a report."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    sources, traces, gammas = build_environment(config, n_ue, seed)
    controller = make_controller(scheme, config.control, n_ue, gammas,
                                 start_rate=config.start_rate_mbps)
    sim = CellSimulator(
        scheme, sources, traces, controller, config.control,
        radio_cfg=config.radio, duration_ms=config.duration_ms,
        bler_rng=stream_rng(seed, BLER_STREAM),
        ecn_rng=stream_rng(seed, ECN_STREAM),
        gammas=gammas, event_sink=event_sink)
    log = sim.run()
    report = cell_report(log, gammas, seed, warmup_ms=config.warmup_ms,
                         stall_limit_ms=config.control.stall_limit_ms)
    if scheme in ("maxcap-central", "maxmin-central",
                  "maxcap-assisted", "maxmin-assisted"):
        report.constraint_utils = constraint_utilization(
            log.rate_log, traces, config.radio.bler,
            config.control.control_period_ms)
    return report


def _grid(config):
    for scheme in config.schemes:
        for n_ue in config.n_ue_values:
            for seed in config.seeds:
                yield scheme, n_ue, seed


def run_sweep(config, out_dir, resume=False, log=None):
    """Run the full grid, writing cell_report.csv, capacity.csv and a
    manifest.  With resume=True, cells already present in the output
    are kept and only missing ones are simulated."""
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    cell_path = os.path.join(out_dir, CELL_CSV)
    manifest = {
        "format": 1,
        "config": config.to_dict(),
        "grid": {
            "schemes": list(config.schemes),
            "n_ue_values": list(config.n_ue_values),
            "seeds": list(config.seeds),
        },
    }
    done = {}
    if resume and os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            previous = json.load(fh)
        if previous.get("config") != manifest["config"]:
            raise ValueError(
                f"{manifest_path}: existing sweep was run with a different "
                "config; refusing to mix results")
        if os.path.exists(cell_path):
            for rep in read_cell_reports(cell_path):
                done[(rep.scheme, rep.n_ue, rep.seed)] = rep
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    reports = []
    for scheme, n_ue, seed in _grid(config):
        key = (scheme, n_ue, seed)
        if key in done:
            reports.append(done[key])
            continue
        rep = run_single(config, scheme, n_ue, seed)
        reports.append(rep)
        if log is not None:
            log(f"{scheme} n_ue={n_ue} seed={seed} "
                f"satisfied={rep.satisfaction_ratio:.2f} "
                f"util={rep.utilization:.3f}")
        write_cell_reports(cell_path, reports)
    write_cell_reports(cell_path, reports)
    rows = aggregate(reports)
    write_capacity_rows(os.path.join(out_dir, CAPACITY_CSV), rows)
    return reports, rows
