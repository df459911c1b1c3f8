"""Rate controllers: central allocators, link-price variants, client loops.

Pure decision functions live at module level so they can be tested
against analytic oracles; the *Ctl / Central* / Assisted* classes wrap
them with the per-tick state the simulation loop drives.  Capacities
passed in are effective capacities (block errors already discounted);
curves are any objects exposing rate_for(quality_db).
"""

import math
from dataclasses import dataclass

__all__ = [
    "SCHEMES",
    "ControllerConfig",
    "Allocation",
    "maxcap_allocate",
    "maxmin_allocate",
    "link_price_update",
    "maxcap_device_update",
    "maxmin_device_update",
    "satisfaction_factor",
    "rtt_baseline_step",
    "ott_ux_step",
    "prague_step",
    "CentralMaxCap",
    "CentralMaxMin",
    "AssistedMaxCap",
    "AssistedMaxMin",
    "RttBaselineCtl",
    "OttUxCtl",
    "PragueCtl",
    "make_controller",
]

SCHEMES = (
    "maxcap-central",
    "maxmin-central",
    "maxcap-assisted",
    "maxmin-assisted",
    "ux-pf",
    "ott-ux",
    "rtt-baseline",
    "prague",
)

# Admission comparisons use a tiny slack so an exactly-full budget still
# admits the boundary UE.
_EPS = 1e-9


@dataclass
class ControllerConfig:
    """Knobs shared by every controller; defaults match the simulation
    parameter set used throughout."""

    util_target: float = 0.9
    psnr_target_db: float = 35.0
    quality_min_db: float = 30.0
    quality_max_db: float = 40.0
    quality_tol_db: float = 0.5
    rate_floor_mbps: float = 1.0
    rate_ceil_mbps: float = 50.0
    price_step: float = 0.01
    price_init: float = 1.0
    satisfaction_temp: float = 0.5
    # 65 slots = 13 TDD cycles; nominal 33 ms rounded to the slot
    # pattern so capacity windows always hold whole DDDSU cycles
    control_period_ms: float = 32.5
    rtt_period_ms: float = 50.0
    rtt_window_ms: float = 100.0
    rtt_low_ms: float = 8.0
    rtt_high_ms: float = 10.0
    rate_up: float = 1.1
    rate_down: float = 0.9
    rtt_max_ms: float = 17.0
    score_low: float = 0.9
    score_high: float = 1.1
    stall_limit_ms: float = 100.0
    packet_bits: int = 12000
    prague_period_ms: float = 2.5
    strict_admission: bool = False
    # throughput follower used with the satisfaction-weighted scheduler
    abr_drain_low_ms: float = 8.0
    abr_drain_high_ms: float = 25.0
    abr_probe_mbps: float = 0.3
    abr_probe_gain: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.util_target <= 1.0:
            raise ValueError("util_target must be in (0, 1]")
        if self.quality_min_db >= self.quality_max_db:
            raise ValueError("quality_min_db must be below quality_max_db")
        if not self.rate_down < 1.0 < self.rate_up:
            raise ValueError("need rate_down < 1 < rate_up")
        if self.rtt_low_ms >= self.rtt_high_ms:
            raise ValueError("rtt_low_ms must be below rtt_high_ms")
        if self.score_low >= self.score_high:
            raise ValueError("score_low must be below score_high")
        if self.rate_floor_mbps <= 0.0 or self.rate_floor_mbps >= self.rate_ceil_mbps:
            raise ValueError("need 0 < rate_floor_mbps < rate_ceil_mbps")
        if self.price_step <= 0.0:
            raise ValueError("price_step must be positive")
        if self.satisfaction_temp <= 0.0:
            raise ValueError("satisfaction_temp must be positive")
        if not 0.0 < self.abr_drain_low_ms < self.abr_drain_high_ms:
            raise ValueError("need 0 < abr_drain_low_ms < abr_drain_high_ms")
        if self.abr_probe_mbps <= 0.0 or self.abr_probe_gain <= 0.0:
            raise ValueError("abr probe parameters must be positive")


@dataclass
class Allocation:
    """Outcome of a central allocation pass."""

    rates_mbps: list
    admitted: list
    feasible: bool = True
    common_quality_db: float = None
    iterations: int = 0


def _clamp(rate, floor, ceil):
    return min(ceil, max(floor, rate))


def maxcap_allocate(curves, gammas, capacities, mu_target,
                    rate_floor=1.0, rate_ceil=50.0, strict=False):
    """Admit as many UEs at their quality target as the budget allows.

    Each UE needs the resource share g = rate_for(gamma) / capacity.
    If everything fits, spare budget is split evenly as extra share;
    otherwise UEs are admitted cheapest-first and the leftover share is
    split across rejected UEs (or zeroed in strict mode).  A leftover
    rate below rate_floor is set to 0 rather than rounded up so the
    budget is never exceeded.
    """
    n = len(curves)
    if n == 0:
        return Allocation([], [], True)
    g = [curves[i].rate_for(gammas[i]) / capacities[i] for i in range(n)]
    rates = [0.0] * n
    admitted = [False] * n
    total = sum(g)
    if total <= mu_target + _EPS:
        bonus = (mu_target - total) / n
        for i in range(n):
            admitted[i] = True
            rates[i] = _clamp((g[i] + bonus) * capacities[i],
                              rate_floor, rate_ceil)
        return Allocation(rates, admitted, True)

    used = 0.0
    n_admitted = 0
    for i in sorted(range(n), key=lambda k: (g[k], k)):
        if used + g[i] > mu_target + _EPS:
            break
        used += g[i]
        admitted[i] = True
        rates[i] = _clamp(g[i] * capacities[i], rate_floor, rate_ceil)
        n_admitted += 1
    if not strict and n_admitted < n:
        share = (mu_target - used) / (n - n_admitted)
        for i in range(n):
            if not admitted[i]:
                rate = share * capacities[i]
                rates[i] = min(rate, rate_ceil) if rate >= rate_floor else 0.0
    return Allocation(rates, admitted, False)


def maxmin_allocate(curves, capacities, mu_target, q_min=30.0, q_max=40.0,
                    tol_db=0.5, rate_floor=1.0, rate_ceil=50.0):
    """Bisect for the highest common quality the budget supports.

    The candidate interval [q_min, q_max] halves until it is at most
    tol_db wide; the returned quality is the last feasible lower bound,
    so every UE's allocation meets it.  Infeasibility at q_min is
    flagged and q_min rates are returned anyway.
    """
    n = len(curves)
    if n == 0:
        return Allocation([], [], True, q_max, 0)

    def load(q):
        return sum(curves[i].rate_for(q) / capacities[i] for i in range(n))

    iterations = 0
    if load(q_max) <= mu_target + _EPS:
        q_final, feasible = q_max, True
    elif load(q_min) > mu_target + _EPS:
        q_final, feasible = q_min, False
    else:
        lo, hi = q_min, q_max
        while hi - lo > tol_db:
            mid = 0.5 * (lo + hi)
            iterations += 1
            if load(mid) <= mu_target + _EPS:
                lo = mid
            else:
                hi = mid
        q_final, feasible = lo, True
    rates = [_clamp(c.rate_for(q_final), rate_floor, rate_ceil)
             for c in curves]
    return Allocation(rates, [True] * n, feasible, q_final, iterations)


def link_price_update(price, rates, capacities, mu_target, step):
    """Gradient step on the congestion price, projected to stay >= 0."""
    load = sum(r / c for r, c in zip(rates, capacities))
    return max(0.0, price + step * (load - mu_target))


def maxcap_device_update(price, curve, gamma, capacity):
    """All-or-nothing device response: run at the target quality's rate
    while the priced share stays below 1, otherwise back off to 0."""
    rate = curve.rate_for(gamma)
    return rate if price * rate / capacity < 1.0 else 0.0


def maxmin_device_update(price, curve, q_min=30.0, q_max=40.0,
                         rate_floor=1.0, rate_ceil=50.0):
    """Device response targeting the common quality 1/price (dB),
    clamped to the allowed quality band; a zero price means an
    unconstrained network, so the rate cap applies."""
    if price <= 0.0:
        return rate_ceil
    target = _clamp(1.0 / price, q_min, q_max)
    return _clamp(curve.rate_for(target), rate_floor, rate_ceil)


def satisfaction_factor(r_avg_mbps, curve, gamma, temp=0.5):
    """Sigmoid of the average-rate surplus over the target-quality rate;
    exactly 0.5 when the average rate meets the target."""
    x = temp * (r_avg_mbps - curve.rate_for(gamma))
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def rtt_baseline_step(avg_rtt_ms, rate_mbps, cfg: ControllerConfig):
    """Multiplicative rate probe on the windowed RTT average: speed up
    below the low threshold, back off above the high one, otherwise
    hold.  No samples in the window also holds."""
    if avg_rtt_ms is not None:
        if avg_rtt_ms < cfg.rtt_low_ms:
            rate_mbps *= cfg.rate_up
        elif avg_rtt_ms > cfg.rtt_high_ms:
            rate_mbps *= cfg.rate_down
    return _clamp(rate_mbps, cfg.rate_floor_mbps, cfg.rate_ceil_mbps)


def ott_ux_step(avg_rtt_ms, psnr_db, rate_mbps, cfg: ControllerConfig):
    """Joint latency/quality probe: the score adds normalized RTT and
    normalized PSNR, increases rate in the low-score region, decreases
    in the high-score region, and holds in the dead band between."""
    if avg_rtt_ms is not None and psnr_db is not None:
        score = (avg_rtt_ms / cfg.rtt_max_ms
                 + (psnr_db - cfg.quality_min_db)
                 / (cfg.quality_max_db - cfg.quality_min_db))
        if score < cfg.score_low:
            rate_mbps *= cfg.rate_up
        elif score > cfg.score_high:
            rate_mbps *= cfg.rate_down
    return _clamp(rate_mbps, cfg.rate_floor_mbps, cfg.rate_ceil_mbps)


def ux_abr_step(rate_mbps, share_mbps, backlog_ms, cfg: ControllerConfig):
    """Throughput follower for a scheduler-steered source: probe up
    while the sender queue drains promptly, snap to the measured share
    once backlog builds, hold in between.

    backlog_ms is the time the queued bits would take to drain at the
    measured share, which keeps the thresholds meaningful across very
    different rate scales.
    """
    if backlog_ms > cfg.abr_drain_high_ms:
        rate_mbps = min(share_mbps, rate_mbps) * cfg.rate_down
    elif backlog_ms < cfg.abr_drain_low_ms:
        rate_mbps += max(cfg.abr_probe_mbps, cfg.abr_probe_gain * rate_mbps)
    return _clamp(rate_mbps, cfg.rate_floor_mbps, cfg.rate_ceil_mbps)


def prague_step(rate_mbps, unmarked, marked_fraction, loss, rtt_ms,
                packet_bits=12000, rate_floor=1.0, rate_ceil=50.0,
                allow_decrease=True):
    """One congestion-control window: scalable additive increase per
    unmarked packet, multiplicative decrease on marks or loss.

    Returns (new_rate, decreased).  The increase adds one packet-rate
    per round trip in total; a decrease (loss halves, marks scale by
    1 - marked_fraction/2) replaces the increase for that window, and
    the caller enforces at-most-once-per-RTT via allow_decrease.
    """
    decreased = False
    if allow_decrease and loss:
        rate_mbps *= 0.5
        decreased = True
    elif allow_decrease and marked_fraction > 0.0:
        rate_mbps *= 1.0 - marked_fraction / 2.0
        decreased = True
    elif unmarked > 0 and rtt_ms is not None and rtt_ms > 0.0:
        rtt_s = rtt_ms * 1e-3
        inc_mbps = unmarked * packet_bits ** 2 / (rate_mbps * rtt_s ** 2) * 1e-12
        rate_mbps += inc_mbps
    return _clamp(rate_mbps, rate_floor, rate_ceil), decreased


class CentralMaxCap:
    """Network-side admission allocator re-run every control period."""

    kind = "central"

    def __init__(self, cfg: ControllerConfig, n_ue, gammas=None):
        self.cfg = cfg
        self.gammas = list(gammas) if gammas is not None \
            else [cfg.psnr_target_db] * n_ue
        self.last = None

    def tick(self, curves, capacities):
        cfg = self.cfg
        self.last = maxcap_allocate(curves, self.gammas, capacities,
                                    cfg.util_target, cfg.rate_floor_mbps,
                                    cfg.rate_ceil_mbps, cfg.strict_admission)
        return list(self.last.rates_mbps)


class CentralMaxMin:
    """Network-side common-quality allocator re-run every control period.

    When even the minimum quality does not fit the budget, rates are
    scaled down proportionally so the budget still holds instead of
    knowingly oversubscribing the cell.
    """

    kind = "central"

    def __init__(self, cfg: ControllerConfig, n_ue):
        self.cfg = cfg
        self.last = None

    def tick(self, curves, capacities):
        cfg = self.cfg
        alloc = maxmin_allocate(curves, capacities, cfg.util_target,
                                cfg.quality_min_db, cfg.quality_max_db,
                                cfg.quality_tol_db, cfg.rate_floor_mbps,
                                cfg.rate_ceil_mbps)
        self.last = alloc
        if alloc.feasible:
            return list(alloc.rates_mbps)
        floor_rates = [c.rate_for(cfg.quality_min_db) for c in curves]
        load = sum(r / c for r, c in zip(floor_rates, capacities))
        scale = cfg.util_target / load
        return [_clamp(r * scale, cfg.rate_floor_mbps, cfg.rate_ceil_mbps)
                for r in floor_rates]


class AssistedMaxCap:
    """Distributed admission: the network prices congestion from the
    rates it saw last period, devices respond all-or-nothing."""

    kind = "assisted"

    def __init__(self, cfg: ControllerConfig, n_ue, gammas=None):
        self.cfg = cfg
        self.gammas = list(gammas) if gammas is not None \
            else [cfg.psnr_target_db] * n_ue
        self.price = cfg.price_init
        self.prev_rates = [cfg.rate_floor_mbps] * n_ue

    def tick(self, curves, capacities):
        cfg = self.cfg
        self.price = link_price_update(self.price, self.prev_rates,
                                       capacities, cfg.util_target,
                                       cfg.price_step)
        rates = [maxcap_device_update(self.price, curve, gamma, cap)
                 for curve, gamma, cap in zip(curves, self.gammas, capacities)]
        self.prev_rates = rates
        return list(rates)


class AssistedMaxMin:
    """Distributed common-quality control via the congestion price."""

    kind = "assisted"

    def __init__(self, cfg: ControllerConfig, n_ue):
        self.cfg = cfg
        self.price = cfg.price_init
        self.prev_rates = [cfg.rate_floor_mbps] * n_ue

    def tick(self, curves, capacities):
        cfg = self.cfg
        self.price = link_price_update(self.price, self.prev_rates,
                                       capacities, cfg.util_target,
                                       cfg.price_step)
        rates = [maxmin_device_update(self.price, curve, cfg.quality_min_db,
                                      cfg.quality_max_db, cfg.rate_floor_mbps,
                                      cfg.rate_ceil_mbps)
                 for curve in curves]
        self.prev_rates = rates
        return list(rates)


class RttBaselineCtl:
    """Per-UE multiplicative probing on windowed RTT."""

    kind = "rtt"

    def __init__(self, cfg: ControllerConfig, n_ue, start_rate=1.0):
        self.cfg = cfg
        self.rates = [start_rate] * n_ue

    def tick(self, avg_rtts):
        self.rates = [rtt_baseline_step(rtt, rate, self.cfg)
                      for rtt, rate in zip(avg_rtts, self.rates)]
        return list(self.rates)


class OttUxCtl:
    """Per-UE probing on the joint RTT/PSNR score."""

    kind = "ott"

    def __init__(self, cfg: ControllerConfig, n_ue, start_rate=1.0):
        self.cfg = cfg
        self.rates = [start_rate] * n_ue

    def tick(self, avg_rtts, psnrs):
        self.rates = [ott_ux_step(rtt, psnr, rate, self.cfg)
                      for rtt, psnr, rate in zip(avg_rtts, psnrs, self.rates)]
        return list(self.rates)


class UxAbrCtl:
    """Per-UE throughput follower fed by the air scheduler.

    Feedback per UE and tick: the scheduled-throughput average (Mbps)
    and the current sender backlog expressed as drain time at that
    share.  Rates chase the share the satisfaction-weighted scheduler
    actually grants, so capacity shifts toward unhappy sessions show up
    as encoder rate within a few periods.
    """

    kind = "uxabr"

    def __init__(self, cfg: ControllerConfig, n_ue, start_rate=1.0):
        self.cfg = cfg
        self.rates = [start_rate] * n_ue

    def tick(self, shares, backlog_ms):
        self.rates = [ux_abr_step(rate, share, backlog, self.cfg)
                      for rate, share, backlog in
                      zip(self.rates, shares, backlog_ms)]
        return list(self.rates)


class PragueCtl:
    """Per-UE scalable congestion control on ECN feedback.

    Feedback per UE and tick: (unmarked, marked, loss, rtt_ms) covering
    packets acknowledged since the previous tick; rtt_ms is their mean
    round trip or None.  Decreases are limited to one per estimated RTT.
    """

    kind = "prague"

    RTT_EWMA = 0.125

    def __init__(self, cfg: ControllerConfig, n_ue, start_rate=1.0):
        self.cfg = cfg
        self.rates = [start_rate] * n_ue
        self.rtt_est = [None] * n_ue
        self.t_last_decrease = [-math.inf] * n_ue

    def tick(self, now_ms, feedbacks):
        cfg = self.cfg
        for i, (unmarked, marked, loss, rtt_ms) in enumerate(feedbacks):
            if rtt_ms is not None:
                if self.rtt_est[i] is None:
                    self.rtt_est[i] = rtt_ms
                else:
                    self.rtt_est[i] += self.RTT_EWMA * (rtt_ms - self.rtt_est[i])
            est = self.rtt_est[i]
            allow = now_ms - self.t_last_decrease[i] >= (est or 0.0)
            total = unmarked + marked
            frac = marked / total if total else 0.0
            self.rates[i], decreased = prague_step(
                self.rates[i], unmarked, frac, loss, est, cfg.packet_bits,
                cfg.rate_floor_mbps, cfg.rate_ceil_mbps, allow)
            if decreased:
                self.t_last_decrease[i] = now_ms
        return list(self.rates)


def make_controller(scheme, cfg: ControllerConfig, n_ue, gammas=None,
                    start_rate=1.0):
    """Build the controller object for a scheme name; ux-pf pairs the
    satisfaction-weighted scheduler with a throughput follower so the
    scheduler's capacity shifts feed back into source rates."""
    if scheme == "maxcap-central":
        return CentralMaxCap(cfg, n_ue, gammas)
    if scheme == "maxmin-central":
        return CentralMaxMin(cfg, n_ue)
    if scheme == "maxcap-assisted":
        return AssistedMaxCap(cfg, n_ue, gammas)
    if scheme == "maxmin-assisted":
        return AssistedMaxMin(cfg, n_ue)
    if scheme == "rtt-baseline":
        return RttBaselineCtl(cfg, n_ue, start_rate)
    if scheme == "ott-ux":
        return OttUxCtl(cfg, n_ue, start_rate)
    if scheme == "ux-pf":
        return UxAbrCtl(cfg, n_ue, start_rate)
    if scheme == "prague":
        return PragueCtl(cfg, n_ue, start_rate)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
