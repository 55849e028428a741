"""Exact Monte Carlo of the ancilla two-state chain under repeated measurement and feedback.

Timing convention: cycle ``i`` covers ``[i t_m, (i + 1) t_m)`` and ends with an
instantaneous detection. The detection-to-reset gap ``t_g`` overlaps the start of the
following cycle, so occupation accumulated during the gap is booked to that cycle.
The cavity phase of a shot is::

    theta_net = chi * (time in |e>) + sum(feedback corrections) + sum(offsets)

where an offset ``theta_0`` is added for every detection made while the ancilla is
truly excited. Photon loss and readout-induced dephasing are deterministic factors
applied in :mod:`cavity_feedback.coherence`, not sampled here.

Quiet stretches (ancilla in G, no reset pending) are skipped analytically: the next
excitation time is exponential and the next false positive geometric, so a shot costs
time proportional to its number of events rather than its number of cycles. Only
non-quiet cycles are stored in :attr:`ShotRecord.cycles`.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import AncillaState, ParameterWarning, SystemParams

G, E = AncillaState.G, AncillaState.E

SAMPLING_MODES = ("direct", "conditioned")


@dataclass(frozen=True)
class CycleRecord:
    index: int
    occupation_time: float
    outcome: AncillaState | None  # None when the cycle had no measurement
    true_state_at_detection: AncillaState
    reset_applied: bool = False
    correction_applied: float = 0.0
    offset_applied: float = 0.0


@dataclass(frozen=True)
class ProtocolConfig:
    duration: float
    feedback_enabled: bool = True
    reset_enabled: bool = True
    rng_seed: int = 0
    sampling_mode: str = "direct"
    measure_enabled: bool = True
    initial_state: AncillaState = G

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"sampling_mode must be one of {SAMPLING_MODES}")
        if (self.feedback_enabled or self.reset_enabled) and not self.measure_enabled:
            raise ValueError("feedback and reset need measurements")

    def n_cycles(self, t_m: float) -> int:
        return int(math.floor(self.duration / t_m + 1e-9))


@dataclass(frozen=True)
class ShotRecord:
    """One realization. ``cycles`` holds only the non-quiet cycles, in order.

    Every omitted cycle had zero occupation, a ``g`` outcome from a ground-state
    ancilla, and no reset or correction.
    """

    cycles: tuple[CycleRecord, ...]
    n_cycles: int
    t_m: float
    chi: float
    n_measurements: int
    theta_net: float
    k_detected: int
    weight: float = 1.0

    @property
    def erasure(self) -> bool:
        return self.k_detected > 0

    @property
    def duration(self) -> float:
        return self.n_cycles * self.t_m

    def cycle_phase(self, c: CycleRecord) -> float:
        return self.chi * c.occupation_time + c.correction_applied + c.offset_applied

    def truncate(self, n_cycles: int) -> "ShotRecord":
        """The record restricted to its first ``n_cycles`` cycles."""
        if not 0 <= n_cycles <= self.n_cycles:
            raise ValueError(f"cannot truncate {self.n_cycles} cycles to {n_cycles}")
        kept = tuple(c for c in self.cycles if c.index < n_cycles)
        return ShotRecord(
            cycles=kept, n_cycles=n_cycles, t_m=self.t_m, chi=self.chi,
            n_measurements=n_cycles if self.n_measurements else 0,
            theta_net=math.fsum(self.cycle_phase(c) for c in kept),
            k_detected=sum(1 for c in kept if c.outcome == E), weight=self.weight,
        )

    def first_detection(self) -> int | None:
        """Index of the first cycle with an e outcome, or None."""
        for c in self.cycles:
            if c.outcome == E:
                return c.index
        return None

    def expand(self) -> list[CycleRecord]:
        """Dense per-cycle list, quiet cycles included."""
        sparse = {c.index: c for c in self.cycles}
        quiet_outcome = G if self.n_measurements else None
        return [sparse.get(i, CycleRecord(i, 0.0, quiet_outcome, G)) for i in range(self.n_cycles)]


def _exp(rng: np.random.Generator, rate: float) -> float:
    return rng.exponential(1.0 / rate) if rate > 0 else math.inf


def evolve_ctmc(state: AncillaState, dt: float, params: SystemParams,
                rng: np.random.Generator) -> tuple[AncillaState, float]:
    """Exact two-state path over ``[0, dt]``: returns the end state and the time spent in E."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    remaining, occupied = dt, 0.0
    while True:
        hold = _exp(rng, params.gamma_up if state == G else params.gamma)
        if hold >= remaining:
            if state == E:
                occupied += remaining
            return state, occupied
        if state == E:
            occupied += hold
        remaining -= hold
        state = E if state == G else G


def measure(true_state: AncillaState, params: SystemParams, rng: np.random.Generator) -> AncillaState:
    """Readout through the confusion matrix (p_e|g false positive, p_g|e false negative)."""
    u = rng.random()
    if true_state == G:
        return E if u < params.p_e_given_g else G
    return G if u < params.p_g_given_e else E


def _flip(s: AncillaState) -> AncillaState:
    return E if s == G else G


def _run_idle(config: ProtocolConfig, params: SystemParams, rng: np.random.Generator) -> ShotRecord:
    n = config.n_cycles(params.t_m)
    t_end = n * params.t_m
    occ: dict[int, float] = {}
    t, state = 0.0, config.initial_state
    while t < t_end:
        hold = _exp(rng, params.gamma_up if state == G else params.gamma)
        stop = min(t + hold, t_end)
        if state == E:
            # spread [t, stop) over cycle windows
            a, i = t, min(int(t / params.t_m), n - 1)
            while a < stop:
                b = stop if i == n - 1 else min(stop, (i + 1) * params.t_m)
                if b > a:  # rounding can put a on the boundary of cycle i
                    occ[i] = occ.get(i, 0.0) + (b - a)
                    a = b
                i += 1
        t = stop
        state = _flip(state)
    cycles = tuple(CycleRecord(i, occ[i], None, G) for i in sorted(occ))
    theta = params.chi * math.fsum(occ.values())
    return ShotRecord(cycles, n, params.t_m, params.chi, 0, theta, 0)


def _geometric(rng: np.random.Generator, p: float) -> float:
    """Trials up to and including the first success."""
    if p <= 0:
        return math.inf
    if p >= 1:
        return 1
    return int(rng.geometric(p))


def run_shot(config: ProtocolConfig, params: SystemParams, rng: np.random.Generator | None = None) -> ShotRecord:
    """Simulate one shot of the measure / reset / phase-correction loop."""
    if config.duration < params.t_m:
        raise ValueError(f"duration {config.duration} shorter than one interval t_m={params.t_m}")
    if config.sampling_mode == "conditioned":
        return run_conditioned_shot(config, params, rng)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    if not config.measure_enabled:
        return _run_idle(config, params, rng)

    n = config.n_cycles(params.t_m)
    t_m, t_g = params.t_m, params.t_g
    theta_fb = params.feedback_phase
    cycles: list[CycleRecord] = []
    state = config.initial_state
    pending_reset = False
    i = 0
    while i < n:
        if state == G and not pending_reset:
            # skip quiet cycles: next excitation vs next false positive
            tau = _exp(rng, params.gamma_up)
            skipped = math.floor(tau / t_m) if math.isfinite(tau) else math.inf
            c_x = i + skipped
            c_fp = i + _geometric(rng, params.p_e_given_g) - 1
            if c_fp < c_x and c_fp < n:
                i = int(c_fp)
                cycles.append(CycleRecord(i, 0.0, E, G, config.reset_enabled,
                                          theta_fb if config.feedback_enabled else 0.0, 0.0))
                pending_reset = config.reset_enabled
                i += 1
                continue
            if c_x >= n:
                break
            i = int(c_x)
            u = min(tau - skipped * t_m, t_m)  # excitation instant within cycle i
            state, occ = evolve_ctmc(E, t_m - u, params, rng)
        elif pending_reset:
            state, o1 = evolve_ctmc(state, t_g, params, rng)
            state = _flip(state)
            state, o2 = evolve_ctmc(state, t_m - t_g, params, rng)
            occ = o1 + o2
            pending_reset = False
        else:
            state, occ = evolve_ctmc(state, t_m, params, rng)

        outcome = measure(state, params, rng)
        detected = outcome == E
        offset = params.theta_0 if state == E else 0.0
        corr = theta_fb if (detected and config.feedback_enabled) else 0.0
        reset = detected and config.reset_enabled
        cycles.append(CycleRecord(i, occ, outcome, state, reset, corr, offset))
        pending_reset = reset
        i += 1

    theta = math.fsum(params.chi * c.occupation_time + c.correction_applied + c.offset_applied for c in cycles)
    k = sum(1 for c in cycles if c.outcome == E)
    return ShotRecord(tuple(cycles), n, t_m, params.chi, n, theta, k)


def _warn_if_not_rare(params: SystemParams) -> None:
    if params.gamma_up * params.t_m > 0.05:
        warnings.warn(f"gamma_up*t_m = {params.gamma_up * params.t_m:.3g}: single-excitation "
                      "conditioning is not accurate", ParameterWarning, stacklevel=3)


def run_conditioned_interval(params: SystemParams, rng: np.random.Generator) -> tuple[float, bool, float]:
    """One interval conditioned on exactly one excitation.

    The excitation instant is uniform on ``[0, t_m]`` and then competes with decay at
    rate gamma. Returns ``(occupation, survived_to_detection, weight)`` where the weight
    ``gamma_up * t_m`` is the probability of the conditioning event.
    """
    _warn_if_not_rare(params)
    remaining = params.t_m - rng.uniform(0.0, params.t_m)
    decay = _exp(rng, params.gamma)
    survived = decay > remaining
    return (remaining if survived else decay), bool(survived), params.gamma_up * params.t_m


def sample_conditioned_intervals(params: SystemParams, n: int,
                                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`run_conditioned_interval`: occupation times and survival flags."""
    _warn_if_not_rare(params)
    remaining = params.t_m - rng.uniform(0.0, params.t_m, size=n)
    if params.gamma > 0:
        decay = rng.exponential(1.0 / params.gamma, size=n)
    else:
        decay = np.full(n, np.inf)
    survived = decay > remaining
    return np.where(survived, remaining, decay), survived


def run_conditioned_shot(config: ProtocolConfig, params: SystemParams,
                         rng: np.random.Generator | None = None) -> ShotRecord:
    """Single-interval shot forced to contain one excitation, weighted by its probability.

    This samples the ideal-measurement event model (no detection-to-reset gap); a
    survivor is read out through the confusion matrix like any detection.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    occ, survived, weight = run_conditioned_interval(params, rng)
    state = E if survived else G
    outcome = measure(state, params, rng)
    detected = outcome == E
    corr = params.feedback_phase if (detected and config.feedback_enabled) else 0.0
    offset = params.theta_0 if survived else 0.0
    c = CycleRecord(0, occ, outcome, state, detected and config.reset_enabled, corr, offset)
    theta = params.chi * occ + corr + offset
    return ShotRecord((c,), 1, params.t_m, params.chi, 1, theta, int(detected), weight=weight)


def sample_decay_conditioned(params: SystemParams, n: int,
                             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Prepare E, evolve one interval, measure. Returns occupation times and outcomes."""
    occ = np.empty(n)
    out = np.empty(n, dtype=np.int8)
    for j in range(n):
        s, occ[j] = evolve_ctmc(E, params.t_m, params, rng)
        out[j] = measure(s, params, rng)
    return occ, out


def shot_seed(master_seed: int, index: int) -> int:
    """64-bit seed for shot ``index``, a hash of ``(master_seed, index)``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_chunk(args) -> list[ShotRecord]:
    config, params, master_seed, start, stop = args
    out = []
    for i in range(start, stop):
        cfg = ProtocolConfig(**{**config.__dict__, "rng_seed": shot_seed(master_seed, i)})
        out.append(run_shot(cfg, params))
    return out


def run_ensemble(config: ProtocolConfig, params: SystemParams, n_shots: int, master_seed: int,
                 workers: int = 1, chunk_size: int | None = None) -> list[ShotRecord]:
    """``n_shots`` independent shots; shot ``i`` is seeded by :func:`shot_seed`.

    Output is identical for any ``workers`` since each shot owns its stream.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    if chunk_size is None:
        chunk_size = max(1, math.ceil(n_shots / (4 * workers)))
    tasks = [(config, params, master_seed, s, min(s + chunk_size, n_shots))
             for s in range(0, n_shots, chunk_size)]
    if workers == 1 or len(tasks) == 1:
        chunks = map(_run_chunk, tasks)
        return [r for chunk in chunks for r in chunk]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [r for chunk in pool.map(_run_chunk, tasks) for r in chunk]


SHOT_CSV_COLUMNS = ("shot_id", "k_detected", "theta_net", "n_measurements", "erasure")


def shots_to_csv(records: Sequence[ShotRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SHOT_CSV_COLUMNS)
    for i, r in enumerate(records):
        w.writerow([i, r.k_detected, repr(float(r.theta_net)), r.n_measurements, int(r.erasure)])
    return buf.getvalue()


def shots_from_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({"shot_id": int(row["shot_id"]), "k_detected": int(row["k_detected"]),
                     "theta_net": float(row["theta_net"]), "n_measurements": int(row["n_measurements"]),
                     "erasure": bool(int(row["erasure"]))})
    return rows
