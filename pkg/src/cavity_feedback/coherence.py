"""Ensemble coherence estimates, Ramsey fringes, decay fits and erasure statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .model import SystemParams
from .trajectory import ShotRecord


@dataclass(frozen=True)
class CoherencePoint:
    """Complex coherence with the standard error of its magnitude (radial jackknife)."""

    value: complex
    std_err: float
    n_samples: int

    @property
    def magnitude(self) -> float:
        return abs(self.value)

    @property
    def phase(self) -> float:
        return math.atan2(self.value.imag, self.value.real)


def _mean_with_error(phases: np.ndarray) -> tuple[complex, float]:
    z = np.exp(1j * phases)
    n = z.size
    mean = complex(z.mean())
    if n < 2:
        return mean, math.inf
    # jackknife SE of a mean equals the sample SE; project onto the mean direction
    direction = mean / abs(mean) if abs(mean) > 1e-12 else 1.0
    radial = (z * np.conj(direction)).real
    return mean, float(radial.std(ddof=1) / math.sqrt(n))


def phase_average(phases: Sequence[float]) -> CoherencePoint:
    """Sample mean of e^{i phase} with its radial standard error."""
    ph = np.asarray(phases, dtype=float)
    if ph.size == 0:
        raise ValueError("no phases to average")
    mean, se = _mean_with_error(ph)
    return CoherencePoint(mean, se, int(ph.size))


def deterministic_factor(params: SystemParams, n_measurements: int, t: float) -> float:
    """Readout-induced factor C_RO^n times the photon-loss amplitude e^{-t / 2 T1c}."""
    loss = math.exp(-t / (2.0 * params.t1_cavity)) if math.isfinite(params.t1_cavity) else 1.0
    return params.c_ro ** n_measurements * loss


def coherence_of(records: Sequence[ShotRecord], params: SystemParams) -> CoherencePoint:
    """Mean of e^{i theta_net} over shots, times readout and photon-loss factors."""
    if not records:
        raise ValueError("empty ensemble")
    n_cycles = records[0].n_cycles
    if any(r.n_cycles != n_cycles for r in records):
        raise ValueError("records have different durations")
    phases = np.array([r.theta_net for r in records])
    mean, se = _mean_with_error(phases)
    f = deterministic_factor(params, records[0].n_measurements, records[0].duration)
    return CoherencePoint(mean * f, se * f, len(records))


def postselect(records: Sequence[ShotRecord], k: int, params: SystemParams) -> CoherencePoint:
    """Coherence of the shots with exactly ``k`` detected excitations."""
    subset = [r for r in records if r.k_detected == k]
    if not subset:
        counts: dict[int, int] = {}
        for r in records:
            counts[r.k_detected] = counts.get(r.k_detected, 0) + 1
        raise ValueError(f"no shots with k={k}; observed counts {dict(sorted(counts.items()))}")
    return coherence_of(subset, params)


def k_distribution(records: Sequence[ShotRecord]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for r in records:
        counts[r.k_detected] = counts.get(r.k_detected, 0) + 1
    return dict(sorted(counts.items()))


def coherence_series(records: Sequence[ShotRecord], params: SystemParams, n_grid: Iterable[int],
                     k: int | None = None) -> list[tuple[float, CoherencePoint]]:
    """Coherence after each prefix length in ``n_grid`` cycles; ``k`` postselects on the prefix."""
    out = []
    for n in n_grid:
        prefix = [r.truncate(n) for r in records]
        point = coherence_of(prefix, params) if k is None else postselect(prefix, k, params)
        out.append((n * params.t_m, point))
    return out


def interval_coherence_from_conditioned(records: Sequence[ShotRecord], params: SystemParams) -> CoherencePoint:
    """Per-interval coherence from single-excitation conditioned shots.

    ``C = (1 - w) + w <e^{i theta}>`` with ``w`` the conditioning weight, times C_RO.
    """
    if not records:
        raise ValueError("empty ensemble")
    w = records[0].weight
    mean, se = _mean_with_error(np.array([r.theta_net for r in records]))
    value = ((1.0 - w) + w * mean) * params.c_ro
    return CoherencePoint(value, w * se * params.c_ro, len(records))


def ramsey_probability(c: complex, theta: float) -> float:
    """Probability of the + outcome along the basis rotated by ``theta``."""
    if abs(c) > 1.0 + 1e-12:
        raise ValueError(f"|c| = {abs(c)} exceeds 1")
    return 0.5 * (1.0 + abs(c) * math.cos(math.atan2(c.imag, c.real) - theta))


@dataclass(frozen=True)
class FringeFit:
    magnitude: float
    phase: float
    phase_defined: bool

    @property
    def value(self) -> complex:
        return self.magnitude * complex(math.cos(self.phase), math.sin(self.phase))


def fit_fringe(samples: Sequence[tuple[float, float]], tol: float = 1e-12) -> FringeFit:
    """Least-squares fit of ``2P - 1 = |C| cos(theta_bar - theta)``.

    Linear in ``(|C| cos theta_bar, |C| sin theta_bar)``; phase returned in (-pi, pi].
    """
    th = np.array([s[0] for s in samples], dtype=float)
    y = 2.0 * np.array([s[1] for s in samples], dtype=float) - 1.0
    design = np.column_stack([np.cos(th), np.sin(th)])
    if np.linalg.matrix_rank(design) < 2:
        raise ValueError("degenerate fringe design: need at least two independent angles")
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    mag = math.hypot(a, b)
    if mag < tol:
        return FringeFit(0.0, 0.0, False)
    phase = math.atan2(b, a)
    if phase <= -math.pi:
        phase += 2 * math.pi
    return FringeFit(mag, phase, True)


def fringe_samples(c: complex, thetas: Sequence[float]) -> list[tuple[float, float]]:
    return [(float(t), ramsey_probability(c, float(t))) for t in thetas]


def unwrap_phases(phases: Sequence[float]) -> np.ndarray:
    """Continuity-unwrapped phases along a sweep."""
    return np.unwrap(np.asarray(phases, dtype=float))


def tphi_from_t2(t2: float, t1_cavity: float) -> float:
    """Pure dephasing time ``(1/T2 - 1/2T1c)^-1``; inf when photon-loss limited."""
    rate = 1.0 / t2 - 1.0 / (2.0 * t1_cavity)
    return 1.0 / rate if rate > 0 else math.inf


@dataclass(frozen=True)
class DecayFit:
    t2: float
    t2_err: float
    amplitude: float
    tphi: float
    tphi_lower: float
    tphi_upper: float
    photon_loss_limited: bool
    chi2: float


class FitError(RuntimeError):
    pass


def fit_decay(series: Sequence[tuple[float, CoherencePoint]], t1_cavity: float) -> DecayFit:
    """Fit ``|C|(t) = A exp(-t/T2)`` and convert to a pure dephasing time.

    The amplitude is profiled out analytically; the T2 interval is where the profiled
    chi-square rises by one (scaled by the reduced chi-square when it exceeds one),
    which gives asymmetric bounds on T_phi.
    """
    if len(series) < 3:
        raise ValueError("need at least 3 time points")
    t = np.array([s[0] for s in series], dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    y = np.array([s[1].magnitude for s in series])
    sig = np.array([s[1].std_err for s in series])
    positive = sig[sig > 0]
    floor = positive.min() * 1e-3 if positive.size else 1e-12
    sig = np.maximum(sig, floor)
    wts = 1.0 / sig ** 2

    def profile(rate: float) -> tuple[float, float]:
        f = np.exp(-rate * t)
        amp = float((wts * y * f).sum() / (wts * f * f).sum())
        return float((wts * (y - amp * f) ** 2).sum()), amp

    # initial rate from log-linear regression on positive points
    ok = y > 0
    if ok.sum() < 2:
        raise FitError("coherence is not positive at enough points")
    slope = np.polyfit(t[ok], np.log(y[ok]), 1)[0]
    r0 = max(-slope, 1e-12 / t.max())
    span = 1.0 / (t.max() - t.min())
    lo, hi = max(r0 - 50 * span, 0.0), r0 + 50 * span
    res = minimize_scalar(lambda r: profile(r)[0], bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(r0, span)})
    rate = float(res.x)
    chi2, amp = profile(rate)
    if not math.isfinite(chi2) or rate <= 0:
        raise FitError(f"decay fit diverged (rate={rate})")
    dof = max(len(t) - 2, 1)
    scale = max(1.0, chi2 / dof)
    target = chi2 + scale

    def crossing(inside: float, outside: float) -> float:
        for _ in range(200):
            m = 0.5 * (inside + outside)
            if profile(m)[0] < target:
                inside = m
            else:
                outside = m
        return 0.5 * (inside + outside)

    def bound(direction: int) -> float:
        step = max(rate, span) * 1e-3
        while step < 1e6 * max(rate, span):
            r = rate + direction * step
            if r <= 0:
                return crossing(rate, 0.0) if profile(0.0)[0] >= target else 0.0
            if profile(r)[0] >= target:
                return crossing(rate, r)
            step *= 2
        return math.inf if direction > 0 else 0.0

    r_lo, r_hi = bound(-1), bound(+1)

    loss = 1.0 / (2.0 * t1_cavity)
    t2 = 1.0 / rate
    t2_err = 0.5 * (1.0 / r_lo - 1.0 / r_hi) if r_lo > 0 else math.inf
    tphi = tphi_from_t2(t2, t1_cavity)
    lower = 1.0 / (r_hi - loss) if r_hi > loss else math.inf
    upper = 1.0 / (r_lo - loss) if r_lo > loss else math.inf
    return DecayFit(t2=t2, t2_err=t2_err, amplitude=amp, tphi=tphi, tphi_lower=lower,
                    tphi_upper=upper, photon_loss_limited=rate <= loss, chi2=chi2)


def survival_fraction(records: Sequence[ShotRecord], time_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Fraction of shots with no e outcome up to each time."""
    if not records:
        return [(float(t), math.nan) for t in time_grid]
    t_m = records[0].t_m
    first = np.array([np.inf if (f := r.first_detection()) is None else f for r in records], dtype=float)
    out = []
    for t in time_grid:
        n = int(math.floor(t / t_m + 1e-9))
        out.append((float(t), float(np.mean(first >= n))))
    return out


@dataclass(frozen=True)
class RateFit:
    rate: float
    rate_err: float
    n_events: int


def erasure_rate_mle(records: Sequence[ShotRecord], horizon_cycles: int | None = None) -> RateFit:
    """Maximum-likelihood first-detection rate from right-censored geometric waiting times."""
    if not records:
        raise ValueError("empty ensemble")
    t_m = records[0].t_m
    horizon = records[0].n_cycles if horizon_cycles is None else horizon_cycles
    events, exposure = 0, 0
    for r in records:
        f = r.first_detection()
        if f is not None and f < horizon:
            events += 1
            exposure += f + 1
        else:
            exposure += horizon
    if events == 0:
        return RateFit(0.0, math.inf, 0)
    h = events / exposure
    rate = -math.log1p(-h) / t_m
    err = rate / math.sqrt(events)
    return RateFit(rate, err, events)


def fit_survival(table: Sequence[tuple[float, float]], n_shots: int) -> RateFit:
    """Weighted least-squares fit of ``S(t) = exp(-r t)`` to a survival table."""
    t = np.array([r[0] for r in table])
    s = np.array([r[1] for r in table])
    ok = (s > 0) & (s < 1) & (t > 0)
    if ok.sum() < 1:
        raise FitError("survival table has no informative points")
    # delta method: var(log S) = (1 - S) / (N S)
    w = n_shots * s[ok] / (1.0 - s[ok])
    x, z = t[ok], -np.log(s[ok])
    rate = float((w * x * z).sum() / (w * x * x).sum())
    err = float(1.0 / math.sqrt((w * x * x).sum()))
    return RateFit(rate, err, int(round(n_shots * (1 - s[ok][-1]))))


def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


def fringe_csv(samples: Sequence[tuple[float, float]]) -> str:
    return "theta,P\n" + "".join(f"{_fmt(t)},{_fmt(p)}\n" for t, p in samples)


def decay_csv(series: Sequence[tuple[float, CoherencePoint]]) -> str:
    return "t,abs_C,err\n" + "".join(f"{_fmt(t)},{_fmt(c.magnitude)},{_fmt(c.std_err)}\n" for t, c in series)


def survival_csv(table: Sequence[tuple[float, float]]) -> str:
    return "t,fraction\n" + "".join(f"{_fmt(t)},{_fmt(f)}\n" for t, f in table)
