"""Closed-form coherence, dephasing-rate and error-budget expressions.

These are the reference values the Monte Carlo in :mod:`cavity_feedback.trajectory`
is checked against. Conventions:

* ``x = gamma * t_m`` and ``w = (i chi - gamma) t_m`` are the dimensionless decay and
  complex phase-decay exponents of one measurement interval.
* The per-interval coherence of each event class is ``C_i`` and its dephasing
  contribution is ``p_i (1 - Re C_i) / t_m``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from .model import SystemParams, readout_factor_from_postselected

EVENT_LABELS = ("0a", "0b", "1a", "1b", "1c", "2a", "2b")
POSTSELECTED_EVENTS = ("0a", "2a")

_SERIES_CUTOFF = 1e-4


def sinc(x):
    """Unnormalized sinc, sin(x)/x, with the removable singularity handled by series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 - x * x / 6.0 + x ** 4 / 120.0, np.sin(safe) / safe)
    return out if out.ndim else float(out)


def _e1(w):
    """(e^w - 1)/w, stable near w = 0 (complex allowed)."""
    w = complex(w)
    if abs(w) < 1e-3:
        return 1.0 + w / 2.0 + w * w / 6.0 + w ** 3 / 24.0
    return complex(np.expm1(w)) / w


def _e2(w):
    """(e^w - 1 - w)/w^2, stable near w = 0."""
    w = complex(w)
    if abs(w) < 1e-2:
        return 0.5 + w / 6.0 + w * w / 24.0 + w ** 3 / 120.0 + w ** 4 / 720.0
    return (complex(np.expm1(w)) - w) / (w * w)


def _survive_fraction(x: float) -> float:
    """(1 - e^{-x})/x: probability weight that an excitation at a uniform instant survives."""
    return _e1(-x).real


def _decay_fraction(x: float) -> float:
    """1 - (1 - e^{-x})/x, by series for small x to avoid cancellation."""
    if x < 1e-3:
        return x / 2.0 - x * x / 6.0 + x ** 3 / 24.0
    return 1.0 - (-math.expm1(-x)) / x


def dephasing_idle(params: SystemParams) -> float:
    """Pure dephasing rate without measurement: heating rate times chi^2/(chi^2 + gamma^2)."""
    chi, g = params.chi, params.gamma
    return params.gamma_up * chi * chi / (chi * chi + g * g)


def single_excitation_coherence_no_decay(chi: float, t_m: float, theta_0: float = 0.0) -> tuple[float, float]:
    """Magnitude and phase of the single-excitation coherence when decay is negligible."""
    half = chi * t_m / 2.0
    return abs(sinc(half)), math.fmod(half, math.pi) + theta_0


def event1_coherence(params: SystemParams, theta_tilde: float = 0.0) -> tuple[float, complex]:
    """Probability and coherence of an excitation that survives until detection.

    Includes the feedback phase ``theta_tilde`` and offset ``theta_0`` but neither the
    gap phase nor readout factors (those belong to the event budget).
    """
    x = params.gamma * params.t_m
    w = complex(-params.gamma, params.chi) * params.t_m
    p1 = params.gamma_up * params.t_m * _survive_fraction(x)
    c1 = _e1(w) / _survive_fraction(x) * complex(np.exp(1j * (theta_tilde + params.theta_0)))
    return p1, c1


def event2_coherence(params: SystemParams) -> tuple[float, complex]:
    """Probability and coherence of an excitation that decays before the next detection."""
    x = params.gamma * params.t_m
    w = complex(-params.gamma, params.chi) * params.t_m
    frac = _decay_fraction(x)
    p2 = params.gamma_up * params.t_m * frac
    if x == 0.0:
        return 0.0, 1.0 + 0j
    return p2, x * _e2(w) / frac


def dephasing_feedback_ideal(params: SystemParams) -> float:
    return params.gamma_up * (1.0 - abs(sinc(params.chi * params.t_m / 2.0)))


def dephasing_no_phase_correction(params: SystemParams) -> float:
    return params.gamma_up * (1.0 - sinc(params.chi * params.t_m))


def decay_conditioned_coherence(params: SystemParams) -> complex:
    """Coherence after preparing the ancilla excited and postselecting a ground-state outcome."""
    x = params.gamma * params.t_m
    w = complex(-params.gamma, params.chi) * params.t_m
    return _e1(w) / _survive_fraction(x)


@dataclass(frozen=True)
class EventTerm:
    label: str
    probability: float
    coherence: complex
    alpha: int
    theta_i0: float
    dephasing_rate: float

    @property
    def tphi(self) -> float:
        return 1.0 / self.dephasing_rate if self.dephasing_rate > 0 else math.inf


@dataclass(frozen=True)
class BudgetReport:
    terms: tuple[EventTerm, ...]
    theta_tilde: float
    total_rate: float
    total_tphi: float
    erasure_rate: float
    postselected_rate: float
    t_m: float = field(repr=False, default=0.0)

    def term(self, label: str) -> EventTerm:
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(label)

    def rows(self) -> list[dict]:
        return [
            {"label": t.label, "p": t.probability, "abs_C": abs(t.coherence),
             "arg_C": math.atan2(t.coherence.imag, t.coherence.real),
             "gamma_phi": t.dephasing_rate, "t_phi": t.tphi}
            for t in self.terms
        ]

    def to_csv(self) -> str:
        lines = ["label,p,abs_C,arg_C,gamma_phi,t_phi"]
        for r in self.rows():
            lines.append(",".join([r["label"]] + [_fmt(r[k]) for k in ("p", "abs_C", "arg_C", "gamma_phi", "t_phi")]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "theta_tilde": self.theta_tilde,
            "total_rate": self.total_rate,
            "total_tphi": self.total_tphi,
            "erasure_rate": self.erasure_rate,
            "postselected_rate": self.postselected_rate,
            "postselected_tphi": 1.0 / self.postselected_rate if self.postselected_rate > 0 else None,
            "terms": [{**r, "t_phi": None if math.isinf(r["t_phi"]) else r["t_phi"]} for r in self.rows()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


@dataclass(frozen=True)
class _EventTable:
    """Event probabilities and zero-feedback coherences, vectorized over feedback phase."""

    labels: tuple[str, ...]
    p: np.ndarray
    c0: np.ndarray
    alpha: np.ndarray
    t_m: float

    def coherences(self, theta_tilde: float) -> np.ndarray:
        return self.c0 * np.exp(1j * self.alpha * theta_tilde)

    def rates(self, theta_tilde: float) -> np.ndarray:
        return self.p * (1.0 - self.coherences(theta_tilde).real) / self.t_m

    def total_rate(self, theta_tilde):
        th = np.asarray(theta_tilde, dtype=float)
        re = (self.c0[:, None] * np.exp(1j * np.outer(self.alpha, th.ravel()))).real
        tot = (self.p[:, None] * (1.0 - re)).sum(axis=0) / self.t_m
        return tot.reshape(th.shape) if th.ndim else float(tot[0])


def _event_table(params: SystemParams) -> _EventTable:
    chi, t_m, t_g, th0 = params.chi, params.t_m, params.t_g, params.theta_0
    peg, pge, cro = params.p_e_given_g, params.p_g_given_e, params.c_ro
    p1, c1 = event1_coherence(params, 0.0)  # carries one theta_0, alpha 1
    p2, c2 = event2_coherence(params)
    p0 = 1.0 - params.gamma_up * t_m
    stay = math.exp(-params.gamma * t_g)

    def ph(a):
        return complex(np.exp(1j * a))

    rows = [
        ("0a", p0 * (1 - peg), cro, 0),
        ("0b", p0 * peg, cro * ph(chi * t_m + th0), 2),
        ("1a", p1 * (1 - pge) * stay, cro * c1 * ph(chi * t_g), 1),
        # a missed detection triggers no reset, so the gap survival factor does not apply
        ("1b", p1 * pge, cro * c1 * ph(chi * (t_m + t_g) + th0), 1),
        ("1c", p1 * (1 - pge) * (1 - stay), cro * c1 * ph(chi * (t_m + t_g / 2) + th0), 2),
        ("2a", p2 * (1 - peg), cro * c2, 0),
        ("2b", p2 * peg, cro * c2 * ph(chi * t_m + th0), 2),
    ]
    labels, p, c0, alpha = zip(*rows)
    return _EventTable(labels, np.array(p), np.array(c0, dtype=complex), np.array(alpha, dtype=float), t_m)


def event_probabilities(params: SystemParams) -> dict[str, float]:
    t = _event_table(params)
    return dict(zip(t.labels, t.p.tolist()))


def erasure_rate(params: SystemParams) -> float:
    """Expected rate of flagged excitations: true heating plus false positives per interval."""
    return params.gamma_up + params.p_e_given_g / params.t_m


def first_detection_rate(params: SystemParams) -> float:
    """Hazard of the first e-outcome for an ancilla starting in G under the exact two-state chain.

    Unlike :func:`erasure_rate` this accounts for excitations that decay before detection.
    A missed excitation is counted if it survives to the following detection.
    """
    k = params.gamma_up + params.gamma
    p_e = params.gamma_up / k * -math.expm1(-k * params.t_m) if k > 0 else 0.0
    survive = math.exp(-params.gamma * params.t_m)
    pee = 1.0 - params.p_g_given_e
    h = p_e * (pee + params.p_g_given_e * survive * pee) + (1.0 - p_e) * params.p_e_given_g
    return -math.log1p(-h) / params.t_m


def event_budget(params: SystemParams, theta_tilde: float | None = None) -> BudgetReport:
    """Seven-event dephasing budget; ``theta_tilde`` defaults to :func:`optimal_phase`."""
    table = _event_table(params)
    if theta_tilde is None:
        theta_tilde = optimal_phase(params)
    cs = table.coherences(theta_tilde)
    rates = table.rates(theta_tilde)
    terms = tuple(
        EventTerm(label=lab, probability=float(p), coherence=complex(c), alpha=int(a),
                  theta_i0=float(np.angle(c0)), dephasing_rate=float(r))
        for lab, p, c, a, c0, r in zip(table.labels, table.p, cs, table.alpha, table.c0, rates)
    )
    total = float(rates.sum())
    ps = float(sum(t.dephasing_rate for t in terms if t.label in POSTSELECTED_EVENTS))
    return BudgetReport(terms=terms, theta_tilde=float(theta_tilde), total_rate=total,
                        total_tphi=1.0 / total if total > 0 else math.inf,
                        erasure_rate=erasure_rate(params), postselected_rate=ps, t_m=params.t_m)


def total_dephasing_rate(params: SystemParams, theta_tilde):
    return _event_table(params).total_rate(theta_tilde)


class DegenerateOptimum(ValueError):
    """No event carries the feedback phase, so the optimal phase is undefined."""


def optimal_phase(params: SystemParams) -> float:
    """Small-angle optimal feedback phase ``-sum(p|C|a th0) / sum(p|C|a^2)``."""
    t = _event_table(params)
    w = t.p * np.abs(t.c0) * t.alpha
    den = float((w * t.alpha).sum())
    if not den > 0:
        raise DegenerateOptimum("no feedback-bearing event has nonzero weight")
    return -float((w * np.angle(t.c0)).sum()) / den


def refine_phase(params: SystemParams, n_grid: int = 721, xtol: float = 1e-10) -> float:
    """Exact minimizer of the total dephasing rate over the feedback phase.

    Grid search over (-pi, pi] followed by bounded Brent polishing in the best cell.
    """
    t = _event_table(params)
    grid = np.linspace(-math.pi, math.pi, n_grid)
    vals = t.total_rate(grid)
    i = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(t.total_rate, bounds=(grid[i] - step, grid[i] + step), method="bounded",
                          options={"xatol": xtol})
    best = float(res.x) if res.fun <= vals[i] else float(grid[i])
    return math.remainder(best, 2 * math.pi)


def derived_readout_factor(params: SystemParams, postselected_tphi: float = 182e-3) -> float:
    """C_RO assigning event 0a the postselected rate left over after event 2a (with C_RO = 1)."""
    ideal = params.replace(c_ro=1.0)
    probs = event_probabilities(ideal)
    rate_2a = event_budget(ideal, theta_tilde=0.0).term("2a").dephasing_rate
    return readout_factor_from_postselected(params.t_m, postselected_tphi, rate_2a, p0a=probs["0a"])


def ideal_measurement(params: SystemParams) -> SystemParams:
    """Perfect readout, no readout-induced dephasing, no detection-to-reset gap."""
    return params.replace(p_e_given_g=0.0, p_g_given_e=0.0, c_ro=1.0, t_g=0.0)


MAP_MODES = ("with_phase", "without_phase", "postselected")


@dataclass(frozen=True)
class DephasingMap:
    chi_grid: np.ndarray
    t_m_grid: np.ndarray
    tphi: np.ndarray  # shape (len(chi_grid), len(t_m_grid))
    mode: str
    marker: tuple[float, float]
    marker_tphi: float

    def to_csv(self) -> str:
        lines = ["chi_hz,t_m,t_phi"]
        for i, c in enumerate(self.chi_grid):
            for j, tm in enumerate(self.t_m_grid):
                lines.append(f"{_fmt(c / (2 * math.pi))},{_fmt(tm)},{_fmt(self.tphi[i, j])}")
        return "\n".join(lines) + "\n"


def _mode_rate(params: SystemParams, mode: str, theta_tilde: float | None) -> float:
    if mode == "postselected":
        b = event_budget(params, theta_tilde=0.0)
        return b.postselected_rate
    if mode == "without_phase":
        return float(total_dephasing_rate(params, 0.0))
    if mode == "with_phase":
        th = refine_phase(params, n_grid=181) if theta_tilde is None else theta_tilde
        return float(total_dephasing_rate(params, th))
    raise ValueError(f"unknown map mode {mode!r}; choose from {MAP_MODES}")


def dephasing_map(chi_grid: Sequence[float], t_m_grid: Sequence[float], params: SystemParams,
                  mode: str = "with_phase", theta_tilde: float | None = None) -> DephasingMap:
    """Pure dephasing time over a (chi, t_m) grid; the ``params`` point is the marker.

    ``with_phase`` uses the exact optimal phase per cell unless ``theta_tilde`` forces one.
    """
    chi_grid = np.asarray(chi_grid, dtype=float)
    t_m_grid = np.asarray(t_m_grid, dtype=float)
    if (chi_grid <= 0).any() or (t_m_grid <= 0).any():
        raise ValueError("grids must be positive")
    out = np.empty((chi_grid.size, t_m_grid.size))
    for i, c in enumerate(chi_grid):
        for j, tm in enumerate(t_m_grid):
            r = _mode_rate(params.replace(chi=float(c), t_m=float(tm)), mode, theta_tilde)
            out[i, j] = 1.0 / r if r > 0 else math.inf
    r0 = _mode_rate(params, mode, theta_tilde)
    return DephasingMap(chi_grid, t_m_grid, out, mode, (params.chi, params.t_m),
                        1.0 / r0 if r0 > 0 else math.inf)


# chi/2pi from 10 kHz to 1 MHz, measurement rate from 10 kHz to 1 MHz
MAP_CHI_GRID = 2 * math.pi * np.logspace(4, 6, 41)
MAP_TM_GRID = 1.0 / np.logspace(4, 6, 41)


def discrimination_fidelity(p_eg: float, p_ge: float) -> float:
    return 1.0 - (p_eg + p_ge) / 2.0


def gaussian_confusion(separation: float, boundary: float) -> tuple[float, float]:
    """Confusion pair for unit-variance quadrature Gaussians at +/- separation/2.

    The ground-state Gaussian sits at +separation/2; outcomes at or left of the
    boundary are labelled e. Returns ``(p_e|g, p_g|e)``.
    """
    if not separation > 0:
        raise ValueError("separation must be positive")
    half = separation / 2.0
    p_eg = 0.5 * erfc(-(boundary - half) / math.sqrt(2.0))
    p_ge = 0.5 * erfc((boundary + half) / math.sqrt(2.0))
    return float(p_eg), float(p_ge)


@dataclass(frozen=True)
class BoundaryResult:
    boundary: float
    p_eg: float
    p_ge: float
    rate: float
    unimodal: bool


def _golden_section(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def boundary_objective(separation: float, params: SystemParams) -> Callable[[float], float]:
    def rate(boundary: float) -> float:
        p_eg, p_ge = gaussian_confusion(separation, boundary)
        q = params.replace(p_e_given_g=p_eg, p_g_given_e=p_ge)
        return float(total_dephasing_rate(q, refine_phase(q, n_grid=91)))
    return rate


def optimize_boundary(separation: float, params: SystemParams, n_grid: int = 81,
                      tol: float = 1e-4) -> BoundaryResult:
    """Decision boundary minimizing the total dephasing rate (golden-section, tolerance in sigma)."""
    if not separation > 0:
        raise ValueError("separation must be positive")
    f = boundary_objective(separation, params)
    half = separation / 2.0
    grid = np.linspace(-half - 1.0, half + 1.0, n_grid)
    vals = np.array([f(b) for b in grid])
    i = int(np.argmin(vals))
    interior = vals[1:-1]
    local_min = np.sum((interior < vals[:-2]) & (interior < vals[2:]))
    unimodal = bool(local_min <= 1)
    if not unimodal:
        warnings.warn("boundary objective is not unimodal; returning best grid point")
        best = float(grid[i])
    else:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
        best = _golden_section(f, lo, hi, tol)
        if f(best) > vals[i]:
            best = float(grid[i])
    p_eg, p_ge = gaussian_confusion(separation, best)
    return BoundaryResult(best, p_eg, p_ge, f(best), unimodal)


def budget_summary(params: SystemParams) -> dict:
    """Headline numbers used by reports: idle, ideal-feedback and full-budget dephasing times."""
    b = event_budget(params)
    return {
        "idle_tphi": 1.0 / dephasing_idle(params),
        "feedback_ideal_tphi": 1.0 / dephasing_feedback_ideal(params),
        "no_phase_correction_tphi": 1.0 / dephasing_no_phase_correction(params),
        "budget": b.to_dict(),
        "params": asdict(params),
    }
