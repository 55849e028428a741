"""Two-state hidden Markov model of the repeatedly measured ancilla.

Observations are 0 (g) / 1 (e). The hidden chain starts from ``initial`` at step 0,
and every observation ``o_k`` (k = 1..N) follows one transition, so the first outcome
is emitted from ``initial @ transition``. Recursions use per-step normalizers ``c_k``::

    f_hat(k) = M[:, o_k] * (T.T @ f_hat(k-1)) / c_k,   log L = sum(log c_k)
    b_hat(k) = T @ (M[:, o_{k+1}] * b_hat(k+1)) / c_{k+1},   b_hat(N) = (1, 1)
    omega(k) = f_hat(k) * b_hat(k)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

STATE_G, STATE_E = 0, 1
MAX_BRUTE_FORCE = 20


class ZeroLikelihoodError(ValueError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"observation at step {step} has zero probability under the model")


@dataclass(frozen=True)
class HmmParams:
    """The physical parameter tuple lambda = {p_e|g, p_g|e, gamma_up, gamma}."""

    p_eg: float
    p_ge: float
    gamma_up: float
    gamma: float


@dataclass(frozen=True)
class HmmModel:
    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray
    t_m: float = math.nan

    def __post_init__(self):
        for name in ("transition", "emission"):
            m = getattr(self, name)
            if m.shape != (2, 2) or np.any(m < 0) or np.any(m > 1):
                raise ValueError(f"{name} must be a 2x2 matrix with entries in [0, 1]")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError(f"{name} rows must sum to 1")
        if self.initial.shape != (2,) or abs(self.initial.sum() - 1.0) > 1e-12 or np.any(self.initial < 0):
            raise ValueError("initial must be a length-2 distribution")

    @property
    def p_up(self) -> float:
        return float(self.transition[0, 1])

    @property
    def p_down(self) -> float:
        return float(self.transition[1, 0])

    def to_params(self) -> HmmParams:
        """Map transition probabilities back to rates (first order in gamma_up * t_m)."""
        return HmmParams(p_eg=float(self.emission[0, 1]), p_ge=float(self.emission[1, 0]),
                         gamma_up=self.p_up / self.t_m, gamma=-math.log1p(-self.p_down) / self.t_m)


def stationary(transition: np.ndarray) -> np.ndarray:
    a, b = transition[0, 1], transition[1, 0]
    if a + b == 0:
        return np.array([1.0, 0.0])
    return np.array([b / (a + b), a / (a + b)])


def build_model(lam: HmmParams, t_m: float, initial: Sequence[float] | None = None) -> HmmModel:
    if lam.gamma_up < 0 or lam.gamma < 0 or not t_m > 0:
        raise ValueError("rates must be non-negative and t_m positive")
    for name, p in (("p_eg", lam.p_eg), ("p_ge", lam.p_ge)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name}={p} outside [0, 1]")
    p_up = lam.gamma_up * t_m
    if p_up >= 1.0:
        raise ValueError(f"gamma_up * t_m = {p_up} >= 1")
    p_down = -math.expm1(-lam.gamma * t_m)
    T = np.array([[1.0 - p_up, p_up], [p_down, 1.0 - p_down]])
    M = np.array([[1.0 - lam.p_eg, lam.p_eg], [lam.p_ge, 1.0 - lam.p_ge]])
    pi = stationary(T) if initial is None else np.asarray(initial, dtype=float)
    return HmmModel(T, M, pi, t_m)


def as_observations(obs) -> np.ndarray:
    a = np.asarray(obs)
    if a.dtype.kind in "US":
        a = np.array([{"g": 0, "e": 1, "0": 0, "1": 1}[str(x)] for x in a])
    a = a.astype(np.int8)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("observations must be a non-empty 1-D sequence")
    if np.any((a != 0) & (a != 1)):
        raise ValueError("observations must be 0 (g) or 1 (e)")
    return a


@numba.njit(cache=True)
def _forward_kernel(obs, T, M, pi):
    n = obs.size
    f = np.empty((n, 2))
    c = np.empty(n)
    p0, p1 = pi[0], pi[1]
    for k in range(n):
        o = obs[k]
        q0 = (T[0, 0] * p0 + T[1, 0] * p1) * M[0, o]
        q1 = (T[0, 1] * p0 + T[1, 1] * p1) * M[1, o]
        s = q0 + q1
        c[k] = s
        if s <= 0.0:
            return f, c, k
        p0, p1 = q0 / s, q1 / s
        f[k, 0] = p0
        f[k, 1] = p1
    return f, c, -1


@numba.njit(cache=True)
def _backward_kernel(obs, T, M, c, own_scale):
    """Returns b_hat for k = 0..N (row k) and per-step scale factors."""
    n = obs.size
    b = np.empty((n + 1, 2))
    scale = np.empty(n)
    b[n, 0] = 1.0
    b[n, 1] = 1.0
    for k in range(n - 1, -1, -1):
        o = obs[k]
        v0 = M[0, o] * b[k + 1, 0]
        v1 = M[1, o] * b[k + 1, 1]
        u0 = T[0, 0] * v0 + T[0, 1] * v1
        u1 = T[1, 0] * v0 + T[1, 1] * v1
        s = (u0 + u1) if own_scale else c[k]
        scale[k] = s
        if s <= 0.0:
            return b, scale, k
        b[k, 0] = u0 / s
        b[k, 1] = u1 / s
    return b, scale, -1


@numba.njit(cache=True)
def _expected_counts(obs, T, M, pi, f, b, c):
    """Expected transition counts (incl. the step-0 transition) and emission counts."""
    n = obs.size
    xi = np.zeros((2, 2))
    em = np.zeros((2, 2))
    prev0, prev1 = pi[0], pi[1]
    for k in range(n):
        o = obs[k]
        for j in range(2):
            w = M[j, o] * b[k + 1, j] / c[k]
            xi[0, j] += prev0 * T[0, j] * w
            xi[1, j] += prev1 * T[1, j] * w
        w0 = f[k, 0] * b[k + 1, 0]
        w1 = f[k, 1] * b[k + 1, 1]
        s = w0 + w1
        em[0, o] += w0 / s
        em[1, o] += w1 / s
        prev0, prev1 = f[k, 0], f[k, 1]
    return xi, em


@dataclass(frozen=True)
class ForwardResult:
    f_hat: np.ndarray  # (N, 2), row k-1 holds step k
    normalizers: np.ndarray
    log_likelihood: float


@dataclass(frozen=True)
class BackwardResult:
    b_hat: np.ndarray  # (N + 1, 2), row k holds step k (row N is the boundary)
    normalizers: np.ndarray
    log_likelihood: float


@dataclass(frozen=True)
class InferenceResult:
    log_likelihood: float
    smoothed: np.ndarray  # (N, 2)
    normalizers: np.ndarray


def forward(obs, model: HmmModel) -> ForwardResult:
    o = as_observations(obs)
    f, c, bad = _forward_kernel(o, model.transition, model.emission, model.initial)
    if bad >= 0:
        raise ZeroLikelihoodError(bad + 1)
    return ForwardResult(f, c, float(np.log(c).sum()))


def backward(obs, model: HmmModel, normalizers: np.ndarray | None = None) -> BackwardResult:
    """Normalized backward pass.

    With ``normalizers`` (the forward ``c_k``) the usual shared scaling is used;
    without, each step is scaled to sum to one and the likelihood follows from
    ``initial . b(0)`` independently of the forward pass.
    """
    o = as_observations(obs)
    own = normalizers is None
    c = np.ones(o.size) if own else np.asarray(normalizers, dtype=float)
    b, scale, bad = _backward_kernel(o, model.transition, model.emission, c, own)
    if bad >= 0:
        raise ZeroLikelihoodError(bad + 1)
    ll = float(np.log(scale).sum() + math.log(float(model.initial @ b[0])))
    return BackwardResult(b, scale, ll)


def smooth(obs, model: HmmModel) -> InferenceResult:
    fw = forward(obs, model)
    bw = backward(obs, model, normalizers=fw.normalizers)
    omega = fw.f_hat * bw.b_hat[1:]
    return InferenceResult(fw.log_likelihood, omega, fw.normalizers)


def reconstruct(obs, model: HmmModel) -> np.ndarray:
    """Per-step argmax of the smoothed posterior; ties go to G."""
    omega = smooth(obs, model).smoothed
    return (omega[:, 1] > omega[:, 0]).astype(np.int8)


def brute_force_posterior(obs, model: HmmModel) -> tuple[float, np.ndarray]:
    """Likelihood and posterior marginals by enumerating all 2^N hidden paths."""
    o = as_observations(obs)
    n = o.size
    if n > MAX_BRUTE_FORCE:
        raise ValueError(f"sequence length {n} exceeds brute-force limit {MAX_BRUTE_FORCE}")
    T, M = model.transition, model.emission
    paths = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    prior1 = model.initial @ T
    prob = prior1[paths[:, 0]] * M[paths[:, 0], o[0]]
    for k in range(1, n):
        prob = prob * T[paths[:, k - 1], paths[:, k]] * M[paths[:, k], o[k]]
    like = float(prob.sum())
    if like <= 0:
        raise ZeroLikelihoodError(1)
    p_e = (prob[:, None] * paths).sum(axis=0) / like
    return like, np.column_stack([1.0 - p_e, p_e])


@dataclass
class BaumWelchResult:
    lam: HmmParams
    model: HmmModel
    log_likelihood: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def to_json(self) -> str:
        return fitted_params_json(self.model, self.log_likelihood[-1] if self.log_likelihood else None)


def baum_welch(obs, initial_guess: HmmParams, t_m: float, max_iter: int = 500, tol: float = 1e-8,
               free_initial: bool = False) -> BaumWelchResult:
    """Expectation-maximization for the transition and emission matrices.

    The initial distribution is held at the stationary vector of the starting model
    unless ``free_initial`` re-estimates it from the step-0 posterior. Stops when the
    log-likelihood gain drops below ``tol``.
    """
    o = as_observations(obs)
    model = build_model(initial_guess, t_m)
    trace: list[float] = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        f, c, bad = _forward_kernel(o, model.transition, model.emission, model.initial)
        if bad >= 0:
            raise ZeroLikelihoodError(bad + 1)
        ll = float(np.log(c).sum())
        if not math.isfinite(ll):
            raise FloatingPointError("non-finite log-likelihood")
        b, _, _ = _backward_kernel(o, model.transition, model.emission, c, False)
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        xi, em = _expected_counts(o, model.transition, model.emission, model.initial, f, b, c)
        T = xi / xi.sum(axis=1, keepdims=True)
        M = em / em.sum(axis=1, keepdims=True)
        if free_initial:
            w = model.initial * b[0]
            pi = w / w.sum()
        else:
            pi = model.initial
        model = HmmModel(T, M, pi, t_m)
    return BaumWelchResult(model.to_params(), model, trace, n_iter, converged)


@numba.njit(cache=True)
def _simulate_kernel(T, M, x0, u_trans, u_emit):
    n = u_trans.size
    x = np.empty(n, dtype=np.int8)
    o = np.empty(n, dtype=np.int8)
    s = x0
    for k in range(n):
        s = 1 if u_trans[k] < T[s, 1] else 0
        x[k] = s
        o[k] = 1 if u_emit[k] < M[s, 1] else 0
    return x, o


def simulate_observations(model: HmmModel, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Hidden states and observations for ``n`` steps drawn from ``model``."""
    x0 = int(rng.random() < model.initial[1])
    u_trans = rng.random(n)
    u_emit = rng.random(n)
    return _simulate_kernel(model.transition, model.emission, x0, u_trans, u_emit)


def observations_to_text(obs) -> str:
    return "".join(f"{int(v)}\n" for v in as_observations(obs))


def observations_from_text(text: str) -> np.ndarray:
    return as_observations([int(line) for line in text.split() if line.strip()])


def observations_to_rle_json(obs, t_m: float) -> str:
    o = as_observations(obs)
    edges = np.flatnonzero(np.diff(o)) + 1
    starts = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([starts, [o.size]]))
    runs = [[int(o[s]), int(n)] for s, n in zip(starts, lengths)]
    return json.dumps({"t_m": t_m, "runs": runs})


def observations_from_rle_json(text: str) -> tuple[np.ndarray, float]:
    data = json.loads(text)
    parts = [np.full(n, v, dtype=np.int8) for v, n in data["runs"]]
    return as_observations(np.concatenate(parts)), float(data["t_m"])


def fitted_params_json(model: HmmModel, log_likelihood: float | None = None) -> str:
    lam = model.to_params()
    return json.dumps({
        "p_up": model.p_up, "p_down": model.p_down,
        "p_e_given_g": lam.p_eg, "p_g_given_e": lam.p_ge,
        "gamma_up": lam.gamma_up, "gamma": lam.gamma,
        "t_m": model.t_m, "log_likelihood": log_likelihood,
    }, indent=2, sort_keys=True)
