"""Numerical flow maps of polynomial fields.

The integrators work on batches: an ``(N, n)`` array of states advanced with
a shared step sequence. The adaptive method is Dormand-Prince 5(4) with the
step accepted only when every state in the batch meets the tolerance, so a
batch result is at least as accurate as integrating each state alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

from . import defaults
from .errors import NonFinite, StepLimitExceeded
from .polyfield import Box, PolyMap, evaluate


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"  # "rk45" (adaptive) or "rk4" (fixed step)
    step: float = defaults.RK4_STEP
    rtol: float = defaults.RTOL
    atol: float = defaults.ATOL
    max_steps: int = defaults.MAX_STEPS

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if not (self.step > 0 and self.rtol > 0 and self.atol > 0):
            raise ValueError("step and tolerances must be positive")


DEFAULT_CONFIG = IntegratorConfig()
PULLBACK_CONFIG = IntegratorConfig(rtol=defaults.PULLBACK_RTOL, atol=defaults.PULLBACK_ATOL)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    u: tuple = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")

    def write_csv(self, path: str | Path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j + 1}" for j in range(n)])
            for t, x in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


Rhs = Callable[[np.ndarray], np.ndarray]


def _rhs(f) -> Rhs:
    if isinstance(f, PolyMap):
        return lambda X: evaluate(f, X)
    return f


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640,
                    -92097 / 339200, 187 / 2100, 1 / 40])


def _check_state(X: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(X)) or np.max(np.abs(X), initial=0.0) > defaults.BLOWUP_NORM:
        raise NonFinite(f"state left the finite region near t={t:.6g}", t=t)


def _dp_step(rhs: Rhs, X, K0, h):
    K = [K0]
    for s in range(1, 7):
        Xs = X + h * sum(a * k for a, k in zip(_A[s], K))
        K.append(rhs(Xs))
    Xn = X + h * sum(b * k for b, k in zip(_B, K) if b)
    err = h * sum(e * k for e, k in zip(_E, K))
    return Xn, err, K[-1]


def _error_norm(err, X, Xn, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(X), np.abs(Xn))
    per_state = np.sqrt(np.mean((err / scale) ** 2, axis=1))
    return float(per_state.max())


def _initial_step(rhs, X, F0, rtol, atol, span) -> float:
    scale = atol + rtol * np.abs(X)
    d0 = np.sqrt(np.mean((X / scale) ** 2))
    d1 = np.sqrt(np.mean((F0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    F1 = rhs(X + h0 * F0)
    d2 = np.sqrt(np.mean(((F1 - F0) / scale) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(f, x0, times, cfg: IntegratorConfig = DEFAULT_CONFIG,
              log_steps: bool = False):
    """States at each requested time (ascending, >= 0).

    ``x0`` is a single state ``(n,)`` or a batch ``(N, n)``; the result has
    shape ``(len(times), n)`` or ``(len(times), N, n)``. With ``log_steps``
    a second value ``(step_times, step_states)`` lists every accepted step.
    """
    rhs = _rhs(f)
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X = np.atleast_2d(x0).copy()
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be non-negative and ascending")
    _check_state(X, 0.0)
    out = np.empty((len(times),) + X.shape)
    log_t, log_x = [0.0], [X.copy()]
    t, steps, k = 0.0, 0, 0
    while k < len(times) and times[k] == 0.0:
        out[k] = X
        k += 1
    if cfg.method == "rk4":
        h_nominal = cfg.step
        while k < len(times):
            target = times[k]
            nsub = max(1, math.ceil((target - t) / h_nominal - 1e-12))
            h = (target - t) / nsub
            for _ in range(nsub):
                X = _rk4_step(rhs, X, h)
                steps += 1
                if steps > cfg.max_steps:
                    raise StepLimitExceeded(f"exceeded {cfg.max_steps} steps", t=t)
                t += h
                _check_state(X, t)
                if log_steps:
                    log_t.append(t)
                    log_x.append(X.copy())
            t = target
            out[k] = X
            k += 1
    else:
        F = rhs(X)
        h = None
        while k < len(times):
            target = times[k]
            if h is None:
                h = _initial_step(rhs, X, F, cfg.rtol, cfg.atol, target - t)
            while t < target:
                if steps >= cfg.max_steps:
                    raise StepLimitExceeded(f"exceeded {cfg.max_steps} steps", t=t)
                clipped = t + h >= target
                h_try = target - t if clipped else h
                Xn, err, Fn = _dp_step(rhs, X, F, h_try)
                steps += 1
                if not np.all(np.isfinite(Xn)):
                    h = h_try * 0.2
                    continue
                en = _error_norm(err, X, Xn, cfg.rtol, cfg.atol)
                if en <= 1.0:
                    t = target if clipped else t + h_try
                    X, F = Xn, Fn
                    _check_state(X, t)
                    if log_steps:
                        log_t.append(t)
                        log_x.append(X.copy())
                    factor = 5.0 if en == 0 else min(5.0, 0.9 * en ** -0.2)
                    # a step shortened to land on an output time keeps the nominal size
                    h = max(h, h_try * factor) if clipped else h_try * factor
                else:
                    h = h_try * max(0.2, 0.9 * en ** -0.2)
                if h < 1e-14 * max(1.0, abs(t)):
                    raise StepLimitExceeded(f"step size underflow at t={t:.6g}", t=t)
            out[k] = X
            k += 1
    result = out[:, 0, :] if single else out
    if log_steps:
        lx = np.array(log_x)
        return result, (np.array(log_t), lx[:, 0, :] if single else lx)
    return result


def _rk4_step(rhs: Rhs, X, h):
    k1 = rhs(X)
    k2 = rhs(X + 0.5 * h * k1)
    k3 = rhs(X + 0.5 * h * k2)
    k4 = rhs(X + h * k3)
    return X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def flow_map(f, x0, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``S_t(x0)``; ``t = 0`` returns a copy of ``x0`` unchanged."""
    if t < 0:
        raise ValueError("flow horizon must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    return integrate(f, x0, [t], cfg)[0]


def trajectory(f, x0, horizon: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
               u: tuple = ()) -> Trajectory:
    """Single trajectory logged at every accepted step."""
    _, (ts, xs) = integrate(f, np.asarray(x0, dtype=float), [horizon], cfg, log_steps=True)
    keep = np.concatenate([[True], np.diff(ts) > 0])
    return Trajectory(ts[keep], xs[keep], tuple(u))


def semigroup_check(f, x0, t: float, s: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> float:
    """``|S_{t+s}(x0) - S_t(S_s(x0))|``."""
    if t < 0 or s < 0:
        raise ValueError("t and s must be non-negative")
    whole = flow_map(f, x0, t + s, cfg)
    split = flow_map(f, flow_map(f, x0, s, cfg), t, cfg)
    return float(np.linalg.norm(whole - split))


def sample_box(box: Box, count: int, seed: int = defaults.SEED, shrink: float = 1.0) -> np.ndarray:
    """Scrambled Sobol points in the (optionally shrunk) box interior."""
    sampler = qmc.Sobol(d=box.n, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(max(count, 1))))
    U = sampler.random_base2(m)[:count]
    lo, hi = np.array(box.lo) * shrink, np.array(box.hi) * shrink
    return lo + U * (hi - lo)


@dataclass
class InvarianceReport:
    samples: int
    horizon: float
    exits: list = field(default_factory=list)  # (sample index, exit time, exit point)

    @property
    def exit_fraction(self) -> float:
        return len(self.exits) / self.samples if self.samples else 0.0

    @property
    def exiting_indices(self) -> set:
        return {e[0] for e in self.exits}

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "horizon": self.horizon,
            "exit_fraction": self.exit_fraction,
            "exits": [
                {"sample": i, "time": t, "point": [float(v) for v in x]} for i, t, x in self.exits
            ],
        }


def check_invariance(f, box: Box, samples: int = 64, horizon: float = 10.0,
                     cfg: IntegratorConfig = DEFAULT_CONFIG, seed: int = defaults.SEED,
                     points=None) -> InvarianceReport:
    """Integrate from interior points and record the first accepted step
    that leaves ``box`` (or the time of blow-up)."""
    if not box.contains(np.zeros(box.n)):
        raise ValueError("box must contain the origin")
    P = sample_box(box, samples, seed) if points is None else np.atleast_2d(points)
    report = InvarianceReport(len(P), horizon)
    for idx, x0 in enumerate(P):
        try:
            _, (ts, xs) = integrate(f, x0, [horizon], cfg, log_steps=True)
        except (NonFinite, StepLimitExceeded) as exc:
            report.exits.append((idx, float(exc.detail.get("t", math.nan)), np.full(box.n, np.nan)))
            continue
        outside = ~box.contains(xs)
        if np.any(outside):
            j = int(np.argmax(outside))
            report.exits.append((idx, float(ts[j]), xs[j]))
    return report
