"""Frequency-domain (phase-shift) lifetime measurement.

A sinusoidally modulated pump drives fluorescence that lags by a phase set
by the decay chain. For a single exponential the lag is ``arctan(w tau)``;
a two-step cascade adds the lags of both steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fitcore import FitProblem, FitResult, least_squares
from .ratemodel import (
    E0,
    E1,
    RateConfig,
    evolve,
    pumped_provider,
    steady_state,
)

__all__ = [
    "PhasePoint",
    "DecayModel",
    "ModulatedResponse",
    "phase_single",
    "phase_cascade",
    "simulate_modulated_response",
    "extract_phase",
    "fit_lifetimes",
    "effective_visible_lifetime",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PhasePoint:
    f: float
    phi: float
    sigma_phi: float = 0.0

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"modulation frequency must be > 0, got {self.f!r}")
        if self.sigma_phi < 0:
            raise ValueError("sigma_phi must be >= 0")


@dataclass(frozen=True)
class DecayModel:
    """``kind`` is ``"single"`` (one lifetime) or ``"cascade"`` (tau1, tau0)."""

    kind: str
    lifetimes: tuple[float, ...]

    def __post_init__(self):
        expected = {"single": 1, "cascade": 2}.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown decay model {self.kind!r}")
        if len(self.lifetimes) != expected:
            raise ValueError(f"{self.kind} model takes {expected} lifetime(s)")
        if any(not t > 0 for t in self.lifetimes):
            raise ValueError("lifetimes must be > 0")

    def phase(self, f):
        if self.kind == "single":
            return phase_single(f, self.lifetimes[0])
        return phase_cascade(f, *self.lifetimes)


def phase_single(f, tau):
    """Phase lag ``arctan(2 pi f tau)`` of a single-exponential decay."""
    return np.arctan(TWO_PI * np.asarray(f, dtype=float) * tau)


def phase_cascade(f, tau1, tau0):
    """Phase lag of a two-step cascade ``tau1`` then ``tau0``.

    Written as a sum of two arctangents, which is the continuous branch of
    ``arctan(w (tau1 + tau0) / (1 - w^2 tau1 tau0))`` across its pole.
    """
    w = TWO_PI * np.asarray(f, dtype=float)
    return np.arctan(w * tau1) + np.arctan(w * tau0)


@dataclass(frozen=True)
class ModulatedResponse:
    times: np.ndarray
    pump: np.ndarray
    visible: np.ndarray
    ir: np.ndarray
    f: float


def simulate_modulated_response(
    config: RateConfig,
    f: float,
    mod_depth: float = 0.05,
    n_periods: int = 20,
    samples_per_period: int = 64,
    rtol: float = 1e-8,
    atol: float = 1e-12,
) -> ModulatedResponse:
    """Drive the rate model with ``pump_rate * (1 + m sin(2 pi f t))``.

    The system starts in the steady state of the mean pump rate. The first
    half of the run is discarded as transient; the returned series cover the
    second half on a uniform grid.
    """
    if not f > 0:
        raise ValueError("modulation frequency must be > 0")
    if not 0.0 <= mod_depth <= 1.0:
        raise ValueError("mod_depth must lie in [0, 1]")
    if n_periods < 2 or samples_per_period < 4:
        raise ValueError("need at least 2 periods and 4 samples per period")
    w = TWO_PI * f

    def waveform(t):
        return 1.0 + mod_depth * np.sin(w * t)

    start = n_periods // 2
    n_keep = (n_periods - start) * samples_per_period
    t_eval = (start + np.arange(n_keep) / samples_per_period) / f
    t_end = n_periods / f
    p0 = steady_state(config)
    trace = evolve(pumped_provider(config, waveform), p0, t_end, config=config,
                   t_eval=t_eval, rtol=rtol, atol=atol)
    pump = config.pump_rate * waveform(trace.times)
    return ModulatedResponse(trace.times, pump, trace.visible_rate, trace.ir_rate, f)


def _quadrature_fit(t, y, w):
    X = np.column_stack([np.sin(w * t), np.cos(w * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    a, b, offset = coef
    amp = np.hypot(a, b)
    scale = max(np.max(np.abs(y)), np.finfo(float).tiny)
    if amp <= 1e-10 * scale:
        raise ValueError("series has no component at the modulation frequency")
    resid = y - X @ coef
    dof = max(t.size - 3, 1)
    cov = np.linalg.inv(X.T @ X) * float(resid @ resid) / dof
    grad = np.array([-b, a]) / amp**2
    var_psi = float(grad @ cov[:2, :2] @ grad)
    return np.arctan2(b, a), var_psi


def extract_phase(times, reference, signal, f: float) -> PhasePoint:
    """Phase lag of ``signal`` behind ``reference`` at frequency ``f``.

    Both series are fitted to ``A sin(2 pi f t + psi) + B`` by linear least
    squares on the sin/cos basis. The lag ``psi_ref - psi_sig`` is wrapped
    to ``[0, pi)``; its uncertainty combines both fits' residual scatter.
    """
    t = np.asarray(times, dtype=float)
    ref = np.asarray(reference, dtype=float)
    sig = np.asarray(signal, dtype=float)
    if not (t.shape == ref.shape == sig.shape):
        raise ValueError("times, reference and signal must share one grid")
    span = (np.ptp(t) + np.median(np.diff(t))) * f if t.size > 1 else 0.0
    if t.size < 4 or span < 3.0 - 1e-9:
        raise ValueError("series must span at least 3 modulation periods")
    w = TWO_PI * f
    psi_ref, var_ref = _quadrature_fit(t, ref, w)
    psi_sig, var_sig = _quadrature_fit(t, sig, w)
    phi = float(np.mod(psi_ref - psi_sig, np.pi))
    if phi >= np.pi - 1e-12:
        phi = 0.0
    return PhasePoint(f, phi, float(np.sqrt(var_ref + var_sig)))


def effective_visible_lifetime(config: RateConfig) -> float:
    """Emission-weighted mean 3E lifetime under steady pumping.

    This is the lifetime a single-exponential phase fit converges to at low
    modulation frequency.
    """
    P = steady_state(config)
    weights = np.array([config.radiative_E0 * P[E0], config.radiative_E1 * P[E1]])
    taus = np.array([1.0 / config.rate_E0_total, 1.0 / config.rate_E1_total])
    if weights.sum() <= 0:
        raise ValueError("no visible emission in the steady state")
    return float(weights @ taus / weights.sum())


def _guess(f, phi, model, tau1):
    w = TWO_PI * f
    if model == "single":
        return float(np.median(np.tan(np.clip(phi, 1e-6, 1.5)) / w))
    if tau1 is not None:
        rest = np.clip(phi - np.arctan(w * tau1), 1e-6, 1.5)
        return float(np.median(np.tan(rest) / w))
    low = np.argmin(f)
    total = float(np.tan(np.clip(phi[low], 1e-6, 1.5)) / w[low])
    return (0.85 * total, 0.15 * total)


def fit_lifetimes(
    points: Sequence[PhasePoint],
    model: str = "single",
    tau1: float | None = None,
    delay: float = 0.0,
    fit_delay: bool = False,
    p0: Sequence[float] | None = None,
    absolute_sigma: bool | None = None,
) -> FitResult:
    """Fit lifetimes to a phase-versus-frequency scan.

    Parameters
    ----------
    points : sequence of PhasePoint
        The scan. When every point carries ``sigma_phi > 0`` the fit is
        weighted by ``1/sigma^2``; otherwise it is unweighted.
    model : {"single", "cascade"}
    tau1 : float, optional
        Fixes the first cascade lifetime (s). Ignored for ``"single"``.
    delay : float
        Detection-chain time delay (s); adds ``2 pi f delay`` to the model
        phase. Used as the starting value when ``fit_delay`` is set.
    p0 : sequence of float, optional
        Starting lifetimes in seconds, in the order of the free lifetimes.
    absolute_sigma : bool, optional
        Treat the point sigmas as absolute (no ``chi2/dof`` rescaling of the
        covariance). Defaults to True for weighted fits.

    Returns
    -------
    FitResult
        Parameters named ``tau_s`` or ``tau1_s``/``tau0_s``, plus
        ``delay_s`` when fitted. Phases cannot tell the two cascade
        lifetimes apart, so a free cascade fit reports the longer one as
        ``tau1_s``.
    """
    if model not in ("single", "cascade"):
        raise ValueError(f"unknown decay model {model!r}")
    f = np.array([p.f for p in points], dtype=float)
    phi = np.array([p.phi for p in points], dtype=float)
    sig = np.array([p.sigma_phi for p in points], dtype=float)
    if model == "single":
        names = ["tau_s"]
    elif tau1 is not None:
        names = ["tau0_s"]
    else:
        names = ["tau1_s", "tau0_s"]
    n_free = len(names) + int(fit_delay)
    needed = 2 if model == "single" or tau1 is not None else 3
    if f.size < max(needed, n_free + 1):
        raise ValueError(f"{model} fit needs at least {max(needed, n_free + 1)} points")

    w = TWO_PI * f
    if p0 is None:
        guess = _guess(f, phi - w * delay, model, tau1)
        p0 = np.atleast_1d(guess)
    q0 = list(np.log(np.asarray(p0, dtype=float)))
    if fit_delay:
        names = names + ["delay_s"]
        q0.append(delay * 1e9)  # ns keeps the step heuristic well scaled

    def phase_model(q):
        taus = np.exp(q[: len(q) - int(fit_delay)])
        d = q[-1] * 1e-9 if fit_delay else delay
        if model == "single":
            out = phase_single(f, taus[0])
        elif tau1 is not None:
            out = phase_cascade(f, tau1, taus[0])
        else:
            out = phase_cascade(f, taus[0], taus[1])
        return out + w * d

    weighted = bool(np.all(sig > 0))
    problem = FitProblem(
        residual=lambda q: phase_model(q) - phi,
        p0=q0,
        weights=1.0 / sig**2 if weighted else None,
        names=names,
        absolute_sigma=weighted if absolute_sigma is None else absolute_sigma and weighted,
        max_iter=500,
    )
    res = least_squares(problem)
    n_tau = len(names) - int(fit_delay)
    scale = np.concatenate([np.exp(res.params[:n_tau]), [1e-9] * int(fit_delay)])
    values = res.params * 0.0
    values[:n_tau] = np.exp(res.params[:n_tau])
    if fit_delay:
        values[-1] = res.params[-1] * 1e-9
    cov = None if res.covariance is None else res.covariance * np.outer(scale, scale)
    if names[:2] == ["tau1_s", "tau0_s"] and values[0] < values[1]:
        # the cascade phase is symmetric in its lifetimes; report the longer
        # one as tau1
        perm = np.arange(values.size)
        perm[:2] = [1, 0]
        values = values[perm]
        if cov is not None:
            cov = cov[np.ix_(perm, perm)]
    sigma = np.full(values.size, np.nan) if cov is None else np.sqrt(np.diag(cov))
    if not res.converged:
        res.message = f"{res.message}; last iterate {dict(zip(names, values.tolist()))}"
    return FitResult(
        names=names,
        params=values,
        sigma=sigma,
        covariance=cov,
        chi2=res.chi2,
        dof=res.dof,
        iterations=res.iterations,
        converged=res.converged,
        message=res.message,
        grad_norm=res.grad_norm,
        residuals=res.residuals,
        extra={"model": model, "tau1_fixed_s": tau1, "delay_fixed_s": None if fit_delay else delay},
    )
