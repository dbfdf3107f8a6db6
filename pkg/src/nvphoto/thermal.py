"""Phonon-stimulated decay of the metastable singlet.

The decay rate grows with the thermal occupancy of the phonon modes that
carry the energy away::

    1/tau(T) = 1/tau0 * prod_i (1 + n(eps_i, T)) ** N_i

with ``n`` the Bose occupancy and ``N_i`` the number of phonons of energy
``eps_i`` emitted per decay.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fitcore import FitProblem, FitResult, least_squares

__all__ = [
    "K_B_EV",
    "ThermalModel",
    "LifetimePoint",
    "DEFAULT_THERMAL",
    "bose_occupancy",
    "lifetime_at",
    "total_gap",
    "fit_thermal",
    "fit_thermal_free",
    "fit_thermal_fixed",
]

K_B_EV = 8.617333262e-5  # eV/K


@dataclass(frozen=True)
class ThermalModel:
    """Zero-temperature lifetime ``tau0`` (s) and phonon modes ``(eps_eV, N)``."""

    tau0: float
    modes: tuple[tuple[float, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(
            self, "modes", tuple((float(e), int(n)) for e, n in self.modes)
        )
        if not self.tau0 > 0:
            raise ValueError(f"tau0 must be > 0, got {self.tau0!r}")
        for eps, n in self.modes:
            if not eps > 0:
                raise ValueError(f"phonon energy must be > 0, got {eps!r}")
            if n < 0:
                raise ValueError(f"degeneracy must be >= 0, got {n!r}")

    def to_dict(self) -> dict:
        return {"tau0": self.tau0, "modes": [[e, n] for e, n in self.modes]}

    @classmethod
    def from_dict(cls, data: dict) -> "ThermalModel":
        unknown = set(data) - {"tau0", "modes"}
        if unknown:
            raise ValueError(f"unknown thermal keys: {sorted(unknown)}")
        return cls(float(data["tau0"]), tuple(tuple(m) for m in data.get("modes", ())))


@dataclass(frozen=True)
class LifetimePoint:
    T: float
    tau: float
    sigma_tau: float = 0.0

    def __post_init__(self):
        if self.T < 0 or not self.tau > 0 or self.sigma_tau < 0:
            raise ValueError(f"invalid lifetime point {self!r}")


DEFAULT_THERMAL = ThermalModel(tau0=462e-9, modes=((0.015, 1),))


def bose_occupancy(epsilon, T):
    """Mean phonon number ``1 / (exp(eps / kT) - 1)``; zero at ``T = 0``.

    Parameters
    ----------
    epsilon : float or ndarray
        Phonon energy in eV.
    T : float or ndarray
        Temperature in K.
    """
    eps = np.asarray(epsilon, dtype=float)
    T = np.asarray(T, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        x = np.where(T > 0, eps / (K_B_EV * np.where(T > 0, T, 1.0)), np.inf)
        n = 1.0 / np.expm1(x)
    return n if n.ndim else float(n)


def lifetime_at(model: ThermalModel, T):
    """Lifetime ``tau(T)`` in seconds for a scalar or array of temperatures."""
    T = np.asarray(T, dtype=float)
    log_factor = np.zeros_like(T)
    # canonical order makes the result independent of how modes are listed
    for eps, n in sorted(model.modes):
        log_factor = log_factor + n * np.log1p(bose_occupancy(eps, T))
    tau = model.tau0 * np.exp(-log_factor)
    return tau if tau.ndim else float(tau)


def total_gap(model: ThermalModel) -> float:
    """Energy released per decay, ``sum_i N_i eps_i``, in eV."""
    return float(sum(n * e for e, n in model.modes))


def _arrays(points: Sequence[LifetimePoint]):
    T = np.array([p.T for p in points], dtype=float)
    tau = np.array([p.tau for p in points], dtype=float)
    sig = np.array([p.sigma_tau for p in points], dtype=float)
    return T, tau, sig


def _weights(sig):
    if np.all(sig > 0):
        return 1.0 / sig**2
    return None


def _check_span(T, n_params):
    if T.size < n_params + 1:
        raise ValueError(f"need at least {n_params + 1} points, got {T.size}")
    if np.ptp(T) == 0:
        raise ValueError("all points share one temperature")
    lo = T[T > 0].min() if np.any(T > 0) else 0.0
    if lo > 0 and T.max() / lo < 3.0:
        raise ValueError("temperatures must span at least a factor of 3")


def fit_thermal_free(points: Sequence[LifetimePoint], n_modes: int = 1) -> FitResult:
    """Fit ``tau0`` and ``n_modes`` free phonon energies (degeneracy 1 each).

    The optimizer works on ``log tau0`` and ``log eps_i``; results are
    reported in physical units with the covariance propagated linearly.
    A few deterministic starting points are tried and the lowest chi2 wins.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    T, tau, sig = _arrays(points)
    _check_span(T, n_modes + 1)
    w = _weights(sig)

    def model(q):
        m = ThermalModel(np.exp(q[0]), tuple((np.exp(e), 1) for e in q[1:]))
        return lifetime_at(m, T)

    def residual(q):
        return model(q) - tau

    order = np.argsort(T)
    tau0_guess = tau[order[0]]
    hot = order[-1]
    ratio = max(tau0_guess / tau[hot], 1.0 + 1e-3)
    n_guess = ratio ** (1.0 / n_modes) - 1.0
    eps_guess = K_B_EV * T[hot] * np.log1p(1.0 / n_guess)
    spreads = [np.linspace(0.7, 1.4, n_modes) if n_modes > 1 else np.ones(1)]
    spreads += [s * f for s in spreads[:1] for f in (0.3, 3.0)]

    names = ["tau0_s"] + [f"eps{i + 1}_eV" for i in range(n_modes)]
    best = None
    for spread in spreads:
        q0 = np.concatenate([[np.log(tau0_guess)], np.log(eps_guess * spread)])
        res = least_squares(FitProblem(residual, q0, weights=w, names=names, max_iter=500))
        if best is None or (res.converged, -res.chi2) > (best.converged, -best.chi2):
            best = res

    q = best.params
    values = np.exp(q)
    cov = None
    sigma = np.full(values.size, np.nan)
    if best.covariance is not None:
        cov = best.covariance * np.outer(values, values)
        sigma = np.sqrt(np.diag(cov))
    gap = float(values[1:].sum())
    gap_sigma = float(np.sqrt(cov[1:, 1:].sum())) if cov is not None else None
    return FitResult(
        names=names,
        params=values,
        sigma=sigma,
        covariance=cov,
        chi2=best.chi2,
        dof=best.dof,
        iterations=best.iterations,
        converged=best.converged,
        message=best.message,
        grad_norm=best.grad_norm,
        residuals=best.residuals,
        extra={"total_gap_eV": gap, "total_gap_sigma_eV": gap_sigma, "n_modes": n_modes},
    )


def fit_thermal_fixed(
    points: Sequence[LifetimePoint],
    energies: Sequence[float] = (0.043, 0.137),
    cap: int = 6,
) -> FitResult:
    """Search integer degeneracies for fixed phonon energies.

    Every tuple in ``{0..cap}^len(energies)`` is tried; ``tau0`` enters
    linearly, so each candidate is a one-parameter weighted linear fit.
    The tuple with the smallest chi2 is returned (ties go to the first in
    lexicographic order).
    """
    T, tau, sig = _arrays(points)
    _check_span(T, 1)
    w = _weights(sig)
    w = np.ones_like(tau) if w is None else w
    energies = tuple(float(e) for e in energies)

    table = []
    best = None
    for degs in itertools.product(range(cap + 1), repeat=len(energies)):
        shape = lifetime_at(ThermalModel(1.0, tuple(zip(energies, degs))), T)
        tau0 = float(np.sum(w * tau * shape) / np.sum(w * shape**2))
        r = tau0 * shape - tau
        chi2 = float(np.sum(w * r**2))
        table.append({"degeneracies": list(degs), "tau0_s": tau0, "chi2": chi2})
        if best is None or chi2 < best[2]:
            best = (degs, tau0, chi2, r, shape)

    degs, tau0, chi2, r, shape = best
    dof = T.size - 1
    var = 1.0 / np.sum(w * shape**2)
    if np.all(sig > 0):
        var_s = var
    else:
        var_s = var * chi2 / dof
    cov = np.array([[var_s]])
    model = ThermalModel(tau0, tuple(zip(energies, degs)))
    return FitResult(
        names=["tau0_s"],
        params=np.array([tau0]),
        sigma=np.sqrt(np.diag(cov)),
        covariance=cov,
        chi2=chi2,
        dof=dof,
        iterations=1,
        converged=True,
        message="exhaustive degeneracy search",
        residuals=r,
        extra={
            "energies_eV": list(energies),
            "degeneracies": list(degs),
            "total_gap_eV": total_gap(model),
            "search": table,
        },
    )


def fit_thermal(points, structure: str = "free", n_modes: int = 1,
                energies=(0.043, 0.137), cap: int = 6) -> FitResult:
    """Dispatch to :func:`fit_thermal_free` or :func:`fit_thermal_fixed`."""
    if structure == "free":
        return fit_thermal_free(points, n_modes)
    if structure == "fixed":
        return fit_thermal_fixed(points, energies, cap)
    raise ValueError(f"unknown structure {structure!r}")


def model_from_fit(result: FitResult) -> ThermalModel:
    """Rebuild a :class:`ThermalModel` from either kind of thermal fit."""
    if "degeneracies" in result.extra:
        modes = tuple(zip(result.extra["energies_eV"], result.extra["degeneracies"]))
    else:
        modes = tuple((float(e), 1) for e in result.params[1:])
    return ThermalModel(float(result.params[0]), modes)
