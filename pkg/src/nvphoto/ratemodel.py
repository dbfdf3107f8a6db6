"""Six-level rate equations for the NV- optical pumping cycle.

Levels (index order used everywhere in this package)::

    0  G0   3A2, ms = 0
    1  G1   3A2, ms = +1 and -1 lumped
    2  E0   3E,  ms = 0
    3  E1   3E,  ms = +1 and -1 lumped
    4  US   upper singlet (1E)
    5  MS   metastable singlet (1A1)

Populations evolve as ``dP/dt = M P`` where ``M[to, from]`` holds the
transition rates and each column sums to zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .thermal import DEFAULT_THERMAL, lifetime_at

__all__ = [
    "LEVELS",
    "RateConfig",
    "RateMatrix",
    "PopulationTrace",
    "IntegrationError",
    "SingularSteadyStateError",
    "build_rate_matrix",
    "pumped_provider",
    "evolve",
    "steady_state",
    "emission_rates",
    "TRACE_HEADER",
]

LEVELS = ("G0", "G1", "E0", "E1", "US", "MS")
G0, G1, E0, E1, US, MS = range(6)
TRACE_HEADER = ("t_s", "pG0", "pG1", "pE0", "pE1", "pUS", "pMS", "visible_rate", "ir_rate")

DEFAULT_TEMPERATURE_K = 295.0
# Tuned so that the steady-state visible/IR photon ratio of the default
# configuration is 3.0e3; see ``calibrate_us_radiative_fraction``.
DEFAULT_US_RADIATIVE_FRACTION = 2.0727e-3


@dataclass(frozen=True)
class RateConfig:
    """Decay and pumping rates of the lumped six-level model, all in 1/s.

    Defaults: 3E lifetimes of 10.0 ns (ms=0) and 7.8 ns (ms=+-1) with all
    the extra ms=+-1 decay going to the upper singlet, a 0.9 ns upper
    singlet, and the metastable-singlet lifetime of the default thermal
    model at 295 K. ``ms_branch_to_G0``, ``g_spin_relax`` and
    ``us_radiative_fraction`` are model defaults, not measured values;
    tune them through the config file.
    """

    pump_rate: float = 1.0e6
    rate_E0_total: float = 1.0 / 10.0e-9
    rate_E1_total: float = 1.0 / 7.8e-9
    isc_E1_to_US: float = 1.0 / 7.8e-9 - 1.0 / 10.0e-9
    isc_E0_to_US: float = 0.0
    us_total_rate: float = 1.0 / 0.9e-9
    us_radiative_fraction: float = DEFAULT_US_RADIATIVE_FRACTION
    ms_total_rate: float = 1.0 / lifetime_at(DEFAULT_THERMAL, DEFAULT_TEMPERATURE_K)
    ms_branch_to_G0: float = 0.8
    g_spin_relax: float = 1.0e6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
            if v < 0:
                raise ValueError(f"{f.name} must be >= 0, got {v!r}")
        for name in ("us_radiative_fraction", "ms_branch_to_G0"):
            if getattr(self, name) > 1:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)!r}")
        if self.isc_E0_to_US > self.rate_E0_total:
            raise ValueError("isc_E0_to_US exceeds rate_E0_total: negative radiative rate for E0")
        if self.isc_E1_to_US > self.rate_E1_total:
            raise ValueError("isc_E1_to_US exceeds rate_E1_total: negative radiative rate for E1")

    @property
    def radiative_E0(self) -> float:
        return self.rate_E0_total - self.isc_E0_to_US

    @property
    def radiative_E1(self) -> float:
        return self.rate_E1_total - self.isc_E1_to_US

    def replace(self, **changes) -> "RateConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RateConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown rate keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def at_temperature(cls, temperature_k: float, thermal=None, **overrides) -> "RateConfig":
        """Default rates with the MS decay rate taken from a thermal model."""
        model = DEFAULT_THERMAL if thermal is None else thermal
        overrides.setdefault("ms_total_rate", 1.0 / lifetime_at(model, temperature_k))
        return cls(**overrides)


@dataclass(frozen=True)
class RateMatrix:
    """Generator ``M`` with ``dP/dt = M @ P``."""

    M: np.ndarray

    def __post_init__(self):
        self.M.setflags(write=False)

    def rates(self) -> np.ndarray:
        return self.M


def build_rate_matrix(config: RateConfig) -> RateMatrix:
    """Assemble the generator matrix for ``config``.

    Ground-state mixing ``g_spin_relax`` is a per-sublevel rate, so the
    lumped G0 -> G1 rate is ``2 g`` and G1 -> G0 is ``g``.
    """
    config.validate()
    M = np.zeros((6, 6))

    def add(frm, to, rate):
        M[to, frm] += rate
        M[frm, frm] -= rate

    add(G0, E0, config.pump_rate)
    add(G1, E1, config.pump_rate)
    add(E0, G0, config.radiative_E0)
    add(E1, G1, config.radiative_E1)
    add(E0, US, config.isc_E0_to_US)
    add(E1, US, config.isc_E1_to_US)
    add(US, MS, config.us_total_rate)
    add(MS, G0, config.ms_total_rate * config.ms_branch_to_G0)
    add(MS, G1, config.ms_total_rate * (1.0 - config.ms_branch_to_G0))
    add(G0, G1, 2.0 * config.g_spin_relax)
    add(G1, G0, config.g_spin_relax)
    return RateMatrix(M)


def pumped_provider(config: RateConfig, waveform: Callable[[float], float]):
    """Time-dependent matrix ``M(t)`` with pump rate ``pump_rate * waveform(t)``.

    The model is linear in the pump rate, so ``M(t)`` is assembled from two
    precomputed matrices.
    """
    dark = build_rate_matrix(config.replace(pump_rate=0.0)).M
    unit = build_rate_matrix(
        RateConfig(**{**config.to_dict(), "pump_rate": 1.0})
    ).M - dark
    scale = config.pump_rate

    def provider(t: float) -> np.ndarray:
        return dark + (scale * waveform(t)) * unit

    return provider


@dataclass(frozen=True)
class PopulationTrace:
    times: np.ndarray
    populations: np.ndarray  # shape (n_samples, 6)
    visible_rate: np.ndarray
    ir_rate: np.ndarray

    def level(self, name: str) -> np.ndarray:
        return self.populations[:, LEVELS.index(name)]

    def rows(self):
        for t, p, v, ir in zip(self.times, self.populations, self.visible_rate, self.ir_rate):
            yield (t, *p, v, ir)

    def __len__(self):
        return self.times.size


class IntegrationError(RuntimeError):
    """The adaptive integrator could not advance."""

    def __init__(self, t: float, detail: str):
        super().__init__(f"integration failed at t = {t:.6g} s: {detail}")
        self.t = t


class SingularSteadyStateError(ValueError):
    """The rate matrix has no unique stationary distribution."""


def _check_populations(p0) -> np.ndarray:
    p = np.asarray(p0, dtype=float)
    if p.shape != (6,):
        raise ValueError("initial populations must be a 6-vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("initial populations must be non-negative and sum to 1")
    return p


def evolve(
    matrix_provider,
    p0,
    t_end: float,
    config: RateConfig | None = None,
    t_eval: Sequence[float] | None = None,
    breakpoints: Sequence[float] = (),
    rtol: float = 1e-8,
    atol: float = 1e-12,
    max_step: float = np.inf,
) -> PopulationTrace:
    """Integrate the rate equations from ``t = 0`` to ``t_end``.

    ``matrix_provider`` is a :class:`RateMatrix`, a :class:`RateConfig`, or a
    callable ``t -> RateMatrix | ndarray`` for time-dependent pumping.
    Integration uses the explicit Dormand-Prince 5(4) pair with adaptive
    steps; each interval between ``breakpoints`` (pump discontinuities) is
    integrated separately. Emission rates in the returned trace need
    ``config`` (taken from ``matrix_provider`` when it is a config).
    """
    p0 = _check_populations(p0)
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    if isinstance(matrix_provider, RateConfig):
        config = matrix_provider if config is None else config
        matrix_provider = build_rate_matrix(matrix_provider)
    if isinstance(matrix_provider, RateMatrix):
        M = matrix_provider.M

        def rhs(t, y):
            return M @ y
    else:
        def rhs(t, y):
            m = matrix_provider(t)
            return (m.M if isinstance(m, RateMatrix) else m) @ y

    edges = sorted({0.0, float(t_end), *(b for b in breakpoints if 0.0 < b < t_end)})
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if t_eval.size and (t_eval.min() < 0 or t_eval.max() > t_end):
            raise ValueError("t_eval must lie within [0, t_end]")

    times = [np.array([0.0])]
    pops = [p0[None, :]]
    y = p0
    for a, b in zip(edges[:-1], edges[1:]):
        if t_eval is None:
            seg_eval = None
        else:
            seg_eval = np.union1d(t_eval[(t_eval > a) & (t_eval <= b)], [b])
        sol = solve_ivp(rhs, (a, b), y, method="RK45", t_eval=seg_eval,
                        rtol=rtol, atol=atol, max_step=max_step)
        if sol.status != 0:
            raise IntegrationError(float(sol.t[-1]) if sol.t.size else a, sol.message)
        y = sol.y[:, -1]
        ts, ys = sol.t, sol.y.T
        if seg_eval is None:
            ts, ys = ts[1:], ys[1:]
        times.append(ts)
        pops.append(ys)

    t_all = np.concatenate(times)
    p_all = np.vstack(pops)
    # Error control lets populations overshoot [0, 1] by about atol; snap
    # those back so downstream logs and ratios stay defined.
    slack = 1e3 * atol
    p_all = np.where((p_all < 0) & (p_all > -slack), 0.0, p_all)
    p_all = np.where((p_all > 1) & (p_all < 1 + slack), 1.0, p_all)
    if t_eval is not None:
        keep = np.isin(t_all, t_eval)
        t_all, p_all = t_all[keep], p_all[keep]
    if config is not None:
        vis, ir = emission_rates(p_all.T, config)
    else:
        vis = ir = np.full(t_all.size, np.nan)
    return PopulationTrace(t_all, p_all, np.asarray(vis, float), np.asarray(ir, float))


def steady_state(matrix: RateMatrix | RateConfig) -> np.ndarray:
    """Stationary populations, ``M P = 0`` with ``sum(P) = 1``.

    The stationary state lives on the single closed set of levels (one that
    no transition leaves); every other level ends up empty. Within that set
    the populations come from Grassmann-Taksar-Heyman elimination, which
    involves no subtractions and so keeps full relative accuracy even when
    the rates span many decades.

    Raises
    ------
    SingularSteadyStateError
        If there is more than one closed set, so the stationary state
        depends on the initial populations.
    """
    if isinstance(matrix, RateConfig):
        matrix = build_rate_matrix(matrix)
    M = matrix.M
    n = M.shape[0]
    edges = (M.T > 0) & ~np.eye(n, dtype=bool)  # edges[from, to]
    n_sets, labels = connected_components(csr_matrix(edges), directed=True,
                                          connection="strong")
    closed = [c for c in range(n_sets)
              if not edges[np.ix_(labels == c, labels != c)].any()]
    if len(closed) != 1:
        raise SingularSteadyStateError(
            "rate matrix has no unique stationary state "
            f"({len(closed)} closed sets of levels; no pumping and no ground-state mixing?)"
        )
    idx = np.flatnonzero(labels == closed[0])
    P = np.zeros(n)
    P[idx] = _gth(M[np.ix_(idx, idx)])
    if not np.all(np.isfinite(P)):
        raise SingularSteadyStateError("stationary state overflowed; rates out of range")
    return P


def _gth(M: np.ndarray) -> np.ndarray:
    # Grassmann-Taksar-Heyman elimination for an irreducible generator.
    Q = M.T.copy()  # Q[from, to]
    n = Q.shape[0]
    for k in range(n - 1, 0, -1):
        Q[:k, k] /= Q[k, :k].sum()
        Q[:k, :k] += np.outer(Q[:k, k], Q[k, :k])
    P = np.zeros(n)
    P[0] = 1.0
    for k in range(1, n):
        P[k] = P[:k] @ Q[:k, k]
    return P / P.sum()


def emission_rates(populations, config: RateConfig):
    """Visible and IR photon rates per NV for the given populations.

    Accepts a 6-vector or a ``(6, n)`` array of populations.
    """
    p = np.asarray(populations, dtype=float)
    visible = config.radiative_E0 * p[E0] + config.radiative_E1 * p[E1]
    ir = config.us_radiative_fraction * config.us_total_rate * p[US]
    return visible, ir


def calibrate_us_radiative_fraction(config: RateConfig, target_ratio: float = 3.0e3) -> float:
    """Radiative fraction of the upper singlet giving ``visible/ir = target_ratio``.

    IR emission is linear in the fraction, so one steady-state solve suffices.
    """
    P = steady_state(config)
    vis, _ = emission_rates(P, config)
    flux = config.us_total_rate * P[US]
    if flux <= 0:
        raise ValueError("no population reaches the upper singlet")
    return float(vis / (target_ratio * flux))
