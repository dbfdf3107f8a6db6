"""Ground-state magnetic resonance of NV ensembles.

Each of the four <111> orientations contributes two ms=0 -> ms=+-1 lines, so
a generic field gives eight lines. Line contrast signs follow from the rate
model: moving population out of ms=0 dims the visible emission and brightens
the singlet (IR) emission.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ratemodel import G0, G1, RateConfig, build_rate_matrix, emission_rates, RateMatrix
from .ratemodel import steady_state

__all__ = [
    "NV_ORIENTATIONS",
    "SpinSystemConfig",
    "Line",
    "OdmrSpectrum",
    "spin1_operators",
    "nv_frame",
    "orientation_hamiltonian",
    "resonance_frequencies",
    "lorentzian",
    "spectrum",
    "contrast_from_rates",
]

NV_ORIENTATIONS = tuple(
    tuple(float(x) for x in np.array(v) / np.sqrt(3.0))
    for v in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1))
)


def spin1_operators():
    """Spin-1 matrices ``(Sx, Sy, Sz)`` in the ``|+1>, |0>, |-1>`` basis."""
    s = 1.0 / np.sqrt(2.0)
    sx = np.array([[0, s, 0], [s, 0, s], [0, s, 0]], dtype=complex)
    sy = np.array([[0, -1j * s, 0], [1j * s, 0, -1j * s], [0, 1j * s, 0]])
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


@dataclass(frozen=True)
class SpinSystemConfig:
    """Ground-state spin parameters; frequencies in Hz, field in tesla."""

    D: float = 2.870e9
    E: float = 0.0
    gamma: float = 2.8024e10
    B: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientations: tuple = NV_ORIENTATIONS
    linewidth: float = 8.0e6
    contrast_vis: float = -0.05
    contrast_ir: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(float(b) for b in self.B))
        object.__setattr__(
            self, "orientations", tuple(tuple(float(x) for x in v) for v in self.orientations)
        )
        if not self.D > 0:
            raise ValueError("D must be > 0")
        if not abs(self.E) < self.D:
            raise ValueError("|E| must be smaller than D")
        if not self.linewidth > 0:
            raise ValueError("linewidth must be > 0")
        if len(self.B) != 3:
            raise ValueError("B must be a 3-vector")
        if self.contrast_vis > 0:
            raise ValueError("contrast_vis must be <= 0 (visible emission dims)")
        if self.contrast_ir < 0:
            raise ValueError("contrast_ir must be >= 0 (IR emission brightens)")
        for v in self.orientations:
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError("orientation vectors must be unit length")

    def to_dict(self) -> dict:
        return {
            "D": self.D, "E": self.E, "gamma": self.gamma, "B": list(self.B),
            "linewidth": self.linewidth, "contrast_vis": self.contrast_vis,
            "contrast_ir": self.contrast_ir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpinSystemConfig":
        allowed = {"D", "E", "gamma", "B", "orientations", "linewidth",
                   "contrast_vis", "contrast_ir"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown odmr keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Line:
    center: float
    orientation: int
    branch: int  # +1 for the upper, -1 for the lower transition of an orientation


@dataclass(frozen=True)
class OdmrSpectrum:
    frequencies: np.ndarray
    visible: np.ndarray
    ir: np.ndarray
    lines: tuple[Line, ...] = field(default_factory=tuple)


def nv_frame(axis) -> np.ndarray:
    """Rows ``x, y, z`` of a right-handed frame whose ``z`` is ``axis``."""
    z = np.asarray(axis, dtype=float)
    z = z / np.linalg.norm(z)
    trial = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = trial - (trial @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def orientation_hamiltonian(config: SpinSystemConfig, axis) -> np.ndarray:
    """``D (Sz^2 - 2/3) + E (Sx^2 - Sy^2) + gamma B.S`` in the NV frame, in Hz."""
    sx, sy, sz = spin1_operators()
    bx, by, bz = nv_frame(axis) @ np.asarray(config.B, dtype=float)
    eye = np.eye(3)
    return (
        config.D * (sz @ sz - 2.0 / 3.0 * eye)
        + config.E * (sx @ sx - sy @ sy)
        + config.gamma * (bx * sx + by * sy + bz * sz)
    )


def resonance_frequencies(config: SpinSystemConfig) -> list[Line]:
    """Two ms=0 -> ms=+-1 transitions per orientation, sorted by frequency.

    The ms=0-like state is the eigenvector with the largest weight on
    ``|0>``; the transitions go from it to the other two eigenstates.
    """
    lines = []
    for k, axis in enumerate(config.orientations):
        vals, vecs = np.linalg.eigh(orientation_hamiltonian(config, axis))
        i0 = int(np.argmax(np.abs(vecs[1, :]) ** 2))
        others = sorted(vals[j] - vals[i0] for j in range(3) if j != i0)
        lines.append(Line(float(others[0]), k, -1))
        lines.append(Line(float(others[1]), k, +1))
    lines.sort(key=lambda ln: (ln.center, ln.orientation, ln.branch))
    return lines


def lorentzian(f, center, fwhm):
    """Unit-peak Lorentzian."""
    x = (np.asarray(f, dtype=float) - center) / (0.5 * fwhm)
    return 1.0 / (1.0 + x * x)


def spectrum(
    config: SpinSystemConfig,
    grid: Sequence[float],
    weights: Sequence[float] | None = None,
) -> OdmrSpectrum:
    """Visible and IR signals on ``grid``, normalized to 1 off resonance.

    ``weights`` scales each line's contrast (one entry per line, in the
    order returned by :func:`resonance_frequencies`) to mimic the uneven
    peak heights produced by pump and microwave polarization.
    """
    f = np.asarray(grid, dtype=float)
    if f.size > 1 and np.any(np.diff(f) < 0):
        raise ValueError("frequency grid must be sorted ascending")
    lines = resonance_frequencies(config)
    w = np.ones(len(lines)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(lines),):
        raise ValueError(f"expected {len(lines)} line weights")
    profile = np.zeros_like(f)
    for wk, line in zip(w, lines):
        profile += wk * lorentzian(f, line.center, config.linewidth)
    return OdmrSpectrum(
        f,
        1.0 + config.contrast_vis * profile,
        1.0 + config.contrast_ir * profile,
        tuple(lines),
    )


def _with_microwave(config: RateConfig, rate: float) -> RateMatrix:
    # Resonant drive couples ms=0 with one of the two lumped ms=+-1 sublevels.
    M = build_rate_matrix(config).M.copy()
    M[G1, G0] += rate
    M[G0, G0] -= rate
    M[G0, G1] += 0.5 * rate
    M[G1, G1] -= 0.5 * rate
    return RateMatrix(M)


def contrast_from_rates(
    config: RateConfig,
    mw_transfer: float,
    mw_rate: float = 1.0e8,
) -> tuple[float, float]:
    """Fractional change of visible and IR emission on a microwave resonance.

    The drive adds a ground-state mixing rate ``mw_transfer * mw_rate``
    between ms=0 and the resonant ms=+-1 sublevel; ``mw_transfer = 1`` with
    the default rate saturates the transition for typical pump rates.

    Returns
    -------
    (vis_contrast, ir_contrast)
        ``(on - off) / off`` for each channel.
    """
    if not 0.0 <= mw_transfer <= 1.0:
        raise ValueError("mw_transfer must lie in [0, 1]")
    if mw_transfer == 0.0:
        return 0.0, 0.0
    off = steady_state(config)
    on = steady_state(_with_microwave(config, mw_transfer * mw_rate))
    vis_off, ir_off = emission_rates(off, config)
    vis_on, ir_on = emission_rates(on, config)
    vis_c = (vis_on - vis_off) / vis_off if vis_off > 0 else 0.0
    ir_c = (ir_on - ir_off) / ir_off if ir_off > 0 else 0.0
    return float(vis_c), float(ir_c)
