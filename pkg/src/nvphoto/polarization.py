"""C3v dipole selection rules and light-polarization contrast curves."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .fitcore import FitProblem, FitResult, least_squares

__all__ = [
    "IRREPS",
    "CHARACTERS",
    "PolarizationGeometry",
    "decompose",
    "product",
    "allowed_axes",
    "selection_table",
    "polarization_vector",
    "absorption_strength",
    "contrast_curve",
    "fit_polarization",
]

# C3v character table; classes E, 2C3, 3sigma_v.
CLASS_SIZES = np.array([1, 2, 3])
CHARACTERS = {
    "A1": np.array([1, 1, 1]),
    "A2": np.array([1, 1, -1]),
    "E": np.array([2, -1, 0]),
}
IRREPS = tuple(CHARACTERS)
# Irrep carried by each Cartesian dipole component.
DIPOLE_IRREP = {"x": "E", "y": "E", "z": "A1"}
ORDER = int(CLASS_SIZES.sum())


def decompose(chi) -> dict[str, int]:
    """Multiplicity of each irrep in a representation with characters ``chi``."""
    chi = np.asarray(chi)
    out = {}
    for name, row in CHARACTERS.items():
        m = int(round(float(np.sum(CLASS_SIZES * row * chi)) / ORDER))
        if m:
            out[name] = m
    return out


def product(a: str, b: str) -> dict[str, int]:
    return decompose(CHARACTERS[a] * CHARACTERS[b])


def allowed_axes(upper: str, lower: str) -> frozenset[str]:
    """Dipole axes that connect ``upper`` and ``lower`` (absorption or emission)."""
    for irrep in (upper, lower):
        if irrep not in CHARACTERS:
            raise ValueError(f"unknown C3v irrep {irrep!r}")
    present = product(upper, lower)
    return frozenset(ax for ax, ir in DIPOLE_IRREP.items() if ir in present)


def selection_table() -> list[dict]:
    """Allowed axes for every unordered irrep pair."""
    rows = []
    for a, b in itertools.combinations_with_replacement(IRREPS, 2):
        rows.append({
            "upper": a,
            "lower": b,
            "product": product(a, b),
            "allowed_axes": sorted(allowed_axes(a, b)),
        })
    return rows


@dataclass(frozen=True)
class PolarizationGeometry:
    """NV axis ``z``, beam direction ``k`` and the polarizer reference axis.

    The polarizer angle ``theta`` is measured in the plane normal to ``k``
    from ``reference`` towards ``k x reference``. Without a ``reference`` a
    fixed axis normal to ``k`` is used.
    """

    z: tuple[float, float, float]
    k: tuple[float, float, float] = (0.0, 0.0, 1.0)
    reference: tuple[float, float, float] | None = None

    def __post_init__(self):
        for name in ("z", "k"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit 3-vector")
        if self.reference is not None:
            r = np.asarray(self.reference, dtype=float)
            if abs(r @ np.asarray(self.k)) > 1e-9 or abs(np.linalg.norm(r) - 1.0) > 1e-9:
                raise ValueError("reference must be a unit vector normal to k")

    @classmethod
    def in_plane(cls, phi_nv: float) -> "PolarizationGeometry":
        """NV axis lying in the polarization plane at angle ``phi_nv``."""
        return cls(z=(np.cos(phi_nv), np.sin(phi_nv), 0.0), k=(0.0, 0.0, 1.0),
                   reference=(1.0, 0.0, 0.0))

    @classmethod
    def along_beam(cls) -> "PolarizationGeometry":
        return cls(z=(0.0, 0.0, 1.0), k=(0.0, 0.0, 1.0), reference=(1.0, 0.0, 0.0))

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.asarray(self.k, dtype=float)
        if self.reference is not None:
            u = np.asarray(self.reference, dtype=float)
        else:
            trial = np.array([1.0, 0.0, 0.0]) if abs(k[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            u = trial - (trial @ k) * k
            u /= np.linalg.norm(u)
        return u, np.cross(k, u)

    @property
    def phi_nv(self) -> float | None:
        """Angle of the projected NV axis from the reference, or None if ``z || k``."""
        u, v = self.basis()
        z = np.asarray(self.z, dtype=float)
        a, b = z @ u, z @ v
        if np.hypot(a, b) < 1e-12:
            return None
        return float(np.mod(np.arctan2(b, a), 2 * np.pi))


def polarization_vector(geometry: PolarizationGeometry, theta) -> np.ndarray:
    """Unit polarization vector(s) at polarizer angle ``theta``; shape (..., 3)."""
    u, v = geometry.basis()
    th = np.asarray(theta, dtype=float)[..., None]
    return np.cos(th) * u + np.sin(th) * v


def _transverse_axes(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    trial = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = trial - (trial @ z) * z
    x /= np.linalg.norm(x)
    return x, np.cross(z, x)


def absorption_strength(axes, geometry: PolarizationGeometry, theta=0.0,
                        basis_angle: float = 0.0):
    """Sum over allowed axes ``a`` of ``|eps(theta) . a|^2``, in [0, 1].

    ``basis_angle`` turns the transverse ``x, y`` pair about the NV axis.
    The E doublet enters as ``x`` plus ``y``, so that choice drops out.
    """
    eps = polarization_vector(geometry, theta)
    z = np.asarray(geometry.z, dtype=float)
    x0, y0 = _transverse_axes(z)
    c, s = np.cos(basis_angle), np.sin(basis_angle)
    x, y = c * x0 + s * y0, -s * x0 + c * y0
    vec = {"x": x, "y": y, "z": z}
    total = np.zeros(eps.shape[:-1])
    for ax in axes:
        total = total + (eps @ vec[ax]) ** 2
    return total if total.ndim else float(total)


def contrast_curve(axes, geometry: PolarizationGeometry, theta, floor: float = 0.0):
    """``R(theta) = (1 - c) * strength(theta) + c`` on the given angle grid.

    Returns an array of shape ``(len(theta), 2)`` holding ``(theta, R)``.
    """
    if not 0.0 <= floor <= 1.0:
        raise ValueError("floor must lie in [0, 1]")
    th = np.asarray(theta, dtype=float)
    R = (1.0 - floor) * absorption_strength(axes, geometry, th) + floor
    return np.column_stack([th, np.broadcast_to(R, th.shape)])


def _sin2(theta, amp, phi, c):
    return amp * np.sin(theta - phi) ** 2 + c


def fit_polarization(theta, R, sigma=None) -> FitResult:
    """Fit ``A sin^2(theta - phi_nv) + c`` to a polarization curve.

    The linear form ``a0 + a1 cos 2theta + a2 sin 2theta`` gives the
    starting point, then Levenberg-Marquardt refines it. ``phi_nv`` is
    returned in ``[0, pi)`` and ``A >= 0``. ``extra`` carries the chi2 of a
    constant model and of the sin^2 model so callers can choose between them.
    """
    th = np.asarray(theta, dtype=float)
    y = np.asarray(R, dtype=float)
    if th.size < 5:
        raise ValueError("need at least 5 points")
    if np.ptp(np.mod(th, 2 * np.pi)) < np.pi - 1e-9:
        raise ValueError("angles must span at least 180 degrees")
    if sigma is None:
        w = np.ones_like(y)
        weights = None
    else:
        s = np.asarray(sigma, dtype=float)
        w = 1.0 / s**2
        weights = w

    X = np.column_stack([np.ones_like(th), np.cos(2 * th), np.sin(2 * th)])
    sw = np.sqrt(w)
    a, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    amp0 = 2.0 * np.hypot(a[1], a[2])
    # A sin^2(t - p) + c = (A/2 + c) - (A/2) cos(2t - 2p)
    phi0 = 0.5 * np.arctan2(-a[2], -a[1]) if amp0 > 0 else 0.0
    c0 = a[0] - amp0 / 2.0

    res = least_squares(FitProblem(
        residual=lambda p: _sin2(th, *p) - y,
        p0=[amp0, phi0, c0],
        weights=weights,
        names=["amplitude", "phi_nv_rad", "offset"],
    ))
    amp, phi, c = res.params
    if amp < 0:
        amp, phi, c = -amp, phi + np.pi / 2, c + amp
    phi = float(np.mod(phi, np.pi))
    if phi >= np.pi - 1e-12:
        phi = 0.0
    res.params = np.array([amp, phi, c])

    const = float(np.sum(w * y) / np.sum(w))
    chi2_const = float(np.sum(w * (y - const) ** 2))
    res.extra = {
        "chi2_constant": chi2_const,
        "dof_constant": int(th.size - 1),
        "constant_value": const,
        "chi2_sin2": res.chi2,
        "preferred": "constant" if _constant_preferred(chi2_const, res.chi2, th.size) else "sin2",
    }
    return res


def _constant_preferred(chi2_const, chi2_sin2, n):
    # F-test style comparison: the two extra sin^2 parameters must buy a
    # significant chi2 drop.
    from scipy.stats import f as f_dist

    dof2 = n - 3
    if dof2 <= 0:
        return chi2_const <= chi2_sin2
    if chi2_sin2 <= 0:
        return chi2_const <= 0
    F = ((chi2_const - chi2_sin2) / 2.0) / (chi2_sin2 / dof2)
    return F < f_dist.ppf(0.99, 2, dof2)
