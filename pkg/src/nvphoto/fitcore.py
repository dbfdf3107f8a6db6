"""Levenberg-Marquardt least squares with numeric Jacobians.

Every fit in the package goes through :func:`least_squares`. Models are cheap
to evaluate, so derivatives are always taken by central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FitProblem",
    "FitResult",
    "least_squares",
    "numeric_jacobian",
    "NonFiniteError",
]

COND_LIMIT = 1e12


class NonFiniteError(ValueError):
    """A model evaluation returned NaN or inf."""


def numeric_jacobian(
    f: Callable[[np.ndarray], np.ndarray],
    params,
    rel_step: float = 1e-6,
    step_floor=1e-8,
    names: Sequence[str] | None = None,
) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``params``.

    The step for parameter ``i`` is ``rel_step * max(|p_i|, step_floor)``;
    ``step_floor`` may be a scalar or one value per parameter. Returns an
    array of shape ``(len(f(p)), len(p))``; scalar outputs are treated as
    length-1 vectors.
    """
    p = np.asarray(params, dtype=float)
    floor = np.broadcast_to(np.asarray(step_floor, dtype=float), p.shape)
    jac_cols = []
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), floor[i])
        up = p.copy()
        dn = p.copy()
        up[i] += h
        dn[i] -= h
        f_up = np.atleast_1d(np.asarray(f(up), dtype=float))
        f_dn = np.atleast_1d(np.asarray(f(dn), dtype=float))
        if not (np.all(np.isfinite(f_up)) and np.all(np.isfinite(f_dn))):
            name = names[i] if names is not None else f"p[{i}]"
            raise NonFiniteError(
                f"non-finite model value when perturbing parameter {name} "
                f"around {p[i]!r}"
            )
        jac_cols.append((f_up - f_dn) / (up[i] - dn[i]))
    if not jac_cols:
        return np.zeros((np.atleast_1d(f(p)).size, 0))
    return np.column_stack(jac_cols)


@dataclass(frozen=True)
class FitProblem:
    """Weighted least-squares problem ``min sum w_i r_i(p)^2``.

    ``bounds`` is a pair of arrays (lower, upper); use ``-inf``/``inf`` for
    open sides. Bounded parameters are handled by a smooth transform so the
    optimizer itself stays unconstrained.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    p0: Sequence[float]
    weights: Sequence[float] | None = None
    bounds: tuple[Sequence[float], Sequence[float]] | None = None
    names: Sequence[str] | None = None
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-15
    max_iter: int = 200
    lambda0: float = 1e-6
    rel_step: float = 1e-6
    absolute_sigma: bool = False


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    ``sigma`` holds 1-sigma uncertainties from the covariance
    ``(J^T W J)^-1 * chi2/dof`` (unscaled when the problem asked for
    absolute sigma). When the fit did not converge or ``J^T W J`` is
    ill-conditioned the covariance is ``None`` and ``sigma`` is NaN.
    """

    names: list[str]
    params: np.ndarray
    sigma: np.ndarray
    covariance: np.ndarray | None
    chi2: float
    dof: int
    iterations: int
    converged: bool
    message: str = ""
    grad_norm: float = float("nan")
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra: dict = field(default_factory=dict)

    @property
    def covariance_ok(self) -> bool:
        return self.covariance is not None

    def value(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.sigma[self.names.index(name)])

    def to_dict(self) -> dict:
        cov = None if self.covariance is None else self.covariance.tolist()
        out = {
            "parameters": [
                {"name": n, "value": float(v), "sigma": _json_float(s)}
                for n, v, s in zip(self.names, self.params, self.sigma)
            ],
            "covariance": cov,
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "message": self.message,
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        pars = data["parameters"]
        cov = data.get("covariance")
        return cls(
            names=[p["name"] for p in pars],
            params=np.array([p["value"] for p in pars], dtype=float),
            sigma=np.array(
                [np.nan if p["sigma"] is None else p["sigma"] for p in pars],
                dtype=float,
            ),
            covariance=None if cov is None else np.array(cov, dtype=float),
            chi2=float(data["chi2"]),
            dof=int(data["dof"]),
            iterations=int(data.get("iterations", 0)),
            converged=bool(data.get("converged", True)),
            message=data.get("message", ""),
            extra=data.get("extra", {}),
        )


def _json_float(x):
    return None if not np.isfinite(x) else float(x)


# Parameter transforms for box bounds (MINUIT convention).
def _to_internal(p, lo, hi):
    u = p.copy()
    for i in range(p.size):
        a, b = lo[i], hi[i]
        if np.isfinite(a) and np.isfinite(b):
            u[i] = np.arcsin(np.clip(2.0 * (p[i] - a) / (b - a) - 1.0, -1.0, 1.0))
        elif np.isfinite(a):
            u[i] = np.sqrt((p[i] - a + 1.0) ** 2 - 1.0)
        elif np.isfinite(b):
            u[i] = np.sqrt((b - p[i] + 1.0) ** 2 - 1.0)
    return u


def _to_external(u, lo, hi):
    p = u.copy()
    for i in range(u.size):
        a, b = lo[i], hi[i]
        if np.isfinite(a) and np.isfinite(b):
            p[i] = a + (b - a) * (np.sin(u[i]) + 1.0) / 2.0
        elif np.isfinite(a):
            p[i] = a - 1.0 + np.sqrt(u[i] ** 2 + 1.0)
        elif np.isfinite(b):
            p[i] = b + 1.0 - np.sqrt(u[i] ** 2 + 1.0)
    return p


def least_squares(problem: FitProblem) -> FitResult:
    """Minimize a weighted sum of squared residuals.

    Marquardt-scaled Levenberg-Marquardt: lambda is multiplied by 10 after a
    rejected step and divided by 10 after an accepted one. Iteration stops
    when the scaled gradient, the relative step or the relative decrease of
    chi2 falls below its tolerance (the MINPACK success tests). Hitting
    ``max_iter`` returns a result with ``converged=False``.
    """
    p0 = np.asarray(problem.p0, dtype=float)
    npar = p0.size
    names = list(problem.names) if problem.names is not None else [
        f"p{i}" for i in range(npar)
    ]
    if problem.bounds is None:
        lo = np.full(npar, -np.inf)
        hi = np.full(npar, np.inf)
    else:
        lo = np.asarray(problem.bounds[0], dtype=float)
        hi = np.asarray(problem.bounds[1], dtype=float)
        if np.any(p0 < lo) or np.any(p0 > hi):
            raise ValueError("initial parameters lie outside the bounds")
    bounded = bool(np.any(np.isfinite(lo)) or np.any(np.isfinite(hi)))

    r0 = np.atleast_1d(np.asarray(problem.residual(p0), dtype=float))
    if not np.all(np.isfinite(r0)):
        raise NonFiniteError("residual is not finite at the initial parameters")
    npts = r0.size
    if npts < npar:
        raise ValueError(
            f"{npts} residuals cannot determine {npar} parameters"
        )
    if problem.weights is None:
        sw = np.ones(npts)
    else:
        w = np.asarray(problem.weights, dtype=float)
        if w.shape != (npts,) or np.any(w <= 0):
            raise ValueError("weights must be positive, one per residual")
        sw = np.sqrt(w)

    def to_ext(u):
        return _to_external(u, lo, hi) if bounded else u

    def wres(u):
        return sw * np.atleast_1d(np.asarray(problem.residual(to_ext(u)), dtype=float))

    u = _to_internal(p0, lo, hi) if bounded else p0.copy()
    # Difference steps remember the starting scale so a parameter passing
    # through zero keeps a usable step.
    floor = np.where(u != 0, 1e-3 * np.abs(u), 1e-3)
    floor_ext = np.where(p0 != 0, 1e-3 * np.abs(p0), 1e-3)
    r = wres(u)
    chi2 = float(r @ r)
    chi2_start = chi2
    lam = problem.lambda0
    converged = False
    message = "maximum number of iterations reached"
    grad_norm = np.nan
    it = 0

    for it in range(1, problem.max_iter + 1):
        J = numeric_jacobian(wres, u, problem.rel_step, floor, names=names)
        g = J.T @ r
        grad_norm = _scaled_gradient(J, r, g)
        if chi2 <= 1e-28 * max(chi2_start, 1e-300) or grad_norm <= problem.gtol:
            converged = True
            message = "gradient below tolerance"
            it -= 1
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1e-30 * max(diag.max(), 1e-300)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            u_new = u + step
            r_new = wres(u_new)
            chi2_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if chi2_new <= chi2:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # At rounding-level residuals no step can lower chi2; accept the
            # point when even the Gauss-Newton model promises no real gain.
            gn, *_ = np.linalg.lstsq(J, -r, rcond=None)
            rest = r + J @ gn
            predicted = chi2 - float(rest @ rest)
            message = "no decreasing step found"
            converged = grad_norm <= np.sqrt(problem.gtol) or predicted <= 1e-10 * chi2
            break
        small_step = np.all(np.abs(step) <= problem.xtol * (np.abs(u) + problem.xtol))
        small_drop = (chi2 - chi2_new) <= problem.ftol * chi2
        u, r, chi2 = u_new, r_new, chi2_new
        lam = max(lam / 10.0, 1e-15)
        if small_step or small_drop:
            J = numeric_jacobian(wres, u, problem.rel_step, floor, names=names)
            grad_norm = _scaled_gradient(J, r, J.T @ r)
            message = "step below tolerance" if small_step else "chi2 change below tolerance"
            converged = True
            break

    p = to_ext(u)
    resid = np.atleast_1d(np.asarray(problem.residual(p), dtype=float))
    wr = sw * resid
    chi2 = float(wr @ wr)
    dof = npts - npar

    cov = None
    sigma = np.full(npar, np.nan)
    if converged and npar > 0:
        Jx = numeric_jacobian(lambda q: sw * np.atleast_1d(problem.residual(q)), p,
                              problem.rel_step, floor_ext, names=names)
        A = Jx.T @ Jx
        if np.all(np.isfinite(A)) and np.linalg.cond(A) < COND_LIMIT:
            cov = np.linalg.inv(A)
            if not problem.absolute_sigma:
                cov = cov * (chi2 / dof) if dof > 0 else None
            if cov is not None:
                sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    return FitResult(
        names=names,
        params=p,
        sigma=sigma,
        covariance=cov,
        chi2=chi2,
        dof=dof,
        iterations=it,
        converged=converged,
        message=message,
        grad_norm=float(grad_norm),
        residuals=resid,
    )


def _scaled_gradient(J, r, g):
    # max_j |J_j . r| / (|J_j| |r|), the MINPACK gradient test
    rn = np.linalg.norm(r)
    if rn == 0.0:
        return 0.0
    cn = np.linalg.norm(J, axis=0)
    cn[cn == 0] = 1.0
    return float(np.max(np.abs(g) / (cn * rn))) if g.size else 0.0
