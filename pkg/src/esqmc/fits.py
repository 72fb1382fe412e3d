"""Linear least-squares analyses of entanglement-spectrum data.

Every fitter solves a linear design (optionally error-weighted), echoes
the window of points it actually consumed, and reports parameter errors
from the covariance of the solve when point errors are supplied. All take
momenta in radians; callers convert integer sector indices via
``2 pi k / g``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError


@dataclass(frozen=True)
class FitResult:
    """Parameters, their errors, and the residual of one fit."""

    model: str
    params: dict
    errors: dict
    residual_norm: float
    n_points: int
    window: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "errors": self.errors,
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
            "window": self.window,
            "extras": self.extras,
        }

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)
            fh.write("\n")


def _weighted_lsq(design: np.ndarray, y: np.ndarray, sigma: np.ndarray | None):
    """Solve min ||W(design p - y)||; returns (params, param_errors, residual)."""
    if design.shape[0] < design.shape[1]:
        raise SolverError(
            f"{design.shape[0]} points cannot constrain {design.shape[1]} parameters"
        )
    if sigma is not None:
        sigma = np.asarray(sigma, float)
        if (sigma <= 0).any():
            raise SolverError("point errors must be positive")
        w = 1.0 / sigma
        a = design * w[:, None]
        b = y * w
    else:
        a = design
        b = y
    params, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = design @ params - y
    residual_norm = float(np.linalg.norm(resid))
    cov = None
    try:
        cov = np.linalg.inv(a.T @ a)
    except np.linalg.LinAlgError:
        pass
    if cov is not None and sigma is None:
        # unweighted: scale by residual variance when dof allows
        dof = design.shape[0] - design.shape[1]
        scale = (residual_norm**2 / dof) if dof > 0 else 0.0
        cov = cov * scale
    perr = np.sqrt(np.clip(np.diag(cov), 0, None)) if cov is not None else np.full(
        design.shape[1], np.nan
    )
    return params, perr, residual_norm, resid


def fit_sine_dispersion(
    k: np.ndarray,
    xi_exc: np.ndarray,
    errors: np.ndarray | None = None,
    mode: str = "two-point",
) -> FitResult:
    """Fit xi_exc(k) = v |sin k| and report the velocity.

    ``mode="two-point"`` keeps only the two smallest nonzero momenta (the
    window where the sine form is clean on finite systems); ``"window"``
    uses every supplied point. Points at k = 0 are always dropped.
    """
    k = np.asarray(k, float)
    xi_exc = np.asarray(xi_exc, float)
    keep = np.abs(np.sin(k)) > 1e-12
    k, xi_exc = k[keep], xi_exc[keep]
    errors = errors[keep] if errors is not None else None
    if mode == "two-point":
        fold = np.round(np.abs(np.sin(k)), 12)
        # two smallest distinct |sin k| values (degenerate +-k pairs both kept)
        distinct = np.unique(fold)
        if distinct.size < 2:
            raise SolverError("two-point fit needs two distinct nonzero momenta")
        sel = np.isin(fold, distinct[:2])
        k, xi_exc = k[sel], xi_exc[sel]
        errors = errors[sel] if errors is not None else None
    elif mode != "window":
        raise SolverError(f"unknown dispersion fit mode {mode!r}")
    design = np.abs(np.sin(k))[:, None]
    params, perr, rnorm, resid = _weighted_lsq(design, xi_exc, errors)
    return FitResult(
        model="xi = v*|sin k|",
        params={"v": float(params[0])},
        errors={"v": float(perr[0])},
        residual_norm=rnorm,
        n_points=k.size,
        window={"mode": mode, "k_used": sorted(k.tolist())},
        extras={"residuals": resid.tolist()},
    )


def extrapolate_velocity(
    lengths: np.ndarray, velocities: np.ndarray, errors: np.ndarray | None = None
) -> FitResult:
    """Extrapolate v(L) = v_inf + a / L to the thermodynamic limit."""
    lengths = np.asarray(lengths, float)
    velocities = np.asarray(velocities, float)
    design = np.column_stack([np.ones_like(lengths), 1.0 / lengths])
    params, perr, rnorm, resid = _weighted_lsq(design, velocities, errors)
    return FitResult(
        model="v(L) = v_inf + a/L",
        params={"v_inf": float(params[0]), "a": float(params[1])},
        errors={"v_inf": float(perr[0]), "a": float(perr[1])},
        residual_norm=rnorm,
        n_points=lengths.size,
        window={"lengths": sorted(lengths.tolist())},
        extras={"residuals": resid.tolist()},
    )


def fit_groundlevel_scaling(
    lengths: np.ndarray,
    xi0: np.ndarray,
    errors: np.ndarray | None = None,
    central_charge: float = 1.0,
) -> FitResult:
    """Fit xi0/L = e0 + d1/L^2 and convert d1 to a velocity.

    For a critical effective chain the 1/L correction to the lowest level
    carries pi*c*v/6, so v_cft = 6|d1|/(pi*c). The sign of d1 is kept in
    the parameters; the conversion uses its magnitude.
    """
    lengths = np.asarray(lengths, float)
    xi0 = np.asarray(xi0, float)
    y = xi0 / lengths
    design = np.column_stack([np.ones_like(lengths), 1.0 / lengths**2])
    sigma = errors / lengths if errors is not None else None
    params, perr, rnorm, resid = _weighted_lsq(design, y, sigma)
    e0, d1 = float(params[0]), float(params[1])
    v_cft = 6.0 * abs(d1) / (math.pi * central_charge)
    v_err = 6.0 * float(perr[1]) / (math.pi * central_charge)
    return FitResult(
        model="xi0/L = e0 + d1/L^2",
        params={"e0": e0, "d1": d1, "v_cft": v_cft},
        errors={"e0": float(perr[0]), "d1": float(perr[1]), "v_cft": v_err},
        residual_norm=rnorm,
        n_points=lengths.size,
        window={"lengths": sorted(lengths.tolist()), "central_charge": central_charge},
        extras={"residuals": resid.tolist()},
    )


def fit_quadratic(
    k: np.ndarray,
    xi_exc: np.ndarray,
    errors: np.ndarray | None = None,
    model: str = "k2",
) -> FitResult:
    """Fit a through-origin magnon-like band.

    ``model="k2"``: xi = a k^2. ``model="sin2"``: xi = 2 j_eff sin^2(k/2),
    the lattice form whose small-k limit is (j_eff/2) k^2.
    """
    k = np.asarray(k, float)
    xi_exc = np.asarray(xi_exc, float)
    keep = np.abs(k) > 1e-12
    k, xi_exc = k[keep], xi_exc[keep]
    errors = errors[keep] if errors is not None else None
    if model == "k2":
        design = (k**2)[:, None]
        name = "a"
        label = "xi = a*k^2"
    elif model == "sin2":
        design = (2.0 * np.sin(k / 2.0) ** 2)[:, None]
        name = "j_eff"
        label = "xi = 2*j_eff*sin^2(k/2)"
    else:
        raise SolverError(f"unknown quadratic model {model!r}")
    params, perr, rnorm, resid = _weighted_lsq(design, xi_exc, errors)
    return FitResult(
        model=label,
        params={name: float(params[0])},
        errors={name: float(perr[0])},
        residual_norm=rnorm,
        n_points=k.size,
        window={"k_used": sorted(k.tolist())},
        extras={"residuals": resid.tolist()},
    )


def fit_linear_band(
    k: np.ndarray, xi_exc: np.ndarray, errors: np.ndarray | None = None
) -> FitResult:
    """Through-origin linear band xi = b k, the comparison model for bands
    that are actually quadratic near k = 0."""
    k = np.asarray(k, float)
    xi_exc = np.asarray(xi_exc, float)
    keep = np.abs(k) > 1e-12
    k, xi_exc = k[keep], xi_exc[keep]
    errors = errors[keep] if errors is not None else None
    design = np.abs(k)[:, None]
    params, perr, rnorm, resid = _weighted_lsq(design, xi_exc, errors)
    return FitResult(
        model="xi = b*|k|",
        params={"b": float(params[0])},
        errors={"b": float(perr[0])},
        residual_norm=rnorm,
        n_points=k.size,
        window={"k_used": sorted(k.tolist())},
        extras={"residuals": resid.tolist()},
    )


def fit_tos(
    s_values: np.ndarray,
    xi_lowest: np.ndarray,
    errors: np.ndarray | None = None,
) -> FitResult:
    """Tower-of-states fit: xi_min(S) = xi0 + slope * S(S+1)."""
    s_values = np.asarray(s_values, float)
    xi_lowest = np.asarray(xi_lowest, float)
    casimir = s_values * (s_values + 1.0)
    design = np.column_stack([np.ones_like(casimir), casimir])
    params, perr, rnorm, resid = _weighted_lsq(design, xi_lowest, errors)
    return FitResult(
        model="xi_min(S) = xi0 + slope*S(S+1)",
        params={"xi0": float(params[0]), "slope": float(params[1])},
        errors={"xi0": float(perr[0]), "slope": float(perr[1])},
        residual_norm=rnorm,
        n_points=s_values.size,
        window={"s_values": sorted(s_values.tolist())},
        extras={"residuals": resid.tolist()},
    )


def chi_perp_from_slope(slope: float, volume: int, n_components: int = 3) -> float:
    """Transverse susceptibility from a tower slope.

    The tower spacing is S(S + n_components - 2) / (2 chi volume); for the
    Heisenberg case (three components) the S(S+1) slope inverts to
    chi = 1 / (2 slope volume).
    """
    if slope <= 0:
        raise SolverError(f"tower slope must be positive, got {slope}")
    if n_components != 3:
        raise SolverError("only the three-component (Heisenberg) case is supported")
    return 1.0 / (2.0 * slope * volume)
