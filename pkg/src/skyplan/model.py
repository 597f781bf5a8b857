"""LoS channel, SINR, and propulsion-power evaluation with analytic derivatives.

All functions are pure and unit-agnostic: they work in physical meters or in
nondimensionalized units as long as positions, altitude, and reference SNRs
are expressed consistently (see :mod:`skyplan.scenario`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Default smoothing for the speed-cubed power term: ||v||^3 is replaced by
# (||v||^2 + EPS_V^2)^(3/2) so the Hessian exists at v = 0.
EPS_V = 1e-6


class DomainError(ValueError):
    """An argument is outside the mathematical domain of the operation."""


@dataclass(frozen=True)
class SinrBreakdown:
    serving_gbs: int
    signal: float
    interference: float
    sinr: float


@dataclass(frozen=True)
class PowerTerms:
    kinetic_term: float
    parasitic_term: float
    total: float


def squared_distance(q, station_xy, altitude):
    """Squared 3D distance between the vehicle at ground position q and a
    ground station, with the vehicle at fixed altitude and the station at
    z = 0. Always >= altitude**2."""
    q = np.asarray(q, dtype=float)
    station_xy = np.asarray(station_xy, dtype=float)
    d = q - station_xy
    return float(d @ d) + altitude * altitude


def sinr(q, serving, stations_xy, h_lin, altitude) -> SinrBreakdown:
    """SINR at ground position q when served by station index `serving`
    (0-based). Noise is normalized to 1: h already absorbs the noise power.
    """
    stations_xy = np.asarray(stations_xy, dtype=float)
    h_lin = np.asarray(h_lin, dtype=float)
    J = stations_xy.shape[0]
    if not 0 <= serving < J:
        raise DomainError(f"serving index {serving} out of range for J={J}")
    q = np.asarray(q, dtype=float)
    diff = stations_xy - q[None, :]
    d2 = np.einsum("ij,ij->i", diff, diff) + altitude * altitude
    terms = h_lin / d2
    signal = float(terms[serving])
    interference = float(terms.sum() - terms[serving])
    return SinrBreakdown(
        serving_gbs=serving,
        signal=signal,
        interference=interference,
        sinr=signal / (interference + 1.0),
    )


def coverage_radius(h_lin, gamma_min, interference_bound, altitude):
    """Ground-plane radius within which a station meets the SINR threshold,
    assuming total interference `interference_bound`. Returns None when the
    station cannot meet the threshold even directly overhead."""
    if gamma_min <= 0:
        raise DomainError("coverage_radius requires gamma_min > 0")
    radicand = h_lin / (gamma_min * (interference_bound + 1.0)) - altitude * altitude
    if radicand <= 0:
        return None
    return float(np.sqrt(radicand))


def power_slack(v, a, theta, c1, c2, g) -> PowerTerms:
    """Per-slot propulsion power in the slack form: c1*||v||^3 +
    (c2/theta)*(1 + ||a||^2/g). Equals the physical power when theta=||v||."""
    if theta <= 0:
        raise DomainError("theta must be positive")
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    kinetic = c1 * float(v @ v) ** 1.5
    parasitic = (c2 / theta) * (1.0 + float(a @ a) / g)
    return PowerTerms(kinetic_term=kinetic, parasitic_term=parasitic, total=kinetic + parasitic)


def power_gradient_hessian(v, a, theta, c1, c2, g, eps_v=EPS_V):
    """Gradient and Hessian of the smoothed slack-form power over the
    stacked variable z = (vx, vy, ax, ay, theta).

    The kinetic term uses (||v||^2 + eps_v^2)^(3/2) so derivatives exist at
    v = 0; the value differs from power_slack by O(eps_v^2).
    """
    if theta <= 0:
        raise DomainError("theta must be positive")
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    s = float(v @ v) + eps_v * eps_v
    r = np.sqrt(s)
    a2 = float(a @ a)

    grad = np.empty(5)
    grad[0:2] = 3.0 * c1 * r * v
    grad[2:4] = (2.0 * c2 / (g * theta)) * a
    grad[4] = -(c2 / (theta * theta)) * (1.0 + a2 / g)

    hess = np.zeros((5, 5))
    hess[0:2, 0:2] = 3.0 * c1 * (r * np.eye(2) + np.outer(v, v) / r)
    hess[2:4, 2:4] = (2.0 * c2 / (g * theta)) * np.eye(2)
    cross = -(2.0 * c2 / (g * theta * theta)) * a
    hess[2:4, 4] = cross
    hess[4, 2:4] = cross
    hess[4, 4] = (2.0 * c2 / theta**3) * (1.0 + a2 / g)
    return grad, hess


def smoothed_power_value(v, a, theta, c1, c2, g, eps_v=EPS_V):
    """Value consistent with power_gradient_hessian (smoothed ||v||^3)."""
    if theta <= 0:
        raise DomainError("theta must be positive")
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    s = float(v @ v) + eps_v * eps_v
    return c1 * s**1.5 + (c2 / theta) * (1.0 + float(a @ a) / g)


def _interferer_terms(rho, j, h_lin):
    rho = np.asarray(rho, dtype=float)
    h_lin = np.asarray(h_lin, dtype=float)
    mask = np.ones(rho.shape[0], dtype=bool)
    mask[j] = False
    rho_k = rho[mask]
    h_k = h_lin[mask]
    if np.any(rho_k <= 0):
        raise DomainError("interferer rho components must be positive")
    return rho_k, h_k, mask


def f_j(rho, j, h_lin) -> float:
    """Reciprocal interference-plus-noise term (sum over stations != j of
    h_k/rho_k, plus 1)^(-1). Lies in (0, 1]."""
    rho_k, h_k, _ = _interferer_terms(rho, j, h_lin)
    return 1.0 / (float(np.sum(h_k / rho_k)) + 1.0)


def f_j_gradient_hessian(rho, j, h_lin):
    """Analytic gradient and Hessian of f_j over the interferer variables
    {rho_k}_{k != j}, ordered by increasing k. The Hessian is negative
    semidefinite (f_j is concave)."""
    rho_k, h_k, _ = _interferer_terms(rho, j, h_lin)
    sigma = float(np.sum(h_k / rho_k)) + 1.0
    f = 1.0 / sigma
    w = h_k / rho_k**2
    grad = f * f * w
    # Hessian: 2*sigma^-3 * (w w^T - sigma * diag(h/rho^3))
    hess = 2.0 * sigma**-3 * (np.outer(w, w) - sigma * np.diag(h_k / rho_k**3))
    return grad, hess
