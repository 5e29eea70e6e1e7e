"""Measures on seed cross-sections, pushforward densities, Renyi entropies
and convexity verification along a congruence.

Densities are relative to the weighted cross-section measure
m_H = e^{-V}·vol_H.  Along each ray the change-of-variables identity

    e^{-V∘T_t}·ρ_t(T_t(x))·det DT_t(x) = ρ_0(x)·e^{-V(x)}

pins the pushforward density, so the entropy

    S_N'(μ_t | m_H) = -∫ (ρ_t ∘ T_t)^{-1/N'} dμ_0

becomes a fixed quadrature over seed nodes for every t, and the convexity
slack of the chord is exact per node up to integration error of the rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .congruence import Congruence
from .dsl import parse
from .geometry import GeometryError

__all__ = [
    "Measure",
    "InterpolationReport",
    "make_measure",
    "pushforward_density",
    "renyi_entropy",
    "convexity_report",
    "localized_implies_global",
]


@dataclass(eq=False)
class Measure:
    """Probability measure on the seed cross-section, absolutely continuous
    w.r.t. m_H with density values at the quadrature nodes."""

    congruence: Congruence
    rho0: np.ndarray            # density at nodes, after normalization
    mass_weights: np.ndarray    # w_k·ρ0_k·e^{-V_k}·J_k, sums to 1
    node_measure: np.ndarray    # w_k·e^{-V_k}·J_k (m_H of the node cells)
    v0: np.ndarray              # V at the seed nodes

    @property
    def support_measure(self):
        """m_H of the carrying cross-section (quadrature value)."""
        return float(self.node_measure.sum())


def make_measure(cong, density=None):
    """Build a normalized measure on the seed of ``cong``.

    ``density`` is None for the m_H-uniform measure, an expression source
    over the seed parameters, or an array of nonnegative node values.
    """
    rays = cong.rays
    k = len(rays)
    base = np.array([r.quad_weight * r.area_jacobian for r in rays])
    v0 = np.array([float(r.weight_along(0.0)) for r in rays])
    node_measure = base * np.exp(-v0)
    if density is None:
        raw = np.ones(k)
    elif isinstance(density, str):
        expr = parse(density, cong.thetas.shape[1])
        raw = np.array([expr.eval(th) for th in cong.thetas])
    else:
        raw = np.asarray(density, dtype=float)
    if raw.shape != (k,):
        raise GeometryError(f"density values have shape {raw.shape}, "
                            f"expected ({k},)")
    if np.any(raw < 0):
        raise GeometryError("density must be nonnegative")
    total = float(raw @ node_measure)
    if total <= 0:
        raise GeometryError("measure has zero total mass")
    rho0 = raw / total
    return Measure(congruence=cong, rho0=rho0,
                   mass_weights=rho0 * node_measure,
                   node_measure=node_measure, v0=v0)


def pushforward_density(measure, ray_index, t):
    """ρ_t(T_t(x_k)) on one ray: ρ_0·e^{V(T_t(x_k)) - V(x_k)} / y_k(t)."""
    cong = measure.congruence
    ray = cong.rays[ray_index]
    if not cong.alive_at(t, ray_index):
        raise GeometryError(
            f"density undefined: ray {ray_index} is dead at t = {t} "
            f"({ray.exit_reason}; focal: {ray.focal_time})")
    y = float(ray.y(t))
    if y <= cong.y_tol:
        raise GeometryError(f"density undefined at focal ray {ray_index}")
    dv = float(ray.weight_along(t)) - measure.v0[ray_index]
    return measure.rho0[ray_index] * np.exp(dv) / y


def _tracks_grid(measure, t_grid):
    """ρ_t∘T_t for all rays on a time grid, shape (nt, nray); NaN on
    massless rays, error on dead or focal mass-carrying rays."""
    cong = measure.congruence
    d, s = cong.dim, cong.screen_dim
    a0 = 3 * d + s * d
    t_grid = np.asarray(t_grid, dtype=float)
    grid = cong.states_grid(t_grid)
    amat = grid[:, :, a0:a0 + s * s].reshape(t_grid.size, -1, s, s)
    with np.errstate(all="ignore"):
        y = np.linalg.det(np.where(np.isfinite(amat), amat, 0.0))
    y[~np.isfinite(amat).all(axis=(-2, -1))] = np.nan
    X = grid[:, :, :d].reshape(-1, d)
    finite = np.isfinite(X).all(axis=1)
    v = np.full(X.shape[0], np.nan)
    if finite.any():
        v[finite] = cong.metric.weight_values(X[finite])
    v = v.reshape(t_grid.size, -1)
    carry = measure.mass_weights > 0
    dead = ~np.isfinite(y[:, carry])
    if dead.any():
        i, jj = np.argwhere(dead)[0]
        k = int(np.nonzero(carry)[0][jj])
        ray = cong.rays[k]
        raise GeometryError(
            f"density undefined: ray {k} is dead at t = {t_grid[i]:.6g} "
            f"({ray.exit_reason}; focal: {ray.focal_time})")
    if np.any(y[:, carry] <= cong.y_tol):
        i, jj = np.argwhere(y[:, carry] <= cong.y_tol)[0]
        k = int(np.nonzero(carry)[0][jj])
        raise GeometryError(f"density undefined at focal ray {k} "
                            f"(t = {t_grid[i]:.6g})")
    with np.errstate(all="ignore"):
        rho = (measure.rho0[None, :] * np.exp(v - measure.v0[None, :]) / y)
    rho[:, ~carry] = np.nan
    return rho


def _density_track(measure, t):
    return _tracks_grid(measure, np.array([float(t)]))[0]


def renyi_entropy(measure, t, n_prime):
    """S_N'(μ_t | m_H) by quadrature of the pulled-back integral."""
    cong = measure.congruence
    n = cong.n
    if n_prime < n - 1:
        raise GeometryError(f"N' = {n_prime} below n-1 = {n - 1}")
    rho_t = _density_track(measure, t)
    carry = measure.mass_weights > 0
    return -float(measure.mass_weights[carry]
                  @ rho_t[carry] ** (-1.0 / n_prime))


@dataclass
class InterpolationReport:
    """Entropy interpolation along [0, 1] with global and per-ray slacks.

    ``slack[t] = (1-t)·S(μ_0) + t·S(μ_1) - S(μ_t)``; convexity of the
    entropy means every slack is ≥ 0 (up to ``slack_tol``).  ``ray_slacks``
    holds the localized inequality residuals
    ρ_t^{-1/N'} - (1-t)ρ_0^{-1/N'} - t·ρ_1^{-1/N'} per mass-carrying ray.
    """

    t_grid: np.ndarray
    entropies: np.ndarray
    chords: np.ndarray
    slacks: np.ndarray
    ray_slacks: np.ndarray          # (nt, nrays); NaN on massless rays
    density_tracks: np.ndarray      # (nt, nrays) ρ_t ∘ T_t
    n_prime: float
    slack_tol: float
    verdict: str
    incompleteness: str | None = None
    assumptions: tuple = (
        "endpoint cross-sections acausal by construction "
        "(spacelike seed, affine flow slices)",
    )

    @property
    def min_slack(self):
        inner = self.slacks[1:-1]
        return float(inner.min()) if inner.size else 0.0

    @property
    def min_ray_slack_per_t(self):
        with np.errstate(all="ignore"):
            return np.nanmin(self.ray_slacks, axis=1)


def convexity_report(measure, n_prime, t_grid=None, slack_tol=None,
                     violation_factor=100.0):
    """Verify chordal convexity of t ↦ S_N'(μ_t) on a grid in [0, 1].

    Verdicts: "consistent" (all slacks ≥ -slack_tol), "violated" (some
    slack < -violation_factor·slack_tol), "inconclusive" (in between), or
    "incomplete" when a mass-carrying ray dies inside [0, 1] — itself a
    meaningful outcome (the interpolation does not exist up to t = 1).
    """
    cong = measure.congruence
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.0, 33)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or t_grid[-1] != 1.0 or np.any(np.diff(t_grid) <= 0):
        raise GeometryError("t_grid must increase from 0 to 1")
    def incomplete(reason):
        return InterpolationReport(
            t_grid=t_grid, entropies=np.full(t_grid.size, np.nan),
            chords=np.full(t_grid.size, np.nan),
            slacks=np.full(t_grid.size, np.nan),
            ray_slacks=np.full((t_grid.size, len(cong.rays)), np.nan),
            density_tracks=np.full((t_grid.size, len(cong.rays)), np.nan),
            n_prime=n_prime, slack_tol=np.nan, verdict="incomplete",
            incompleteness=reason)

    carry = measure.mass_weights > 0
    for k in np.nonzero(carry)[0]:
        if not cong.alive_at(1.0, int(k)):
            ray = cong.rays[int(k)]
            return incomplete(
                f"ray {int(k)} dies at t = "
                f"{min(ray.t_alive, ray.focal_time or np.inf):.6g} "
                f"({ray.exit_reason})")
    nt = t_grid.size
    try:
        tracks = _tracks_grid(measure, t_grid)
    except GeometryError as exc:
        return incomplete(str(exc))
    with np.errstate(all="ignore"):
        integrand = tracks ** (-1.0 / n_prime)
    entropies = np.array([
        -float(measure.mass_weights[carry] @ integrand[i, carry])
        for i in range(nt)])
    s0, s1 = entropies[0], entropies[-1]
    if slack_tol is None:
        slack_tol = 1e-8 * (1.0 + abs(s0) + abs(s1))
    chords = (1.0 - t_grid) * s0 + t_grid * s1
    slacks = chords - entropies
    ray_slacks = (integrand
                  - np.outer(1.0 - t_grid, integrand[0])
                  - np.outer(t_grid, integrand[-1]))
    ray_slacks[:, ~carry] = np.nan
    inner = slacks[1:-1]
    if inner.size == 0 or inner.min() >= -slack_tol:
        verdict = "consistent"
    elif inner.min() < -violation_factor * slack_tol:
        verdict = "violated"
    else:
        verdict = "inconclusive"
    return InterpolationReport(
        t_grid=t_grid, entropies=entropies, chords=chords, slacks=slacks,
        ray_slacks=ray_slacks, density_tracks=tracks, n_prime=n_prime,
        slack_tol=float(slack_tol), verdict=verdict)


def localized_implies_global(measure, n_prime, t_grid=None):
    """Consistency oracle: μ_0-quadrature of per-ray slacks vs global slack.

    Both sides are assembled from the same node data, so agreement within
    rounding certifies the bookkeeping of Prop-style localization.
    """
    report = convexity_report(measure, n_prime, t_grid)
    if report.verdict == "incomplete":
        raise GeometryError("interpolation incomplete; nothing to compare")
    carry = measure.mass_weights > 0
    integrated = report.ray_slacks[:, carry] @ measure.mass_weights[carry]
    diff = integrated - report.slacks
    return {
        "t_grid": report.t_grid,
        "global_slack": report.slacks,
        "integrated_ray_slack": integrated,
        "max_abs_difference": float(np.abs(diff).max()),
        "report": report,
    }
