"""Null geodesic congruences from spacelike codimension-2 seed surfaces.

A seed surface φ: Θ ⊂ R^{n-1} → chart is sampled at quadrature nodes; at
each node the two future null normals are solved for, the outer one (per
the orientation flag) is gauge-normalized by ⟨L, t_ref⟩ = -1 and scaled by
``span`` into the generator K̃.  Each ray then carries, in one coupled ODE
system integrated for all rays at once,

    x'  = v                  v'  = -Γ(v, v)          (null geodesic)
    ℓ̄'  = -Γ(v, ℓ̄)          E_i' = -Γ(v, E_i)        (parallel transport)
    A'  = B                  B'  = -R̂ A              (Jacobi, screen comps)

with R̂_{ik} = ⟨E_i, R(E_k, v)v⟩ and A(0) = I, B(0) = span·Π (the seed's
Weingarten data).  y = det A is the transport-map Jacobian; its first zero
is the focal time.  Integration is by scipy's DOP853 with dense output;
terminal events (chart exit, y reaching y_tol) kill individual rays and
the remaining batch restarts, so results merge deterministically by node
index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from . import geometry as geo
from .dsl import Expression, TapeBundle, parse
from .geometry import GeometryError, MetricSpec, riemann

__all__ = [
    "SeedSurface",
    "RaySolution",
    "Congruence",
    "quadrature_nodes",
    "null_normals",
    "second_fundamental_form",
    "build_congruence",
    "integrate_ray",
    "screen_frame",
    "jacobi_evolve",
    "cross_section_measure",
]

Y_TOL = 1e-10           # focal threshold on y = det A
KRETSCHMANN_CAP = 1e10  # chart exits beyond this are flagged as blow-up


@dataclass(eq=False)
class SeedSurface:
    """Spacelike codimension-2 parametrized surface with quadrature rule.

    ``components`` are chart-point expressions over the n-1 parameters
    ``x0..x{n-2}``; ``domain`` is a parameter box; ``outward`` (optional)
    is a chart-vector field over the parameters used to pick the "outer"
    null normal — when absent, the spatial offset from the seed centroid
    is used, which is right for sphere-like seeds around a point but
    degenerate e.g. for constant-radius spheres in Eddington-Finkelstein
    charts (supply ``outward`` there).
    """

    components: list
    domain: list
    resolution: list
    rule: str = "gauss"
    orientation: str = "outer"
    outward: list | None = None

    def __post_init__(self):
        self.pdim = len(self.domain)
        if len(self.resolution) != self.pdim:
            raise GeometryError("resolution and domain ranks differ")
        if self.rule not in ("gauss", "uniform"):
            raise GeometryError(f"unknown quadrature rule {self.rule!r}")
        if self.orientation not in ("outer", "inner"):
            raise GeometryError(f"orientation must be outer|inner")
        self._cache = {}

    @staticmethod
    def from_sources(sources, domain, resolution, rule="gauss",
                     orientation="outer", outward=None):
        pdim = len(domain)
        comps = [s if isinstance(s, Expression) else parse(str(s), pdim)
                 for s in sources]
        out = None
        if outward is not None:
            out = [s if isinstance(s, Expression) else parse(str(s), pdim)
                   for s in outward]
        return SeedSurface(components=comps, domain=[tuple(map(float, ab))
                                                     for ab in domain],
                           resolution=[int(r) for r in resolution], rule=rule,
                           orientation=orientation, outward=out)

    def _tape(self, key):
        tape = self._cache.get(key)
        if tape is None:
            if key == "phi":
                tape = TapeBundle.compile(self.components)
            elif key == "outward":
                tape = (TapeBundle.compile(self.outward)
                        if self.outward else None)
            self._cache[key] = tape
        return tape

    def chart_points(self, thetas):
        return self._tape("phi").eval_values(np.atleast_2d(thetas))

    def jets(self, thetas):
        """(φ, dφ, d²φ) at parameter points: shapes (m, d), (m, n-1, d),
        (m, n-1, n-1, d)."""
        val, grad, hess = self._tape("phi").eval_jets(np.atleast_2d(thetas))
        return val, grad.transpose(0, 2, 1), hess.transpose(0, 2, 3, 1)


def quadrature_nodes(domain, resolution, rule="gauss"):
    """Product quadrature on a box: (nodes (m, k), weights (m,)).

    Gauss-Legendre nodes are interior, so parametrizations that degenerate
    on the box boundary (sphere poles) are never sampled.
    """
    axes, wts = [], []
    for (lo, hi), count in zip(domain, resolution):
        lo, hi = float(lo), float(hi)
        if rule == "gauss":
            xs, ws = np.polynomial.legendre.leggauss(int(count))
            axes.append(0.5 * (hi - lo) * xs + 0.5 * (hi + lo))
            wts.append(0.5 * (hi - lo) * ws)
        else:
            h = (hi - lo) / int(count)
            axes.append(lo + h * (np.arange(int(count)) + 0.5))
            wts.append(np.full(int(count), h))
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*wts, indexing="ij")
    weights = np.ones(nodes.shape[0])
    for w in wgrids:
        weights = weights * w.ravel()
    return nodes, weights


# ---------------------------------------------------------------------------
# Pointwise seed frame data


@dataclass
class _SeedFrame:
    theta: np.ndarray
    point: np.ndarray
    tangents: np.ndarray        # (n-1, d) coordinate tangents dφ/dθ_a
    induced: np.ndarray         # (n-1, n-1) metric on the tangents
    jacobian: float             # sqrt(det induced)
    ortho: np.ndarray           # (n-1, n-1): e_i = Σ_a ortho[i,a]·tangents[a]
    frame: np.ndarray           # (n-1, d) orthonormal tangent frame e_i
    normal_outer: np.ndarray    # gauge-normalized future null, outer
    normal_inner: np.ndarray


def _seed_frame(metric, seed, theta):
    theta = np.asarray(theta, dtype=float)
    val, grad, hess = seed.jets(theta[None, :])
    p = val[0]
    metric.check_point(p)
    T = grad[0]                                    # (n-1, d)
    g = metric.metric_values(p[None, :])[0]
    h = T @ g @ T.T
    try:
        chol = np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        raise GeometryError(
            f"seed tangent space at θ={theta.tolist()} is not spacelike "
            f"(induced metric not positive definite)") from None
    ortho = np.linalg.inv(chol)                    # rows give orthonormal e_i
    frame = ortho @ T
    jac = float(np.sqrt(np.linalg.det(h)))
    tref = metric.tref_values(p[None, :])[0]
    if float(tref @ g @ tref) >= 0:
        raise GeometryError(
            "reference field is not timelike here; cannot normalize normals")
    w1, w2 = _null_pair(g, T, tref)
    if seed.outward is not None:
        u_out = seed._tape("outward").eval_values(theta[None, :])[0]
    else:
        u_out = _centroid_outward(seed, p)
    s1 = float(w1 @ g @ u_out)
    s2 = float(w2 @ g @ u_out)
    outer, inner = (w1, w2) if s1 >= s2 else (w2, w1)
    return _SeedFrame(theta=theta, point=p, tangents=T, induced=h,
                      jacobian=jac, ortho=ortho, frame=frame,
                      normal_outer=outer, normal_inner=inner)


def _centroid_outward(seed, p):
    centre = seed._cache.get("centroid")
    if centre is None:
        nodes, _ = quadrature_nodes(seed.domain, seed.resolution, seed.rule)
        centre = seed.chart_points(nodes).mean(axis=0)
        seed._cache["centroid"] = centre
    u = p - centre
    u[0] = 0.0          # spatial offset only; chart x0 is the time direction
    if not np.any(u):
        raise GeometryError(
            "cannot infer an outward direction from the seed centroid; "
            "declare 'outward' on the seed surface")
    return u


def _null_pair(g, tangents, tref):
    """Two future null vectors orthogonal to the tangent rows, each
    normalized to ⟨w, t_ref⟩ = -1."""
    B = tangents @ g
    _, sv, vt = np.linalg.svd(B)
    if sv.size and sv.min() < 1e-12 * max(sv.max(), 1.0):
        raise GeometryError("seed parametrization is degenerate (dφ rank deficient)")
    z = vt[tangents.shape[0]:]                     # basis of the normal space
    if z.shape[0] != 2:
        raise GeometryError("normal space dimension is not 2")
    gram = z @ g @ z.T
    lam, vec = np.linalg.eigh(gram)
    if not (lam[0] < 0 < lam[1]):
        raise GeometryError("normal space is not Lorentzian (seed not spacelike?)")
    u_minus = (z.T @ vec[:, 0]) / np.sqrt(-lam[0])
    u_plus = (z.T @ vec[:, 1]) / np.sqrt(lam[1])
    pair = []
    for w in (u_minus + u_plus, u_minus - u_plus):
        c = float(w @ g @ tref)
        if c > 0:
            w, c = -w, -c
        pair.append(w / (-c))
    return pair[0], pair[1]


def null_normals(metric, seed, theta):
    """The two future-directed null normals (L, L̄) at φ(θ), L selected by
    the seed's orientation flag, both normalized to ⟨·, t_ref⟩ = -1."""
    fr = _seed_frame(metric, seed, theta)
    if seed.orientation == "outer":
        return fr.normal_outer, fr.normal_inner
    return fr.normal_inner, fr.normal_outer


def second_fundamental_form(metric, seed, theta, w):
    """Shape data of the seed w.r.t. a null normal w at φ(θ).

    Returns (Π, H): Π(e_i, e_j) = ⟨∇_{e_i} w, e_j⟩ on the orthonormal
    tangent frame, computed as -⟨w, ∇_{∂_a φ} ∂_b φ⟩ (w stays orthogonal
    to the tangents along the seed), and H = tr Π.  Sign convention: the
    Minkowski unit sphere with outgoing L gives Π = id, H = +(n-1)/r.
    """
    fr = _seed_frame(metric, seed, theta)
    _, _, hess = seed.jets(fr.theta[None, :])
    fr.second_derivs = hess[0]
    w = np.asarray(w, dtype=float)
    g = metric.metric_values(fr.point[None, :])[0]
    s = float(w @ g @ w)
    if abs(s) > geo.NULL_TOL * float(w @ w):
        raise GeometryError("w is not null within tolerance")
    tangential = fr.tangents @ g @ w
    scale = np.sqrt(np.abs(np.diag(fr.induced))) * np.linalg.norm(w)
    if np.any(np.abs(tangential) > 1e-8 * np.maximum(scale, 1e-30)):
        raise GeometryError("w is not normal to the seed surface")
    return _pi_from_frame(metric, fr, w)


# ---------------------------------------------------------------------------
# Ray bundle integration


@dataclass(eq=False)
class RaySolution:
    """One null ray of a congruence, with dense output views.

    Sampling beyond min(focal_time, death time) raises; past a focal point
    the transport fields are meaningless and are not reported.
    """

    congruence: object = field(repr=False)
    index: int
    theta: np.ndarray
    quad_weight: float
    area_jacobian: float
    generator: np.ndarray          # K̃ at the seed (chart components)
    weingarten0: np.ndarray        # B(0) = span·Π
    t_alive: float = 0.0
    focal_time: float | None = None
    exit_reason: str = "t_end"
    exit_state: np.ndarray | None = None

    # -- raw state access ---------------------------------------------------

    def _state(self, t):
        return self.congruence._ray_state_at(self.index, t)

    def _t_limit(self, transport):
        # trajectory-level fields stay valid to the ray's death; transport
        # fields (Jacobi data, densities) are not reported past a focal point
        lim = self.t_alive
        if transport and self.focal_time is not None:
            lim = min(lim, self.focal_time)
        return lim

    def _check_t(self, t, transport=False):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lim = self._t_limit(transport)
        if np.any(t < -1e-12) or np.any(t > lim + 1e-9):
            what = "transport fields" if transport else "trajectory"
            raise GeometryError(
                f"ray {self.index} {what} sampled at t outside [0, "
                f"{lim:.6g}] (exit: {self.exit_reason}, focal: "
                f"{self.focal_time})")
        return t

    def position(self, t):
        t = self._check_t(t)
        return np.squeeze(self._state(t)[..., :self.congruence.dim])

    def velocity(self, t):
        d = self.congruence.dim
        t = self._check_t(t)
        return np.squeeze(self._state(t)[..., d:2 * d])

    def transverse_null(self, t):
        d = self.congruence.dim
        t = self._check_t(t)
        return np.squeeze(self._state(t)[..., 2 * d:3 * d])

    def jacobi_matrix(self, t):
        s, d = self.congruence.screen_dim, self.congruence.dim
        t = self._check_t(t, transport=True)
        st = self._state(t)
        a0 = 3 * d + s * d
        return np.squeeze(st[..., a0:a0 + s * s].reshape(t.shape + (s, s)))

    def jacobi_rate(self, t):
        s, d = self.congruence.screen_dim, self.congruence.dim
        t = self._check_t(t, transport=True)
        st = self._state(t)
        a0 = 3 * d + s * d + s * s
        return np.squeeze(st[..., a0:a0 + s * s].reshape(t.shape + (s, s)))

    def screen_frame(self, t, clean=True):
        """Orthonormal screen frame E_1..E_{n-1}(t), rows of shape (d,).

        ``clean=True`` removes components along γ' and the transverse null
        ℓ̄ and re-orthonormalizes (numerical drift of the raw transported
        frame stays monitored via :meth:`gram_defect`).
        """
        s, d = self.congruence.screen_dim, self.congruence.dim
        t = self._check_t(t)
        st = self._state(t)
        E = st[..., 3 * d:3 * d + s * d].reshape(t.shape + (s, d))
        if not clean:
            return np.squeeze(E)
        v = st[..., d:2 * d]
        lb = st[..., 2 * d:3 * d]
        g = self.congruence.metric.metric_values(st[..., :d].reshape(-1, d))
        g = g.reshape(t.shape + (d, d))
        E = E + np.einsum("...id,...de,...e->...i", E, g, v)[..., None] * lb[..., None, :]
        E = E + np.einsum("...id,...de,...e->...i", E, g, lb)[..., None] * v[..., None, :]
        # Gram-Schmidt w.r.t. g
        for i in range(s):
            for j in range(i):
                c = np.einsum("...d,...de,...e->...", E[..., i, :], g, E[..., j, :])
                E[..., i, :] = E[..., i, :] - c[..., None] * E[..., j, :]
            nrm = np.sqrt(np.einsum("...d,...de,...e->...", E[..., i, :], g,
                                    E[..., i, :]))
            E[..., i, :] = E[..., i, :] / nrm[..., None]
        return np.squeeze(E)

    def gram_defect(self, t):
        """max |⟨E_i,E_j⟩ - δ_ij| of the raw transported frame at t."""
        s, d = self.congruence.screen_dim, self.congruence.dim
        t = self._check_t(t)
        st = self._state(t)
        E = st[..., 3 * d:3 * d + s * d].reshape(t.shape + (s, d))
        g = self.congruence.metric.metric_values(st[..., :d].reshape(-1, d))
        g = g.reshape(t.shape + (d, d))
        gram = np.einsum("...id,...de,...je->...ij", E, g, E)
        eye = np.eye(s)
        return np.squeeze(np.abs(gram - eye).max(axis=(-2, -1)))

    def y(self, t):
        """det A(t): the Jacobian of the transport map along this ray."""
        A = self.jacobi_matrix(t)
        return np.linalg.det(A) if A.ndim >= 2 else A

    def weingarten(self, t):
        """U(t) = A'(t) A(t)^{-1} in the screen frame."""
        return self.jacobi_rate(t) @ np.linalg.inv(self.jacobi_matrix(t))

    def trU(self, t):
        U = self.weingarten(t)
        return np.trace(U, axis1=-2, axis2=-1)

    def weight_along(self, t):
        """V(γ(t)); zero without a declared weight."""
        t = self._check_t(t)
        d = self.congruence.dim
        pts = self._state(t)[..., :d].reshape(-1, d)
        return np.squeeze(self.congruence.metric.weight_values(pts).reshape(t.shape))

    def z(self, t):
        """Weighted Jacobian e^{-V(γ(t))}·y(t)."""
        return np.exp(-self.weight_along(t)) * self.y(t)

    def ricci_vv(self, t):
        """Ric(γ'(t), γ'(t)) sampled along the ray."""
        t = self._check_t(t)
        d = self.congruence.dim
        st = self._state(t)
        X = st[..., :d].reshape(-1, d)
        V = st[..., d:2 * d].reshape(-1, d)
        g, dg, d2g = self.congruence.metric.metric_jets(X)
        _, riem = riemann(np.linalg.inv(g), dg, d2g)
        ric = geo.ricci(riem)
        return np.squeeze(np.einsum("ms,msv,mv->m", V, ric, V).reshape(t.shape))


class Congruence:
    """A bundle of rays realizing the transport maps T_t along a null
    hypersurface germ.  Immutable once built; rays share the dense output
    of one batched integration."""

    def __init__(self, metric, seed, thetas, weights, frames, span, t_end,
                 rtol, atol, y_tol):
        self.metric = metric
        self.seed = seed
        self.dim = metric.dim
        self.screen_dim = metric.dim - 2
        self.n = metric.dim - 1              # seeds have dimension n-1
        self.span = float(span)
        self.t_end = float(t_end)
        self.rtol = rtol
        self.atol = atol
        self.y_tol = y_tol
        self.thetas = thetas
        self.weights = weights
        self.frames = frames
        self.segments = []                   # (t0, t1, dense, alive mask)
        self.rays = []

    # -- dense state access -------------------------------------------------

    @property
    def stride(self):
        d, s = self.dim, self.screen_dim
        return 3 * d + s * d + 2 * s * s

    def _segment_for(self, t):
        for t0, t1, dense, alive in self.segments:
            if t0 - 1e-12 <= t <= t1 + 1e-12:
                return dense, alive
        raise GeometryError(f"t = {t} outside the integrated span")

    def states_grid(self, ts):
        """Dense states on a time grid: (len(ts), nray, stride), NaN where
        a ray is dead.  One interpolant call per segment, so grids over
        many rays stay cheap."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        nray = len(self.weights)
        out = np.full((ts.size, nray, self.stride), np.nan)
        unfilled = np.ones(ts.size, dtype=bool)
        for t0, t1, dense, alive in self.segments:
            mask = unfilled & (ts >= t0 - 1e-12) & (ts <= t1 + 1e-12)
            if not mask.any():
                continue
            idx = np.nonzero(mask)[0]
            vals = dense(ts[idx]).T.reshape(idx.size, nray, self.stride)
            vals[:, ~alive, :] = np.nan
            out[idx] = vals
            unfilled[mask] = False
        return out

    def _ray_state_at(self, k, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.states_grid(t)[:, k, :]
        if not np.all(np.isfinite(out)):
            bad = float(t[~np.isfinite(out).all(axis=-1)][0])
            raise GeometryError(f"ray {k} is dead at t = {bad}")
        return out.reshape(t.shape + (self.stride,))

    def states_at(self, t, subset=None):
        """Full state rows of selected live rays at common time t."""
        subset = np.arange(len(self.rays)) if subset is None else np.asarray(subset)
        rows = [self._ray_state_at(k, t)[0] for k in subset]
        return np.asarray(rows)

    def alive_at(self, t, k=None):
        if k is not None:
            r = self.rays[k]
            return t <= r.t_alive + 1e-12 and (r.focal_time is None
                                               or t <= r.focal_time + 1e-12)
        return np.array([self.alive_at(t, k) for k in range(len(self.rays))])

    @property
    def generator_record(self):
        """Normalization of the generators: gauge and affine span."""
        return {"gauge": "<L, t_ref> = -1", "span": self.span,
                "orientation": self.seed.orientation if self.seed else "n/a"}


def _initial_states(metric, frames, span, u0_override=None):
    d = metric.dim
    s = d - 2
    states = np.empty((len(frames), 3 * d + s * d + 2 * s * s))
    for k, fr in enumerate(frames):
        v = span * fr.normal_outer
        other = fr.normal_inner
        g = metric.metric_values(fr.point[None, :])[0]
        lb = other / (-float(other @ g @ v))        # ⟨ℓ̄, K̃⟩ = -1
        if u0_override is None:
            pi, _ = _pi_from_frame(metric, fr, fr.normal_outer)
            u0 = span * pi
        else:
            u0 = np.asarray(u0_override[k], dtype=float)
        E = fr.frame
        states[k] = np.concatenate([
            fr.point, v, lb, E.ravel(), np.eye(s).ravel(), u0.ravel()])
    return states


def _pi_from_frame(metric, fr, w):
    """Π(e_i, e_j) = -⟨w, ∇_{e_i} e_j⟩ on the orthonormal tangent frame."""
    g, dg, _ = metric.metric_jets(fr.point[None, :])
    gamma = geo.christoffel(np.linalg.inv(g), dg)[0]
    # ∇_{∂_a}∂_b φ = ∂²φ_ab + Γ(∂_a φ, ∂_b φ)
    second = fr.second_derivs + np.einsum(
        "luv,au,bv->abl", gamma, fr.tangents, fr.tangents)
    pi_coord = -np.einsum("abl,lm,m->ab", second, g[0], w)
    pi = fr.ortho @ pi_coord @ fr.ortho.T
    return 0.5 * (pi + pi.T), float(np.trace(pi))


def build_congruence(metric, seed, span=1.0, t_end=1.0, rtol=1e-11,
                     atol=1e-13, y_tol=Y_TOL):
    """Integrate the congruence generated by K̃ = span·L over [0, t_end]."""
    thetas, weights = quadrature_nodes(seed.domain, seed.resolution, seed.rule)
    frames = []
    for theta in thetas:
        fr = _seed_frame(metric, seed, theta)
        _, _, hess = seed.jets(theta[None, :])
        fr.second_derivs = hess[0]
        if seed.orientation == "inner":
            fr.normal_outer, fr.normal_inner = fr.normal_inner, fr.normal_outer
        frames.append(fr)
    cong = Congruence(metric, seed, thetas, weights, frames, span, t_end,
                      rtol, atol, y_tol)
    states = _initial_states(metric, frames, span)
    _integrate(cong, states)
    return cong


def _transport_terms(g, dg, d2g, v):
    """Connection and tidal contractions for the ray system.

    Returns (Γ·v as (m,d,d), Γ·v·v, W) with W^ρ_μ = R^ρ_{σμν} v^σ v^ν,
    assembled with v contracted in early so no rank-5 tensor is ever
    built; batched matmuls only (this runs inside every RHS evaluation).
    """
    m, d = v.shape
    ginv = np.linalg.inv(g)
    low = 0.5 * (dg.transpose(0, 2, 1, 3) + dg.transpose(0, 2, 3, 1) - dg)
    gamma = (ginv @ low.reshape(m, d, d * d)).reshape(m, d, d, d)
    vc = v[:, :, None]
    gamma_v = (gamma.reshape(m, d * d, d) @ vc).reshape(m, d, d)
    gamma_vv = (gamma_v @ vc)[:, :, 0]
    dginv = -(ginv[:, None] @ dg @ ginv[:, None])
    low_v = (low.reshape(m, d * d, d) @ vc).reshape(m, d, d)
    low_vv = (low_v @ vc)[:, :, 0]
    vv = (vc * v[:, None, :]).reshape(m, d * d, 1)
    # ∂Γ pieces: T1^ρ_μ = v^ν v^σ ∂_μ Γ^ρ_{νσ}, T2^ρ_μ = v^ν v^σ ∂_ν Γ^ρ_{μσ}
    a2 = (np.ascontiguousarray(d2g.transpose(0, 1, 3, 2, 4))
          .reshape(m, d * d, d * d) @ vv).reshape(m, d, d)
    b2 = (d2g.reshape(m, d * d, d * d) @ vv).reshape(m, d, d)
    dlow_vv1 = a2 - 0.5 * b2                      # [k, s]
    dv2 = ((d2g.reshape(m, d, d ** 3).transpose(0, 2, 1) @ vc)
           .reshape(m, d, d, d))                  # v^k ∂_k∂_· g_{··}
    c2 = (dv2.reshape(m, d * d, d) @ vc).reshape(m, d, d)      # [a, s]
    e2t = (np.ascontiguousarray(dv2.transpose(0, 2, 3, 1))
           .reshape(m, d * d, d) @ vc).reshape(m, d, d)        # [s, a]
    f2 = (np.ascontiguousarray(dv2.transpose(0, 2, 1, 3))
          .reshape(m, d * d, d) @ vc).reshape(m, d, d)         # [s, a]
    dlow_vv2 = 0.5 * (c2.transpose(0, 2, 1) + e2t - f2)        # [s, a]
    t1 = ((dginv.reshape(m, d, d, d) @ low_vv[:, None, :, None])[:, :, :, 0]
          .transpose(0, 2, 1)
          + (ginv @ dlow_vv1.transpose(0, 2, 1)))
    dginv_v = (np.ascontiguousarray(dginv.transpose(0, 2, 3, 1))
               .reshape(m, d * d, d) @ vc).reshape(m, d, d)
    t2 = dginv_v @ low_v.transpose(0, 2, 1) + ginv @ dlow_vv2
    t3 = (gamma.reshape(m, d * d, d) @ gamma_vv[:, :, None]) \
        .reshape(m, d, d)
    t4 = gamma_v @ gamma_v
    w = t1 - t2 + t3 - t4
    return gamma_v, gamma_vv, w


def _integrate(cong, states0):
    metric = cong.metric
    d, s = cong.dim, cong.screen_dim
    nray = states0.shape[0]
    stride = cong.stride
    alive = np.ones(nray, dtype=bool)
    death_t = np.full(nray, cong.t_end)
    death_why = np.array(["t_end"] * nray, dtype=object)

    def rhs(t, ystate):
        Y = ystate.reshape(nray, stride)
        out = np.zeros_like(Y)
        idx = np.nonzero(alive)[0]
        X = Y[idx, :d]
        V = Y[idx, d:2 * d]
        Lb = Y[idx, 2 * d:3 * d]
        E = Y[idx, 3 * d:3 * d + s * d].reshape(-1, s, d)
        A = Y[idx, 3 * d + s * d:3 * d + s * d + s * s].reshape(-1, s, s)
        B = Y[idx, 3 * d + s * d + s * s:].reshape(-1, s, s)
        g, dg, d2g = metric.metric_jets(X)
        gamma_v, gamma_vv, W = _transport_terms(g, dg, d2g, V)
        dLb = -np.einsum("mlu,mu->ml", gamma_v, Lb)
        dE = -np.einsum("mlu,miu->mil", gamma_v, E)
        rhat = np.einsum("mil,mlr,mru,mku->mik", E, g, W, E)
        out[idx, :d] = V
        out[idx, d:2 * d] = -gamma_vv
        out[idx, 2 * d:3 * d] = dLb
        out[idx, 3 * d:3 * d + s * d] = dE.reshape(-1, s * d)
        out[idx, 3 * d + s * d:3 * d + s * d + s * s] = B.reshape(-1, s * s)
        out[idx, 3 * d + s * d + s * s:] = \
            -np.einsum("mik,mkj->mij", rhat, A).reshape(-1, s * s)
        return out.ravel()

    def ev_chart(t, ystate):
        Y = ystate.reshape(nray, stride)
        vals = metric.chart_values(Y[alive, :d])
        return float(np.min(vals)) if vals.size else 1.0

    ev_chart.terminal = True
    ev_chart.direction = -1.0

    def ev_focal(t, ystate):
        Y = ystate.reshape(nray, stride)
        A = Y[alive, 3 * d + s * d:3 * d + s * d + s * s].reshape(-1, s, s)
        dets = np.linalg.det(A)
        return float(np.min(dets)) - cong.y_tol if dets.size else 1.0

    ev_focal.terminal = True
    ev_focal.direction = -1.0

    events = [ev_focal]
    if metric.chart_domain is not None:
        events.append(ev_chart)

    t0 = 0.0
    state = states0.copy()
    while alive.any() and t0 < cong.t_end - 1e-14:
        sol = solve_ivp(rhs, (t0, cong.t_end), state.ravel(), method="DOP853",
                        rtol=cong.rtol, atol=cong.atol, dense_output=True,
                        events=events)
        if sol.t[-1] > t0:
            cong.segments.append((t0, sol.t[-1], sol.sol, alive.copy()))
        t_stop = sol.t[-1]
        Y = sol.y[:, -1].reshape(nray, stride)
        if sol.status == 0:
            break
        if sol.status == 1:
            killed = 0
            idx = np.nonzero(alive)[0]
            A = Y[idx, 3 * d + s * d:3 * d + s * d + s * s].reshape(-1, s, s)
            dets = np.linalg.det(A)
            focal_hit = dets <= cong.y_tol * 1.0001
            chart_hit = np.zeros(len(idx), dtype=bool)
            if metric.chart_domain is not None:
                chart_hit = metric.chart_values(Y[idx, :d]) <= 1e-9
            for j, k in enumerate(idx):
                why = None
                if focal_hit[j]:
                    why = "focal"
                elif chart_hit[j]:
                    why = _exit_kind(metric, Y[k, :d])
                if why:
                    alive[k] = False
                    death_t[k] = t_stop
                    death_why[k] = why
                    killed += 1
            if killed == 0:
                # event fired but nothing met the kill test (numerics);
                # kill the extremal ray to guarantee progress
                j = int(np.argmin(dets))
                k = idx[j]
                alive[k] = False
                death_t[k] = t_stop
                death_why[k] = "focal"
            t0 = t_stop
            state = Y
        else:
            for k in np.nonzero(alive)[0]:
                alive[k] = False
                death_t[k] = t_stop
                death_why[k] = "integrator_stall"
            break

    cong.rays = []
    for k in range(nray):
        fr = cong.frames[k]
        ray = RaySolution(
            congruence=cong, index=k,
            theta=cong.thetas[k] if cong.thetas is not None else None,
            quad_weight=float(cong.weights[k]),
            area_jacobian=fr.jacobian if fr else 1.0,
            generator=cong.span * fr.normal_outer if fr else None,
            weingarten0=states0[k, 3 * d + s * d + s * s:].reshape(s, s),
            t_alive=float(death_t[k]),
            exit_reason=str(death_why[k]),
        )
        cong.rays.append(ray)
    _refine_focal_times(cong)
    return cong


def _exit_kind(metric, x):
    """Classify a chart exit: plain exit or curvature blow-up nearby."""
    try:
        g, dg, d2g = metric.metric_jets(x[None, :])
        ginv = np.linalg.inv(g)
        _, riem = riemann(ginv, dg, d2g)
        kr = geo.kretschmann(g, ginv, riem)[0]
        if abs(kr) > KRETSCHMANN_CAP or not np.isfinite(kr):
            return "curvature_blowup"
    except (np.linalg.LinAlgError, GeometryError):
        return "curvature_blowup"
    return "chart_exit"


def _refine_focal_times(cong, probe=1e-5, samples_per_unit=2000):
    """Locate the first zero of y per ray.

    Rays killed by the y_tol event get a multiplicity-aware extrapolation
    t* = t_ev + k/|trU|, k = -trU²/trU' (exact for y ∝ (t*-t)^k).  Live
    rays are scanned on a dense grid for sign changes (Brent root) and for
    minima dipping below ``probe`` (Brent minimization; counted as focal
    only if the minimum reaches y_tol).
    """
    d, s = cong.dim, cong.screen_dim
    a0 = 3 * d + s * d
    nt = max(int(samples_per_unit * cong.t_end), 50)
    ts = np.linspace(0.0, cong.t_end, nt)
    grid = cong.states_grid(ts)
    amat = grid[:, :, a0:a0 + s * s].reshape(nt, -1, s, s)
    with np.errstate(all="ignore"):
        ygrid = np.linalg.det(np.where(np.isfinite(amat), amat, 0.0))
    ygrid[~np.isfinite(amat).all(axis=(-2, -1))] = np.nan
    for ray in cong.rays:
        tmax = ray.t_alive
        if ray.exit_reason == "focal":
            A = ray.jacobi_matrix(tmax)
            B = ray.jacobi_rate(tmax)
            tru = float(np.trace(B @ np.linalg.inv(A)))
            h = max(1e-6 * tmax, 1e-9)
            tru_m = float(ray.trU(max(tmax - h, 0.0)))
            trup = (tru - tru_m) / h
            k = -tru * tru / trup if trup != 0 else 1.0
            k = min(max(k, 1.0), cong.screen_dim)
            ray.focal_time = float(tmax + (k / abs(tru) if tru != 0 else 0.0))
            continue
        if tmax <= 0:
            continue
        ys = ygrid[:, ray.index]
        valid = np.isfinite(ys) & (ts <= tmax + 1e-12)
        ys = ys[valid]
        tv = ts[valid]
        if ys.size < 3:
            continue
        yfun = lambda t: float(np.linalg.det(ray.jacobi_matrix(t)))
        sign = np.signbit(ys)
        crossings = np.nonzero(sign[1:] != sign[:-1])[0]
        if crossings.size:
            i = int(crossings[0])
            ray.focal_time = float(brentq(yfun, tv[i], tv[i + 1], xtol=1e-12))
            continue
        dips = np.nonzero((ys[1:-1] <= probe) & (ys[1:-1] <= ys[:-2])
                          & (ys[1:-1] <= ys[2:]))[0]
        if dips.size:
            i = int(dips[0]) + 1
            res = minimize_scalar(yfun, bounds=(tv[i - 1], tv[i + 1]),
                                  method="bounded",
                                  options={"xatol": 1e-12})
            if res.fun <= cong.y_tol:
                ray.focal_time = float(res.x)


# ---------------------------------------------------------------------------
# Spec-level operations on single rays


def integrate_ray(metric, x, v, t_max, tol=1e-11, y_tol=Y_TOL):
    """Trace one null geodesic from (x, v); returns its RaySolution.

    The screen frame is an arbitrary orthonormal completion of v and the
    Weingarten data is zero (pure trajectory tracing; use
    :func:`jacobi_evolve` to rerun with prescribed initial shape data).
    """
    x = metric.check_point(x)
    v = np.asarray(v, dtype=float)
    cls = geo.classify_vector(metric, x, v, tol=1e-7)
    if cls.kind not in ("null", "causal-null-boundary"):
        raise GeometryError(f"initial vector is {cls.kind}, not null")
    if not cls.future:
        raise GeometryError("initial vector is past-directed")
    return _ray_from_initial(metric, x, v, None, t_max, tol, y_tol)


def _ray_from_initial(metric, x, v, u0, t_max, tol, y_tol):
    d = metric.dim
    s = d - 2
    g = metric.metric_values(x[None, :])[0]
    tref = metric.tref_values(x[None, :])[0]
    that = tref / np.sqrt(-float(tref @ g @ tref))
    alpha = -float(v @ g @ that)
    uhat = v / alpha - that
    lbar = (that - uhat) / (2 * alpha)
    basis = np.eye(d)
    # orthonormal screen: project chart axes against v and lbar, then G-S
    E = []
    for e in basis:
        w = e.astype(float)
        w = w + float(w @ g @ lbar) * v + float(w @ g @ v) * lbar
        for prev in E:
            w = w - float(w @ g @ prev) * prev
        nrm2 = float(w @ g @ w)
        if nrm2 > 1e-10:
            E.append(w / np.sqrt(nrm2))
        if len(E) == s:
            break
    if len(E) < s:
        raise GeometryError("failed to complete a screen frame at the seed")
    fr = _SeedFrame(theta=np.zeros(1), point=x, tangents=np.asarray(E),
                    induced=np.eye(s), jacobian=1.0, ortho=np.eye(s),
                    frame=np.asarray(E), normal_outer=v, normal_inner=lbar)
    fr.second_derivs = np.zeros((s, s, d))
    cong = Congruence(metric, None, np.zeros((1, 1)), np.ones(1), [fr],
                      span=1.0, t_end=t_max, rtol=tol, atol=tol * 1e-2,
                      y_tol=y_tol)
    states = np.empty((1, cong.stride))
    lb = lbar / (-float(lbar @ g @ v))
    u0 = np.zeros((s, s)) if u0 is None else np.asarray(u0, dtype=float)
    states[0] = np.concatenate([x, v, lb, np.asarray(E).ravel(),
                                np.eye(s).ravel(), u0.ravel()])
    _integrate(cong, states)
    return cong.rays[0]


def screen_frame(metric, ray):
    """The evolved screen frame of a ray as a callable t ↦ E(t)."""
    return lambda t: ray.screen_frame(t)


def jacobi_evolve(metric, ray, u0):
    """Re-run a ray's transport with prescribed initial Weingarten data.

    Returns a fresh RaySolution whose A(0) = I and A'(0) = u0; y, z, trU
    and the focal time are exposed on it.
    """
    u0 = np.asarray(u0, dtype=float)
    x = ray.position(0.0)
    v = ray.velocity(0.0)
    return _ray_from_initial(metric, x, v, u0, ray.congruence.t_end,
                             ray.congruence.rtol, ray.congruence.y_tol)


def cross_section_measure(cong, t, subset=None):
    """Weighted measure of the time-t cross-section over selected rays:
    quadrature of the area formula Σ w_k·y_k(t)·e^{-V(γ_k(t))}·J_φ(θ_k)."""
    rays = cong.rays if subset is None else [cong.rays[k] for k in subset]
    total = 0.0
    for ray in rays:
        if not cong.alive_at(t, ray.index):
            raise GeometryError(
                f"ray {ray.index} is dead at t = {t} ({ray.exit_reason}; "
                f"focal: {ray.focal_time})")
        total += (ray.quad_weight * float(ray.y(t))
                  * float(np.exp(-ray.weight_along(t))) * ray.area_jacobian)
    return total
