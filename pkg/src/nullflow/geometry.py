"""Pointwise differential geometry of a weighted Lorentzian chart.

A :class:`MetricSpec` is a single chart: symmetric expression-valued
components ``g_{μν}(x)``, an optional weight ``V`` (the measures downstream
carry ``e^{-V}``), an optional chart-domain predicate and a declared
reference timelike field fixing the future orientation.  All curvature is
assembled from second-order jets of the components, batched over points:

    Γ^λ_{μν} = ½ g^{λσ}(∂_μ g_{σν} + ∂_ν g_{σμ} - ∂_σ g_{μν})
    R^ρ_{σμν} = ∂_μ Γ^ρ_{νσ} - ∂_ν Γ^ρ_{μσ} + Γ^ρ_{μλ}Γ^λ_{νσ} - Γ^ρ_{νλ}Γ^λ_{μσ}
    Ric_{σν} = R^ρ_{σρν}

Signature is (-, +, ..., +) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsl import Expression, TapeBundle, parse

__all__ = [
    "GeometryError",
    "MetricSpec",
    "CurvaturePack",
    "VectorClass",
    "make_metric",
    "curvature_at",
    "classify_vector",
    "be_null_gap",
    "builtin_metric",
    "builtin_catalog",
    "christoffel",
    "riemann",
    "ricci",
    "kretschmann",
]

NULL_TOL = 1e-9


class GeometryError(ValueError):
    """Singular metric, domain violation, or misclassified vector."""


@dataclass(eq=False)
class MetricSpec:
    """One chart of a weighted Lorentzian manifold.

    ``components[i][j]`` are :class:`Expression` objects over ``x0..x{dim-1}``
    with ``components[i][j] is components[j][i]``; ``weight`` absent means
    ``V ≡ 0``; ``chart_domain`` positive means inside; ``timelike_field``
    is the reference future-directed timelike field used for orientation
    and for the null-generator normalization ⟨L, t_ref⟩ = -1.
    """

    dim: int
    components: list
    timelike_field: list
    weight: Expression | None = None
    chart_domain: Expression | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 3:
            raise GeometryError("chart dimension must be at least 3 (n+1, n >= 2)")
        self._cache = {}

    # -- compiled tapes -----------------------------------------------------

    def _tape(self, key):
        tape = self._cache.get(key)
        if tape is not None:
            return tape
        if key == "metric":
            iu = np.triu_indices(self.dim)
            exprs = [self.components[i][j] for i, j in zip(*iu)]
            tape = TapeBundle.compile(exprs)
        elif key == "weight":
            tape = TapeBundle.compile([self.weight]) if self.weight else None
        elif key == "tref":
            tape = TapeBundle.compile(self.timelike_field)
        elif key == "chart":
            tape = (TapeBundle.compile([self.chart_domain])
                    if self.chart_domain else None)
        else:  # pragma: no cover
            raise KeyError(key)
        self._cache[key] = tape
        return tape

    # -- batched evaluation -------------------------------------------------

    def metric_values(self, points):
        """g at a batch of points, shape (m, dim, dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = self._tape("metric").eval_values(points)
        return _sym_expand(vals, self.dim)

    def metric_jets(self, points):
        """(g, dg, d2g) with dg[:, λ, i, j] = ∂_λ g_{ij} and
        d2g[:, λ, κ, i, j] = ∂_λ∂_κ g_{ij}."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        val, grad, hess = self._tape("metric").eval_jets(points)
        d = self.dim
        g = _sym_expand(val, d)
        iu = np.triu_indices(d)
        m = points.shape[0]
        dg = np.zeros((m, d, d, d))
        dg[:, :, iu[0], iu[1]] = grad.transpose(0, 2, 1)
        dg[:, :, iu[1], iu[0]] = grad.transpose(0, 2, 1)
        d2g = np.zeros((m, d, d, d, d))
        d2g[:, :, :, iu[0], iu[1]] = hess.transpose(0, 2, 3, 1)
        d2g[:, :, :, iu[1], iu[0]] = hess.transpose(0, 2, 3, 1)
        return g, dg, d2g

    def weight_values(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tape = self._tape("weight")
        if tape is None:
            return np.zeros(points.shape[0])
        return tape.eval_values(points)[:, 0]

    def weight_jets(self, points):
        """(V, dV, d2V); zeros when no weight is declared."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m, d = points.shape
        tape = self._tape("weight")
        if tape is None:
            return np.zeros(m), np.zeros((m, d)), np.zeros((m, d, d))
        val, grad, hess = tape.eval_jets(points)
        return val[:, 0], grad[:, 0], hess[:, 0]

    def tref_values(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self._tape("tref").eval_values(points)

    def chart_values(self, points):
        """Chart predicate values; +inf when no predicate is declared."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tape = self._tape("chart")
        if tape is None:
            return np.full(points.shape[0], np.inf)
        return tape.eval_values(points)[:, 0]

    def inner(self, x, u, v):
        """⟨u, v⟩ at chart point x."""
        g = self.metric_values(np.asarray(x, dtype=float))[0]
        return float(np.asarray(u) @ g @ np.asarray(v))

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise GeometryError(f"point shape {x.shape} != ({self.dim},)")
        if not np.all(np.isfinite(x)):
            raise GeometryError("non-finite chart point")
        if self.chart_values(x[None, :])[0] <= 0:
            raise GeometryError(f"point {x.tolist()} outside chart domain")
        return x

    def validate_signature(self, points):
        """Check signature (-, +, ..., +) at each point; raises otherwise."""
        g = self.metric_values(points)
        eig = np.linalg.eigvalsh(g)
        neg = np.sum(eig < 0, axis=1)
        if not np.all(neg == 1):
            bad = int(np.argmax(neg != 1))
            raise GeometryError(
                f"metric {self.name!r} has {neg[bad]} negative eigenvalues "
                f"at sampled point index {bad}")


def _sym_expand(vals, d):
    iu = np.triu_indices(d)
    m = vals.shape[0]
    g = np.zeros((m, d, d))
    g[:, iu[0], iu[1]] = vals
    g[:, iu[1], iu[0]] = vals
    return g


def make_metric(dim, component_sources, timelike=None, weight=None,
                chart_domain=None, name="custom", params=None):
    """Build a MetricSpec from source strings.

    ``component_sources`` is a dim x dim nested list (symmetry is enforced
    by reusing the upper-triangle entry).  ``timelike`` defaults to the
    chart vector e0.
    """
    comps = [[None] * dim for _ in range(dim)]
    for i in range(dim):
        for j in range(i, dim):
            expr = parse(str(component_sources[i][j]), dim)
            comps[i][j] = expr
            comps[j][i] = expr
    if timelike is None:
        timelike = ["1"] + ["0"] * (dim - 1)
    tl = [parse(str(s), dim) for s in timelike]
    w = parse(str(weight), dim) if weight is not None else None
    cd = parse(str(chart_domain), dim) if chart_domain is not None else None
    return MetricSpec(dim=dim, components=comps, timelike_field=tl, weight=w,
                      chart_domain=cd, name=name, params=dict(params or {}))


# ---------------------------------------------------------------------------
# Batched curvature assembly


def christoffel(ginv, dg):
    """Γ^λ_{μν} from inverse metric and first derivatives, batched."""
    low = 0.5 * (dg.transpose(0, 2, 1, 3) + dg.transpose(0, 2, 3, 1) - dg)
    return np.einsum("mls,msuv->mluv", ginv, low)


def riemann(ginv, dg, d2g):
    """R^ρ_{σμν}, batched.  Convention: R^ρ_{σμν} = ∂_μ Γ^ρ_{νσ} - ..."""
    low = 0.5 * (dg.transpose(0, 2, 1, 3) + dg.transpose(0, 2, 3, 1) - dg)
    gamma = np.einsum("mls,msuv->mluv", ginv, low)
    dginv = -np.einsum("mac,mkcd,mdb->mkab", ginv, dg, ginv)
    dlow = 0.5 * (d2g.transpose(0, 1, 3, 2, 4) + d2g.transpose(0, 1, 3, 4, 2)
                  - d2g)
    dgamma = (np.einsum("mkls,msuv->mkluv", dginv, low)
              + np.einsum("mls,mksuv->mkluv", ginv, dlow))
    riem = (dgamma.transpose(0, 2, 4, 1, 3) - dgamma.transpose(0, 2, 4, 3, 1)
            + np.einsum("mrul,mlvs->mrsuv", gamma, gamma)
            - np.einsum("mrvl,mlus->mrsuv", gamma, gamma))
    return gamma, riem


def ricci(riem):
    """Ric_{σν} = R^ρ_{σρν}, batched."""
    return np.einsum("mrsrv->msv", riem)


def kretschmann(g, ginv, riem):
    """R_{abcd} R^{abcd}, batched; used as the curvature blow-up indicator."""
    r_low = np.einsum("mar,mrscd->mascd", g, riem)
    r_up = np.einsum("mas,mbt,mcu,mdv,mstuv->mabcd", ginv, ginv, ginv, ginv,
                     r_low)
    return np.einsum("mabcd,mabcd->m", r_low, r_up)


@dataclass
class CurvaturePack:
    """Curvature data at one point: Christoffels, Riemann (1,3), Ricci
    (0,2), plus weight derivatives (covariant Hessian and raised gradient)."""

    x: np.ndarray
    gamma: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    hess_v: np.ndarray
    grad_v: np.ndarray
    g: np.ndarray
    ginv: np.ndarray

    def ricci_vv(self, v):
        return float(np.asarray(v) @ self.ricci @ np.asarray(v))

    def be_ricci_vv(self, v):
        """(Ric + ∇²V)(v, v)."""
        v = np.asarray(v)
        return float(v @ (self.ricci + self.hess_v) @ v)


def curvature_at(metric, x):
    """Full curvature pack at chart point ``x``.

    Raises :class:`GeometryError` outside the chart domain or where g is
    numerically singular.
    """
    x = metric.check_point(x)
    g, dg, d2g = metric.metric_jets(x[None, :])
    if abs(np.linalg.det(g[0])) < 1e-300 or not np.all(np.isfinite(g)):
        raise GeometryError(f"singular metric at {x.tolist()}")
    ginv = np.linalg.inv(g)
    gamma, riem = riemann(ginv, dg, d2g)
    ric = ricci(riem)
    _, dv, d2v = metric.weight_jets(x[None, :])
    hess_v = d2v[0] - np.einsum("luv,l->uv", gamma[0], dv[0])
    grad_v = ginv[0] @ dv[0]
    return CurvaturePack(x=x, gamma=gamma[0], riemann=riem[0], ricci=ric[0],
                         hess_v=hess_v, grad_v=grad_v, g=g[0], ginv=ginv[0])


# ---------------------------------------------------------------------------
# Causal classification and the pointwise energy gap


@dataclass(frozen=True)
class VectorClass:
    kind: str          # timelike | null | spacelike | causal-null-boundary
    future: bool | None


def classify_vector(metric, x, v, tol=NULL_TOL):
    """Causal type of ``v`` at ``x`` with a dead band around the light cone.

    ``|⟨v,v⟩| ≤ tol·‖v‖²_chart`` classifies as null; between 1 and 4 times
    the band the type is reported as ``causal-null-boundary`` (too close to
    the cone to certify either side at this tolerance).  The future flag
    comes from the sign of ⟨v, t_ref⟩ and is None for spacelike vectors.
    """
    v = np.asarray(v, dtype=float)
    nrm = float(v @ v)
    if nrm == 0.0:
        raise GeometryError("cannot classify the zero vector")
    x = metric.check_point(x)
    g = metric.metric_values(x[None, :])[0]
    s = float(v @ g @ v)
    band = tol * nrm
    tref = metric.tref_values(x[None, :])[0]
    future = bool(float(v @ g @ tref) < 0.0)
    if abs(s) <= band:
        return VectorClass("null", future)
    if abs(s) <= 4.0 * band:
        return VectorClass("causal-null-boundary", future)
    if s < 0:
        return VectorClass("timelike", future)
    return VectorClass("spacelike", None)


def be_null_gap(metric, x, v, n_prime, tol=NULL_TOL):
    """Bakry-Emery gap (N'-n+1)·(Ric+∇²V)(v,v) - ⟨∇V,v⟩² at a null vector.

    Nonnegative iff the weighted null curvature inequality holds at (x, v)
    for this N'.  With no weight this reduces to (N'-n+1)·Ric(v,v), whose
    sign is the classical null energy condition sign.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    n = metric.dim - 1
    if n_prime <= n - 1:
        raise GeometryError(f"N' = {n_prime} must exceed n-1 = {n - 1}")
    g = metric.metric_values(x[None, :])[0]
    s = float(v @ g @ v)
    if abs(s) > tol * float(v @ v):
        raise GeometryError(
            f"vector is not null within tolerance (⟨v,v⟩ = {s:.3e})")
    pack = curvature_at(metric, x)
    _, dv, _ = metric.weight_jets(x[None, :])
    dvv = float(dv[0] @ v)
    return (n_prime - n + 1.0) * pack.be_ricci_vv(v) - dvv * dvv


# ---------------------------------------------------------------------------
# Built-in metrics


def _fmt(value):
    return repr(float(value))


def _minkowski(dim=4):
    dim = int(dim)
    comps = [["-1.0" if i == j == 0 else ("1.0" if i == j else "0.0")
              for j in range(dim)] for i in range(dim)]
    return make_metric(dim, comps, name="minkowski", params={"dim": dim})


def _schwarzschild_ef(mass=1.0, r_min=1e-3):
    """Ingoing Eddington-Finkelstein chart (v, r, θ, φ): regular across the
    horizon.  Reference timelike field ∂_v - (M/r)∂_r is unit timelike for
    every r > 0 (∂_v itself fails on and inside the horizon)."""
    m = _fmt(mass)
    comps = [
        [f"-(1.0 - 2.0*{m}/x1)", "1.0", "0.0", "0.0"],
        ["1.0", "0.0", "0.0", "0.0"],
        ["0.0", "0.0", "x1^2", "0.0"],
        ["0.0", "0.0", "0.0", "x1^2*sin(x2)^2"],
    ]
    return make_metric(
        4, comps,
        timelike=["1.0", f"-({m}/x1)", "0.0", "0.0"],
        chart_domain=f"x1 - {_fmt(r_min)}",
        name="schwarzschild_ef", params={"mass": float(mass),
                                         "r_min": float(r_min)})


def _schwarzschild_static(mass=1.0, r_min=None):
    """Static exterior chart (t, r, θ, φ); valid for r > 2M only."""
    if r_min is None:
        r_min = 2.05 * mass
    m = _fmt(mass)
    f = f"(1.0 - 2.0*{m}/x1)"
    comps = [
        [f"-{f}", "0.0", "0.0", "0.0"],
        ["0.0", f"1.0/{f}", "0.0", "0.0"],
        ["0.0", "0.0", "x1^2", "0.0"],
        ["0.0", "0.0", "0.0", "x1^2*sin(x2)^2"],
    ]
    return make_metric(
        4, comps, chart_domain=f"x1 - {_fmt(r_min)}",
        name="schwarzschild_static", params={"mass": float(mass),
                                             "r_min": float(r_min)})


def _flrw(scale_factor="exp(x0^2)"):
    """Spatially flat FLRW (t, x, y, z) with a user scale factor a(x0)."""
    a = parse(str(scale_factor), 4)   # validates: only x0 may appear meaningfully
    a2 = f"({a.source})*({a.source})"
    comps = [
        ["-1.0", "0.0", "0.0", "0.0"],
        ["0.0", a2, "0.0", "0.0"],
        ["0.0", "0.0", a2, "0.0"],
        ["0.0", "0.0", "0.0", a2],
    ]
    return make_metric(4, comps, name="flrw",
                       params={"scale_factor": str(scale_factor)})


_BUILTINS = {
    "minkowski": (_minkowski, {"dim": 4},
                  "Flat space, chart (t, x1..x{dim-1}); any dim >= 3."),
    "schwarzschild_ef": (_schwarzschild_ef, {"mass": 1.0, "r_min": 1e-3},
                         "Schwarzschild in ingoing Eddington-Finkelstein "
                         "(v, r, theta, phi); single chart regular across "
                         "the horizon r = 2M; poles excluded by seed "
                         "placement, r > r_min."),
    "schwarzschild_static": (_schwarzschild_static,
                             {"mass": 1.0, "r_min": "2.05*mass"},
                             "Schwarzschild static exterior chart "
                             "(t, r, theta, phi), r > r_min > 2M."),
    "flrw": (_flrw, {"scale_factor": "exp(x0^2)"},
             "Spatially flat FLRW (t, x, y, z) with expression scale "
             "factor a(x0)."),
}


def builtin_metric(name, **params):
    """Instantiate a built-in metric by name.  Unknown names raise."""
    try:
        factory, _, _ = _BUILTINS[name]
    except KeyError:
        raise GeometryError(
            f"unknown built-in metric {name!r}; available: "
            f"{sorted(_BUILTINS)}") from None
    return factory(**params)


def builtin_catalog():
    """Name -> (default parameters, chart notes) for every built-in."""
    return {name: (dict(defaults), notes)
            for name, (_, defaults, notes) in _BUILTINS.items()}
