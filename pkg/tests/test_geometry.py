"""Curvature, causal classification and the weighted null gap.

Independent oracles: sympy symbolic curvature (textbook Christoffel /
Riemann formulas, separate code path from the jet pipeline) certifies
Schwarzschild Ricci-flatness and the FLRW null contraction
Ric(v,v) = 2(ȧ² - a·ä)/a², whose value at t = 0 for a = exp(t²) is -4.
"""

import numpy as np
import pytest
import sympy as sp

import nullflow as nf
from nullflow.geometry import GeometryError, curvature_at


def _sympy_ricci(coords, g):
    """Ricci tensor from the textbook formulas, fully symbolic."""
    n = len(coords)
    ginv = g.inv()
    gamma = [[[sum(ginv[l, s] * (sp.diff(g[s, u], coords[v])
                                 + sp.diff(g[s, v], coords[u])
                                 - sp.diff(g[u, v], coords[s])) / 2
                   for s in range(n)) for v in range(n)] for u in range(n)]
             for l in range(n)]
    def riem(r, s, u, v):
        out = sp.diff(gamma[r][v][s], coords[u]) \
            - sp.diff(gamma[r][u][s], coords[v])
        for lam in range(n):
            out += gamma[r][u][lam] * gamma[lam][v][s] \
                - gamma[r][v][lam] * gamma[lam][u][s]
        return out
    return sp.Matrix(n, n, lambda s, v: sp.simplify(
        sum(riem(r, s, r, v) for r in range(n))))


@pytest.fixture(scope="module")
def sympy_ef_ricci():
    v, r, th = sp.symbols("v r theta", positive=True)
    ph = sp.Symbol("phi")
    g = sp.Matrix([
        [-(1 - 2 / r), 1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, r ** 2, 0],
        [0, 0, 0, r ** 2 * sp.sin(th) ** 2],
    ])
    return _sympy_ricci([v, r, th, ph], g)


def test_schwarzschild_ef_ricci_flat_symbolically(sympy_ef_ricci):
    assert sympy_ef_ricci == sp.zeros(4, 4)


def test_flrw_null_ricci_oracle():
    t, x, y, z = sp.symbols("t x y z")
    a = sp.Function("a", positive=True)(t)
    g = sp.diag(-1, a ** 2, a ** 2, a ** 2)
    ric = _sympy_ricci([t, x, y, z], g)
    vnull = sp.Matrix([1, 1 / a, 0, 0])
    contracted = sp.simplify((vnull.T * ric * vnull)[0, 0])
    expected = 2 * (sp.diff(a, t) ** 2 - a * sp.diff(a, t, 2)) / a ** 2
    assert sp.simplify(contracted - expected) == 0
    at_zero = expected.subs(a, sp.exp(t ** 2)).doit()
    val = sp.simplify(at_zero.subs(t, 0))
    # frozen value used throughout the suite
    assert val == -4


# ---------------------------------------------------------------------------
# numeric pipeline against the oracles


def test_minkowski_curvature_vanishes(mink):
    pack = curvature_at(mink, [0.3, -1.0, 2.0, 0.5])
    assert np.abs(pack.gamma).max() == 0.0
    assert np.abs(pack.riemann).max() == 0.0
    assert np.abs(pack.ricci).max() == 0.0


def test_schwarzschild_vacuum_at_r3(schw):
    pack = curvature_at(schw, [0.0, 3.0, 1.1, 0.7])
    assert np.abs(pack.ricci).max() < 1e-7


def test_schwarzschild_vacuum_random_points(schw):
    rng = np.random.default_rng(7)
    for _ in range(25):
        x = np.array([rng.uniform(-1, 1), rng.uniform(0.5, 6.0),
                      rng.uniform(0.3, 2.8), rng.uniform(0, 2 * np.pi)])
        pack = curvature_at(schw, x)
        assert np.abs(pack.ricci).max() < 1e-7


def test_flrw_null_contraction(flrw):
    pack = curvature_at(flrw, [0.0, 0.3, -0.2, 0.5])
    v = np.array([1.0, 1.0, 0.0, 0.0])
    assert pack.ricci_vv(v) == pytest.approx(-4.0, abs=1e-9)


def test_ricci_symmetry_builtins(mink, schw, flrw, weighted_mink):
    rng = np.random.default_rng(3)
    for metric in (mink, schw, flrw, weighted_mink):
        for _ in range(5):
            x = rng.uniform(0.2, 1.2, size=4)
            if metric.name == "schwarzschild_ef":
                x[1] += 2.0
            pack = curvature_at(metric, x)
            scale = max(np.abs(pack.ricci).max(), 1.0)
            assert np.abs(pack.ricci - pack.ricci.T).max() < 1e-9 * scale


def test_riemann_first_bianchi(schw):
    # antisymmetry in the last pair and the cyclic identity
    pack = curvature_at(schw, [0.2, 2.7, 1.0, 0.1])
    r = pack.riemann
    assert np.abs(r + r.transpose(0, 1, 3, 2)).max() < 1e-9
    cyc = r + r.transpose(0, 2, 3, 1) + r.transpose(0, 3, 1, 2)
    assert np.abs(cyc).max() < 1e-9


def test_coordinate_independence_ef_vs_static(schw, schw_static):
    # matched event r=3 on the t=0 slice; v_EF = t + r + 2M ln(r/2M - 1)
    m, r = 1.0, 3.0
    rstar = r + 2 * m * np.log(r / (2 * m) - 1)
    x_static = np.array([0.0, r, 1.1, 0.7])
    x_ef = np.array([rstar, r, 1.1, 0.7])
    f = 1 - 2 * m / r
    # same null vector in both charts: static (1/f, 1, 0, 0) maps to
    # EF components (dv = dt + dr/f)
    v_static = np.array([1 / f, 1.0, 0.0, 0.0])
    v_ef = np.array([v_static[0] + v_static[1] / f, 1.0, 0.0, 0.0])
    r1 = curvature_at(schw_static, x_static).ricci_vv(v_static)
    r2 = curvature_at(schw, x_ef).ricci_vv(v_ef)
    assert abs(r1 - r2) < 1e-6


def test_signature_validation(mink, schw):
    pts = np.array([[0.0, 3.0, 1.0, 0.2], [1.0, 2.5, 2.0, 3.0]])
    schw.validate_signature(pts)
    mink.validate_signature(np.zeros((1, 4)))
    bad = nf.make_metric(3, [["1.0", "0", "0"], ["0", "1.0", "0"],
                             ["0", "0", "1.0"]])
    with pytest.raises(GeometryError, match="negative eigenvalues"):
        bad.validate_signature(np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# classify_vector


def test_classify_null_future(mink):
    c = nf.classify_vector(mink, np.zeros(4), [1.0, 1.0, 0.0, 0.0])
    assert c.kind == "null" and c.future


def test_classify_timelike(mink):
    c = nf.classify_vector(mink, np.zeros(4), [1.0, 0.0, 0.0, 0.0])
    assert c.kind == "timelike" and c.future


def test_classify_spacelike_past(mink):
    c = nf.classify_vector(mink, np.zeros(4), [0.0, 1.0, 0.0, 0.0])
    assert c.kind == "spacelike" and c.future is None
    c2 = nf.classify_vector(mink, np.zeros(4), [-1.0, 0.0, 0.0, 0.0])
    assert c2.kind == "timelike" and not c2.future


def test_classify_horizon_generator(schw):
    c = nf.classify_vector(schw, [0.0, 2.0, 1.2, 0.3], [1.0, 0.0, 0.0, 0.0])
    assert c.kind == "null" and c.future


def test_classify_boundary_band(mink):
    # ⟨v,v⟩ = 5e-9 against a dead band of 2e-9: inside the skirt
    v = np.array([1.0, np.sqrt(1.0 + 5e-9), 0.0, 0.0])
    c = nf.classify_vector(mink, np.zeros(4), v, tol=1e-9)
    assert c.kind == "causal-null-boundary"


def test_classify_zero_vector_rejected(mink):
    with pytest.raises(GeometryError, match="zero vector"):
        nf.classify_vector(mink, np.zeros(4), np.zeros(4))


# ---------------------------------------------------------------------------
# be_null_gap


def test_gap_minkowski_zero(mink):
    v = [1.0, 0.0, 1.0, 0.0]
    for np_ in (2.5, 3.0, 7.5):
        assert nf.be_null_gap(mink, np.zeros(4), v, np_) == 0.0


def test_gap_weighted_minkowski(weighted_mink):
    v = [1.0, 1.0, 0.0, 0.0]
    for np_ in (2.5, 3.0, 11.0):
        assert nf.be_null_gap(weighted_mink, np.zeros(4), v, np_) \
            == pytest.approx(-1.0, abs=1e-12)


def test_gap_flrw_scales_linearly(flrw):
    x = [0.0, 0.1, 0.0, 0.0]
    v = [1.0, 1.0, 0.0, 0.0]
    gaps = {np_: nf.be_null_gap(flrw, x, v, np_) for np_ in (2.5, 3.0, 5.0)}
    assert gaps[3.0] == pytest.approx(-4.0, abs=1e-9)
    # linear in (N' - n + 1), sign independent of N'
    for np_, gap in gaps.items():
        assert gap == pytest.approx(-4.0 * (np_ - 2.0), abs=1e-8)
        assert gap < 0


def test_gap_constant_weight_reduces_exactly(flrw):
    import dataclasses
    weighted = dataclasses.replace(flrw, weight=nf.parse("3.0", 4))
    x = [0.0, 0.1, 0.0, 0.0]
    v = [1.0, 1.0, 0.0, 0.0]
    for np_ in (2.5, 4.0):
        assert nf.be_null_gap(weighted, x, v, np_) \
            == nf.be_null_gap(flrw, x, v, np_)


def test_gap_rejects_non_null(mink):
    with pytest.raises(GeometryError, match="not null"):
        nf.be_null_gap(mink, np.zeros(4), [1.0, 0.0, 0.0, 0.0], 3.0)


def test_gap_rejects_bad_exponent(mink):
    with pytest.raises(GeometryError, match="must exceed"):
        nf.be_null_gap(mink, np.zeros(4), [1.0, 1.0, 0.0, 0.0], 1.5)


# ---------------------------------------------------------------------------
# built-ins catalog


def test_builtin_catalog_contents():
    cat = nf.builtin_catalog()
    for name in ("minkowski", "schwarzschild_ef", "flrw"):
        assert name in cat
        defaults, notes = cat[name]
        assert isinstance(defaults, dict) and notes


def test_unknown_builtin_rejected():
    with pytest.raises(GeometryError, match="unknown built-in"):
        nf.builtin_metric("kerr")


def test_chart_domain_enforced(schw):
    with pytest.raises(GeometryError, match="outside chart domain"):
        curvature_at(schw, [0.0, 1e-9, 1.0, 1.0])
