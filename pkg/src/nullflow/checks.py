"""Scenario-level verdicts.

* ``nec_scan``: pointwise weighted null-curvature gap over a sampled
  region; the classical null energy condition scan when no weight is set.
* ``witness_violation``: the converse direction — given a point and null
  direction with negative gap, build a small seed surface through the
  point whose shape operator w.r.t. the selected null normal is λ·id,
  run the congruence over a shrinking affine span and report the strict
  convexity violation the curvature defect forces.
* ``hawking_check``: cross-section measure monotonicity between two times,
  with incompleteness (focal) evidence attached to non-monotone verdicts.
* ``converging_test`` / ``penrose_bound``: weighted mean curvature of both
  null normal directions, the trapped verdict, and per-ray focal-time
  bounds N'/ε (derived Riccati constant; the looser 1/ε is reported too).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .congruence import (SeedSurface, _pi_from_frame, _seed_frame,
                         build_congruence, cross_section_measure,
                         quadrature_nodes)
from .geometry import GeometryError, curvature_at
from .transport import convexity_report, make_measure

__all__ = [
    "ScanReport",
    "WitnessResult",
    "HawkingResult",
    "TrappedReport",
    "PenroseResult",
    "nec_scan",
    "witness_violation",
    "hawking_check",
    "converging_test",
    "penrose_bound",
]


# ---------------------------------------------------------------------------
# Pointwise scans


@dataclass
class ScanReport:
    n_points: int
    n_directions: int
    n_prime: float
    gap_tol: float
    min_gap: float
    argmin_point: np.ndarray
    argmin_direction: np.ndarray
    verdict: str                   # "holds" | "violated"
    point_minima: list = field(default_factory=list)  # (point, min gap there)


def _grid_points(box, counts):
    axes = [np.linspace(lo, hi, int(c)) if c > 1 else np.array([(lo + hi) / 2])
            for (lo, hi), c in zip(box, counts)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _null_directions(metric, x, g, extra_random, rng):
    """Null vectors t̂ + u at x: u runs over unit spacelike projections of
    the chart axes and optional seeded random directions."""
    tref = metric.tref_values(x[None, :])[0]
    tt = float(tref @ g @ tref)
    if tt >= 0:
        raise GeometryError("reference field is not timelike at a scan point")
    that = tref / np.sqrt(-tt)
    cands = [e for e in np.eye(metric.dim)]
    cands += [-e for e in np.eye(metric.dim)]
    for _ in range(extra_random):
        cands.append(rng.standard_normal(metric.dim))
    out = []
    for c in cands:
        u = c + float(c @ g @ that) * that
        uu = float(u @ g @ u)
        if uu <= 1e-12 * float(c @ c):
            continue
        out.append(that + u / np.sqrt(uu))
    return out


def _scan_point(metric, x, n_prime, extra_random, rng_seed):
    if metric.chart_values(x[None, :])[0] <= 0:
        return None
    n = metric.dim - 1
    rng = np.random.default_rng(rng_seed)
    pack = curvature_at(metric, x)
    _, dv, _ = metric.weight_jets(x[None, :])
    bric = pack.ricci + pack.hess_v
    best = (np.inf, None)
    count = 0
    for v in _null_directions(metric, x, pack.g, extra_random, rng):
        count += 1
        gap = ((n_prime - n + 1.0) * float(v @ bric @ v)
               - float(dv[0] @ v) ** 2)
        if gap < best[0]:
            best = (gap, v.copy())
    return best[0], best[1], count


def nec_scan(metric, box, counts, n_prime, extra_random_directions=4,
             rng_seed=0, gap_tol=1e-8, workers=1):
    """Minimum of the weighted null gap over a deterministic chart grid
    (plus seeded random null directions at each point).

    With no weight the gap is (N'-n+1)·Ric(v,v), so "holds" is the
    classical null energy condition verdict on the sampled region.
    Results merge by point index, so worker count does not affect output.
    """
    n = metric.dim - 1
    if n_prime <= n - 1:
        raise GeometryError(f"N' = {n_prime} must exceed n-1 = {n - 1}")
    points = _grid_points(box, counts)
    task = lambda i: _scan_point(metric, points[i], n_prime,
                                 extra_random_directions, rng_seed + i)
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            results = list(pool.map(task, range(points.shape[0])))
    else:
        results = [task(i) for i in range(points.shape[0])]
    best = (np.inf, None, None)
    n_dirs = 0
    minima = []
    for x, res in zip(points, results):
        if res is None:
            continue
        gap, v, count = res
        n_dirs += count
        minima.append((x.copy(), gap))
        if gap < best[0]:
            best = (gap, x.copy(), v)
    if best[1] is None:
        raise GeometryError("scan region contained no chart points")
    return ScanReport(
        n_points=points.shape[0], n_directions=n_dirs, n_prime=n_prime,
        gap_tol=gap_tol, min_gap=best[0], argmin_point=best[1],
        argmin_direction=best[2],
        verdict="holds" if best[0] >= -gap_tol else "violated",
        point_minima=minima)


# ---------------------------------------------------------------------------
# Converse witness (seed with shape operator λ·id)


@dataclass
class WitnessResult:
    found: bool
    lam: float
    gap: float
    exponent: float
    delta: float
    span: float
    trials: int
    report: object = None
    message: str = ""


def _complete_frame(g, vecs, dim):
    """Extend pseudo-orthonormal ``vecs`` to a full frame by projecting
    chart axes (deterministic order)."""
    frame = [v.copy() for v in vecs]
    for e in np.eye(dim):
        w = e.copy()
        for f in frame:
            ff = float(f @ g @ f)
            w = w - (float(w @ g @ f) / ff) * f
        ww = float(w @ g @ w)
        if ww > 1e-10:
            frame.append(w / np.sqrt(ww))
        if len(frame) == dim:
            break
    if len(frame) < dim:
        raise GeometryError("failed to complete an orthonormal frame")
    return frame


def _fmt(x):
    return repr(float(x))


def _witness_seed(metric, p, v, lam, delta):
    """Seed surface through p, spacelike, with shape operator λ·id at p
    w.r.t. the gauge-normalized null normal extending v.

    Realized as a coordinate sphere cap (radius fixed by λ) inside the
    spatial frame hyperplane, plus a quadratic correction that cancels the
    chart Christoffels at p, so the target holds in any chart.
    """
    d = metric.dim
    s = d - 2
    g = metric.metric_values(p[None, :])[0]
    tref = metric.tref_values(p[None, :])[0]
    that = tref / np.sqrt(-float(tref @ g @ tref))
    alpha = -float(v @ g @ that)
    if alpha <= 0:
        raise GeometryError("witness direction must be future-directed")
    f1 = v / alpha - that
    frame = _complete_frame(g, [that, f1], d)
    n_vec = that + f1                            # null normal direction at p
    s_gauge = -float(n_vec @ g @ tref)
    d_vec = 0.5 * (that - f1)                    # ⟨n_vec, d_vec⟩ = -1
    _, dg, _ = metric.metric_jets(p[None, :])
    gamma = geo.christoffel(np.linalg.inv(metric.metric_values(p[None, :])),
                            dg)[0]
    tang = np.asarray(frame[2:])                 # seed tangents at p
    corr = np.einsum("luv,au,bv,l->ab", gamma, tang, tang, g @ n_vec)
    lam_eff = lam * s_gauge                      # curvature targeted at n_vec

    u2 = " + ".join(f"x{a}^2" for a in range(s))
    if lam_eff != 0.0:
        radius = 1.0 / abs(lam_eff)
        delta = min(delta, 0.5 * radius / np.sqrt(s))
        sgn = 1.0 if lam_eff > 0 else -1.0
        cap = (f"({_fmt(sgn)})*(sqrt({_fmt(radius ** 2)} - ({u2})) "
               f"- {_fmt(radius)})")
    else:
        cap = None
    qterms = []
    for a in range(s):
        for b in range(s):
            if corr[a, b] != 0.0:
                qterms.append(f"({_fmt(corr[a, b])})*x{a}*x{b}")
    quad = " + ".join(qterms) if qterms else None

    sources = []
    for mu in range(d):
        parts = [_fmt(p[mu])]
        for a in range(s):
            parts.append(f"({_fmt(frame[2 + a][mu])})*x{a}")
        if cap is not None and frame[1][mu] != 0.0:
            parts.append(f"({_fmt(frame[1][mu])})*({cap})")
        if quad is not None and d_vec[mu] != 0.0:
            parts.append(f"({_fmt(0.5 * d_vec[mu])})*({quad})")
        sources.append(" + ".join(parts))
    half = delta / np.sqrt(s)
    seed = SeedSurface.from_sources(
        sources, domain=[(-half, half)] * s, resolution=[5] * s,
        orientation="outer", outward=[_fmt(c) for c in f1])
    return seed, delta


def witness_violation(metric, big_n, p, v, shrink_steps=12, delta0=0.1,
                      t_grid=None):
    """Exhibit a convexity violation of S_N forced by a negative gap at
    (p, v), or report inconclusiveness after the shrink limit.

    The seed's λ is 0 without a weight and -⟨∇V(p), L(p)⟩/(N-n+1) with
    one (L the gauge-normalized null normal extending v); both the seed
    radius δ and the affine span r start at ``delta0`` and halve per
    trial, as the underlying continuity argument only guarantees the
    violation for δ, r small enough.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    n = metric.dim - 1
    gap_exponent = big_n if big_n > n - 1 else n
    gap = geo.be_null_gap(metric, p, v, gap_exponent)
    # gap >= 0 means the caller skipped the scan; the loop then serves as
    # a negative control and reports the shrink limit
    if metric.weight is None:
        lam = 0.0
    else:
        if big_n <= n - 1:
            raise GeometryError("weighted witness needs N > n-1")
        g = metric.metric_values(p[None, :])[0]
        tref = metric.tref_values(p[None, :])[0]
        l_gauged = v / (-float(v @ g @ tref))
        _, dv, _ = metric.weight_jets(p[None, :])
        lam = -float(dv[0] @ l_gauged) / (big_n - n + 1.0)

    last_report = None
    for trial in range(shrink_steps + 1):
        delta = delta0 * 0.5 ** trial
        seed, delta = _witness_seed(metric, p, v, lam, delta)
        span = delta
        cong = build_congruence(metric, seed, span=span, t_end=1.0)
        measure = make_measure(cong)
        report = convexity_report(measure, n_prime=big_n, t_grid=t_grid)
        last_report = report
        if report.verdict == "violated":
            return WitnessResult(
                found=True, lam=lam, gap=gap, exponent=big_n, delta=delta,
                span=span, trials=trial + 1, report=report,
                message=(f"strict convexity violation: min slack "
                         f"{report.min_slack:.3e} at δ = r = {delta:.3e}"))
    return WitnessResult(
        found=False, lam=lam, gap=gap, exponent=big_n, delta=delta,
        span=span, trials=shrink_steps + 1, report=last_report,
        message="shrink limit reached without violation (inconclusive)")


# ---------------------------------------------------------------------------
# Hawking monotonicity


@dataclass
class HawkingResult:
    t0: float
    t1: float
    measure0: float
    measure1: float
    monotone: bool
    verdict: str
    incomplete_at: float | None = None
    assumptions: tuple = (
        "future completeness on [t0, t1] checked as: no focal point or "
        "chart exit before t1 on the selected rays",
    )


def hawking_check(cong, t0, t1, subset=None, area_tol=None):
    """Compare cross-section measures at t0 < t1.

    "monotone" when m(t0) ≤ m(t1) + tol.  A non-monotone result is
    reported together with the earliest detected incompleteness (focal
    time or exit) of the congruence, which is what the monotonicity
    theorem's contrapositive predicts; rays already dead inside [t0, t1]
    make the comparison itself impossible ("inconclusive: incomplete").
    """
    if not t0 < t1:
        raise GeometryError("need t0 < t1")
    rays = cong.rays if subset is None else [cong.rays[k] for k in subset]
    for ray in rays:
        if not cong.alive_at(t1, ray.index):
            t_dead = (ray.focal_time if ray.focal_time is not None
                      else ray.t_alive)
            return HawkingResult(
                t0=t0, t1=t1, measure0=np.nan, measure1=np.nan,
                monotone=False, verdict="inconclusive: incomplete",
                incomplete_at=float(t_dead))
    idx = None if subset is None else subset
    m0 = cross_section_measure(cong, t0, idx)
    m1 = cross_section_measure(cong, t1, idx)
    if area_tol is None:
        area_tol = 1e-9 * (1.0 + abs(m0) + abs(m1))
    if m0 <= m1 + area_tol:
        return HawkingResult(t0=t0, t1=t1, measure0=m0, measure1=m1,
                             monotone=True, verdict="monotone")
    incomplete = [r.focal_time if r.focal_time is not None else r.t_alive
                  for r in rays
                  if r.focal_time is not None or r.exit_reason != "t_end"]
    if incomplete:
        t_inc = float(min(incomplete))
        return HawkingResult(
            t0=t0, t1=t1, measure0=m0, measure1=m1, monotone=False,
            verdict=f"non-monotone, completeness fails at t={t_inc:.8g}",
            incomplete_at=t_inc)
    return HawkingResult(
        t0=t0, t1=t1, measure0=m0, measure1=m1, monotone=False,
        verdict=("non-monotone, no incompleteness detected within the "
                 f"integrated span [0, {cong.t_end:g}]"))


# ---------------------------------------------------------------------------
# Converging (trapped) test and the focal bound


@dataclass
class TrappedReport:
    h_outer: np.ndarray       # weighted mean curvature toward the outer normal
    h_inner: np.ndarray
    eps: float                # min over nodes and both directions
    eps_outer: float
    eps_inner: float
    verdict: str              # "synthetically trapped" | "not trapped"
    crosscheck: dict | None = None


def converging_test(metric, seed, cross_check=True, fd_step=1e-4):
    """Weighted mean curvature H_{V,w} = ⟨H, w⟩ + ⟨∇V, w⟩ (= -tr Π_w +
    ⟨∇V, w⟩) per node for both null normals; positive in both directions
    at every node means synthetically trapped.

    Optionally cross-checks the pointwise value at the first node against
    a finite difference of d/dt log m_H(T_t(cap)) at t = 0 on a small
    parameter cap, which is the measure-contraction form of the same
    quantity (they agree up to O(cap size) + O(fd_step)).
    """
    thetas, _ = quadrature_nodes(seed.domain, seed.resolution, seed.rule)
    h_out = np.empty(len(thetas))
    h_in = np.empty(len(thetas))
    for k, theta in enumerate(thetas):
        fr = _seed_frame(metric, seed, theta)
        _, _, hess = seed.jets(theta[None, :])
        fr.second_derivs = hess[0]
        _, dv, _ = metric.weight_jets(fr.point[None, :])
        for which, w in (("out", fr.normal_outer), ("in", fr.normal_inner)):
            _, tr_pi = _pi_from_frame(metric, fr, w)
            hval = -tr_pi + float(dv[0] @ w)
            if which == "out":
                h_out[k] = hval
            else:
                h_in[k] = hval
    eps_out = float(h_out.min())
    eps_in = float(h_in.min())
    eps = min(eps_out, eps_in)
    verdict = ("synthetically trapped" if eps_out > 0 and eps_in > 0
               else "not trapped")
    crosscheck = None
    if cross_check:
        theta0 = thetas[0]
        extents = [hi - lo for lo, hi in seed.domain]
        cap = [(float(t - 0.01 * e), float(t + 0.01 * e))
               for t, e in zip(theta0, extents)]
        cap_seed = SeedSurface(components=seed.components, domain=cap,
                               resolution=[3] * seed.pdim, rule="gauss",
                               orientation=seed.orientation,
                               outward=seed.outward)
        cong = build_congruence(metric, cap_seed, span=1.0,
                                t_end=2 * fd_step, rtol=1e-11)
        m0 = cross_section_measure(cong, 0.0)
        m1 = cross_section_measure(cong, fd_step)
        fd = (np.log(m1) - np.log(m0)) / fd_step
        pointwise = h_out[0] if seed.orientation == "outer" else h_in[0]
        crosscheck = {"node": theta0.tolist(),
                      "fd_log_measure_rate": float(fd),
                      "pointwise_minus_H": float(-pointwise),
                      "agree_sign": bool(np.sign(fd) == np.sign(-pointwise)
                                         or abs(fd) < 1e-8)}
    return TrappedReport(h_outer=h_out, h_inner=h_in, eps=eps,
                         eps_outer=eps_out, eps_inner=eps_in,
                         verdict=verdict, crosscheck=crosscheck)


@dataclass
class PenroseResult:
    eps: float
    n_prime: float
    bound: float              # N'/ε, the derived Riccati constant
    bound_paper: float        # 1/ε as stated in the source result
    entries: list
    verdict: str


def penrose_bound(cong, eps, n_prime):
    """Check every ray's focal time against the bound N'/ε.

    ``eps`` must be a positive lower bound on the weighted mean curvature
    toward the congruence direction (from :func:`converging_test`).
    Verdict "incompleteness forced" when every ray focuses within the
    bound; rays that exit the chart or outlive the integrated span before
    focusing make the run "inconclusive".
    """
    if eps <= 0:
        raise GeometryError(
            f"penrose_bound needs a converging seed (ε = {eps:.3e} ≤ 0)")
    bound = n_prime / eps
    bound_paper = 1.0 / eps
    entries = []
    n_focal_ok = 0
    n_inconclusive = 0
    for ray in cong.rays:
        focal = ray.focal_time
        if focal is not None:
            ok = focal <= bound * (1.0 + 1e-9) + 1e-12
            ok_paper = focal <= bound_paper * (1.0 + 1e-9) + 1e-12
            status = "focal"
            n_focal_ok += int(ok)
        else:
            ok = ok_paper = False
            status = ("exited:" + ray.exit_reason
                      if ray.exit_reason != "t_end" else "alive")
            n_inconclusive += 1
        entries.append({"ray": ray.index, "focal_time": focal,
                        "within_bound": ok, "within_paper_bound": ok_paper,
                        "status": status})
    if n_inconclusive:
        verdict = "inconclusive"
    elif n_focal_ok == len(cong.rays):
        verdict = "incompleteness forced"
    else:
        verdict = "bound violated"
    return PenroseResult(eps=eps, n_prime=n_prime, bound=bound,
                         bound_paper=bound_paper, entries=entries,
                         verdict=verdict)
