"""Shared fixtures: metrics, seeds and congruences built once per session."""

import numpy as np
import pytest

import nullflow as nf

SPHERE = ["0.0", "sin(x0)*cos(x1)", "sin(x0)*sin(x1)", "cos(x0)"]
SPHERE_DOMAIN = [(0.0, np.pi), (0.0, 2 * np.pi)]


def sphere_seed(radius=1.0, resolution=(8, 16), orientation="outer",
                center=(0.0, 0.0, 0.0, 0.0)):
    comps = [f"{center[0]!r}",
             f"{center[1]!r} + {radius!r}*sin(x0)*cos(x1)",
             f"{center[2]!r} + {radius!r}*sin(x0)*sin(x1)",
             f"{center[3]!r} + {radius!r}*cos(x0)"]
    return nf.SeedSurface.from_sources(comps, SPHERE_DOMAIN, list(resolution),
                                       orientation=orientation)


def ef_sphere_seed(r0, resolution=(6, 12), orientation="outer"):
    return nf.SeedSurface.from_sources(
        ["0.0", repr(float(r0)), "x0", "x1"], SPHERE_DOMAIN, list(resolution),
        orientation=orientation, outward=["0", "1", "0", "0"])


@pytest.fixture(scope="session")
def mink():
    return nf.builtin_metric("minkowski")


@pytest.fixture(scope="session")
def schw():
    return nf.builtin_metric("schwarzschild_ef", mass=1.0, r_min=1e-6)


@pytest.fixture(scope="session")
def schw_static():
    return nf.builtin_metric("schwarzschild_static", mass=1.0)


@pytest.fixture(scope="session")
def flrw():
    return nf.builtin_metric("flrw", scale_factor="exp(x0^2)")


@pytest.fixture(scope="session")
def weighted_mink():
    comps = [["-1.0", "0", "0", "0"], ["0", "1.0", "0", "0"],
             ["0", "0", "1.0", "0"], ["0", "0", "0", "1.0"]]
    return nf.make_metric(4, comps, weight="x1", name="weighted_minkowski")


@pytest.fixture(scope="session")
def flat_cone(mink):
    return nf.build_congruence(mink, sphere_seed(), span=1.0, t_end=1.0)


@pytest.fixture(scope="session")
def flat_ingoing(mink):
    return nf.build_congruence(mink, sphere_seed(orientation="inner"),
                               span=1.0, t_end=2.0)


@pytest.fixture(scope="session")
def horizon_cong(schw):
    return nf.build_congruence(schw, ef_sphere_seed(2.0, resolution=(8, 16)),
                               span=1.0, t_end=5.0)


@pytest.fixture(scope="session")
def trapped_cong(schw):
    return nf.build_congruence(schw, ef_sphere_seed(1.5, resolution=(4, 8)),
                               span=1.0, t_end=6.0)


@pytest.fixture(scope="session")
def flrw_cone(flrw):
    # coordinate sphere of radius 0.5 at t = 0; a(0) = 1 so it is spacelike
    return nf.build_congruence(flrw, sphere_seed(radius=0.5), span=1.0,
                               t_end=1.0)
