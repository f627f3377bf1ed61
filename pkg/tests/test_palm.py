import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ismpc.bench import pendulum_system, random_stable_plant
from ismpc.errors import AssumptionError, CoverageError, DomainError, InvalidSlab, ShapeError
from ismpc.palm import (
    ErrorBounds,
    NonlinearSystem,
    PartitionSpec,
    PwaModel,
    Region,
    build_pwa,
    estimate_error_bounds,
    linearize,
    locate,
    region_index,
    slab_to_ellipsoid,
    validate_model,
)

PEND_CENTERS = [0.0, np.pi / 3, 13 * np.pi / 30, -np.pi / 3, -13 * np.pi / 30]


def cubic(x, u):
    return np.array([-x[0] + x[0] ** 3 + u[0]])


@pytest.fixture(scope="module")
def cubic_system():
    return NonlinearSystem.from_callable(cubic, 1, 1, [-1.0, -1.0], [1.0, 1.0], name="cubic")


def test_slab_encoding_values():
    Q, f = slab_to_ellipsoid([1.0, 0.0], -1.0, 3.0)
    assert np.allclose(Q, [[0.5, 0.0]])
    assert f == -0.5


def test_slab_encoding_rejects_empty():
    with pytest.raises(InvalidSlab):
        slab_to_ellipsoid([1.0, 0.0], 1.0, 1.0)
    with pytest.raises(InvalidSlab):
        slab_to_ellipsoid([0.0, 0.0], -1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3).filter(lambda t: max(abs(v) for v in t) > 1e-2),
    st.floats(-5, 5),
    st.floats(1e-2, 5),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
def test_slab_matches_ellipsoid(theta, b1, width, x):
    b2 = b1 + width
    Q, f = slab_to_ellipsoid(theta, b1, b2)
    p = float(np.dot(theta, x))
    e = abs(float((Q @ np.asarray(x))[0]) + f)
    # membership agrees away from the boundary
    if abs(p - b1) > 1e-9 * (1 + abs(p)) and abs(p - b2) > 1e-9 * (1 + abs(p)):
        assert (b1 <= p <= b2) == (e <= 1.0)


def test_system_checks_equilibrium():
    with pytest.raises(AssumptionError):
        NonlinearSystem.from_callable(lambda x, u: x + 1.0, 1, 1, [-1, -1], [1, 1])
    with pytest.raises(ShapeError):
        NonlinearSystem.from_callable(cubic, 1, 1, [-1], [1])


def test_linearize_matches_analytic_jacobian():
    sysm = pendulum_system()
    th = np.pi / 3
    sub = linearize(sysm, [th, 0.0, 0.0])
    # analytic partials of the pendulum at (th, 0, 0)
    g, M, m, l = 9.8, 4.0, 2.0, 0.5
    a = 1.0 / (M + m)
    den = 4 * l / 3 - a * m * l * np.cos(th) ** 2
    dden = 2 * a * m * l * np.cos(th) * np.sin(th)
    dfdx1 = g * np.cos(th) / den - g * np.sin(th) * dden / den ** 2
    dfdu = -a * np.cos(th) / den
    assert sub.A[1, 0] == pytest.approx(dfdx1, rel=1e-7)
    assert sub.B[1, 0] == pytest.approx(dfdu, rel=1e-7)
    assert sub.A[0, 1] == pytest.approx(1.0, abs=1e-9)
    f = sysm.evaluate([th, 0.0], [0.0])
    assert np.allclose(sub.C, f - sub.A @ [th, 0.0], atol=1e-9)
    # printed pendulum A entries: 4.7040 at pi/3 and 19.6000 at the origin
    assert round(sub.A[1, 0], 4) == 4.7040
    assert round(linearize(sysm, [0, 0, 0]).A[1, 0], 4) == 19.6000


def test_linearize_origin_has_zero_offset():
    sub = linearize(pendulum_system(), [0.0, 0.0, 0.0])
    assert np.all(sub.C == 0)


def test_linearize_rejects_outside_domain():
    with pytest.raises(DomainError):
        linearize(pendulum_system(), [2.0, 0.0, 0.0])


def test_partition_covers_premise_range():
    sysm = pendulum_system()
    part = PartitionSpec([1.0, 0.0, 0.0], PEND_CENTERS)
    slabs = part.slabs(sysm.lo, sysm.hi)
    edges = sorted(slabs)
    assert edges[0][0] == pytest.approx(-np.pi / 2)
    assert edges[-1][1] == pytest.approx(np.pi / 2)
    for (a0, b0), (a1, b1) in zip(edges[:-1], edges[1:]):
        assert b0 == a1
    assert slabs[0][0] < 0 < slabs[0][1]


def test_partition_requires_origin_first():
    with pytest.raises(ValueError):
        PartitionSpec([1.0, 0.0], [1.0, 0.0])


def test_refinement_adds_a_region_and_keeps_origin():
    sysm = pendulum_system()
    part = PartitionSpec([1.0, 0.0, 0.0], PEND_CENTERS)
    for _ in range(6):
        new = part.refined(sysm.lo, sysm.hi)
        assert len(new.centers) > len(part.centers)
        assert new.centers[0] == 0.0
        model = build_pwa(sysm, new)
        assert model.regions[0].contains(np.zeros(3))
        part = new


def test_locate_and_region_index(cubic_system):
    model = build_pwa(cubic_system, PartitionSpec([1.0, 0.0], [0.0, 0.75, -0.75]))
    assert region_index(model, [0.0, 0.0]) == 0
    assert region_index(model, [0.9, 0.0]) == 1
    assert region_index(model, [-0.9, 0.5]) == 2
    i, exited = locate(model, [5.0, 0.0])
    assert (i, exited) == (1, True)
    # shared boundary goes to the lower index
    b = model.regions[0].beta2
    assert region_index(model, [b, 0.0]) == 0


@settings(max_examples=80, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_locate_returns_containing_region(x, u):
    sysm = NonlinearSystem.from_callable(cubic, 1, 1, [-1.0, -1.0], [1.0, 1.0])
    model = build_pwa(sysm, PartitionSpec([1.0, 0.0], [0.0, 0.6, -0.6, 0.9]))
    i, exited = locate(model, [x, u])
    assert not exited
    assert model.regions[i].contains([x, u])


def test_model_rejects_origin_in_other_region():
    r0 = Region(0, [1.0, 0.0], 0.5, 1.0)
    with pytest.raises(CoverageError):
        PwaModel(1, 1, [-1, -1], [1, 1], [r0], [linearize(
            NonlinearSystem.from_callable(cubic, 1, 1, [-1, -1], [1, 1]), [0, 0])])


def test_error_bounds_against_dense_grid(cubic_system):
    """Sampled bounds cover the dense-grid supremum of ``|r| / |xbar|``."""
    model = build_pwa(cubic_system, PartitionSpec([1.0, 0.0], [0.0, 0.75, -0.75]))
    b = estimate_error_bounds(cubic_system, model, 1024, seed=3)
    # region 0: r = x^3 on |x| <= 0.375, sup |x^3| / |(x, u)| = 0.375^2 at u = 0
    assert b.eps_f0 >= 0.375 ** 2 - 1e-12
    assert b.eps_f0 <= 1.1 * 0.375 ** 2 + 1e-12
    # dense-grid oracle for the other regions
    grid = np.linspace(-1, 1, 801)
    X, U = np.meshgrid(grid, grid)
    worst = 0.0
    for reg, sub in zip(model.regions[1:], model.submodels[1:]):
        mask = (X >= reg.beta1 / reg.theta[0]) & (X <= reg.beta2 / reg.theta[0])
        r = np.abs((-X + X ** 3 + U) - (sub.A[0, 0] * X + sub.B[0, 0] * U + sub.C[0]))
        nrm = np.hypot(X, U)
        mask &= nrm > 0
        ratio = np.maximum(r - b.eps_g, 0) / np.where(nrm > 0, nrm, 1.0)
        worst = max(worst, float(ratio[mask].max()))
    assert b.eps_f >= worst * 0.999
    assert b.eps_f <= 1.1 * worst * 1.01


def test_validate_model_passes_with_estimated_bounds(cubic_system):
    model = build_pwa(cubic_system, PartitionSpec([1.0, 0.0], [0.0, 0.75, -0.75]))
    model.bounds = estimate_error_bounds(cubic_system, model, 1024)
    rep = validate_model(model, cubic_system)
    assert rep.passed, rep.to_text()
    model.bounds = ErrorBounds()
    assert not validate_model(model, cubic_system).passed


def test_error_bounds_reject_negative():
    with pytest.raises(ValueError):
        ErrorBounds(-1.0, 0.0, 0.0)


def test_model_round_trip_is_byte_identical():
    sysm = random_stable_plant(1)
    th = np.zeros(sysm.dim)
    th[0] = 1.0
    model = build_pwa(sysm, PartitionSpec(th, [0.0, 1.0, -1.0]))
    model.bounds = estimate_error_bounds(sysm, model, 256)
    text = model.dumps()
    again = PwaModel.loads(text)
    assert again.dumps() == text
    assert json.loads(text)["regions"][1]["f"] == model.regions[1].f
