import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ismpc.errors import NoFeasibleOffsets, ShapeError, SynthesisFailed
from ismpc.lmi import check_residuals, solve_feasibility
from ismpc.palm import ErrorBounds, NonlinearSystem, PartitionSpec, build_pwa
from ismpc.synthesis import (
    ControllerDesign,
    DesignOptions,
    GridSpec,
    NominalDesign,
    assemble_lemma1,
    assemble_theorem2,
    default_gamma,
    design_controller,
    grid_points,
    robustness_margin,
    sample_offsets,
    selectors,
    solve_surface,
)


def double_integrator():
    return NonlinearSystem.from_callable(lambda x, u: np.array([x[1], u[0]]), 2, 1, [-1, -1, -1], [1, 1, 1])


def single_region(system):
    theta = np.zeros(system.dim)
    theta[0] = 1.0
    return build_pwa(system, PartitionSpec(theta, [0.0]))


def test_selectors():
    R1, R2 = selectors(2, 1)
    assert R1.shape == (3, 2) and R2.shape == (3, 1)
    assert np.array_equal(np.hstack([R1, R2]), np.eye(3))


def test_lemma1_single_region_has_one_constraint():
    prob = assemble_lemma1(single_region(double_integrator()), [])
    assert [c.name for c in prob.all_constraints()] == ["origin", "W > 0"]


def test_lemma1_pendulum_bookkeeping(pendulum_fixture):
    prob = assemble_lemma1(pendulum_fixture.model, [[3.0], [5.0], [-3.0], [-5.0]])
    names = [v.name for v in prob.variables]
    assert names == ["W", "Y0", "Y1", "Y2", "Y3", "Y4", "lam1", "lam2", "lam3", "lam4"]
    assert prob.variable("W").shape == (3, 3) and prob.variable("Y2").shape == (1, 3)
    assert len(prob.constraints) == 5
    # region blocks are (N + 1) x (N + 1)
    assert [c.expr.shape for c in prob.constraints] == [(3, 3)] + [(4, 4)] * 4


def test_lemma1_wrong_offset_count(pendulum_fixture):
    with pytest.raises(ShapeError):
        assemble_lemma1(pendulum_fixture.model, [[1.0]])


def test_lemma1_double_integrator_gain_is_hurwitz():
    model = single_region(double_integrator())
    nom = sample_offsets(model)
    M, _ = nom.closed_loop(model, 0)
    assert np.linalg.eigvals(M).real.max() < 0
    assert nom.D[0].tolist() == [0.0]
    # gain reconstruction K W = Y
    assert np.linalg.norm(nom.K[0] @ nom.W - nom.Y[0]) <= 1e-8


def test_lemma1_pendulum_printed_offsets_feasible(pendulum_fixture):
    grid = GridSpec([(3.0, 3.0), (5.0, 5.0), (-3.0, -3.0), (-5.0, -5.0)], points_per_axis=1, max_refinements=0)
    nom = sample_offsets(pendulum_fixture.model, grid)
    assert [d.tolist() for d in nom.D] == [[0.0], [3.0], [5.0], [-3.0], [-5.0]]
    for j in range(5):
        assert np.linalg.norm(nom.K[j] @ nom.W - nom.Y[j]) <= 1e-8 * max(1.0, np.linalg.norm(nom.Y[j]))


def test_lemma1_chua_symmetric_offset_feasible(chua_fixture):
    sol = solve_feasibility(assemble_lemma1(chua_fixture.model, [[0.2], [-0.2]]))
    assert sol.feasible


def test_tied_grid_maps_offsets():
    grid = GridSpec([(-1.0, 1.0)], ties={1: (0, 1), 2: (0, -1)})
    D = grid.offsets(np.array([0.2]), 2, 1)
    assert [d.tolist() for d in D] == [[0.2], [-0.2]]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(2, 5), st.integers(0, 1000))
def test_grid_points_are_distinct_nodes(dim, ppa, seed):
    ranges = [(-1.0, 2.0)] * dim
    pts = list(grid_points(ranges, ppa, seed))
    assert len(pts) == ppa ** dim
    keys = {tuple(np.round(p, 12)) for p in pts}
    assert len(keys) == len(pts)
    nodes = np.linspace(-1.0, 2.0, ppa)
    for p in pts:
        assert all(np.isclose(nodes, v).any() for v in p)
    if ppa % 2 == 1:
        assert np.allclose(pts[0], 0.5)


def test_empty_grid_yields_one_point():
    assert [p.shape for p in grid_points([], 5)] == [(0,)]


def test_sample_offsets_rejects_unstabilizable_origin():
    sysm = NonlinearSystem.from_callable(lambda x, u: np.array([x[0]]), 1, 1, [-1, -1], [1, 1])
    with pytest.raises(NoFeasibleOffsets):
        sample_offsets(single_region(sysm))


def test_theorem2_origin_only():
    model = single_region(double_integrator())
    nom = sample_offsets(model)
    prob = assemble_theorem2(model, nom, ErrorBounds(0.01, 0.0, 0.0))
    assert [c.name for c in prob.constraints] == ["origin"]
    assert prob.constraints[0].expr.shape == (6, 6)
    surf, sol = solve_surface(model, nom, ErrorBounds(0.01, 0.0, 0.0))
    assert surf is not None
    rep = check_residuals(prob, {"P": surf.P, "eta0": np.array([[surf.eta["eta0"]]])})
    assert rep.passed
    big, _ = solve_surface(model, nom, ErrorBounds(0.01 * 1e6, 0.0, 0.0))
    assert big is None


def test_surface_matrix_is_second_block_row(plant_designs):
    for _, design, model in plant_designs:
        P = design.P
        _, R2 = selectors(model.n, model.m)
        assert np.array_equal(design.S_bar, R2.T @ P)
        assert np.linalg.eigvalsh(design.S_u).min() > 0
        assert np.linalg.norm(P, 2) == pytest.approx(1.0, rel=1e-12)


def test_beta_definitions(plant_designs):
    for _, design, _ in plant_designs:
        norm_sx = np.linalg.norm(design.S_x, 2)
        assert design.beta[0] == 0.0
        for b in design.beta[1:]:
            assert abs(b - design.bounds.eps_g * norm_sx) <= 1e-10


def test_default_gamma_formula(plant_designs):
    for _, design, model in plant_designs:
        want = 0.1 * np.linalg.norm(design.S_x, 2) * model.diameter * max(design.bounds.eps_f0, design.bounds.eps_f)
        assert design.gamma == pytest.approx(max(want, 1e-3), rel=1e-12)


def test_pendulum_printed_gains_surface_sign_pattern(pendulum_fixture):
    """With the printed gains the surface LMIs are feasible only for (near) zero
    error bounds; the sign pattern of the resulting surface matches the printed one."""
    model = pendulum_fixture.model
    pub = pendulum_fixture.published
    nom = NominalDesign(pub["K"], pub["D"])
    surf, _ = solve_surface(model, nom, ErrorBounds())
    assert surf is not None
    assert np.array_equal(np.sign(surf.S_bar), np.sign(np.asarray(pub["S_bar"])))
    est, _ = solve_surface(model, nom, model.bounds)
    assert est is None


def test_design_controller_scalar_plant():
    sysm = NonlinearSystem.from_callable(lambda x, u: -x + u, 1, 1, [-1, -1], [1, 1])
    design, model = design_controller(sysm, PartitionSpec([1.0, 0.0], [0.0]))
    assert model.l == 0
    M = np.array([[-1.0, 1.0]])
    closed = np.vstack([M, design.K[0]])
    assert np.linalg.eigvals(closed).real.max() < 0


def test_design_controller_uncontrollable_fails():
    sysm = NonlinearSystem.from_callable(lambda x, u: 0.0 * x, 1, 1, [-1, -1], [1, 1])
    with pytest.raises(SynthesisFailed) as err:
        design_controller(sysm, PartitionSpec([1.0, 0.0], [0.0]), DesignOptions(l_max=4))
    assert len(err.value.log) >= 1
    assert all(a.stage == "nominal" for a in err.value.log)


def test_controller_design_round_trip(plant_designs):
    _, design, _ = plant_designs[0]
    text = design.dumps()
    again = ControllerDesign.loads(text)
    assert again.dumps() == text
    d = json.loads(text)
    assert {"K", "D", "S_bar", "S_x", "S_u", "gamma", "beta", "bounds", "P", "W"} <= set(d)


def test_robustness_margin_arithmetic():
    d = ControllerDesign(1, 1, [[[0.0, 0.0]]], [[0.0]], [[0.0]], [[1.0]], 1.0, [0.0], ErrorBounds(0.0, 0.01, 0.01))
    rep = robustness_margin(d)
    assert rep.factor == 1.0
    assert rep.verdict is None
    d2 = ControllerDesign(1, 1, [[[0.0, 0.0]]], [[0.0]], [[3.0]], [[2.0]], 1.0, [0.0], ErrorBounds(0.0, 0.01, 0.01))
    rep = robustness_margin(d2, b3=1.0, b4=1.0, lam=0.1)
    factor = 1.0 + 0.5 * 3.0
    assert rep.factor == pytest.approx(factor)
    assert rep.lhs == pytest.approx(factor * 0.01 + 0.01)
    assert rep.rhs == pytest.approx(1.0 - (2.0 + 1.5) * 0.1)
    assert rep.verdict is True
    assert robustness_margin(d2, b3=1.0, b4=1.0, lam=0.5).verdict is False
    assert "verdict: pass" in robustness_margin(d2, rho=2.0, h=2.0, lam=0.1).to_text()
