import json

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from ismpc.errors import ShapeError
from ismpc.lmi import (
    NEG,
    POS,
    DecisionVariable,
    FeasibilityProblem,
    FeasibilitySolution,
    MatrixExpr,
    check_residuals,
    solve_feasibility,
)


def lyapunov_problem(A):
    prob = FeasibilityProblem()
    P = prob.symmetric("P", A.shape[0])
    prob.add_constraint((P @ A).sym(), name="decrease")
    return prob


def shifted(rng, d, abscissa):
    A = rng.standard_normal((d, d))
    return A - (np.linalg.eigvals(A).real.max() - abscissa) * np.eye(d)


def test_variable_basis_round_trip():
    v = DecisionVariable.symmetric("P", 3)
    X = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    assert np.array_equal(v.unpack(v.pack(X)), X)
    assert v.size == 6
    w = DecisionVariable.matrix("Y", 2, 3)
    Y = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(w.unpack(w.pack(Y)), Y)


def test_variable_validation():
    with pytest.raises(ShapeError):
        DecisionVariable("S", "symmetric", (2, 3))
    with pytest.raises(ValueError):
        DecisionVariable("Y", "matrix", (2, 2), positive=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_expression_evaluates_like_numpy(d, seed):
    rng = np.random.default_rng(seed)
    prob = FeasibilityProblem()
    P = prob.symmetric("P", d)
    Y = prob.matrix("Y", 1, d)
    A = rng.standard_normal((d, d))
    B = rng.standard_normal((d, 1))
    expr = (A @ P + B @ Y).sym() + 2.0 * MatrixExpr.constant(np.eye(d))
    Pv = rng.standard_normal((d, d))
    Pv = Pv + Pv.T
    Yv = rng.standard_normal((1, d))
    M = A @ Pv + B @ Yv
    want = M + M.T + 2.0 * np.eye(d)
    got = expr.evaluate({"P": Pv, "Y": Yv})
    assert np.allclose(got, want, atol=1e-12)


def test_block_expression_layout():
    prob = FeasibilityProblem()
    P = prob.symmetric("P", 2)
    lam = prob.scalar("lam")
    blk = MatrixExpr.block([[P, MatrixExpr.constant(np.ones((2, 1)))], [None, lam.times(np.eye(1))]])
    E = blk.evaluate({"P": np.diag([1.0, 2.0]), "lam": np.array([[3.0]])})
    want = np.array([[1.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, 3.0]])
    assert np.array_equal(E, want)


def test_lyapunov_stable_scalar():
    sol = solve_feasibility(lyapunov_problem(np.array([[-1.0]])))
    assert sol.status == "Feasible"
    assert sol.margin >= 1e-7
    assert sol.assignment["P"][0, 0] > 0


def test_lyapunov_unstable_scalar():
    assert solve_feasibility(lyapunov_problem(np.array([[1.0]]))).status == "Infeasible"


def test_lyapunov_marginal_is_not_strictly_feasible():
    # eigenvalues on the imaginary axis: no strict certificate exists
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert solve_feasibility(lyapunov_problem(A)).status != "Feasible"


@pytest.mark.parametrize("seed", range(6))
def test_feasible_point_matches_lyapunov_equation(seed):
    """Any certificate P must satisfy the Lyapunov identity with some Q > 0."""
    rng = np.random.default_rng(100 + seed)
    d = 2 + seed % 3
    A = shifted(rng, d, -0.3 - rng.random())
    sol = solve_feasibility(lyapunov_problem(A))
    assert sol.feasible
    P = sol.assignment["P"]
    Q = -(A.T @ P + P @ A)
    assert np.linalg.eigvalsh(Q).min() > 0
    # solving A^T X + X A = -Q returns the same P
    X = sla.solve_continuous_lyapunov(A.T, -Q)
    assert np.allclose(X, P, rtol=1e-6, atol=1e-9 * np.abs(P).max())


def test_check_residuals_reports_each_constraint():
    prob = lyapunov_problem(np.array([[-2.0, 0.0], [0.0, -1.0]]))
    rep = check_residuals(prob, {"P": np.eye(2)})
    assert rep.passed
    names = [r.name for r in rep.rows]
    assert names == ["decrease", "P > 0"]
    assert rep.rows[0].extreme == pytest.approx(-2.0)
    assert rep.margin == pytest.approx(1.0)
    bad = check_residuals(prob, {"P": -np.eye(2)})
    assert not bad.passed
    assert "FAIL" in bad.to_table()


def test_check_residuals_missing_variable():
    with pytest.raises(ShapeError):
        check_residuals(lyapunov_problem(np.eye(1)), {})


def test_positive_sense_constraint():
    prob = FeasibilityProblem()
    x = prob.scalar("x", positive=False)
    prob.add_constraint(x - MatrixExpr.constant([[1.0]]), POS, name="x > 1")
    prob.add_constraint(x - MatrixExpr.constant([[3.0]]), NEG, name="x < 3")
    sol = solve_feasibility(prob)
    assert sol.feasible
    assert 1.0 < sol.assignment["x"][0, 0] < 3.0
    prob2 = FeasibilityProblem()
    y = prob2.scalar("y", positive=False)
    prob2.add_constraint(y - MatrixExpr.constant([[3.0]]), POS)
    prob2.add_constraint(y - MatrixExpr.constant([[1.0]]), NEG)
    assert solve_feasibility(prob2).status == "Infeasible"


def test_problem_and_solution_serialize():
    prob = lyapunov_problem(np.array([[-1.0, 1.0], [0.0, -2.0]]))
    text = json.dumps(prob.to_dict())
    again = FeasibilityProblem.from_dict(json.loads(text))
    assert json.dumps(again.to_dict()) == text
    sol = solve_feasibility(prob)
    back = FeasibilitySolution.from_dict(json.loads(sol.dumps()))
    assert back.status == sol.status
    assert np.array_equal(back.assignment["P"], sol.assignment["P"])
    assert check_residuals(again, back.assignment).passed


def test_rejects_empty_problem():
    prob = FeasibilityProblem()
    prob.symmetric("P", 2)
    with pytest.raises(ValueError):
        solve_feasibility(prob)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 2.0))
def test_verdict_invariant_under_scaling(seed, scale):
    """``A`` and ``c A`` (c > 0) have the same Lyapunov verdict."""
    rng = np.random.default_rng(seed)
    A = shifted(rng, 2, rng.choice([-0.5, 0.5]))
    v1 = solve_feasibility(lyapunov_problem(A)).status
    v2 = solve_feasibility(lyapunov_problem(scale * A)).status
    assert v1 == v2


def test_agrees_with_cvxpy_route():
    cvx_route = pytest.importorskip("cvx_route")
    pytest.importorskip("cvxpy")
    rng = np.random.default_rng(7)
    for k in range(6):
        A = shifted(rng, 3, (-1) ** k * 0.4)
        prob = lyapunov_problem(A)
        t, _ = cvx_route.max_margin(prob)
        ours = solve_feasibility(prob).feasible
        assert ours == (t > 1e-9)


def test_unstable_case_with_stalled_centering_terminates():
    # found by the scaling property: centering stalls just above the tolerance
    rng = np.random.default_rng(298031)
    A = shifted(rng, 2, rng.choice([-0.5, 0.5]))
    assert np.linalg.eigvals(A).real.max() == pytest.approx(0.5)
    for c in (1.0, 0.375):
        sol = solve_feasibility(lyapunov_problem(c * A))
        assert sol.status == "Infeasible"
        assert sol.iterations < 500
