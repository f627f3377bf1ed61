"""Second route for LMI verdicts: the same problem handed to cvxpy (Clarabel)."""

import numpy as np

from ismpc.lmi import NEG, _Layout


def max_margin(problem, radius=1e3):
    """``max t`` s.t. every normalized constraint holds with margin ``t`` and ``||y|| <= radius``."""
    import cvxpy as cp

    layout = _Layout(problem.variables)
    y = cp.Variable(layout.size)
    t = cp.Variable()
    cons = [cp.norm(y) <= radius, t <= 1.0]
    for c in problem.all_constraints():
        F0, F = c.expr.coefficients(layout)
        F0 = 0.5 * (F0 + F0.T)
        F = 0.5 * (F + F.transpose(0, 2, 1))
        s = 1.0 if c.sense == NEG else -1.0
        scale = float(np.sqrt(np.sum(F0 ** 2) + np.sum(F ** 2))) or 1.0
        k = F0.shape[0]
        E = s * F0 / scale + sum(y[j] * (s * F[j] / scale) for j in range(layout.size))
        cons.append(0.5 * (E + E.T) << -t * np.eye(k))
    prob = cp.Problem(cp.Maximize(t), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(t.value), prob.status
