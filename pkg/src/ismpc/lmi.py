"""Strict LMI feasibility by a log-det barrier method.

Constraints are affine symmetric matrix functions ``E(y)`` of the scalar
unknowns ``y`` (the entries of the decision variables).  Feasibility is
decided through the max-margin problem

    minimize t   s.t.  s_k E_k(y) <= t I   for every constraint k
                       ||y||^2 <= R^2

where ``s_k = +1`` for ``E < 0`` and ``-1`` for ``E > 0`` (positive
variables are folded in the same way).  The norm ball keeps homogeneous
problems bounded and does not change whether ``t* < 0``.  The problem is
strictly feasible iff ``t* < 0``; a central-path point with barrier
parameter ``tau`` gives the certified bracket ``t - m/tau <= t* <= t``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConditioningError, ShapeError

NEG = "negative_definite"
POS = "positive_definite"


@dataclass(frozen=True)
class DecisionVariable:
    name: str
    kind: str  # "scalar", "symmetric", "matrix"
    shape: tuple
    positive: bool = False

    def __post_init__(self):
        if self.kind not in ("scalar", "symmetric", "matrix"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        r, c = self.shape
        if r < 1 or c < 1:
            raise ShapeError(f"variable {self.name} has non-positive dimension")
        if self.kind == "symmetric" and r != c:
            raise ShapeError(f"symmetric variable {self.name} must be square")
        if self.kind == "scalar" and (r, c) != (1, 1):
            raise ShapeError("scalar variables are 1x1")
        if self.positive and self.kind == "matrix":
            raise ValueError("positivity applies to scalars and symmetric matrices only")

    @classmethod
    def scalar(cls, name, positive=True):
        return cls(name, "scalar", (1, 1), positive)

    @classmethod
    def symmetric(cls, name, d, positive=True):
        return cls(name, "symmetric", (d, d), positive)

    @classmethod
    def matrix(cls, name, p, q):
        return cls(name, "matrix", (p, q), False)

    @property
    def size(self):
        r, c = self.shape
        return r * (r + 1) // 2 if self.kind == "symmetric" else r * c

    def basis(self):
        r, c = self.shape
        out = np.zeros((self.size, r, c))
        if self.kind == "symmetric":
            k = 0
            for i in range(r):
                for j in range(i, r):
                    out[k, i, j] = out[k, j, i] = 1.0
                    k += 1
        else:
            for k in range(r * c):
                out[k].flat[k] = 1.0
        return out

    def unpack(self, vec):
        return np.tensordot(np.asarray(vec, dtype=float), self.basis(), axes=1)

    def pack(self, value):
        value = np.asarray(value, dtype=float).reshape(self.shape)
        if self.kind == "symmetric":
            return value[np.triu_indices(self.shape[0])]
        return value.ravel().copy()

    def initial(self):
        if self.kind == "symmetric" and self.positive:
            return self.pack(np.eye(self.shape[0]))
        if self.kind == "scalar" and self.positive:
            return np.ones(1)
        return np.zeros(self.size)

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "shape": list(self.shape), "positive": self.positive}


@dataclass(frozen=True)
class Term:
    left: np.ndarray
    var: DecisionVariable
    right: np.ndarray
    transpose: bool = False

    def value(self, X):
        return self.left @ (X.T if self.transpose else X) @ self.right


class MatrixExpr:
    """Affine matrix function: ``const + sum_k L_k X_k R_k`` (or ``X_k^T``)."""

    # make ``ndarray @ expr`` defer to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, const, terms=(), blocks=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = list(terms)
        self.blocks = blocks
        for t in self.terms:
            r, c = t.var.shape
            if t.transpose:
                r, c = c, r
            if t.left.shape[1] != r or t.right.shape[0] != c:
                raise ShapeError(f"term in {t.var.name} has mismatched coefficient shapes")
            if (t.left.shape[0], t.right.shape[1]) != self.const.shape:
                raise ShapeError("term shape differs from expression shape")

    @property
    def shape(self):
        return self.const.shape

    @classmethod
    def of(cls, var: DecisionVariable):
        r, c = var.shape
        return cls(np.zeros((r, c)), [Term(np.eye(r), var, np.eye(c))])

    @classmethod
    def constant(cls, M):
        return cls(M)

    @classmethod
    def zeros(cls, r, c):
        return cls(np.zeros((r, c)))

    @staticmethod
    def lift(obj, shape=None):
        if isinstance(obj, MatrixExpr):
            return obj
        if obj is None or (np.isscalar(obj) and obj == 0 and shape is not None):
            return MatrixExpr(np.zeros(shape))
        return MatrixExpr(np.atleast_2d(np.asarray(obj, dtype=float)))

    @property
    def T(self):
        return MatrixExpr(
            self.const.T,
            [Term(t.right.T, t.var, t.left.T, not t.transpose) for t in self.terms],
        )

    def __add__(self, other):
        other = MatrixExpr.lift(other, self.shape)
        if other.shape != self.shape:
            raise ShapeError(f"cannot add shapes {self.shape} and {other.shape}")
        return MatrixExpr(self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-MatrixExpr.lift(other, self.shape))

    def __rsub__(self, other):
        return MatrixExpr.lift(other, self.shape) - self

    def __mul__(self, k):
        k = float(k)
        return MatrixExpr(self.const * k, [Term(t.left * k, t.var, t.right, t.transpose) for t in self.terms])

    __rmul__ = __mul__

    def __matmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return MatrixExpr(self.const @ M, [Term(t.left, t.var, t.right @ M, t.transpose) for t in self.terms])

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return MatrixExpr(M @ self.const, [Term(M @ t.left, t.var, t.right, t.transpose) for t in self.terms])

    def times(self, M):
        """``s * M`` for a 1x1 expression ``s`` and a constant matrix ``M``."""
        if self.shape != (1, 1):
            raise ShapeError("times() needs a 1x1 expression")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        r, c = M.shape
        terms = []
        for k in range(c):
            col = M[:, k:k + 1]
            if not np.any(col):
                continue
            ek = np.zeros((1, c))
            ek[0, k] = 1.0
            terms += [Term(col @ t.left, t.var, t.right @ ek, t.transpose) for t in self.terms]
        return MatrixExpr(self.const[0, 0] * M, terms)

    def sym(self):
        """``E + E^T`` (the ``(.)^T`` shorthand)."""
        return self + self.T

    @classmethod
    def block(cls, rows):
        """Assemble a symmetric block matrix.

        ``rows`` is a square grid; entries below the diagonal may be
        ``None`` (mirrored from above), entries above may be ``0``/``None``
        for zero blocks.  Block sizes come from the diagonal.
        """
        k = len(rows)
        sizes = []
        for i in range(k):
            d = rows[i][i]
            if not isinstance(d, MatrixExpr):
                d = np.atleast_2d(np.asarray(d, dtype=float))
            if d.shape[0] != d.shape[1]:
                raise ShapeError(f"diagonal block {i} is not square")
            sizes.append(d.shape[0])
        offs = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offs[-1])
        out = cls.zeros(total, total)
        for i in range(k):
            for j in range(i, k):
                b = rows[i][j]
                if b is None or (not isinstance(b, MatrixExpr) and np.isscalar(b) and b == 0):
                    continue
                b = cls.lift(b)
                if b.shape != (sizes[i], sizes[j]):
                    raise ShapeError(f"block ({i},{j}) has shape {b.shape}, expected {(sizes[i], sizes[j])}")
                Ei = np.zeros((total, sizes[i]))
                Ei[offs[i]:offs[i + 1]] = np.eye(sizes[i])
                Ej = np.zeros((total, sizes[j]))
                Ej[offs[j]:offs[j + 1]] = np.eye(sizes[j])
                if i == j:
                    out = out + Ei @ b @ Ei.T
                else:
                    piece = Ei @ b @ Ej.T
                    out = out + piece + piece.T
        out.blocks = sizes
        return out

    def variables(self):
        seen = {}
        for t in self.terms:
            seen.setdefault(t.var.name, t.var)
        return list(seen.values())

    def evaluate(self, assignment):
        E = self.const.copy()
        for t in self.terms:
            E = E + t.value(np.asarray(assignment[t.var.name], dtype=float).reshape(t.var.shape))
        return E

    def evaluate_symmetric(self, assignment, atol=1e-10):
        E = self.evaluate(assignment)
        defect = float(np.max(np.abs(E - E.T), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(E), initial=0.0)))
        if defect > atol * scale:
            raise ShapeError(f"expression is not symmetric (defect {defect:.3e})")
        return 0.5 * (E + E.T), defect

    def coefficients(self, layout):
        """``(F0, F)`` with ``E(y) = F0 + sum_j y_j F[j]`` over the problem layout."""
        r, c = self.shape
        F = np.zeros((layout.size, r, c))
        for t in self.terms:
            start, stop = layout.slices[t.var.name]
            basis = t.var.basis()
            if t.transpose:
                basis = basis.transpose(0, 2, 1)
            F[start:stop] += np.einsum("ij,kjl,lm->kim", t.left, basis, t.right)
        return self.const.copy(), F

    def to_dict(self):
        return {
            "const": self.const.tolist(),
            "terms": [
                {"left": t.left.tolist(), "var": t.var.name, "right": t.right.tolist(), "transpose": t.transpose}
                for t in self.terms
            ],
            "blocks": self.blocks,
        }

    @classmethod
    def from_dict(cls, d, variables):
        terms = [
            Term(np.atleast_2d(np.array(t["left"], dtype=float)), variables[t["var"]],
                 np.atleast_2d(np.array(t["right"], dtype=float)), bool(t["transpose"]))
            for t in d["terms"]
        ]
        return cls(np.array(d["const"], dtype=float), terms, d.get("blocks"))


@dataclass
class Constraint:
    expr: MatrixExpr
    sense: str = NEG
    name: str = ""


class _Layout:
    def __init__(self, variables):
        self.slices = {}
        k = 0
        for v in variables:
            self.slices[v.name] = (k, k + v.size)
            k += v.size
        self.size = k
        self.variables = list(variables)

    def unpack(self, y):
        return {v.name: v.unpack(y[slice(*self.slices[v.name])]) for v in self.variables}

    def pack(self, assignment):
        y = np.zeros(self.size)
        for v in self.variables:
            y[slice(*self.slices[v.name])] = v.pack(assignment[v.name])
        return y


class FeasibilityProblem:
    MAX_SCALARS = 5000

    def __init__(self, variables=(), constraints=()):
        self.variables = []
        self._by_name = {}
        self.constraints = []
        for v in variables:
            self.add_variable(v)
        for c in constraints:
            if isinstance(c, Constraint):
                self.add_constraint(c.expr, c.sense, c.name)
            else:
                self.add_constraint(*c)

    def add_variable(self, var: DecisionVariable):
        if var.name in self._by_name:
            raise ValueError(f"duplicate variable name {var.name!r}")
        self.variables.append(var)
        self._by_name[var.name] = var
        return MatrixExpr.of(var)

    def symmetric(self, name, d, positive=True):
        return self.add_variable(DecisionVariable.symmetric(name, d, positive))

    def scalar(self, name, positive=True):
        return self.add_variable(DecisionVariable.scalar(name, positive))

    def matrix(self, name, p, q):
        return self.add_variable(DecisionVariable.matrix(name, p, q))

    def add_constraint(self, expr, sense=NEG, name=""):
        if sense not in (NEG, POS):
            raise ValueError(f"unknown sense {sense!r}")
        if expr.shape[0] != expr.shape[1]:
            raise ShapeError("constraint expressions must be square")
        for v in expr.variables():
            if self._by_name.get(v.name) is not v:
                raise ValueError(f"constraint references undeclared variable {v.name!r}")
        self.constraints.append(Constraint(expr, sense, name or f"c{len(self.constraints)}"))

    def variable(self, name):
        return self._by_name[name]

    @property
    def size(self):
        return sum(v.size for v in self.variables)

    def all_constraints(self):
        """User constraints followed by one positivity constraint per positive variable."""
        out = list(self.constraints)
        for v in self.variables:
            if v.positive:
                out.append(Constraint(MatrixExpr.of(v), POS, f"{v.name} > 0"))
        return out

    def validate(self):
        if not self.constraints:
            raise ValueError("problem has no constraints")
        if self.size > self.MAX_SCALARS:
            raise ValueError(f"problem has {self.size} scalar unknowns (limit {self.MAX_SCALARS})")

    def to_dict(self):
        return {
            "variables": [v.to_dict() for v in self.variables],
            "constraints": [{"name": c.name, "sense": c.sense, "expr": c.expr.to_dict()} for c in self.constraints],
        }

    @classmethod
    def from_dict(cls, d):
        vars_ = [DecisionVariable(v["name"], v["kind"], tuple(v["shape"]), bool(v["positive"])) for v in d["variables"]]
        prob = cls(vars_)
        for c in d["constraints"]:
            prob.add_constraint(MatrixExpr.from_dict(c["expr"], prob._by_name), c["sense"], c["name"])
        return prob


@dataclass
class FeasibilitySolution:
    status: str  # "Feasible", "Infeasible", "MaxIterations"
    assignment: dict
    margin: float
    iterations: int
    t_best: float = np.nan
    lower_bound: float = -np.inf
    message: str = ""

    @property
    def feasible(self):
        return self.status == "Feasible"

    def to_dict(self):
        return {
            "status": self.status,
            "margin": self.margin,
            "iterations": self.iterations,
            "t_best": self.t_best,
            "lower_bound": self.lower_bound if np.isfinite(self.lower_bound) else None,
            "message": self.message,
            "assignment": {k: np.asarray(v).tolist() for k, v in self.assignment.items()},
        }

    @classmethod
    def from_dict(cls, d):
        lb = d.get("lower_bound")
        return cls(
            d["status"],
            {k: np.array(v, dtype=float) for k, v in d["assignment"].items()},
            float(d["margin"]),
            int(d["iterations"]),
            float(d.get("t_best", np.nan)),
            -np.inf if lb is None else float(lb),
            d.get("message", ""),
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class ResidualRow:
    name: str
    sense: str
    extreme: float  # lambda_max for NEG, lambda_min for POS
    symmetry_defect: float
    passed: bool

    @property
    def margin(self):
        return -self.extreme if self.sense == NEG else self.extreme


@dataclass
class ResidualReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    @property
    def margin(self):
        return min((r.margin for r in self.rows), default=np.inf)

    def to_table(self):
        w = max([len(r.name) for r in self.rows] + [10])
        lines = [f"{'constraint':<{w}}  {'sense':<5}  {'eig':>13}  {'asym':>9}  result"]
        for r in self.rows:
            tag = "<0" if r.sense == NEG else ">0"
            lines.append(
                f"{r.name:<{w}}  {tag:<5}  {r.extreme:>13.6e}  {r.symmetry_defect:>9.1e}  {'pass' if r.passed else 'FAIL'}"
            )
        lines.append(f"margin = {self.margin:.6e}  ->  {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def check_residuals(problem: FeasibilityProblem, assignment) -> ResidualReport:
    """Eigenvalue test of every constraint (and variable positivity), strict with tolerance 0."""
    for v in problem.variables:
        if v.name not in assignment:
            raise ShapeError(f"assignment misses variable {v.name!r}")
        val = np.asarray(assignment[v.name], dtype=float)
        if val.size != v.shape[0] * v.shape[1]:
            raise ShapeError(f"variable {v.name!r} expects shape {v.shape}, got {val.shape}")
    rows = []
    for c in problem.all_constraints():
        E, defect = c.expr.evaluate_symmetric(assignment)
        eig = np.linalg.eigvalsh(E)
        ext = float(eig[-1] if c.sense == NEG else eig[0])
        ok = ext < 0 if c.sense == NEG else ext > 0
        rows.append(ResidualRow(c.name, c.sense, ext, defect, bool(ok)))
    return ResidualReport(rows)


class _Compiled:
    """Normalized slack matrices ``G_k(z) = t I - s_k E_k(y) / scale_k``."""

    def __init__(self, problem):
        self.layout = _Layout(problem.variables)
        self.constraints = problem.all_constraints()
        ny = self.layout.size
        self.ny = ny
        self.G0, self.Gy, self.scale = [], [], []
        for c in self.constraints:
            F0, F = c.expr.coefficients(self.layout)
            F0 = 0.5 * (F0 + F0.T)
            F = 0.5 * (F + F.transpose(0, 2, 1))
            s = 1.0 if c.sense == NEG else -1.0
            scale = float(np.sqrt(np.sum(F0 ** 2) + np.sum(F ** 2)))
            scale = scale if scale > 0 else 1.0
            self.G0.append(-s * F0 / scale)
            self.Gy.append(-s * F / scale)
            self.scale.append(scale)
        self.degree = sum(g.shape[0] for g in self.G0) + 1

    def slack(self, k, y, t):
        G = self.G0[k] + np.tensordot(y, self.Gy[k], axes=1)
        return G + t * np.eye(G.shape[0])

    def max_violation(self, y):
        """max_k lambda_max(s_k E_k / scale_k), i.e. the smallest feasible t."""
        return max(float(np.linalg.eigvalsh(-self.slack(k, y, 0.0))[-1]) for k in range(len(self.G0)))


def _barrier(comp, z, R2, tau, need_derivs=True):
    y, t = z[:-1], z[-1]
    ny = comp.ny
    val = tau * t
    rest = R2 - y @ y
    if rest <= 0:
        return np.inf, None, None
    val -= np.log(rest)
    if need_derivs:
        g = np.zeros(ny + 1)
        H = np.zeros((ny + 1, ny + 1))
        g[-1] = tau
        g[:ny] += 2 * y / rest
        H[:ny, :ny] += 2 * np.eye(ny) / rest + 4 * np.outer(y, y) / rest ** 2
    for k in range(len(comp.G0)):
        G = comp.slack(k, y, t)
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            return np.inf, None, None
        val -= 2 * np.sum(np.log(np.diag(L)))
        if need_derivs:
            d = G.shape[0]
            M = np.concatenate([comp.Gy[k], np.eye(d)[None]], axis=0)
            Li = linalg.solve_triangular(L, np.eye(d), lower=True)
            Wk = Li @ M @ Li.T
            flat = Wk.reshape(ny + 1, -1)
            g -= np.trace(Wk, axis1=1, axis2=2)
            H += flat @ flat.T
    if not need_derivs:
        return val, None, None
    return val, g, H


def _newton_direction(H, g, rng):
    n = len(g)
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    for attempt in range(4):
        reg = 0.0 if attempt == 0 else scale * 10.0 ** (-14 + 3 * attempt)
        Hr = H + reg * np.diag(1.0 + 1e-3 * rng.random(n)) if reg else H
        try:
            c = linalg.cho_factor(Hr)
            return -linalg.cho_solve(c, g)
        except (linalg.LinAlgError, ValueError):
            continue
    raise ConditioningError("Newton system is numerically singular")


MAX_CENTERING_STEPS = 50  # stalled centering moves on to the next barrier parameter


def solve_feasibility(problem: FeasibilityProblem, tol=1e-7, max_iter=500, seed=0, mu=10.0, rel_gap=0.1):
    """Decide strict feasibility and return a max-margin certificate.

    Constraints are normalized internally, so ``t`` is scale-free.  A point
    counts as Feasible only when its margin in the original (unnormalized)
    constraints is at least ``tol``.  Infeasible when the certified lower
    bound ``t - m/tau`` rules out such a margin (it exceeds
    ``-tol / max_k scale_k``), or when the path converges (gap closed or
    50 Newton steps without progress) at a point whose verified margin is
    still below ``tol``.
    """
    problem.validate()
    rng = np.random.default_rng(seed)
    comp = _Compiled(problem)
    y0 = np.concatenate([v.initial() for v in problem.variables]) if problem.variables else np.zeros(0)
    R2 = (10.0 * max(1.0, float(np.linalg.norm(y0)))) ** 2
    t0 = comp.max_violation(y0) + 1.0
    z = np.concatenate([y0, [t0]])
    tau = comp.degree / max(1.0, abs(t0))
    iters, stall, best_t = 0, 0, np.inf
    lower = -np.inf
    # a margin of tol in every original constraint means t <= -tol / scale_k for all k
    t_reach = -tol / max(comp.scale)
    status, message = "MaxIterations", "iteration limit reached"

    def finish(status, message):
        y = z[:-1]
        assignment = comp.layout.unpack(y)
        margin = check_residuals(problem, assignment).margin
        return FeasibilitySolution(status, assignment, float(margin), iters, float(z[-1]), lower, message)

    def settle(reason):
        sol = finish("Feasible", reason)
        if sol.margin >= tol:
            return sol
        return finish("Infeasible", reason + "; verified margin below tolerance")

    while iters < max_iter:
        # centering
        val, g, H = _barrier(comp, z, R2, tau)
        centered, steps = False, 0
        while iters < max_iter and steps < MAX_CENTERING_STEPS:
            dz = _newton_direction(H, g, rng)
            dec = -float(g @ dz)
            if dec / 2 <= 1e-10:
                centered = True
                break
            steps += 1
            step, accepted = 1.0, False
            for _ in range(60):
                znew = z + step * dz
                vnew, _, _ = _barrier(comp, znew, R2, tau, need_derivs=False)
                if vnew <= val - 0.25 * step * dec:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            z = znew
            iters += 1
            if z[-1] < best_t - max(1e-3 * tol, 1e-12 * abs(best_t)):
                best_t = z[-1]
                stall = 0
            else:
                stall += 1
            val, g, H = _barrier(comp, z, R2, tau)
            if stall >= 50 and comp.degree / tau <= tol:
                return settle("no progress for 50 consecutive steps")
        t = float(z[-1])
        gap = comp.degree / tau
        if centered:  # t - m/tau bounds t* only on the central path
            lower = max(lower, t - gap)
        if lower >= 0:
            return finish("Infeasible", "certified: t* >= 0")
        if lower >= t_reach:
            return finish("Infeasible", f"certified: no point in the ball reaches margin {tol:g}")
        if t < 0 and gap <= rel_gap * abs(t):
            sol = finish("Feasible", "max-margin point reached")
            if sol.margin >= tol:
                return sol
        if gap <= 1e-3 * tol:
            return settle("duality gap closed")
        tau *= mu
    return finish(status, message)


__all__ = [
    "DecisionVariable",
    "MatrixExpr",
    "FeasibilityProblem",
    "FeasibilitySolution",
    "ResidualReport",
    "solve_feasibility",
    "check_residuals",
    "NEG",
    "POS",
]
