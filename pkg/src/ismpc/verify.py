"""Independent re-check of a stored controller against its PWA model.

Nothing here trusts the solver: LMI residuals are recomputed by
eigenvalues from the stored certificates, the switching-gain offsets are
recomputed from the bounds, and the nominal descent property is checked
by simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lmi import check_residuals
from .palm import PwaModel
from .sim import SimConfig, simulate_nominal
from .synthesis import ControllerDesign, NominalDesign, assemble_lemma1, assemble_theorem2

COND_LIMIT = 1e12


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))

    def to_text(self):
        w = max([len(c.name) for c in self.checks] + [8])
        lines = [f"{c.name:<{w}}  {'pass' if c.passed else 'FAIL'}  {c.detail}" for c in self.checks]
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def lemma1_assignment(design: ControllerDesign):
    """``W``, ``Y_j = Kbar_j W`` and ``lam_i`` from a stored design."""
    W = design.W
    out = {"W": W}
    for j, k in enumerate(design.K):
        out[f"Y{j}"] = k @ W
    for i, v in enumerate(design.certificates["lam"], start=1):
        out[f"lam{i}"] = np.array([[v]])
    return out


def theorem2_assignment(design: ControllerDesign):
    out = {"P": design.P}
    for k, v in design.certificates["eta"].items():
        out[k] = np.array([[v]])
    return out


def ellipsoid_initial_states(model: PwaModel, W, count, seed=0, fraction=0.9):
    """Points on ``xbar^T W^-1 xbar = c`` with the whole sublevel set inside the domain box.

    The ellipsoid reaches ``sqrt(c W_kk)`` along axis ``k``, so
    ``c = fraction * min_k r_k^2 / W_kk`` with ``r_k`` the distance from the
    origin to the nearer face.
    """
    W = np.asarray(W, dtype=float)
    r = np.minimum(-model.lo, model.hi)
    c = fraction * float(np.min(r ** 2 / np.diag(W)))
    Winv = np.linalg.inv(W)
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((count, model.dim))
    q = np.einsum("ij,jk,ik->i", pts, Winv, pts)
    return pts * np.sqrt(c / q)[:, None]


def max_relative_increase(V):
    """Largest ``V[k+1] - V[k]`` relative to ``V[0]``."""
    V = np.asarray(V, dtype=float)
    if len(V) < 2 or V[0] == 0:
        return 0.0
    return float(np.max(np.diff(V)) / V[0])


def nominal_descent(model: PwaModel, design: ControllerDesign | NominalDesign, runs=20, seed=0, config=None,
                    tol=1e-9):
    """Largest relative increase of ``xbar^T W^-1 xbar`` over ``runs`` nominal trajectories."""
    config = config or SimConfig(h=1e-3, T=5.0)
    worst = -np.inf
    for x0 in ellipsoid_initial_states(model, design.W, runs, seed):
        tr = simulate_nominal(model, design, config, x0)
        worst = max(worst, max_relative_increase(tr.V))
    return worst, worst <= tol


def verify_design(design: ControllerDesign, model: PwaModel, *, runs=20, seed=0, tol=1e-9):
    """Every post-synthesis check; see ``VerificationReport.to_text``."""
    rep = VerificationReport()
    same = len(design.K) == model.l + 1 and (design.n, design.m) == (model.n, model.m)
    rep.add("shapes", same, f"{len(design.K)} gain blocks, {model.l + 1} regions")
    if not same:
        return rep

    cond = float(np.linalg.cond(design.S_u))
    rep.add("S_u nonsingular", np.isfinite(cond) and cond < COND_LIMIT, f"cond = {cond:.3e}")

    norm_sx = float(np.linalg.norm(design.S_x, 2))
    expect = np.array([0.0] + [design.bounds.eps_g * norm_sx] * model.l)
    err = float(np.max(np.abs(np.asarray(design.beta) - expect)))
    rep.add("beta offsets", err <= 1e-12 * max(1.0, float(np.max(expect))), f"max |beta - eps_g ||S_x||| = {err:.2e}")
    rep.add("gamma positive", design.gamma > 0, f"gamma = {design.gamma:.6g}")

    if design.P is not None:
        P = design.P
        rep.add("surface from P", np.allclose(design.S_bar, P[model.n:, :], rtol=1e-9, atol=1e-12),
                "Sbar = R2^T P")

    if design.certificates is None or design.W is None or design.P is None:
        rep.add("LMI certificates", False, "design carries no W, P or multipliers")
    else:
        nominal = NominalDesign(design.K, design.D)
        r1 = check_residuals(assemble_lemma1(model, design.D[1:]), lemma1_assignment(design))
        rep.add("nominal LMIs", r1.passed, f"margin = {r1.margin:.3e}")
        r2 = check_residuals(assemble_theorem2(model, nominal, design.bounds), theorem2_assignment(design))
        rep.add("surface LMIs", r2.passed, f"margin = {r2.margin:.3e}")

    if design.W is not None:
        worst, ok = nominal_descent(model, design, runs=runs, seed=seed, tol=tol)
        rep.add("nominal descent", ok, f"{runs} runs, max relative increase of V = {worst:.2e}")
    else:
        rep.add("nominal descent", False, "design carries no W")
    return rep


__all__ = [
    "Check",
    "VerificationReport",
    "lemma1_assignment",
    "theorem2_assignment",
    "ellipsoid_initial_states",
    "max_relative_increase",
    "nominal_descent",
    "verify_design",
]
