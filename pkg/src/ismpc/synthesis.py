"""Controller synthesis: nominal gains, offsets and the integral sliding surface.

Notation (``N = n + m``, ``xbar = [x; u]``)::

    R1 = [I_n; 0],  R2 = [0; I_m],  Abar_i = [A_i, B_i],  Kbar_i = [F_i, G_i]
    Cbar_i = [C_i; D_i],  Sbar = [S_x, S_u] = R2^T P

The nominal closed loop is ``xbar' = (R1 Abar_i + R2 Kbar_i) xbar + Cbar_i``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .errors import NoFeasibleOffsets, ShapeError, SynthesisFailed
from .lmi import FeasibilityProblem, MatrixExpr, solve_feasibility
from .palm import (
    ErrorBounds,
    NonlinearSystem,
    PartitionSpec,
    PwaModel,
    build_pwa,
    estimate_error_bounds,
)

log = logging.getLogger(__name__)


def selectors(n, m):
    R1 = np.vstack([np.eye(n), np.zeros((m, n))])
    R2 = np.vstack([np.zeros((n, m)), np.eye(m)])
    return R1, R2


@dataclass
class NominalDesign:
    K: list  # Kbar_j, m x N
    D: list  # D_i, m-vectors, D[0] = 0
    W: np.ndarray | None = None
    Y: list | None = None
    lam: list | None = None
    margin: float = np.nan

    def __post_init__(self):
        self.K = [np.atleast_2d(np.asarray(k, dtype=float)) for k in self.K]
        self.D = [np.asarray(d, dtype=float).reshape(-1) for d in self.D]
        if self.D and np.any(self.D[0] != 0):
            raise ValueError("D_0 must be zero")

    def closed_loop(self, model: PwaModel, i):
        """``(R1 Abar_i + R2 Kbar_i, Cbar_i)``."""
        R1, R2 = selectors(model.n, model.m)
        M = R1 @ model.abar(i) + R2 @ self.K[i]
        c = np.concatenate([model.submodels[i].C, self.D[i]])
        return M, c


@dataclass
class SurfaceDesign:
    P: np.ndarray
    n: int
    m: int
    eta: dict = field(default_factory=dict)
    margin: float = np.nan

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)

    @property
    def S_bar(self):
        _, R2 = selectors(self.n, self.m)
        return R2.T @ self.P

    @property
    def S_x(self):
        return self.S_bar[:, : self.n]

    @property
    def S_u(self):
        return self.S_bar[:, self.n:]


@dataclass
class ControllerDesign:
    """Everything the practical controller and its surface need at run time."""

    n: int
    m: int
    K: list
    D: list
    S_x: np.ndarray
    S_u: np.ndarray
    gamma: float
    beta: list
    bounds: ErrorBounds
    P: np.ndarray | None = None
    W: np.ndarray | None = None
    system: str = ""
    model: PwaModel | None = None  # needed by the surface integral at run time
    certificates: dict | None = None  # LMI multipliers: {"lam": [...], "eta": {...}}

    def __post_init__(self):
        self.K = [np.atleast_2d(np.asarray(k, dtype=float)) for k in self.K]
        self.D = [np.asarray(d, dtype=float).reshape(-1) for d in self.D]
        self.S_x = np.atleast_2d(np.asarray(self.S_x, dtype=float))
        self.S_u = np.atleast_2d(np.asarray(self.S_u, dtype=float))
        self.beta = [float(b) for b in self.beta]
        if self.P is not None:
            self.P = np.asarray(self.P, dtype=float)
        if self.W is not None:
            self.W = np.asarray(self.W, dtype=float)
        if self.certificates is not None:
            self.certificates = {
                "lam": [float(v) for v in self.certificates.get("lam", [])],
                "eta": {k: float(v) for k, v in self.certificates.get("eta", {}).items()},
            }
        if self.S_x.shape != (self.m, self.n) or self.S_u.shape != (self.m, self.m):
            raise ShapeError("surface matrices have the wrong shape")
        if len(self.K) != len(self.D) or len(self.beta) != len(self.K):
            raise ShapeError("per-region lists must have equal length")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def S_bar(self):
        return np.hstack([self.S_x, self.S_u])

    @property
    def F(self):
        return [k[:, : self.n] for k in self.K]

    @property
    def G(self):
        return [k[:, self.n:] for k in self.K]

    @classmethod
    def from_parts(cls, nominal: NominalDesign, surface: SurfaceDesign, bounds: ErrorBounds, gamma, system="",
                   model=None):
        norm_sx = float(np.linalg.norm(surface.S_x, 2))
        beta = [0.0] + [bounds.eps_g * norm_sx] * (len(nominal.K) - 1)
        cert = None
        if nominal.lam is not None:
            cert = {"lam": list(nominal.lam), "eta": dict(surface.eta)}
        return cls(
            surface.n, surface.m, nominal.K, nominal.D, surface.S_x, surface.S_u, float(gamma), beta,
            bounds, P=surface.P, W=nominal.W, system=system, model=model, certificates=cert,
        )

    def with_bounds(self, bounds, gamma=None):
        """Same gains and surface under new error bounds (beta recomputed)."""
        norm_sx = float(np.linalg.norm(self.S_x, 2))
        beta = [0.0] + [bounds.eps_g * norm_sx] * (len(self.K) - 1)
        return replace(self, bounds=bounds, beta=beta, gamma=self.gamma if gamma is None else float(gamma))

    def to_dict(self):
        d = {
            "system": self.system,
            "n": self.n,
            "m": self.m,
            "K": [k.tolist() for k in self.K],
            "D": [d.tolist() for d in self.D],
            "S_bar": self.S_bar.tolist(),
            "S_x": self.S_x.tolist(),
            "S_u": self.S_u.tolist(),
            "gamma": self.gamma,
            "beta": list(self.beta),
            "bounds": self.bounds.to_dict(),
            "P": None if self.P is None else self.P.tolist(),
            "W": None if self.W is None else self.W.tolist(),
            "certificates": self.certificates,
            "model": None if self.model is None else self.model.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d):
        b = d["bounds"]
        return cls(
            int(d["n"]), int(d["m"]), d["K"], d["D"], d["S_x"], d["S_u"], float(d["gamma"]), d["beta"],
            ErrorBounds(b["eps_f0"], b["eps_f"], b["eps_g"]),
            P=d.get("P"), W=d.get("W"), system=d.get("system", ""),
            model=None if d.get("model") is None else PwaModel.from_dict(d["model"]),
            certificates=d.get("certificates"),
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


# -- Lemma-1 style nominal design -------------------------------------------


def assemble_lemma1(model: PwaModel, D):
    """Nominal-design LMIs in ``W > 0``, ``Y_j`` and ``lambda_i > 0``.

    Origin region:  ``R1 Abar_0 W + R2 Y_0 + (.)^T < 0``.
    Region i >= 1::

        [ Omega_i - lam_i Cbar_i Cbar_i^T    W Q_i^T - lam_i Cbar_i f_i^T ]
        [ *                                  lam_i (I - f_i f_i^T)        ]  < 0

    with ``Omega_i = R1 Abar_i W + R2 Y_i + (.)^T``.
    """
    n, m, N = model.n, model.m, model.dim
    D = [np.asarray(d, dtype=float).reshape(-1) for d in D]
    if len(D) != model.l:
        raise ShapeError(f"need {model.l} offsets (regions 1..l), got {len(D)}")
    for d in D:
        if d.shape != (m,):
            raise ShapeError(f"offsets must have length m = {m}")
    R1, R2 = selectors(n, m)
    prob = FeasibilityProblem()
    W = prob.symmetric("W", N)
    Y = [prob.matrix(f"Y{j}", m, N) for j in range(model.l + 1)]
    lam = [None] + [prob.scalar(f"lam{i}") for i in range(1, model.l + 1)]

    def omega(i):
        return (R1 @ model.abar(i) @ W + R2 @ Y[i]).sym()

    prob.add_constraint(omega(0), name="origin")
    for i in range(1, model.l + 1):
        reg = model.regions[i]
        cbar = np.concatenate([model.submodels[i].C, D[i - 1]]).reshape(N, 1)
        Q, f = reg.Q, np.array([[reg.f]])
        block = MatrixExpr.block([
            [omega(i) - lam[i].times(cbar @ cbar.T), W @ Q.T - lam[i].times(cbar @ f.T)],
            [None, lam[i].times(np.eye(1) - f @ f.T)],
        ])
        prob.add_constraint(block, name=f"region{i}")
    return prob


def nominal_from_solution(model: PwaModel, D, sol) -> NominalDesign:
    W = sol.assignment["W"]
    Winv = np.linalg.inv(W)
    Y = [sol.assignment[f"Y{j}"] for j in range(model.l + 1)]
    K = [y @ Winv for y in Y]
    lam = [float(sol.assignment[f"lam{i}"].ravel()[0]) for i in range(1, model.l + 1)]
    Ds = [np.zeros(model.m)] + [np.asarray(d, dtype=float).reshape(-1) for d in D]
    return NominalDesign(K, Ds, W=W, Y=Y, lam=lam, margin=sol.margin)


@dataclass
class GridSpec:
    """Offset search box: ``ranges[k] = (lo, hi)`` per free offset component.

    ``ties`` maps region indices onto the free components with a sign,
    e.g. ``{1: (0, +1), 2: (0, -1)}`` for ``D_2 = -D_1`` (scalar input).
    Without ties every region gets its own ``m`` components.
    """

    ranges: list
    points_per_axis: int = 5
    ties: dict | None = None
    max_refinements: int = 3
    max_points: int = 64  # LMI solves per search, across refinements

    def offsets(self, point, l, m):
        if self.ties is None:
            return [np.asarray(point[(i - 1) * m: i * m]) for i in range(1, l + 1)]
        out = []
        for i in range(1, l + 1):
            k, sgn = self.ties[i]
            out.append(sgn * np.asarray(point[k * m:(k + 1) * m]))
        return out


def grid_points(ranges, points_per_axis, seed=0):
    """Nodes of the tensor grid, yielded lazily in a low-discrepancy order.

    The center node comes first (odd ``points_per_axis``).  Then scrambled
    Sobol samples are snapped to the nearest node; unseen nodes are yielded
    first-come.  Small grids are completed by enumeration so
    every node is eventually visited.
    """
    dim = len(ranges)
    if dim == 0:
        yield np.zeros(0)
        return
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    k = points_per_axis

    def node(idx):
        if k == 1:
            return 0.5 * (lo + hi)
        return lo + (hi - lo) * np.asarray(idx) / (k - 1)

    total = k ** dim
    seen = set()
    if k % 2 == 1:
        # the box center (zero offsets for symmetric ranges) goes first
        mid = (k - 1) // 2
        seen.add((mid,) * dim)
        yield node((mid,) * dim)
    sob = qmc.Sobol(dim, scramble=True, seed=seed)
    for _ in range(8):
        for u in sob.random(256):
            idx = tuple(int(v) for v in np.rint(u * (k - 1)))
            if idx not in seen:
                seen.add(idx)
                yield node(idx)
        if len(seen) == total:
            return
    if total <= 1 << 16:
        for idx in itertools.product(range(k), repeat=dim):
            if idx not in seen:
                seen.add(idx)
                yield node(idx)


def default_grid(model: PwaModel, points_per_axis=5):
    cmax = max([float(np.linalg.norm(s.C)) for s in model.submodels[1:]] + [0.0])
    r = 2.0 * cmax if cmax > 0 else 1.0
    return GridSpec([(-r, r)] * (model.l * model.m), points_per_axis)


def _origin_feasible(model: PwaModel, tol, max_iter, seed):
    """The origin inequality does not involve any offset; check it alone."""
    R1, R2 = selectors(model.n, model.m)
    prob = FeasibilityProblem()
    W = prob.symmetric("W", model.dim)
    Y0 = prob.matrix("Y0", model.m, model.dim)
    prob.add_constraint((R1 @ model.abar(0) @ W + R2 @ Y0).sym(), name="origin")
    return solve_feasibility(prob, tol=tol, max_iter=max_iter, seed=seed).feasible


def sample_offsets(model: PwaModel, grid: GridSpec | None = None, *, tol=1e-7, max_iter=500, seed=0):
    """Grid search over the offsets; the first feasible nominal design wins.

    The grid is densified (points per axis roughly doubled) up to
    ``grid.max_refinements`` times, with at most ``grid.max_points`` LMI
    solves in total, before giving up.
    """
    if grid is None:
        grid = default_grid(model)
    if not _origin_feasible(model, tol, max_iter, seed):
        raise NoFeasibleOffsets("origin region cannot be stabilized by any offsets")
    tried = set()
    ppa = grid.points_per_axis
    for level in range(grid.max_refinements + 1):
        for p in grid_points(grid.ranges, ppa, seed=seed):
            key = tuple(np.round(p, 12))
            if key in tried:
                continue
            if len(tried) >= grid.max_points:
                raise NoFeasibleOffsets(f"no feasible offsets within {grid.max_points} grid points")
            tried.add(key)
            D = grid.offsets(p, model.l, model.m)
            prob = assemble_lemma1(model, D)
            sol = solve_feasibility(prob, tol=tol, max_iter=max_iter, seed=seed)
            if sol.feasible:
                log.debug("nominal design feasible at D=%s (margin %.3e)", p, sol.margin)
                return nominal_from_solution(model, D, sol)
        if len(grid.ranges) == 0:
            break
        ppa = 2 * ppa - 1
    raise NoFeasibleOffsets(f"no feasible offsets after {len(tried)} grid points")


# -- surface design ------------------------------------------------------------


def assemble_theorem2(model: PwaModel, nominal: NominalDesign, bounds: ErrorBounds | None = None):
    """Sliding-motion LMIs in ``P > 0``, ``eta_0`` and ``eta_i1..3 > 0``.

    Region i >= 1 (block sizes N, n, n, 1, m)::

        [ Lam_i + eta1 ef^2 I - eta3 Q^T Q   P R1            P R1            P Cbar_i - eta3 Q^T f       P R2      ]
        [ *                                  R1^T P R1 - eta1 I  0           0                           0         ]
        [ *                                  *               R1^T P R1 - eta2 I  0                       0         ]
        [ *                                  *               *               eta2 eg^2 - eta3 (f^2 - 1)  0         ]
        [ *                                  *               *               *                   -1/2 R2^T P R2    ]

    Origin region (block sizes N, n, m)::

        [ Lam_0 + eta0 ef0^2 I   P R1               P R2       ]
        [ *                      R1^T P R1 - eta0 I  0          ]
        [ *                      *                  -R2^T P R2  ]

    with ``Lam_i = P (R1 Abar_i + R2 Kbar_i) + (.)^T``.
    """
    bounds = model.bounds if bounds is None else bounds
    n, m, N = model.n, model.m, model.dim
    if len(nominal.K) != model.l + 1 or len(nominal.D) != model.l + 1:
        raise ShapeError("nominal design does not match the model's region count")
    R1, R2 = selectors(n, m)
    prob = FeasibilityProblem()
    P = prob.symmetric("P", N)
    eta0 = prob.scalar("eta0")
    I_N, I_n = np.eye(N), np.eye(n)

    def lam_(i):
        M, _ = nominal.closed_loop(model, i)
        return (P @ M).sym()

    R1PR1 = R1.T @ P @ R1
    R2PR2 = R2.T @ P @ R2
    origin = MatrixExpr.block([
        [lam_(0) + eta0.times(bounds.eps_f0 ** 2 * I_N), P @ R1, P @ R2],
        [None, R1PR1 - eta0.times(I_n), 0],
        [None, None, -R2PR2],
    ])
    prob.add_constraint(origin, name="origin")
    for i in range(1, model.l + 1):
        e1 = prob.scalar(f"eta{i}_1")
        e2 = prob.scalar(f"eta{i}_2")
        e3 = prob.scalar(f"eta{i}_3")
        reg = model.regions[i]
        Q, f = reg.Q, reg.f
        _, cbar = nominal.closed_loop(model, i)
        cbar = cbar.reshape(N, 1)
        blk = MatrixExpr.block([
            [lam_(i) + e1.times(bounds.eps_f ** 2 * I_N) - e3.times(Q.T @ Q), P @ R1, P @ R1,
             P @ cbar - e3.times(Q.T * f), P @ R2],
            [None, R1PR1 - e1.times(I_n), 0, 0, 0],
            [None, None, R1PR1 - e2.times(I_n), 0, 0],
            [None, None, None, e2 * bounds.eps_g ** 2 - e3 * (f * f - 1.0), 0],
            [None, None, None, None, -0.5 * R2PR2],
        ])
        prob.add_constraint(blk, name=f"region{i}")
    return prob


def surface_from_solution(model: PwaModel, sol) -> SurfaceDesign:
    """Scale a Feasible Theorem-2 point to ``||P||_2 = 1``.

    Every block is homogeneous of degree one in ``(P, eta)``, so a common
    positive scaling keeps each inequality (and scales the margin).
    """
    P = sol.assignment["P"]
    scale = float(np.linalg.norm(P, 2))
    P = 0.5 * (P + P.T) / scale
    eta = {k: float(np.ravel(v)[0]) / scale for k, v in sol.assignment.items() if k.startswith("eta")}
    return SurfaceDesign(P, model.n, model.m, eta, sol.margin / scale)


def solve_surface(model: PwaModel, nominal: NominalDesign, bounds: ErrorBounds | None = None, *,
                  tol=1e-7, max_iter=500, seed=0):
    """Return ``(SurfaceDesign or None, FeasibilitySolution)``."""
    sol = solve_feasibility(assemble_theorem2(model, nominal, bounds), tol=tol, max_iter=max_iter, seed=seed)
    if not sol.feasible:
        return None, sol
    return surface_from_solution(model, sol), sol


def default_gamma(model: PwaModel, surface: SurfaceDesign, bounds: ErrorBounds | None = None):
    """``0.1 ||S_x|| diam max(eps_f0, eps_f)``, floored at 1e-3."""
    bounds = model.bounds if bounds is None else bounds
    g = 0.1 * float(np.linalg.norm(surface.S_x, 2)) * model.diameter * max(bounds.eps_f0, bounds.eps_f)
    return max(g, 1e-3)


@dataclass
class DesignOptions:
    bounds: ErrorBounds | None = None  # None: estimate from samples
    grid: GridSpec | None = None  # None: default_grid(model)
    samples_per_region: int = 1024
    l_max: int = 32
    gamma: float | None = None
    tol: float = 1e-7
    max_iter: int = 500
    seed: int = 0


@dataclass
class Attempt:
    l: int
    stage: str  # "nominal", "surface" or "done"
    message: str
    bounds: ErrorBounds | None = None
    margin: float = np.nan

    def __str__(self):
        b = "" if self.bounds is None else (
            f" eps_f0={self.bounds.eps_f0:.4g} eps_f={self.bounds.eps_f:.4g} eps_g={self.bounds.eps_g:.4g}")
        return f"l={self.l} {self.stage}: {self.message}{b}"


def design_controller(system: NonlinearSystem, partition: PartitionSpec, options: DesignOptions | None = None,
                      *, return_log=False):
    """Full synthesis: PWA model, offsets and gains, surface, gamma.

    On failure of the nominal or surface step the partition is refined and
    everything is redone; ``SynthesisFailed`` (carrying the attempt log)
    once the region count would exceed ``options.l_max``.
    """
    opts = options or DesignOptions()
    system.check_assumptions()
    attempts = []
    spec = partition
    while True:
        model = build_pwa(system, spec)
        bounds = opts.bounds
        if bounds is None:
            bounds = estimate_error_bounds(system, model, opts.samples_per_region, seed=opts.seed)
        model = replace(model, bounds=bounds)
        grid = opts.grid if opts.grid is not None else default_grid(model)
        try:
            nominal = sample_offsets(model, grid, tol=opts.tol, max_iter=opts.max_iter, seed=opts.seed)
        except NoFeasibleOffsets as exc:
            attempts.append(Attempt(model.l, "nominal", str(exc), bounds))
        else:
            surface, sol = solve_surface(model, nominal, bounds, tol=opts.tol, max_iter=opts.max_iter, seed=opts.seed)
            if surface is not None:
                gamma = opts.gamma if opts.gamma is not None else default_gamma(model, surface, bounds)
                design = ControllerDesign.from_parts(nominal, surface, bounds, gamma, system=system.name, model=model)
                attempts.append(Attempt(model.l, "done", "feasible", bounds, surface.margin))
                log.info("synthesis succeeded with l = %d", model.l)
                return (design, model, attempts) if return_log else (design, model)
            attempts.append(Attempt(model.l, "surface", f"{sol.status}: {sol.message}", bounds, sol.margin))
        log.info("%s", attempts[-1])
        spec = spec.refined(system.lo, system.hi)
        if len(spec.centers) - 1 > opts.l_max:
            raise SynthesisFailed(
                f"no feasible design with at most {opts.l_max} regions besides the origin", attempts
            )


# -- robustness diagnostics ----------------------------------------------------


@dataclass
class MarginReport:
    """Error-bound condition for the sliding motion to inherit stability::

        factor * eps_f + max(eps_f, eps_g) < (1 - (1 + factor) * lam) * ratio

    with ``factor = 1 + ||R2 S_u^-1|| ||S_x||`` and ``ratio = b3 / b4``
    (or ``rho / h`` for the asymptotic-stability variant).  ``ratio`` and
    ``lam`` come from a converse Lyapunov function and are not computable
    from the design, so ``verdict`` stays None until they are supplied.
    """

    factor: float
    lhs: float
    ratio: float | None = None
    lam: float | None = None
    rhs: float | None = None
    lam_max: float = np.nan
    verdict: bool | None = None

    def to_text(self):
        lines = [
            f"amplification factor 1 + ||R2 Su^-1|| ||Sx|| = {self.factor:.6g}",
            f"lhs factor*eps_f + max(eps_f, eps_g)       = {self.lhs:.6g}",
            f"admissible lambda range                    = (0, {self.lam_max:.6g})",
        ]
        if self.verdict is None:
            lines.append("rhs: needs b3/b4 (or rho/h) and lambda; no verdict")
        else:
            lines.append(f"rhs (1 - (1 + factor) lambda) * ratio     = {self.rhs:.6g}")
            lines.append("verdict: " + ("pass" if self.verdict else "fail"))
        return "\n".join(lines)


def robustness_margin(design: ControllerDesign, b3=None, b4=None, lam=None, *, rho=None, h=None,
                      bounds: ErrorBounds | None = None):
    bounds = design.bounds if bounds is None else bounds
    _, R2 = selectors(design.n, design.m)
    norm_sx = float(np.linalg.norm(design.S_x, 2))
    if norm_sx == 0.0:
        factor = 1.0
    else:
        factor = 1.0 + float(np.linalg.norm(R2 @ np.linalg.inv(design.S_u), 2)) * norm_sx
    lhs = factor * bounds.eps_f + max(bounds.eps_f, bounds.eps_g)
    report = MarginReport(factor, lhs, lam_max=1.0 / (1.0 + factor))
    if b3 is not None and b4 is not None:
        ratio = b3 / b4
    elif rho is not None and h is not None:
        ratio = rho / h
    else:
        return report
    report.ratio = float(ratio)
    if lam is None:
        return report
    report.lam = float(lam)
    report.rhs = (1.0 - (1.0 + factor) * lam) * ratio
    report.verdict = bool(0.0 < lam < report.lam_max and lhs < report.rhs)
    return report


__all__ = [
    "selectors",
    "NominalDesign",
    "SurfaceDesign",
    "ControllerDesign",
    "GridSpec",
    "DesignOptions",
    "Attempt",
    "MarginReport",
    "assemble_lemma1",
    "assemble_theorem2",
    "nominal_from_solution",
    "surface_from_solution",
    "sample_offsets",
    "solve_surface",
    "default_grid",
    "default_gamma",
    "design_controller",
    "robustness_margin",
]
