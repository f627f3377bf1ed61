"""Uncertain piecewise-affine models of nonlinear plants.

A plant ``xdot = f(x, u)`` on a box ``X x U`` is covered by slab regions
``beta1 <= theta^T xbar <= beta2`` (``xbar = [x; u]``).  Each region
carries an affine submodel obtained by linearization at an operating
point, and the whole model carries three norm bounds on the
approximation error:

    f(x, u) = (A_i + dA_i) x + (B_i + dB_i) u + C_i + dC_i
    ||[dA_0, dB_0]|| <= eps_f0,  ||[dA_j, dB_j]|| <= eps_f,  ||dC_j|| <= eps_g

with ``C_0 = dC_0 = 0`` in the region holding the origin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from ._jit import njit
from .errors import (
    AssumptionError,
    CoverageError,
    DegenerateRegion,
    DomainError,
    EvaluationError,
    InvalidSlab,
    ShapeError,
)

SAFETY_FACTOR = 1.1


class _PlainRhs:
    """Adapts ``f(x, u)`` to the ``rhs(x, u, params)`` calling convention."""

    def __init__(self, f):
        self.f = f

    def __call__(self, x, u, params):
        return self.f(x, u)


@dataclass
class NonlinearSystem:
    """Plant ``xdot = rhs(x, u, params)`` on an axis-aligned box.

    ``rhs`` may be a numba-compiled function, in which case the practical
    closed-loop simulation runs fully compiled.  Use
    :meth:`from_callable` to wrap an ordinary ``f(x, u)``.
    """

    n: int
    m: int
    rhs: Callable
    lo: np.ndarray
    hi: np.ndarray
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "system"
    check: bool = True

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
        self.params = np.asarray(self.params, dtype=float).reshape(-1)
        if self.n < 1 or self.m < 1:
            raise ShapeError("state and input dimensions must be positive")
        if self.lo.shape != (self.n + self.m,) or self.hi.shape != (self.n + self.m,):
            raise ShapeError(f"domain bounds must have length n+m = {self.n + self.m}")
        if np.any(self.lo >= self.hi):
            raise ShapeError("domain box has an empty side")
        if self.check:
            self.check_assumptions()

    @classmethod
    def from_callable(cls, f, n, m, lo, hi, name="system", check=True):
        """Wrap a plain Python ``f(x, u)``; simulations use the interpreted path."""
        return cls(n, m, _PlainRhs(f), lo, hi, name=name, check=check)

    @property
    def dim(self):
        return self.n + self.m

    def evaluate(self, x, u):
        x = np.asarray(x, dtype=float).reshape(self.n)
        u = np.asarray(u, dtype=float).reshape(self.m)
        out = np.asarray(self.rhs(x, u, self.params), dtype=float).reshape(-1)
        if out.shape != (self.n,):
            raise ShapeError(f"dynamics returned shape {out.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite dynamics value at x={x}, u={u}")
        return out

    def evaluate_bar(self, xbar):
        xbar = np.asarray(xbar, dtype=float)
        return self.evaluate(xbar[: self.n], xbar[self.n:])

    def in_domain(self, xbar, atol=0.0):
        xbar = np.asarray(xbar, dtype=float)
        return bool(np.all(xbar >= self.lo - atol) and np.all(xbar <= self.hi + atol))

    def check_assumptions(self, atol=1e-9):
        if np.any(self.lo > 0) or np.any(self.hi < 0):
            raise AssumptionError("domain box must contain the origin")
        f0 = self.evaluate(np.zeros(self.n), np.zeros(self.m))
        if np.max(np.abs(f0)) > atol:
            raise AssumptionError(f"origin is not an equilibrium: f(0, 0) = {f0}")


def slab_to_ellipsoid(theta, beta1, beta2):
    """Exact degenerate-ellipsoid encoding ``||Q xbar + f|| <= 1`` of a slab.

    Returns ``Q`` as a ``(1, N)`` row and ``f`` as a float.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if not beta1 < beta2:
        raise InvalidSlab(f"slab bounds must satisfy beta1 < beta2, got [{beta1}, {beta2}]")
    if not np.any(theta != 0):
        raise InvalidSlab("slab normal is zero")
    width = beta2 - beta1
    Q = (2.0 * theta / width).reshape(1, -1)
    f = -(beta2 + beta1) / width
    return Q, float(f)


@dataclass
class Region:
    index: int
    theta: np.ndarray
    beta1: float
    beta2: float
    Q: np.ndarray = field(init=False)
    f: float = field(init=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.beta1 = float(self.beta1)
        self.beta2 = float(self.beta2)
        self.Q, self.f = slab_to_ellipsoid(self.theta, self.beta1, self.beta2)

    def contains(self, xbar):
        p = float(self.theta @ np.asarray(xbar, dtype=float))
        return self.beta1 <= p <= self.beta2

    def contains_interior(self, xbar):
        p = float(self.theta @ np.asarray(xbar, dtype=float))
        return self.beta1 < p < self.beta2

    @property
    def width(self):
        return self.beta2 - self.beta1

    @property
    def center(self):
        return 0.5 * (self.beta1 + self.beta2)


@dataclass
class AffineSubmodel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    op_point: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.asarray(self.C, dtype=float).reshape(-1)
        self.op_point = np.asarray(self.op_point, dtype=float).reshape(-1)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape != (n,):
            raise ShapeError("inconsistent submodel shapes")

    @property
    def Abar(self):
        return np.hstack([self.A, self.B])

    def residual(self, f_value, xbar):
        return f_value - self.Abar @ xbar - self.C


@dataclass
class ErrorBounds:
    eps_f0: float = 0.0
    eps_f: float = 0.0
    eps_g: float = 0.0

    def __post_init__(self):
        for k in ("eps_f0", "eps_f", "eps_g"):
            v = float(getattr(self, k))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{k} must be finite and non-negative, got {v}")
            setattr(self, k, v)

    def for_region(self, i):
        """(slope bound, offset bound) that applies in region ``i``."""
        return (self.eps_f0, 0.0) if i == 0 else (self.eps_f, self.eps_g)

    def to_dict(self):
        return {"eps_f0": self.eps_f0, "eps_f": self.eps_f, "eps_g": self.eps_g}


@dataclass
class PwaModel:
    n: int
    m: int
    lo: np.ndarray
    hi: np.ndarray
    regions: list
    submodels: list
    bounds: ErrorBounds = field(default_factory=ErrorBounds)
    system: str = ""

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
        N = self.n + self.m
        if len(self.regions) == 0 or len(self.regions) != len(self.submodels):
            raise ShapeError("need one submodel per region and at least one region")
        for i, (r, s) in enumerate(zip(self.regions, self.submodels)):
            if r.index != i:
                raise ShapeError(f"region at position {i} has index {r.index}")
            if r.theta.shape != (N,):
                raise ShapeError(f"region {i} normal has wrong length")
            if s.A.shape != (self.n, self.n) or s.B.shape != (self.n, self.m):
                raise ShapeError(f"submodel {i} has wrong shape")
        origin = np.zeros(N)
        if not self.regions[0].contains(origin):
            raise CoverageError("region 0 must contain the origin")
        for r in self.regions[1:]:
            if r.contains_interior(origin):
                raise CoverageError(f"region {r.index} contains the origin in its interior")
        if np.any(self.submodels[0].C != 0):
            raise ValueError("origin region must have C_0 = 0")

    @property
    def l(self):
        return len(self.regions) - 1

    @property
    def dim(self):
        return self.n + self.m

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def slab_arrays(self):
        theta = np.array([r.theta for r in self.regions])
        b1 = np.array([r.beta1 for r in self.regions])
        b2 = np.array([r.beta2 for r in self.regions])
        return theta, b1, b2

    def abar(self, i):
        return self.submodels[i].Abar

    def coverage_gaps(self):
        """Uncovered intervals of the premise projection, for collinear slab normals."""
        return _coverage_gaps(self)

    def to_dict(self):
        return {
            "system": self.system,
            "n": self.n,
            "m": self.m,
            "domain": {"lo": self.lo.tolist(), "hi": self.hi.tolist()},
            "regions": [
                {
                    "theta": r.theta.tolist(),
                    "beta1": r.beta1,
                    "beta2": r.beta2,
                    "Q": r.Q.ravel().tolist(),
                    "f": r.f,
                }
                for r in self.regions
            ],
            "submodels": [
                {
                    "A": s.A.tolist(),
                    "B": s.B.tolist(),
                    "C": s.C.tolist(),
                    "op_point": s.op_point.tolist(),
                }
                for s in self.submodels
            ],
            "bounds": self.bounds.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        regions = [Region(i, r["theta"], r["beta1"], r["beta2"]) for i, r in enumerate(d["regions"])]
        subs = [AffineSubmodel(s["A"], s["B"], s["C"], s["op_point"]) for s in d["submodels"]]
        b = d.get("bounds", {})
        return cls(
            n=int(d["n"]),
            m=int(d["m"]),
            lo=d["domain"]["lo"],
            hi=d["domain"]["hi"],
            regions=regions,
            submodels=subs,
            bounds=ErrorBounds(b.get("eps_f0", 0.0), b.get("eps_f", 0.0), b.get("eps_g", 0.0)),
            system=d.get("system", ""),
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def _coverage_gaps(model):
    theta, b1, b2 = model.slab_arrays()
    ref = theta[0]
    for t in theta[1:]:
        if not np.allclose(t / np.linalg.norm(t), ref / np.linalg.norm(ref)):
            return None
    # projection of the box onto the premise direction
    lo_p = float(np.sum(np.minimum(ref * model.lo, ref * model.hi)))
    hi_p = float(np.sum(np.maximum(ref * model.lo, ref * model.hi)))
    scale = np.linalg.norm(theta, axis=1) / np.linalg.norm(ref)
    ivals = sorted(zip(b1 / scale, b2 / scale))
    gaps, reach = [], lo_p
    for a, b in ivals:
        if a > reach:
            gaps.append((reach, min(a, hi_p)))
        reach = max(reach, b)
        if reach >= hi_p:
            break
    if reach < hi_p:
        gaps.append((reach, hi_p))
    return [(a, b) for a, b in gaps if b > a]


@njit
def locate_kernel(xbar, theta, b1, b2, lo, hi):
    """Region index for ``xbar`` and whether it left the domain box.

    Lowest containing index wins, so region 0 has priority on shared
    boundaries.  Outside the box the point is clamped for dispatch; if
    clamping still finds nothing the slab nearest along its normal is used.
    """
    N = xbar.shape[0]
    exited = False
    for k in range(N):
        if xbar[k] < lo[k] or xbar[k] > hi[k] or xbar[k] != xbar[k]:
            exited = True
            break
    y = xbar.copy()
    if exited:
        for k in range(N):
            if y[k] < lo[k]:
                y[k] = lo[k]
            elif y[k] > hi[k]:
                y[k] = hi[k]
    L = theta.shape[0]
    best = -1
    best_dist = np.inf
    for i in range(L):
        p = 0.0
        for k in range(N):
            p += theta[i, k] * y[k]
        if b1[i] <= p and p <= b2[i]:
            return i, exited
        d = b1[i] - p if p < b1[i] else p - b2[i]
        if d < best_dist:
            best_dist = d
            best = i
    return best, True


def locate(model: PwaModel, xbar):
    """``(region index, exited)`` with clamped dispatch outside the box."""
    theta, b1, b2 = model.slab_arrays()
    i, exited = locate_kernel(np.asarray(xbar, dtype=float), theta, b1, b2, model.lo, model.hi)
    return int(i), bool(exited)


def region_index(model: PwaModel, xbar):
    """Index of the region containing ``xbar`` (lowest index on boundaries).

    Raises CoverageError if ``xbar`` lies in the box but in no slab.
    """
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    if xbar.shape != (model.dim,):
        raise ShapeError(f"expected a vector of length {model.dim}")
    y = np.clip(xbar, model.lo, model.hi)
    for r in model.regions:
        if r.contains(y):
            return r.index
    raise CoverageError(f"no region contains {y}")


def fd_step(v):
    return np.maximum(1e-6, 1e-6 * np.abs(v))


def linearize(system: NonlinearSystem, point, origin=None, check_domain=True):
    """Affine submodel at ``point = [x*; u*]`` by central differences.

    ``C = f(x*, u*) - A x* - B u*``; forced to exactly zero when ``origin``
    is true (default: when the point is the origin).
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    n, m = system.n, system.m
    if point.shape != (n + m,):
        raise ShapeError(f"operating point must have length {n + m}")
    if check_domain and not system.in_domain(point):
        raise DomainError(f"operating point {point} outside the domain box")
    h = fd_step(point)
    J = np.empty((n, n + m))
    for k in range(n + m):
        e = np.zeros(n + m)
        e[k] = h[k]
        J[:, k] = (system.evaluate_bar(point + e) - system.evaluate_bar(point - e)) / (2 * h[k])
    A, B = J[:, :n], J[:, n:]
    if origin is None:
        origin = not np.any(point)
    if origin:
        C = np.zeros(n)
    else:
        C = system.evaluate_bar(point) - J @ point
    return AffineSubmodel(A, B, C, point)


@dataclass
class PartitionSpec:
    """Slabs along one premise direction.

    ``centers`` are premise values ``theta^T xbar*`` of the operating
    points (the first must be 0 and becomes region 0).  Interior
    breakpoints default to midpoints between neighbouring centers; the
    outer edges are the extent of the domain box along ``theta``.
    """

    theta: np.ndarray
    centers: list
    edges: list | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.centers = [float(c) for c in self.centers]
        if not self.centers or self.centers[0] != 0.0:
            raise ValueError("first operating point must be the origin (center 0)")
        if len(set(self.centers)) != len(self.centers):
            raise ValueError("duplicate operating points")

    def slabs(self, lo, hi):
        """``[(beta1, beta2)]`` aligned with ``centers``."""
        t = self.theta
        p_lo = float(np.sum(np.minimum(t * lo, t * hi)))
        p_hi = float(np.sum(np.maximum(t * lo, t * hi)))
        order = np.argsort(self.centers)
        sc = [self.centers[k] for k in order]
        if self.edges is not None:
            cuts = [float(e) for e in self.edges]
            if len(cuts) != len(sc) - 1:
                raise ValueError("need len(centers) - 1 interior edges")
        else:
            cuts = [0.5 * (a + b) for a, b in zip(sc[:-1], sc[1:])]
        bounds = [p_lo] + cuts + [p_hi]
        out = [None] * len(sc)
        for pos, k in enumerate(order):
            out[k] = (bounds[pos], bounds[pos + 1])
        return out

    def op_point(self, c):
        return c * self.theta / float(self.theta @ self.theta)

    def refined(self, lo, hi):
        """Bisect the widest slab.  Region 0 is never split off the origin:
        when it is the widest, its outer quarters become new regions."""
        slabs = self.slabs(lo, hi)
        widths = [b - a for a, b in slabs]
        k = int(np.argmax(widths))
        a, b = slabs[k]
        if k == 0:
            extra = [0.75 * a, 0.75 * b]
        else:
            mid = 0.5 * (a + b)
            # keep the old center, add the center of the half it is not in
            extra = [0.5 * (a + mid)] if self.centers[k] >= mid else [0.5 * (mid + b)]
        centers = list(self.centers) + [c for c in extra if c not in self.centers]
        return PartitionSpec(self.theta, centers)


def build_pwa(system: NonlinearSystem, partition: PartitionSpec, bounds=None):
    """Linearize at each operating point and attach slab regions."""
    if partition.theta.shape != (system.dim,):
        raise ShapeError("premise direction has the wrong length")
    slabs = partition.slabs(system.lo, system.hi)
    regions, subs = [], []
    for i, (c, (b1, b2)) in enumerate(zip(partition.centers, slabs)):
        regions.append(Region(i, partition.theta, b1, b2))
        subs.append(linearize(system, partition.op_point(c), origin=(i == 0)))
    return PwaModel(
        system.n, system.m, system.lo, system.hi, regions, subs,
        bounds=bounds or ErrorBounds(), system=system.name,
    )


def sample_region(model: PwaModel, region: Region, count, seed=0, include_vertices=True):
    """Quasi-random points of ``slab ∩ box`` plus a per-axis level grid (axis-aligned slabs)."""
    N = model.dim
    lo, hi = model.lo.copy(), model.hi.copy()
    nz = np.flatnonzero(region.theta)
    axis_aligned = len(nz) == 1
    if axis_aligned:
        k = nz[0]
        a, b = region.beta1 / region.theta[k], region.beta2 / region.theta[k]
        a, b = min(a, b), max(a, b)
        lo[k], hi[k] = max(lo[k], a), min(hi[k], b)
        if not lo[k] < hi[k]:
            raise DegenerateRegion(f"region {region.index} has empty intersection with the domain")
    m = int(np.ceil(np.log2(max(count, 2))))
    sob = qmc.Sobol(N, scramble=True, seed=seed)
    if axis_aligned:
        pts = qmc.scale(sob.random_base2(m), lo, hi)[:count]
    else:
        raw = qmc.scale(sob.random_base2(m + 4), lo, hi)
        proj = raw @ region.theta
        pts = raw[(proj >= region.beta1) & (proj <= region.beta2)][:count]
        if len(pts) == 0:
            raise DegenerateRegion(f"region {region.index} has zero sampled volume")
    if include_vertices and axis_aligned and N <= 10:
        # Ratios like ||r|| / ||xbar|| peak where most coordinates vanish,
        # which random points almost never hit; add a level grid with zero.
        per_axis = 5 if N <= 5 else 2
        levels = []
        for j in range(N):
            lv = np.linspace(lo[j], hi[j], per_axis)
            if lo[j] < 0.0 < hi[j]:
                lv = np.append(lv, 0.0)
            levels.append(np.unique(lv))
        grid = np.array(np.meshgrid(*levels, indexing="ij")).reshape(N, -1).T
        pts = np.vstack([pts, grid])
    return pts


def residuals(system: NonlinearSystem, sub: AffineSubmodel, pts):
    n = system.n
    out = np.empty((len(pts), n))
    for k, p in enumerate(pts):
        out[k] = system.evaluate(p[:n], p[n:]) - sub.Abar @ p - sub.C
    return out


def estimate_error_bounds(system: NonlinearSystem, model: PwaModel, samples_per_region=1024, seed=0):
    """Sampled approximation-error bounds, inflated by ``SAFETY_FACTOR``.

    ``eps_g`` is the largest residual norm at an operating point of the
    regions away from the origin.  The slope bounds are then the tightest
    values consistent with ``||r(xbar)|| <= eps * ||xbar|| + eps_g`` over
    all samples (``eps_g`` taken as zero in region 0, where ``C_0 = 0``).
    """
    if samples_per_region < 100:
        raise ValueError("samples_per_region must be at least 100")
    eps_g = 0.0
    for i in range(1, len(model.regions)):
        sub = model.submodels[i]
        r = residuals(system, sub, sub.op_point[None, :])[0]
        eps_g = max(eps_g, float(np.linalg.norm(r)))
    eps_g *= SAFETY_FACTOR
    eps_f0, eps_f = 0.0, 0.0
    for reg, sub in zip(model.regions, model.submodels):
        pts = sample_region(model, reg, samples_per_region, seed=seed + reg.index)
        res = np.linalg.norm(residuals(system, sub, pts), axis=1)
        norms = np.linalg.norm(pts, axis=1)
        keep = norms > 1e-12
        offset = 0.0 if reg.index == 0 else eps_g
        slope = np.max(np.maximum(res[keep] - offset, 0.0) / norms[keep], initial=0.0)
        if reg.index == 0:
            eps_f0 = max(eps_f0, slope)
        else:
            eps_f = max(eps_f, slope)
    return ErrorBounds(SAFETY_FACTOR * eps_f0, SAFETY_FACTOR * eps_f, eps_g)


@dataclass
class RegionCheck:
    index: int
    samples: int
    max_residual: float
    max_excess: float
    violations: int

    @property
    def passed(self):
        return self.violations == 0


@dataclass
class ValidationReport:
    regions: list
    coverage_holes: list
    bounds: ErrorBounds

    @property
    def passed(self):
        return all(r.passed for r in self.regions) and not self.coverage_holes

    @property
    def failed_regions(self):
        return [r.index for r in self.regions if not r.passed]

    def to_text(self):
        lines = [f"{'region':>6} {'samples':>8} {'max|r|':>12} {'excess':>12} {'viol':>6}"]
        for r in self.regions:
            lines.append(
                f"{r.index:>6} {r.samples:>8} {r.max_residual:>12.4e} {r.max_excess:>12.4e} {r.violations:>6}"
            )
        lines.append(f"coverage holes: {len(self.coverage_holes)}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def validate_model(model: PwaModel, system: NonlinearSystem, tolerance=1e-9, samples_per_region=512, seed=12345):
    """Check sampled residuals against the model's bounds and look for coverage holes."""
    checks = []
    for reg, sub in zip(model.regions, model.submodels):
        pts = sample_region(model, reg, samples_per_region, seed=seed + reg.index, include_vertices=False)
        res = np.linalg.norm(residuals(system, sub, pts), axis=1)
        slope, offset = model.bounds.for_region(reg.index)
        allowed = slope * np.linalg.norm(pts, axis=1) + offset + tolerance
        excess = res - allowed
        checks.append(
            RegionCheck(reg.index, len(pts), float(res.max()), float(excess.max()), int(np.sum(excess > 0)))
        )
    holes = []
    sob = qmc.Sobol(model.dim, scramble=True, seed=seed)
    probe = qmc.scale(sob.random_base2(10), model.lo, model.hi)
    theta, b1, b2 = model.slab_arrays()
    proj = probe @ theta.T
    covered = np.any((proj >= b1) & (proj <= b2), axis=1)
    holes = [p for p in probe[~covered]]
    gaps = model.coverage_gaps()
    if gaps:
        holes.extend(gaps)
    return ValidationReport(checks, holes, model.bounds)


__all__ = [
    "NonlinearSystem",
    "Region",
    "AffineSubmodel",
    "ErrorBounds",
    "PwaModel",
    "PartitionSpec",
    "slab_to_ellipsoid",
    "linearize",
    "locate",
    "region_index",
    "build_pwa",
    "estimate_error_bounds",
    "validate_model",
    "ValidationReport",
]
