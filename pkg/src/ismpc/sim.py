"""Fixed-step simulation of the practical, nominal and sliding-motion loops.

All integrators are classical RK4 with the region index re-resolved at
every stage evaluation.  The kernels below are numba-compiled unless
``ISMPC_DISABLE_JIT=1``; a plant given as a plain Python callable forces
the interpreted path for the practical loop.

Practical loop state ``y = [x, u, z]`` where ``z`` integrates the nominal
model along the trajectory so that::

    s = S_x (x - x(0)) + S_u (u - u(0)) - z
    z' = S_x (A_i x + B_i u + C_i) + S_u (F_i x + G_i u + D_i)
    u' = F_i x + G_i u + D_i - (gamma + beta_i + sigma_i) S_u^-1 sgn(s)
    sigma_i = eps_i ||S_x|| ||[x; u]||
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import JIT_ENABLED, is_jitted, njit, python_version
from .errors import DivergenceError, ShapeError
from .palm import NonlinearSystem, PwaModel, locate_kernel
from .synthesis import ControllerDesign, NominalDesign, selectors

POLICIES = ("zero", "random_bounded", "adversarial", "worst_case")


@dataclass
class SimConfig:
    h: float = 1e-3
    T: float = 10.0
    sigma: float = 0.0  # sign smoothing; 0 means exact sign
    record_stride: int = 1
    integrator: str = "RK4"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step must be positive")
        if not self.T >= self.h:
            raise ValueError("duration must be at least one step")
        if self.sigma < 0:
            raise ValueError("sign smoothing must be nonnegative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.integrator.upper() != "RK4":
            raise ValueError("only RK4 is available")

    @property
    def steps(self):
        return int(math.floor(self.T / self.h + 1e-9))

    @property
    def samples(self):
        return self.steps // self.record_stride + 1


@dataclass
class AugmentedState:
    x: np.ndarray
    u: np.ndarray
    z_surface: np.ndarray
    t: float = 0.0
    x_init: np.ndarray | None = None
    u_init: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.z_surface = np.asarray(self.z_surface, dtype=float).reshape(-1)
        self.x_init = self.x.copy() if self.x_init is None else np.asarray(self.x_init, dtype=float).reshape(-1)
        self.u_init = self.u.copy() if self.u_init is None else np.asarray(self.u_init, dtype=float).reshape(-1)

    @classmethod
    def initial(cls, x0, m):
        """Start of a practical run: ``u(0) = 0`` and ``z(0) = 0``."""
        return cls(x0, np.zeros(m), np.zeros(m), 0.0)

    @property
    def xbar(self):
        return np.concatenate([self.x, self.u])


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # (samples, n)
    u: np.ndarray  # (samples, m); empty columns for nominal runs are never used
    s: np.ndarray  # (samples, m); zeros where no surface is simulated
    region: np.ndarray
    domain_exit: np.ndarray
    V: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def xbar(self):
        return np.hstack([self.x, self.u])

    @property
    def any_exit(self):
        return bool(np.any(self.domain_exit))

    def with_lyapunov(self, P):
        """Attach ``V = xbar^T P xbar`` sampled along the run."""
        xb = self.xbar
        self.V = np.einsum("ij,jk,ik->i", xb, np.asarray(P, dtype=float), xb)
        return self

    def to_csv(self, path=None):
        n, m = self.x.shape[1], self.u.shape[1]
        cols = ["t"] + [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)]
        cols += [f"s{k + 1}" for k in range(m)] + ["region", "domain_exit"]
        if self.V is not None:
            cols.append("V")
        lines = [",".join(cols)]
        for k in range(len(self.t)):
            row = [self.t[k], *self.x[k], *self.u[k], *self.s[k]]
            cells = [f"{v:.15g}" for v in row] + [str(int(self.region[k])), str(int(self.domain_exit[k]))]
            if self.V is not None:
                cells.append(f"{self.V[k]:.15g}")
            lines.append(",".join(cells))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def plot_script(self, csv_name, title="closed loop"):
        """gnuplot script with three panels: states, inputs, sliding variable."""
        n, m = self.x.shape[1], self.u.shape[1]
        col = 2
        xs = ", ".join(f"'{csv_name}' using 1:{col + k} with lines title 'x{k + 1}'" for k in range(n))
        col += n
        us = ", ".join(f"'{csv_name}' using 1:{col + k} with lines title 'u{k + 1}'" for k in range(m))
        col += m
        ss = ", ".join(f"'{csv_name}' using 1:{col + k} with lines title 's{k + 1}'" for k in range(m))
        return "\n".join([
            "set datafile separator ','",
            "set key autotitle columnhead",
            "set multiplot layout 3,1 title '" + title + "'",
            "set xlabel 't (s)'",
            "set ylabel 'x'",
            "plot " + xs,
            "set ylabel 'u'",
            "plot " + us,
            "set ylabel 's'",
            "plot " + ss,
            "unset multiplot",
            "",
        ])


# -- packed design data ----------------------------------------------------------


@dataclass
class _Packed:
    theta: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    Abar: np.ndarray  # (L, n, N)
    C: np.ndarray  # (L, n)
    K: np.ndarray  # (L, m, N)
    D: np.ndarray  # (L, m)
    Sx: np.ndarray
    Su: np.ndarray
    Su_inv: np.ndarray
    gain: np.ndarray  # (L,) gamma + beta_i
    eps: np.ndarray  # (L,) eps_f0 or eps_f
    norm_sx: float


def _require_model(design: ControllerDesign, model=None) -> PwaModel:
    model = getattr(design, "model", None) if model is None else model
    if model is None:
        raise ValueError("design carries no PWA model; pass model=")
    if model.l + 1 != len(design.K):
        raise ShapeError("design and model disagree on the region count")
    return model


def _pack(design: ControllerDesign, model: PwaModel) -> _Packed:
    theta, b1, b2 = model.slab_arrays()
    L = model.l + 1
    b = design.bounds
    return _Packed(
        theta=np.ascontiguousarray(theta, dtype=float),
        b1=np.ascontiguousarray(b1, dtype=float),
        b2=np.ascontiguousarray(b2, dtype=float),
        lo=model.lo.copy(),
        hi=model.hi.copy(),
        Abar=np.array([model.abar(i) for i in range(L)]),
        C=np.array([model.submodels[i].C for i in range(L)]),
        K=np.array(design.K),
        D=np.array(design.D),
        Sx=design.S_x.copy(),
        Su=design.S_u.copy(),
        Su_inv=np.linalg.inv(design.S_u),
        gain=design.gamma + np.asarray(design.beta, dtype=float),
        eps=np.array([b.eps_f0] + [b.eps_f] * (L - 1)),
        norm_sx=float(np.linalg.norm(design.S_x, 2)),
    )


# -- kernels ---------------------------------------------------------------------


@njit
def _sgn(s, sigma):
    out = np.empty_like(s)
    if sigma > 0.0:
        nrm = math.sqrt(np.sum(s * s))
        for k in range(s.shape[0]):
            out[k] = s[k] / (nrm + sigma)
    else:
        for k in range(s.shape[0]):
            out[k] = 1.0 if s[k] > 0.0 else (-1.0 if s[k] < 0.0 else 0.0)
    return out


@njit
def _practical_rhs(y, plant, params, n, m, x_init, u_init, theta, b1, b2, lo, hi,
                   Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma):
    N = n + m
    xbar = y[:N].copy()
    x = xbar[:n].copy()
    u = xbar[n:].copy()
    z = y[N:]
    i, exited = locate_kernel(xbar, theta, b1, b2, lo, hi)
    s = Sx @ (x - x_init) + Su @ (u - u_init) - z
    nominal_u = K[i] @ xbar + D[i]
    k_sw = gain[i] + eps[i] * norm_sx * math.sqrt(np.sum(xbar * xbar))
    dy = np.empty(N + m)
    dy[:n] = plant(x, u, params)
    dy[n:N] = nominal_u - k_sw * (Su_inv @ _sgn(s, sigma))
    dy[N:] = Sx @ (Abar[i] @ xbar + C[i]) + Su @ nominal_u
    return dy, i, exited, s


@njit
def _practical_kernel(y0, plant, params, n, m, h, steps, stride, theta, b1, b2, lo, hi,
                      Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma):
    N = n + m
    samples = steps // stride + 1
    Y = np.zeros((samples, N + 2 * m))
    reg = np.zeros(samples, dtype=np.int64)
    ext = np.zeros(samples, dtype=np.bool_)
    x_init = y0[:n].copy()
    u_init = y0[n:N].copy()
    y = y0.copy()
    k1, i, exited, s = _practical_rhs(y, plant, params, n, m, x_init, u_init, theta, b1, b2, lo, hi,
                                      Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma)
    Y[0, :N + m] = y
    Y[0, N + m:] = s
    reg[0] = i
    ext[0] = exited
    row = 1
    for step in range(1, steps + 1):
        k2 = _practical_rhs(y + 0.5 * h * k1, plant, params, n, m, x_init, u_init, theta, b1, b2, lo, hi,
                            Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma)[0]
        k3 = _practical_rhs(y + 0.5 * h * k2, plant, params, n, m, x_init, u_init, theta, b1, b2, lo, hi,
                            Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma)[0]
        k4 = _practical_rhs(y + h * k3, plant, params, n, m, x_init, u_init, theta, b1, b2, lo, hi,
                            Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma)[0]
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            return Y[:row], reg[:row], ext[:row], step
        k1, i, exited, s = _practical_rhs(y, plant, params, n, m, x_init, u_init, theta, b1, b2, lo, hi,
                                          Abar, C, K, D, Sx, Su, Su_inv, gain, eps, norm_sx, sigma)
        if step % stride == 0:
            Y[row, :N + m] = y
            Y[row, N + m:] = s
            reg[row] = i
            ext[row] = exited
            row += 1
    return Y[:row], reg[:row], ext[:row], -1


@njit
def _motion_rhs(xb, theta, b1, b2, lo, hi, M, cbar, E, P, dA, dC, eps, eps_g, mode):
    """Nominal loop plus ``E (dA xbar + dC)``.

    mode 0: no uncertainty; 1: the drawn (unit-norm) perturbation scaled to
    the region's bounds; 2: same, sign chosen to increase ``V = xbar^T P xbar``;
    3: rank-one maximizer of ``dV/dt`` over the admissible set.
    """
    i, exited = locate_kernel(xb, theta, b1, b2, lo, hi)
    d = M[i] @ xb + cbar[i]
    if mode == 0:
        return d, i, exited
    e = eps[i]
    g = eps_g if i > 0 else 0.0
    if mode == 3:
        w = E.T @ (P @ xb)
        wn = math.sqrt(np.sum(w * w))
        xn = math.sqrt(np.sum(xb * xb))
        if wn > 0.0:
            # dA = e w xb^T / (|w| |xb|), dC = g w / |w|
            pert = (e * xn + g) * (w / wn)
            d = d + E @ pert
        return d, i, exited
    pert = e * (dA @ xb) + g * dC
    if mode == 2:
        if xb @ (P @ (E @ pert)) < 0.0:
            pert = -pert
    return d + E @ pert, i, exited


@njit
def _motion_kernel(x0, h, steps, stride, theta, b1, b2, lo, hi, M, cbar, E, P, dA_draws, dC_draws,
                   eps, eps_g, mode):
    N = x0.shape[0]
    samples = steps // stride + 1
    X = np.zeros((samples, N))
    reg = np.zeros(samples, dtype=np.int64)
    ext = np.zeros(samples, dtype=np.bool_)
    y = x0.copy()
    nd = dA_draws.shape[0]
    k1, i, exited = _motion_rhs(y, theta, b1, b2, lo, hi, M, cbar, E, P, dA_draws[0], dC_draws[0],
                                eps, eps_g, mode)
    X[0] = y
    reg[0] = i
    ext[0] = exited
    row = 1
    for step in range(1, steps + 1):
        j = (step - 1) % nd
        dA = dA_draws[j]
        dC = dC_draws[j]
        if step > 1:
            k1 = _motion_rhs(y, theta, b1, b2, lo, hi, M, cbar, E, P, dA, dC, eps, eps_g, mode)[0]
        k2 = _motion_rhs(y + 0.5 * h * k1, theta, b1, b2, lo, hi, M, cbar, E, P, dA, dC, eps, eps_g, mode)[0]
        k3 = _motion_rhs(y + 0.5 * h * k2, theta, b1, b2, lo, hi, M, cbar, E, P, dA, dC, eps, eps_g, mode)[0]
        k4 = _motion_rhs(y + h * k3, theta, b1, b2, lo, hi, M, cbar, E, P, dA, dC, eps, eps_g, mode)[0]
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            return X[:row], reg[:row], ext[:row], step
        if step % stride == 0:
            i, exited = locate_kernel(y, theta, b1, b2, lo, hi)
            X[row] = y
            reg[row] = i
            ext[row] = exited
            row += 1
    return X[:row], reg[:row], ext[:row], -1


def _kernel(func, compiled):
    return func if compiled else python_version(func)


# -- public API ------------------------------------------------------------------


def surface_value(design: ControllerDesign, state: AugmentedState):
    """``s = S_x (x - x(0)) + S_u (u - u(0)) - z``."""
    return design.S_x @ (state.x - state.x_init) + design.S_u @ (state.u - state.u_init) - state.z_surface


def switching_gain(design: ControllerDesign, region, xbar):
    """``gamma + beta_i + sigma_i`` with ``sigma_i = eps_i ||S_x|| ||xbar||``."""
    eps = design.bounds.eps_f0 if region == 0 else design.bounds.eps_f
    sigma_i = eps * float(np.linalg.norm(design.S_x, 2)) * float(np.linalg.norm(xbar))
    return design.gamma + design.beta[region] + sigma_i


def controller_derivative(design: ControllerDesign, state: AugmentedState, s, region=None, sigma=0.0, model=None):
    """``u' = F_i x + G_i u + D_i - (gamma + beta_i + sigma_i) S_u^-1 sgn(s)``."""
    xbar = state.xbar
    if region is None:
        from .palm import locate
        region, _ = locate(_require_model(design, model), xbar)
    s = np.asarray(s, dtype=float).reshape(-1)
    sg = python_version(_sgn)(s, float(sigma))
    k_sw = switching_gain(design, region, xbar)
    return design.K[region] @ xbar + design.D[region] - k_sw * np.linalg.solve(design.S_u, sg)


def _check_x0(x0, n):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise ShapeError(f"initial state must have length {n}")
    return x0


def _finish(traj, fail_step, config, what):
    if fail_step >= 0:
        raise DivergenceError(f"{what} produced a non-finite state at t = {fail_step * config.h:.6g}", traj)
    return traj


def simulate_practical(system: NonlinearSystem, design: ControllerDesign, config: SimConfig, x0, *, model=None):
    """Plant plus dynamic sliding-mode controller, from ``u(0) = 0``."""
    model = _require_model(design, model)
    n, m = system.n, system.m
    if (design.n, design.m) != (n, m):
        raise ShapeError("design and system dimensions differ")
    x0 = _check_x0(x0, n)
    pk = _pack(design, model)
    y0 = np.concatenate([x0, np.zeros(m), np.zeros(m)])
    compiled = JIT_ENABLED and is_jitted(system.rhs)
    kernel = _kernel(_practical_kernel, compiled)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        Y, reg, ext, fail = kernel(
            y0, system.rhs, system.params, n, m, config.h, config.steps, config.record_stride,
            pk.theta, pk.b1, pk.b2, pk.lo, pk.hi, pk.Abar, pk.C, pk.K, pk.D, pk.Sx, pk.Su, pk.Su_inv,
            pk.gain, pk.eps, pk.norm_sx, float(config.sigma),
        )
    N = n + m
    t = np.arange(len(Y)) * config.h * config.record_stride
    traj = Trajectory(t, Y[:, :n].copy(), Y[:, n:N].copy(), Y[:, N + m:].copy(), np.asarray(reg), np.asarray(ext),
                      meta={"kind": "practical", "compiled": compiled, "h": config.h, "sigma": config.sigma})
    if design.P is not None:
        traj.with_lyapunov(design.P)
    return _finish(traj, fail, config, "practical simulation")


def _loop_matrices(model: PwaModel, design: ControllerDesign):
    R1, R2 = selectors(model.n, model.m)
    L = model.l + 1
    M = np.array([R1 @ model.abar(i) + R2 @ design.K[i] for i in range(L)])
    cbar = np.array([np.concatenate([model.submodels[i].C, design.D[i]]) for i in range(L)])
    return M, cbar


def _motion(model, design, config, xbar0, mode, dA, dC, P):
    model = _require_model(design, model)
    xbar0 = _check_x0(xbar0, model.dim)
    theta, b1, b2 = model.slab_arrays()
    M, cbar = _loop_matrices(model, design)
    R1, R2 = selectors(model.n, model.m)
    if mode == 0:  # nominal: no surface, no model error
        E = R1
        eps, eps_g = np.zeros(model.l + 1), 0.0
    else:
        E = R1 - R2 @ np.linalg.solve(design.S_u, design.S_x)
        b = design.bounds
        eps, eps_g = np.array([b.eps_f0] + [b.eps_f] * model.l), b.eps_g
    kernel = _kernel(_motion_kernel, JIT_ENABLED)
    with np.errstate(over="ignore", invalid="ignore"):
        X, reg, ext, fail = kernel(
            xbar0, config.h, config.steps, config.record_stride, np.ascontiguousarray(theta, dtype=float),
            np.asarray(b1, dtype=float), np.asarray(b2, dtype=float), model.lo, model.hi, M, cbar, E, P, dA, dC,
            eps, float(eps_g), mode,
        )
    n = model.n
    t = np.arange(len(X)) * config.h * config.record_stride
    traj = Trajectory(t, X[:, :n].copy(), X[:, n:].copy(), np.zeros((len(X), model.m)), np.asarray(reg),
                      np.asarray(ext), meta={"h": config.h})
    return traj, fail


def simulate_nominal(model: PwaModel, design: ControllerDesign | NominalDesign, config: SimConfig, xbar0):
    """``xbar' = (R1 Abar_i + R2 Kbar_i) xbar + Cbar_i`` with region dispatch.

    Only ``K``, ``D`` and ``W`` (or ``P``) are used, so a bare nominal design works.
    """
    n, N = model.n, model.dim
    z = np.zeros((1, n, N))
    traj, fail = _motion(model, design, config, xbar0, 0, z, np.zeros((1, n)), np.zeros((N, N)))
    traj.meta["kind"] = "nominal"
    if design.W is not None:
        traj.with_lyapunov(np.linalg.inv(design.W))
    elif getattr(design, "P", None) is not None:
        traj.with_lyapunov(design.P)
    return _finish(traj, fail, config, "nominal simulation")


def unit_norm_draws(count, n, N, seed):
    """``count`` matrices of spectral norm 1 and vectors of norm 1."""
    rng = np.random.default_rng(seed)
    dA = rng.standard_normal((count, n, N))
    dA /= np.linalg.norm(dA, ord=2, axis=(1, 2))[:, None, None]
    dC = rng.standard_normal((count, n))
    dC /= np.linalg.norm(dC, axis=1)[:, None]
    return dA, dC


def simulate_sliding_motion(model: PwaModel, design: ControllerDesign, config: SimConfig, xbar0,
                            uncertainty_policy="zero", seed=0):
    """Equivalent-control motion ``xbar' = nominal + (R1 - R2 S_u^-1 S_x)(dAbar xbar + dC)``.

    Policies: ``zero``; ``random_bounded`` (fresh direction each step at the
    full bound); ``adversarial`` (same draws, sign picked to raise V);
    ``worst_case`` (pointwise maximizer of dV/dt).  ``dAbar`` has spectral
    norm ``eps_f0`` in region 0 and ``eps_f`` elsewhere; ``dC`` has norm
    ``eps_g`` away from the origin region and is zero inside it.
    """
    if uncertainty_policy not in POLICIES:
        raise ValueError(f"unknown uncertainty policy {uncertainty_policy!r}; choose from {POLICIES}")
    mode = POLICIES.index(uncertainty_policy)
    n, N = model.n, model.dim
    if mode in (2, 3) and design.P is None:
        raise ValueError(f"policy {uncertainty_policy!r} needs the Lyapunov matrix P of the design")
    P = np.zeros((N, N)) if design.P is None else design.P
    if mode in (1, 2):
        dA, dC = unit_norm_draws(config.steps, n, N, seed)
    else:
        dA, dC = np.zeros((1, n, N)), np.zeros((1, n))
    traj, fail = _motion(model, design, config, xbar0, mode, dA, dC, P)
    traj.meta.update({"kind": "sliding", "policy": uncertainty_policy, "seed": seed})
    if design.P is not None:
        traj.with_lyapunov(design.P)
    return _finish(traj, fail, config, "sliding-motion simulation")


# -- reaching phase ----------------------------------------------------------------


@dataclass
class ReachReport:
    reach_time: float
    bound: float  # ||s0|| / gamma
    s_norm: np.ndarray
    t: np.ndarray
    slack: float

    @property
    def within_bound(self):
        return bool(self.reach_time <= self.bound + self.slack)


@njit
def _reach_kernel(s0, gain, gamma, h, steps, mode, dirs, thresh):
    """Integrate ``s' = d - gain * sgn(s)`` with ``|d| <= gain - gamma``.

    Between events the sign is constant, so each step is advanced exactly
    to the earliest zero crossing of a free component; that component is
    then held at zero (the Filippov sliding solution, since every
    ``|d_k| < gain``) and the rest of the step continues.
    """
    m = s0.shape[0]
    s = s0.copy()
    locked = np.zeros(m, dtype=np.bool_)
    for k in range(m):
        if s[k] == 0.0:
            locked[k] = True
    dmag = gain - gamma
    norms = np.zeros(steps + 1)
    norms[0] = math.sqrt(np.sum(s * s))
    if norms[0] <= thresh:
        return 0.0, norms[:1]
    for step in range(1, steps + 1):
        d = np.zeros(m)
        if mode == 1:
            d = dmag * dirs[(step - 1) % dirs.shape[0]]
        elif mode == 2:
            d = dmag * s / math.sqrt(np.sum(s * s))
        left = h
        while left > 0.0:
            ds = np.zeros(m)
            for k in range(m):
                if not locked[k]:
                    ds[k] = d[k] - (gain if s[k] > 0.0 else -gain)
            tau = left
            hit = -1
            for k in range(m):
                if not locked[k] and s[k] * ds[k] < 0.0:
                    tk = -s[k] / ds[k]
                    if tk <= tau:
                        tau = tk
                        hit = k
            s = s + tau * ds
            left -= tau
            if hit >= 0:
                s[hit] = 0.0
                locked[hit] = True
                nrm = math.sqrt(np.sum(s * s))
                if nrm <= thresh:
                    norms[step] = nrm
                    return (step * h - left), norms[:step + 1]
        norms[step] = math.sqrt(np.sum(s * s))
        if norms[step] <= thresh:
            return step * h, norms[:step + 1]
    return np.inf, norms


def reaching_test(design: ControllerDesign, config: SimConfig, s0, *, injection="none", xbar_norm=0.0,
                  region=1, seed=0, threshold=1e-6):
    """First time ``||s|| <= threshold`` under ``s' = d - (gamma + beta_i + sigma_i) sgn(s)``.

    ``d`` is the surface-projected model error, at the limit allowed by the
    bounds: ``||d|| = beta_i + sigma_i`` with ``sigma_i`` evaluated at
    ``||xbar|| = xbar_norm``.  Injections: ``none``, ``random_bounded``
    (random direction, full magnitude, redrawn each step) or
    ``adversarial`` (aligned with ``s``).
    """
    modes = ("none", "random_bounded", "adversarial")
    if injection not in modes:
        raise ValueError(f"unknown injection {injection!r}")
    s0 = np.asarray(s0, dtype=float).reshape(-1)
    if s0.shape != (design.m,):
        raise ShapeError(f"s0 must have length {design.m}")
    region = min(region, len(design.K) - 1)
    gain = switching_gain(design, region, np.array([xbar_norm]))
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((max(config.steps, 1), design.m))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    kernel = _kernel(_reach_kernel, JIT_ENABLED)
    tr, norms = kernel(s0, float(gain), float(design.gamma), config.h, config.steps, modes.index(injection),
                       dirs, float(threshold))
    return ReachReport(float(tr), float(np.linalg.norm(s0)) / design.gamma, np.asarray(norms),
                       np.arange(len(norms)) * config.h, config.h)


__all__ = [
    "SimConfig",
    "AugmentedState",
    "Trajectory",
    "ReachReport",
    "POLICIES",
    "surface_value",
    "switching_gain",
    "controller_derivative",
    "simulate_practical",
    "simulate_nominal",
    "simulate_sliding_motion",
    "unit_norm_draws",
    "reaching_test",
]
