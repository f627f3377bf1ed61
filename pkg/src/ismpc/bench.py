"""Benchmark fixtures: Chua's circuit and the inverted pendulum on a cart.

Both plants are numba-compiled so the practical closed loop runs fully
compiled.  Published matrices are stored with exactly the printed digits.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .palm import (
    AffineSubmodel,
    NonlinearSystem,
    PartitionSpec,
    PwaModel,
    build_pwa,
    estimate_error_bounds,
)
from .sim import SimConfig
from .synthesis import ControllerDesign

# -- plants ----------------------------------------------------------------------

CHUA_DEFAULTS = {"R": 10.0 / 7.0, "C1": 0.1, "C2": 1.0, "L": 1.0 / 7.0, "R0": 0.0, "a": -0.8, "c": 0.05}
PENDULUM_DEFAULTS = {"g": 9.8, "M": 4.0, "m": 2.0, "l": 0.5}


@njit
def chua_rhs(x, u, p):
    """Chua's circuit with a cubic resistor ``g(x1) = a x1 + c x1^3`` and
    control current ``u`` drawn from the first capacitor.

    ``p = [R, C1, C2, L, R0, a, c]``.
    """
    R, C1, C2, L, R0, a, c = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    out = np.empty(3)
    g = a * x[0] + c * x[0] ** 3
    out[0] = ((x[1] - x[0]) / R - g - u[0]) / C1
    out[1] = ((x[0] - x[1]) / R - x[2]) / C2
    out[2] = (x[1] - R0 * x[2]) / L
    return out


@njit
def pendulum_rhs(x, u, p):
    """Inverted pendulum on a cart, ``p = [g, M, m, l]``, ``a = 1/(M + m)``."""
    g, M, m, l = p[0], p[1], p[2], p[3]
    a = 1.0 / (M + m)
    s = math.sin(x[0])
    c = math.cos(x[0])
    out = np.empty(2)
    out[0] = x[1]
    out[1] = (g * s - a * m * l * x[1] ** 2 * math.sin(2.0 * x[0]) / 2.0 - a * c * u[0]) / (
        4.0 * l / 3.0 - a * m * l * c * c)
    return out


def _merge(defaults, params):
    extra = set(params) - set(defaults)
    if extra:
        raise ValueError(f"unknown parameters {sorted(extra)}; expected a subset of {list(defaults)}")
    return {**defaults, **{k: float(v) for k, v in params.items()}}


@njit
def sine_perturbed_rhs(x, u, p):
    """``A x + B u + k (sin(x1) - x1)`` with ``p = [n, m, vec(A), vec(B), k]`` (row-major)."""
    n = int(p[0])
    m = int(p[1])
    out = np.zeros(n)
    w = math.sin(x[0]) - x[0]
    base = 2
    for r in range(n):
        acc = 0.0
        for c in range(n):
            acc += p[base + r * n + c] * x[c]
        for c in range(m):
            acc += p[base + n * n + r * m + c] * u[c]
        out[r] = acc + p[base + n * n + n * m + r] * w
    return out


def random_stable_plant(seed, n=None, m=1, nonlinearity=0.1, half_width=2.0):
    """Randomized test plant: Hurwitz ``A`` (spectral abscissa in ``[-1.5, -0.5]``),
    Gaussian ``B`` and a small ``sin(x1) - x1`` term.  Compiled rhs."""
    rng = np.random.default_rng(seed)
    n = 2 + seed % 2 if n is None else n
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5 + rng.random()) * np.eye(n)
    B = rng.standard_normal((n, m))
    k = nonlinearity * rng.standard_normal(n)
    p = np.concatenate([[n, m], A.ravel(), B.ravel(), k])
    box = half_width * np.ones(n + m)
    return NonlinearSystem(n, m, sine_perturbed_rhs, -box, box, params=p, name=f"test{seed}")


def chua_system(**params):
    p = _merge(CHUA_DEFAULTS, params)
    vec = np.array([p[k] for k in ("R", "C1", "C2", "L", "R0", "a", "c")])
    lo = [-6.0, -3.0, -6.0, -20.0]
    hi = [6.0, 3.0, 6.0, 20.0]
    return NonlinearSystem(3, 1, chua_rhs, lo, hi, params=vec, name="chua")


def pendulum_system(**params):
    p = _merge(PENDULUM_DEFAULTS, params)
    vec = np.array([p[k] for k in ("g", "M", "m", "l")])
    lo = [-np.pi / 2, -3.0, -300.0]
    hi = [np.pi / 2, 3.0, 300.0]
    return NonlinearSystem(2, 1, pendulum_rhs, lo, hi, params=vec, name="pendulum")


# -- published data ----------------------------------------------------------------

CHUA_K = [
    [[6.0518, 49.6777, 20.8074, -2.5596]],
    [[6.1412, 49.5742, 20.8064, -2.5411]],
    [[5.7869, 48.5033, 20.3217, -2.5140]],
]
CHUA_D = [[0.0], [0.200], [-0.200]]
CHUA_S_BAR = [[-0.3318, -4.8582, -1.6437, 0.4322]]

# region order: 0, +pi/3, +13pi/30, -pi/3, -13pi/30
PENDULUM_ABAR = [
    [[0.0, 1.0, 0.0], [19.6000, 0.0, -0.6667]],
    [[0.0, 1.0, 0.0], [4.7040, 0.0, -0.2667]],
    [[0.0, 1.0, 0.0], [1.5955, 0.0, -0.1585]],
    [[0.0, 1.0, 0.0], [4.7040, 0.0, -0.2667]],
    [[0.0, 1.0, 0.0], [1.5955, 0.0, -0.1585]],
]
PENDULUM_C = [[0.0, 0.0], [0.0, 8.6533], [0.0, 12.3638], [0.0, -8.6533], [0.0, -12.3638]]
PENDULUM_K = [
    [[46381.5662, 13843.0990, -437.2131]],
    [[13997.0179, 4213.0535, -133.2537]],
    [[8287.5168, 1620.6117, -51.5002]],
    [[13997.0179, 4213.0535, -133.2537]],
    [[8287.5168, 1620.6117, -51.5002]],
]
PENDULUM_D = [[0.0], [3.0], [5.0], [-3.0], [-5.0]]
PENDULUM_S_BAR = [[-0.1269, -0.0501, 0.00066]]
PENDULUM_CENTERS = [0.0, np.pi / 3, 13 * np.pi / 30, -np.pi / 3, -13 * np.pi / 30]


@dataclass
class Fixture:
    name: str
    system: NonlinearSystem
    partition: PartitionSpec
    model: PwaModel
    published: dict
    x0: np.ndarray  # initial xbar, u(0) = 0
    config: SimConfig
    design: ControllerDesign | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        for key in ("K",):
            for k in self.published.get(key, []):
                if np.shape(k) != (m, n + m):
                    raise ValueError(f"published {key} entry has shape {np.shape(k)}")
        if "S_bar" in self.published and np.shape(self.published["S_bar"]) != (m, n + m):
            raise ValueError("published S_bar has the wrong shape")


def published_design(model: PwaModel, K, D, S_bar, gamma=None, system=""):
    """Controller from printed gains and surface; ``beta`` from the model bounds.

    ``gamma`` defaults to ``0.1 ||S_x|| diam max(eps_f0, eps_f)`` (floor 1e-3).
    """
    S_bar = np.atleast_2d(np.asarray(S_bar, dtype=float))
    n, m = model.n, model.m
    S_x, S_u = S_bar[:, :n], S_bar[:, n:]
    b = model.bounds
    norm_sx = float(np.linalg.norm(S_x, 2))
    if gamma is None:
        gamma = max(0.1 * norm_sx * model.diameter * max(b.eps_f0, b.eps_f), 1e-3)
    beta = [0.0] + [b.eps_g * norm_sx] * model.l
    return ControllerDesign(n, m, K, D, S_x, S_u, float(gamma), beta, b, system=system, model=model)


def fixture_chua(samples_per_region=1024, seed=0, **params):
    """Chua's circuit with the printed gains and surface.

    The circuit parameters are not printed with the gains; the defaults in
    ``CHUA_DEFAULTS`` are canonical-circuit values and can be overridden.
    The three-region model (slab centers 0, +4, -4 along x1) is built here
    by linearization, since the published gains came with a model that is
    not reproduced.
    """
    system = chua_system(**params)
    partition = PartitionSpec([1.0, 0.0, 0.0, 0.0], [0.0, 4.0, -4.0])
    model = build_pwa(system, partition)
    model.bounds = estimate_error_bounds(system, model, samples_per_region, seed=seed)
    published = {"K": CHUA_K, "D": CHUA_D, "S_bar": CHUA_S_BAR}
    design = published_design(model, CHUA_K, CHUA_D, CHUA_S_BAR, system="chua")
    return Fixture(
        "chua", system, partition, model, published, np.array([4.0, 1.0, 0.0, 0.0]),
        SimConfig(h=1e-3, T=50.0, sigma=0.001), design,
        notes=["circuit parameters are canonical defaults, not published with the gains"],
    )


def fixture_pendulum(samples_per_region=1024, seed=0, **params):
    """Inverted pendulum with the printed submodels, gains, offsets and surface.

    The slab regions split the angle at the midpoints between operating
    points.  Error bounds are estimated against the true dynamics.
    """
    system = pendulum_system(**params)
    partition = PartitionSpec([1.0, 0.0, 0.0], PENDULUM_CENTERS)
    base = build_pwa(system, partition)
    subs = []
    for i, ab in enumerate(PENDULUM_ABAR):
        ab = np.asarray(ab)
        subs.append(AffineSubmodel(ab[:, :2], ab[:, 2:], np.asarray(PENDULUM_C[i]), base.submodels[i].op_point))
    model = PwaModel(2, 1, system.lo, system.hi, base.regions, subs, system="pendulum")
    model.bounds = estimate_error_bounds(system, model, samples_per_region, seed=seed)
    published = {"Abar": PENDULUM_ABAR, "C": PENDULUM_C, "K": PENDULUM_K, "D": PENDULUM_D, "S_bar": PENDULUM_S_BAR}
    design = published_design(model, PENDULUM_K, PENDULUM_D, PENDULUM_S_BAR, system="pendulum")
    return Fixture(
        "pendulum", system, partition, model, published, np.array([math.radians(82.0), 0.0, 0.0]),
        SimConfig(h=1e-3, T=10.0, sigma=0.020), design,
    )


FIXTURES = {"chua": fixture_chua, "pendulum": fixture_pendulum}
SYSTEMS = {"chua": chua_system, "pendulum": pendulum_system}


def get_system(name, **params):
    """Built-in plant by name; ``test<seed>`` gives ``random_stable_plant(seed)``."""
    mt = re.fullmatch(r"test(\d+)", name)
    if mt:
        if params:
            raise ValueError("randomized test plants take no parameters")
        return random_stable_plant(int(mt.group(1)))
    try:
        return SYSTEMS[name](**params)
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)} or test<seed>") from None


def get_fixture(name, **kwargs):
    try:
        return FIXTURES[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None


_DEG = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(deg)?\s*$")


def parse_value(text):
    """Number with an optional ``deg`` suffix (converted to radians)."""
    mt = _DEG.match(str(text))
    if not mt:
        raise ValueError(f"cannot parse {text!r} as a number")
    v = float(mt.group(1))
    return math.radians(v) if mt.group(2) else v


def parse_vector(text):
    """Comma- or space-separated values, each possibly ending in ``deg``."""
    parts = [p for p in re.split(r"[,\s]+", str(text).strip().strip("[]")) if p]
    return np.array([parse_value(p) for p in parts])


__all__ = [
    "CHUA_DEFAULTS",
    "PENDULUM_DEFAULTS",
    "chua_rhs",
    "pendulum_rhs",
    "sine_perturbed_rhs",
    "random_stable_plant",
    "chua_system",
    "pendulum_system",
    "Fixture",
    "published_design",
    "fixture_chua",
    "fixture_pendulum",
    "get_fixture",
    "get_system",
    "parse_value",
    "parse_vector",
]
