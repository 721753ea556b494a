"""Langevin diffusion ``dx = -grad f(x) dt + sqrt(2) dW``: potentials, simulation, densities.

Ornstein-Uhlenbeck potentials (quadratic ``f``) are simulated exactly through
their Gaussian conditional laws; every other potential goes through
Euler-Maruyama with an internal step ``eta / substeps``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.signal import lfilter

from .errors import InvalidConfigError, InvalidInputError, UnsupportedError
from .numerics import as_rng, box_grid, default_radius, gauss_legendre, log_gaussian

# Euler-Maruyama burn-in used by ``sample_stationary`` for non-Gaussian potentials:
# 10 relaxation times (1/rho each) at a step of 2e-3 / l0.
STATIONARY_BURNIN_RELAXATIONS = 10.0
STATIONARY_BURNIN_STEP = 2e-3
FD_HESSIAN_REL_STEP = 1e-4


@dataclass(frozen=True)
class NamedPotential:
    """Registry entry for a non-OU test potential."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    constants: Callable[[int], tuple[float, float, float, float]]
    log_normalizer: Callable[[int], float] | None = None


_REGISTRY: dict[str, NamedPotential] = {}


def register_potential(name: str, potential: NamedPotential) -> None:
    _REGISTRY[name] = potential


def _logcosh(x):
    return np.logaddexp(x, -x) - math.log(2.0)


@lru_cache(maxsize=None)
def _logcosh_log_z1() -> float:
    val, _ = integrate.quad(
        lambda t: math.exp(-0.5 * t * t - 0.1 * float(_logcosh(t))), -np.inf, np.inf,
        epsabs=1e-14, epsrel=1e-13,
    )
    return math.log(val)


def _aniso_scales(d: int) -> np.ndarray:
    return np.linspace(1.0, 4.0, d) if d > 1 else np.ones(1)


register_potential(
    "quadratic",
    NamedPotential(
        value=lambda x: 0.5 * np.sum(x * x, axis=-1),
        gradient=lambda x: np.array(x, dtype=float),
        constants=lambda d: (1.0, 1.0, 0.0, 1.0),
        log_normalizer=lambda d: 0.5 * d * math.log(2 * math.pi),
    ),
)
register_potential(
    "quadratic_logcosh",
    NamedPotential(
        value=lambda x: 0.5 * np.sum(x * x, axis=-1) + 0.1 * np.sum(_logcosh(x), axis=-1),
        gradient=lambda x: x + 0.1 * np.tanh(x),
        # sup |d^3/dx^3 0.1 log cosh| = 0.2 * 2 / (3 sqrt 3)
        constants=lambda d: (1.0, 1.1, 0.4 / (3 * math.sqrt(3)), max(1.0, 0.1 * math.sqrt(d))),
        log_normalizer=lambda d: d * _logcosh_log_z1(),
    ),
)
register_potential(
    "anisotropic_quadratic",
    NamedPotential(
        value=lambda x: 0.5 * np.sum(_aniso_scales(x.shape[-1]) * x * x, axis=-1),
        gradient=lambda x: _aniso_scales(x.shape[-1]) * x,
        constants=lambda d: (1.0, float(_aniso_scales(d).max()), 0.0, float(_aniso_scales(d).max())),
        log_normalizer=lambda d: float(np.sum(0.5 * np.log(2 * math.pi / _aniso_scales(d)))),
    ),
)


@dataclass(eq=False)
class PotentialSpec:
    """The potential ``f`` together with its regularity constants.

    ``kind`` is ``"ou"`` (``f(x) = x^T theta x / 2``) or ``"named"`` (registry entry).
    The minimiser is always the origin.
    """

    kind: str
    d: int
    rho: float
    l0: float
    l1: float
    k_growth: float
    theta: np.ndarray | None = None
    name: str | None = None

    @classmethod
    def ou(cls, theta) -> "PotentialSpec":
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[0] != theta.shape[1] or not np.allclose(theta, theta.T):
            raise InvalidInputError("theta must be a symmetric square matrix")
        eig = np.linalg.eigvalsh(theta)
        if eig.min() <= 0:
            raise InvalidInputError("theta must be positive definite")
        return cls("ou", theta.shape[0], float(eig.min()), float(eig.max()), 0.0,
                   float(eig.max()), theta=theta)

    @classmethod
    def named(cls, name: str, d: int = 1) -> "PotentialSpec":
        if name not in _REGISTRY:
            raise InvalidInputError(f"unknown potential {name!r}; known: {sorted(_REGISTRY)}")
        rho, l0, l1, k = _REGISTRY[name].constants(d)
        return cls("named", int(d), rho, l0, l1, k, name=name)

    @property
    def is_ou(self) -> bool:
        return self.kind == "ou"

    def _entry(self) -> NamedPotential:
        return _REGISTRY[self.name]

    def value(self, x) -> np.ndarray:
        x = as_points(x, self.d)
        if self.is_ou:
            return 0.5 * np.einsum("...i,ij,...j->...", x, self.theta, x)
        return self._entry().value(x)

    def gradient(self, x) -> np.ndarray:
        x = as_points(x, self.d)
        if self.is_ou:
            return x @ self.theta.T
        return self._entry().gradient(x)

    def hessian(self, x) -> np.ndarray:
        """Exact for OU; central differences of the gradient otherwise."""
        x = as_points(x, self.d)
        if self.is_ou:
            return np.broadcast_to(self.theta, x.shape[:-1] + (self.d, self.d)).copy()
        h = FD_HESSIAN_REL_STEP * (1.0 + np.linalg.norm(x, axis=-1))
        cols = []
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = 1.0
            step = h[..., None] * e
            cols.append((self.gradient(x + step) - self.gradient(x - step)) / (2 * h[..., None]))
        hess = np.stack(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "rho": self.rho, "l0": self.l0,
               "l1": self.l1, "k_growth": self.k_growth}
        if self.is_ou:
            out["theta"] = self.theta.tolist()
        else:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PotentialSpec":
        if data["kind"] == "ou":
            spec = cls.ou(data["theta"])
        else:
            spec = cls.named(data["name"], int(data.get("d", 1)))
        for key in ("rho", "l0", "l1", "k_growth"):
            if key in data:
                setattr(spec, key, float(data[key]))
        return spec


def as_points(x, d: int) -> np.ndarray:
    """Coerce ``x`` to shape ``(..., d)``; for ``d == 1`` bare scalars and vectors are points."""
    arr = np.asarray(x, dtype=float)
    if d == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != d:
        raise InvalidInputError(f"expected trailing dimension {d}, got shape {arr.shape}")
    return arr


def _require_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")


def grad_potential(spec: PotentialSpec, x) -> np.ndarray:
    x = as_points(x, spec.d)
    _require_finite(x)
    return spec.gradient(x)


def log_stationary_density(spec: PotentialSpec, x) -> np.ndarray:
    x = as_points(x, spec.d)
    if spec.is_ou:
        return log_gaussian(x, np.zeros(spec.d), np.linalg.inv(spec.theta))
    entry = spec._entry()
    if entry.log_normalizer is None:
        raise UnsupportedError(f"potential {spec.name!r} has no registered normaliser")
    return -entry.value(x) - entry.log_normalizer(spec.d)


def stationary_density(spec: PotentialSpec, x) -> np.ndarray:
    """Normalised ``pi(x) = exp(-f(x)) / Z``."""
    return np.exp(log_stationary_density(spec, x))


def _euler_maruyama(spec, x, step, n_steps, rng):
    scale = math.sqrt(2.0 * step)
    for _ in range(n_steps):
        x = x - step * spec.gradient(x) + scale * rng.standard_normal(x.shape)
    return x


def sample_stationary(spec: PotentialSpec, n: int, seed=None) -> np.ndarray:
    """``n`` independent draws from ``pi``, shape ``(n, d)``.

    OU draws are exact. Other potentials start at the minimiser and run
    ``n`` parallel Euler-Maruyama chains for ``STATIONARY_BURNIN_RELAXATIONS / rho``
    time units at step ``STATIONARY_BURNIN_STEP / l0``.
    """
    if int(n) < 1:
        raise InvalidInputError("n must be at least 1")
    rng = as_rng(seed)
    if spec.is_ou:
        chol = np.linalg.cholesky(np.linalg.inv(spec.theta))
        return rng.standard_normal((int(n), spec.d)) @ chol.T
    step = STATIONARY_BURNIN_STEP / spec.l0
    n_steps = int(math.ceil(STATIONARY_BURNIN_RELAXATIONS / spec.rho / step))
    return _euler_maruyama(spec, np.zeros((int(n), spec.d)), step, n_steps, rng)


def ou_transition_moments(spec: PotentialSpec, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``(A, Sigma)`` with ``x_t | x_0 ~ N(A x_0, Sigma)``."""
    if not spec.is_ou:
        raise UnsupportedError("closed-form transition moments need an OU potential")
    if not t > 0:
        raise InvalidInputError("time must be positive")
    lam, vec = np.linalg.eigh(spec.theta)
    decay = np.exp(-lam * t)
    var = -np.expm1(-2.0 * lam * t) / lam
    return (vec * decay) @ vec.T, (vec * var) @ vec.T


class OUKernel:
    """Exact ``t``-time transition density of an OU potential."""

    def __init__(self, spec: PotentialSpec, t: float):
        self.spec = spec
        self.t = float(t)
        self.A, self.cov = ou_transition_moments(spec, t)
        self._chol = np.linalg.cholesky(self.cov)

    @property
    def d(self) -> int:
        return self.spec.d

    def mean(self, x) -> np.ndarray:
        return as_points(x, self.d) @ self.A.T

    def log_density(self, x, xp) -> np.ndarray:
        x = as_points(x, self.d)
        xp = as_points(xp, self.d)
        return log_gaussian(xp, x @ self.A.T, self.cov)

    def __call__(self, x, xp) -> np.ndarray:
        return np.exp(self.log_density(x, xp))

    def sample(self, x, rng) -> np.ndarray:
        x = as_points(x, self.d)
        return x @ self.A.T + rng.standard_normal(x.shape) @ self._chol.T


def transition_density_ou(spec: PotentialSpec, eta: float, x, xp) -> np.ndarray:
    return OUKernel(spec, eta)(x, xp)


@dataclass(eq=False)
class Trajectory:
    """Observations ``x_{i eta}``, ``i = 0 .. floor(T/eta) - 1``."""

    eta: float
    points: np.ndarray
    total_time: float
    seed: int | None = None
    substeps: int = 1
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.eta * np.arange(len(self))

    @property
    def trajectory_id(self) -> str:
        h = hashlib.sha256(repr(float(self.eta)).encode())
        h.update(np.ascontiguousarray(self.points, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path) -> None:
        header = ["t"] + [f"x_{i + 1}" for i in range(self.d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, row in zip(self.times, self.points):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        t, pts = data[:, 0], data[:, 1:]
        eta = float(t[1] - t[0]) if len(t) > 1 else float("nan")
        return cls(eta=eta, points=pts, total_time=eta * len(t))


def n_observations(eta: float, total_time: float) -> int:
    return int(math.floor(total_time / eta + 1e-9))


def simulate_paths(
    spec: PotentialSpec, eta: float, total_time: float, seed=None, substeps: int = 1,
    n_paths: int = 1,
) -> np.ndarray:
    """Independent stationary paths sampled every ``eta``; shape ``(n_paths, n_points, d)``."""
    if not eta > 0:
        raise InvalidConfigError("eta must be positive")
    if total_time < 2 * eta:
        raise InvalidConfigError("total time must cover at least two observations (T >= 2 eta)")
    if int(substeps) < 1:
        raise InvalidConfigError("substeps must be >= 1")
    rng = as_rng(seed)
    n_pts = n_observations(eta, total_time)
    d = spec.d

    if spec.is_ou:
        lam, vec = np.linalg.eigh(spec.theta)
        out = np.empty((n_paths, n_pts, d))
        z = np.empty((n_paths, n_pts, d))
        # independent AR(1) recursions in the eigenbasis
        for i in range(d):
            a = math.exp(-lam[i] * eta)
            s = math.sqrt(-math.expm1(-2.0 * lam[i] * eta) / lam[i])
            drive = s * rng.standard_normal((n_paths, n_pts))
            drive[:, 0] = rng.standard_normal(n_paths) / math.sqrt(lam[i])
            z[:, :, i] = lfilter([1.0], [1.0, -a], drive, axis=1)
        np.matmul(z, vec.T, out=out)
        return out

    x = sample_stationary(spec, n_paths, rng)
    out = np.empty((n_paths, n_pts, d))
    out[:, 0] = x
    h = eta / int(substeps)
    for k in range(1, n_pts):
        x = _euler_maruyama(spec, x, h, int(substeps), rng)
        out[:, k] = x
    return out


def simulate_trajectory(
    spec: PotentialSpec, eta: float, total_time: float, seed=None, substeps: int = 1
) -> Trajectory:
    """One stationary trajectory with ``floor(T/eta)`` observations."""
    pts = simulate_paths(spec, eta, total_time, seed, substeps, n_paths=1)[0]
    return Trajectory(eta=float(eta), points=pts, total_time=float(total_time),
                      seed=seed if isinstance(seed, (int, np.integer)) else None,
                      substeps=int(substeps))


@dataclass
class AssumptionReport:
    rho_ok: bool
    l0_ok: bool
    l1_ok: bool
    growth_ok: bool
    min_eigenvalue: float
    max_eigenvalue: float
    max_growth_ratio: float
    max_hessian_lipschitz: float
    radius: float
    first_violation: dict | None = None

    @property
    def ok(self) -> bool:
        return self.rho_ok and self.l0_ok and self.l1_ok and self.growth_ok


def check_assumptions(spec: PotentialSpec, grid=None, radius: float | None = None,
                      n_per_axis: int = 41) -> AssumptionReport:
    """Check strong convexity, smoothness and linear growth on every grid point.

    The Hessian-Lipschitz (``l1``) check compares consecutive grid points.
    """
    if radius is None:
        radius = default_radius(spec.rho)
    if grid is None:
        grid = box_grid(radius, n_per_axis, spec.d)
    grid = as_points(grid, spec.d).reshape(-1, spec.d)
    if grid.shape[0] == 0:
        raise InvalidInputError("grid must be non-empty")
    tol = 1e-12 if spec.is_ou else 1e-6 * max(1.0, spec.l0)

    hess = spec.hessian(grid)
    eig = np.linalg.eigvalsh(hess)
    norms = np.linalg.norm(grid, axis=-1)
    growth = np.linalg.norm(spec.gradient(grid), axis=-1) / (1.0 + norms)
    if grid.shape[0] > 1:
        dh = np.linalg.norm(hess[1:] - hess[:-1], ord=2, axis=(-2, -1))
        dx = np.linalg.norm(grid[1:] - grid[:-1], axis=-1)
        lip_bad = dh > spec.l1 * dx + tol
        lip = np.where(dx > 0, dh / np.where(dx > 0, dx, 1.0), 0.0)
    else:
        lip_bad = np.zeros(0, bool)
        lip = np.zeros(1)

    bad = {
        "rho": eig[:, 0] < spec.rho - tol,
        "l0": eig[:, -1] > spec.l0 + tol,
        "growth": growth > spec.k_growth + tol,
        "l1": np.concatenate([lip_bad, [False]]),
    }
    first = None
    for name, mask in bad.items():
        idx = np.flatnonzero(mask)
        if idx.size and (first is None or idx[0] < first["index"]):
            first = {"check": name, "index": int(idx[0]), "point": grid[idx[0]].tolist()}
    return AssumptionReport(
        rho_ok=not bad["rho"].any(), l0_ok=not bad["l0"].any(),
        l1_ok=not bad["l1"].any(), growth_ok=not bad["growth"].any(),
        min_eigenvalue=float(eig[:, 0].min()), max_eigenvalue=float(eig[:, -1].max()),
        max_growth_ratio=float(growth.max()), max_hessian_lipschitz=float(lip.max()),
        radius=float(radius), first_violation=first,
    )


@dataclass
class NormReport:
    b_estimate: float
    b_se: float
    b_bound: float
    b_bound_displayed: float
    n_mc: int

    @property
    def bound_holds(self) -> bool:
        return self.b_estimate <= self.b_bound

    @property
    def displayed_bound_holds(self) -> bool:
        return self.b_estimate <= self.b_bound_displayed


def expected_norm_b(spec: PotentialSpec, n_mc: int = 100_000, seed=None) -> NormReport:
    """Monte-Carlo ``B = E_pi ||x||`` against the strong-convexity bound.

    ``b_bound = pi(0) (2 pi / rho)^{d/2} sqrt(d / rho)`` keeps the Gaussian
    normaliser; ``b_bound_displayed = pi(0) sqrt(d / rho)`` drops it.
    """
    if n_mc < 10_000:
        raise InvalidInputError("n_mc must be at least 1e4")
    x = sample_stationary(spec, n_mc, seed)
    norms = np.linalg.norm(x, axis=-1)
    pi0 = float(stationary_density(spec, np.zeros(spec.d)))
    root = math.sqrt(spec.d / spec.rho)
    return NormReport(
        b_estimate=float(norms.mean()),
        b_se=float(norms.std(ddof=1) / math.sqrt(n_mc)),
        b_bound=pi0 * (2 * math.pi / spec.rho) ** (spec.d / 2) * root,
        b_bound_displayed=pi0 * root,
        n_mc=int(n_mc),
    )


def expected_norm_quadrature(spec: PotentialSpec, n_nodes: int = 256,
                             radius: float | None = None) -> float:
    """``E_pi |x|`` by Gauss-Legendre on ``[-R, 0]`` and ``[0, R]`` (``d = 1``)."""
    if spec.d != 1:
        raise UnsupportedError("quadrature for B is one-dimensional")
    if radius is None:
        radius = 2 * default_radius(spec.rho)
    total = 0.0
    for a, b in ((-radius, 0.0), (0.0, radius)):
        t, w = gauss_legendre(n_nodes, a, b)
        total += float(np.sum(w * np.abs(t) * stationary_density(spec, t)))
    return total
