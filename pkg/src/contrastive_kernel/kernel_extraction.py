"""Turn a pair classifier into a transition-kernel estimate ``p = h q / (1 - h)``."""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass

import numpy as np

from .contrastive_data import ContrastSpec
from .diffusion import as_points
from .errors import InvalidInputError, UnsupportedError
from .numerics import as_rng, integrate_rows

DEFAULT_CLAMP_EPS = 1e-6


def classifier_logit(h, x, xp) -> np.ndarray:
    """Log-odds of ``h``; uses ``h.logit`` when available to avoid cancellation near 1."""
    if hasattr(h, "logit"):
        return np.asarray(h.logit(x, xp), dtype=float)
    p = np.asarray(h(x, xp), dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


class KernelEstimate:
    """``p(x, x') = h_c q(x') / (1 - h_c)`` with ``h_c = min(h, 1 - eps)``.

    Only the singular end ``h -> 1`` is clamped by default; ``clamp_low=True``
    also floors ``h`` at ``eps``, which lifts ``p`` to at least ``eps q`` in the
    tails. Clamping is done on the logit, which is equivalent and exact in
    floating point. ``n_evaluations`` and ``n_clamped`` count every evaluated pair.
    """

    def __init__(self, classifier, contrast: ContrastSpec, clamp_eps: float = DEFAULT_CLAMP_EPS,
                 clamp_low: bool = False):
        self.classifier = classifier
        self.contrast = contrast
        self.clamp_eps = float(clamp_eps)
        self.clamp_low = bool(clamp_low)
        self.logit_bound = math.log1p(-self.clamp_eps) - math.log(self.clamp_eps)
        self.n_evaluations = 0
        self.n_clamped = 0
        self._lock = threading.Lock()

    @property
    def d(self) -> int:
        return self.contrast.d

    def _clamped_logit(self, x, xp):
        z = classifier_logit(self.classifier, x, xp)
        lower = -self.logit_bound if self.clamp_low else -np.inf
        hit = (z > self.logit_bound) | (z < lower)
        return np.clip(z, lower, self.logit_bound), hit

    def log_density(self, x, xp) -> np.ndarray:
        x = as_points(x, self.d)
        xp = as_points(xp, self.d)
        z, hit = self._clamped_logit(x, xp)
        with self._lock:
            self.n_evaluations += int(hit.size)
            self.n_clamped += int(np.count_nonzero(hit))
        return z + self.contrast.log_density(xp, x)

    def __call__(self, x, xp) -> np.ndarray:
        return np.exp(self.log_density(x, xp))

    def clamp_fraction(self, x, xp) -> float:
        """Share of the given pairs whose classifier output gets clamped (counters untouched)."""
        _, hit = self._clamped_logit(as_points(x, self.d), as_points(xp, self.d))
        return float(np.mean(hit))

    @property
    def clamp_rate(self) -> float:
        return self.n_clamped / self.n_evaluations if self.n_evaluations else 0.0


def extract_p_eta(h, contrast: ContrastSpec, clamp_eps: float = DEFAULT_CLAMP_EPS,
                  clamp_low: bool = False) -> KernelEstimate:
    if not 0.0 < clamp_eps <= 1e-3:
        raise InvalidInputError("clamp_eps must lie in (0, 1e-3]")
    return KernelEstimate(h, contrast, clamp_eps, clamp_low)


class ScaledKernel:
    """``factor * base``; used to exercise the normalisation check."""

    def __init__(self, base, factor: float):
        if not factor > 0:
            raise InvalidInputError("factor must be positive")
        self.base = base
        self.factor = float(factor)

    @property
    def d(self) -> int:
        return self.base.d

    def log_density(self, x, xp) -> np.ndarray:
        return self.base.log_density(x, xp) + math.log(self.factor)

    def __call__(self, x, xp) -> np.ndarray:
        return np.exp(self.log_density(x, xp))


@dataclass
class NormalizationReport:
    probes: np.ndarray
    mass: np.ndarray
    se: np.ndarray | None
    max_deviation: float
    mode: str
    detail: str

    def to_dict(self) -> dict:
        return {"probes": self.probes.tolist(), "mass": self.mass.tolist(),
                "se": None if self.se is None else self.se.tolist(),
                "max_deviation": self.max_deviation, "mode": self.mode, "detail": self.detail}


def normalization_check(ker, x_probes, mode: str = "quadrature", n_nodes: int = 256,
                        interval: tuple[float, float] = (-10.0, 10.0), n_mc: int = 100_000,
                        seed=None, contrast: ContrastSpec | None = None) -> NormalizationReport:
    """``int p(x, x') dx'`` at each probe ``x``.

    ``quadrature`` (``d = 1``): composite Gauss-Legendre with ``n_nodes`` nodes
    on ``interval``. ``mc``: importance sampling with proposal ``q``, taken from
    ``contrast`` or the estimate's own contrast.
    """
    d = ker.d
    probes = as_points(x_probes, d).reshape(-1, d)
    if mode == "quadrature":
        if d != 1:
            raise UnsupportedError("quadrature normalisation is one-dimensional; use mode='mc'")
        lo = np.full(probes.shape[0], float(interval[0]))
        hi = np.full(probes.shape[0], float(interval[1]))

        def integrand(rows, t):
            return np.exp(ker.log_density(probes[rows, 0], t))

        mass = integrate_rows(integrand, lo, hi, n_nodes=n_nodes, n_panels=8)
        se = None
        detail = f"gauss-legendre {n_nodes} nodes on [{interval[0]}, {interval[1]}]"
    elif mode == "mc":
        q = contrast if contrast is not None else getattr(ker, "contrast", None)
        if q is None:
            raise InvalidInputError("MC normalisation needs a proposal contrast")
        rng = as_rng(seed)
        mass = np.empty(probes.shape[0])
        se = np.empty(probes.shape[0])
        for i, x in enumerate(probes):
            xs = np.broadcast_to(x, (int(n_mc), d))
            xp = q.sample(int(n_mc), rng, x=xs if q.is_conditional else None)
            w = np.exp(ker.log_density(xs, xp) - q.log_density(xp, xs))
            mass[i] = w.mean()
            se[i] = w.std(ddof=1) / math.sqrt(n_mc)
        detail = f"importance sampling under q, {int(n_mc)} draws per probe"
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    return NormalizationReport(probes, mass, se, float(np.max(np.abs(mass - 1.0))), mode, detail)


def dump_grid_csv(ker, path, xs, xps) -> None:
    """Write ``p`` on the product grid ``xs x xps``: columns ``x_*, xp_*, value``."""
    d = ker.d
    xs = as_points(xs, d).reshape(-1, d)
    xps = as_points(xps, d).reshape(-1, d)
    vals = ker(xs[:, None, :], xps[None, :, :])
    names = (["x", "xp"] if d == 1 else
             [f"x_{i + 1}" for i in range(d)] + [f"xp_{i + 1}" for i in range(d)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value"])
        for i, x in enumerate(xs):
            for j, xp in enumerate(xps):
                w.writerow([f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in xp]
                           + [f"{vals[i, j]:.17g}"])
