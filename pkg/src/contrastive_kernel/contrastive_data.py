"""Contrast distributions, the labelled pair construction, and the closeness constant c_q."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .diffusion import OUKernel, PotentialSpec, Trajectory, as_points, sample_stationary
from .errors import DegenerateContrastError, InvalidInputError, UnsupportedError
from .numerics import as_rng, box_grid, log_gaussian

QUADRATURE_SIGMAS = 12.0
LOG_TINY = math.log(np.finfo(float).tiny)


@dataclass(eq=False)
class ContrastSpec:
    """A Gaussian-mixture contrast density ``q``.

    ``kind`` records how it was built. ``random_walk`` is the one conditional
    kind: its components are centred at the current point ``x``.
    """

    kind: str
    d: int
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    params: dict = field(default_factory=dict)

    @classmethod
    def _make(cls, kind, w, mu, cov, **params):
        weights = np.asarray(w, dtype=float)
        means = np.atleast_2d(np.asarray(mu, dtype=float))
        covs = np.asarray(cov, dtype=float)
        d = means.shape[1]
        if covs.ndim == 1:
            covs = covs[:, None, None] * np.eye(d)
        if np.any(weights <= 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise InvalidInputError("mixture weights must be positive and sum to 1")
        for c in covs:
            if np.any(np.linalg.eigvalsh(c) <= 0):
                raise InvalidInputError("component covariances must be positive definite")
        return cls(kind, d, weights, means, covs, params)

    @classmethod
    def isotropic_gaussian(cls, mean, variance: float) -> "ContrastSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if not variance > 0:
            raise InvalidInputError("variance must be positive")
        return cls._make("isotropic_gaussian", [1.0], mean[None], [float(variance)],
                         mean=mean.tolist(), variance=float(variance))

    @classmethod
    def gaussian_mixture(cls, weights, means, variances) -> "ContrastSpec":
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        variances = np.asarray(variances, dtype=float)
        if np.any(variances <= 0):
            raise InvalidInputError("variances must be positive")
        return cls._make("gaussian_mixture", weights, means, variances,
                         weights=list(map(float, weights)), means=means.tolist(),
                         variances=variances.tolist())

    @classmethod
    def matched_ou(cls, theta, eta: float | None = None) -> "ContrastSpec":
        """``N(0, theta^{-1})``: the kernel's marginal once ``x`` is averaged under ``pi``.

        ``eta`` is recorded but does not change the density, since a stationary
        kernel maps ``pi`` to ``pi`` for every ``eta``.
        """
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        d = theta.shape[0]
        return cls._make("matched_ou", [1.0], np.zeros((1, d)), np.linalg.inv(theta)[None],
                         theta=theta.tolist(), eta=None if eta is None else float(eta))

    @classmethod
    def random_walk(cls, d: int, variance: float) -> "ContrastSpec":
        """Conditional contrast ``q(x' | x) = N(x, variance I)``."""
        if not variance > 0:
            raise InvalidInputError("variance must be positive")
        return cls._make("random_walk", [1.0], np.zeros((1, int(d))), [float(variance)],
                         d=int(d), variance=float(variance))

    @classmethod
    def stationary(cls, spec: PotentialSpec, eta: float | None = None) -> "ContrastSpec":
        """Default contrast: the stationary-matched Gaussian."""
        if spec.is_ou:
            return cls.matched_ou(spec.theta, eta)
        return cls.isotropic_gaussian(np.zeros(spec.d), 1.0 / spec.rho)

    @property
    def is_conditional(self) -> bool:
        return self.kind == "random_walk"

    def _centres(self, xp, x):
        if not self.is_conditional:
            return self.means
        if x is None:
            raise InvalidInputError("random_walk contrast needs the conditioning point x")
        return as_points(x, self.d)[..., None, :] + self.means

    def log_density(self, xp, x=None) -> np.ndarray:
        xp = as_points(xp, self.d)
        centres = self._centres(xp, x)
        if self.is_conditional:
            return np.log(self.weights[0]) + log_gaussian(xp, centres[..., 0, :], self.covs[0])
        parts = [np.log(w) + log_gaussian(xp, m, c)
                 for w, m, c in zip(self.weights, self.means, self.covs)]
        return parts[0] if len(parts) == 1 else logsumexp(np.stack(parts), axis=0)

    def density(self, xp, x=None) -> np.ndarray:
        return np.exp(self.log_density(xp, x))

    def sample(self, n: int, rng=None, x=None) -> np.ndarray:
        rng = as_rng(rng)
        n = int(n)
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.d))
        chols = np.linalg.cholesky(self.covs)
        out = self.means[comp] + np.einsum("nij,nj->ni", chols[comp], z)
        if self.is_conditional:
            out = out + as_points(x, self.d).reshape(n, self.d)
        return out

    def quadrature_window(self, x=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate interval holding all but ~1e-32 of the mass (``d = 1`` layouts)."""
        sd = np.sqrt(np.diagonal(self.covs, axis1=1, axis2=2))
        lo = (self.means - QUADRATURE_SIGMAS * sd).min(axis=0)
        hi = (self.means + QUADRATURE_SIGMAS * sd).max(axis=0)
        if self.is_conditional:
            xs = as_points(x, self.d)
            return xs + lo, xs + hi
        return lo, hi

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, data: dict) -> "ContrastSpec":
        kind = data["kind"]
        if kind == "isotropic_gaussian":
            return cls.isotropic_gaussian(data["mean"], data["variance"])
        if kind == "gaussian_mixture":
            return cls.gaussian_mixture(data["weights"], data["means"], data["variances"])
        if kind == "matched_ou":
            return cls.matched_ou(data["theta"], data.get("eta"))
        if kind == "random_walk":
            return cls.random_walk(data["d"], data["variance"])
        raise InvalidInputError(f"unknown contrast kind {kind!r}")


@dataclass(eq=False)
class PairDataset:
    """Ordered pairs ``(x_i, x'_i, y_i)``; ``x_i`` is trajectory point ``2i``."""

    x: np.ndarray
    xp: np.ndarray
    labels: np.ndarray
    eta: float
    seed: int | None = None
    contrast: dict | None = None
    source_trajectory_id: str | None = None

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, index) -> "PairDataset":
        return PairDataset(self.x[index], self.xp[index], self.labels[index], self.eta,
                           self.seed, self.contrast, self.source_trajectory_id)

    def split(self, holdout_fraction: float) -> tuple["PairDataset", "PairDataset"]:
        """Temporal split: the last ``holdout_fraction`` of pairs form the holdout."""
        n_hold = int(round(holdout_fraction * len(self)))
        cut = len(self) - n_hold
        return self.subset(slice(0, cut)), self.subset(slice(cut, len(self)))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.x, self.xp, self.labels.astype(np.int64)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def sidecar(self) -> dict:
        return {"eta": self.eta, "seed": self.seed, "contrast": self.contrast,
                "source_trajectory_id": self.source_trajectory_id, "n_pairs": len(self),
                "d": self.d}

    def to_csv(self, path) -> Path:
        """Write the pairs CSV and a ``.json`` sidecar next to it; returns the sidecar path."""
        path = Path(path)
        header = ([f"x_{i + 1}" for i in range(self.d)] + [f"xp_{i + 1}" for i in range(self.d)]
                  + ["label"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for a, b, y in zip(self.x, self.xp, self.labels):
                w.writerow([f"{v:.17g}" for v in a] + [f"{v:.17g}" for v in b] + [int(y)])
        side = path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return side

    @classmethod
    def from_csv(cls, path) -> "PairDataset":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = (data.shape[1] - 1) // 2
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        return cls(data[:, :d], data[:, d:2 * d], data[:, -1].astype(np.int64),
                   float(meta.get("eta", float("nan"))), meta.get("seed"), meta.get("contrast"),
                   meta.get("source_trajectory_id"))


def build_pairs(traj: Trajectory, contrast: ContrastSpec, seed=None) -> PairDataset:
    """Pair ``x_{2i}`` with ``x_{2i+1}`` (label 1) or a fresh ``q`` draw (label 0), each w.p. 1/2.

    An odd final point is dropped.
    """
    pts = np.asarray(traj.points, dtype=float)
    if pts.shape[0] < 2:
        raise InvalidInputError("trajectory needs at least 2 points")
    if pts.shape[1] != contrast.d:
        raise InvalidInputError("trajectory and contrast dimensions differ")
    rng = as_rng(seed)
    m = pts.shape[0] // 2
    x = pts[0:2 * m:2]
    xp = pts[1:2 * m:2].copy()
    labels = (rng.random(m) < 0.5).astype(np.int64)
    neg = labels == 0
    xp[neg] = contrast.sample(int(neg.sum()), rng, x=x[neg] if contrast.is_conditional else None)
    return PairDataset(x, xp, labels, float(traj.eta),
                       seed if isinstance(seed, (int, np.integer)) else None,
                       contrast.to_dict(), traj.trajectory_id)


def sample_iid_pairs(spec: PotentialSpec, contrast: ContrastSpec, eta: float, n: int,
                     seed=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Independent draws from the pair law: ``x ~ pi``, then the usual label/positive/negative rule."""
    if not spec.is_ou:
        raise UnsupportedError("fresh pairs need the exact OU kernel")
    rng = as_rng(seed)
    x = sample_stationary(spec, n, rng)
    labels = (rng.random(n) < 0.5).astype(np.int64)
    pos = OUKernel(spec, eta).sample(x, rng)
    neg = contrast.sample(n, rng, x=x if contrast.is_conditional else None)
    return x, np.where(labels[:, None] == 1, pos, neg), labels


@dataclass
class CqReport:
    c_q: float
    log_c_q: float
    argmax_ratio_point: tuple[list, list]
    argmin_ratio_point: tuple[list, list]
    max_log_ratio: float
    min_log_ratio: float
    n_x: int
    n_xprime: int
    radius: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def compute_cq(spec: PotentialSpec, contrast: ContrastSpec, eta: float, grid_x=None,
               grid_xprime=None, radius: float = 4.0, n_per_axis: int = 401,
               chunk: int = 256) -> CqReport:
    """``c_q = max over the grid of max(p*/q, q/p*)``, computed in log space.

    Grids default to ``n_per_axis`` points per axis on ``[-radius, radius]^d``.
    """
    if not spec.is_ou:
        raise UnsupportedError("c_q needs the exact OU kernel")
    gx = box_grid(radius, n_per_axis, spec.d) if grid_x is None else as_points(grid_x, spec.d).reshape(-1, spec.d)
    gp = box_grid(radius, n_per_axis, spec.d) if grid_xprime is None else as_points(grid_xprime, spec.d).reshape(-1, spec.d)
    kern = OUKernel(spec, eta)
    lq_static = None if contrast.is_conditional else contrast.log_density(gp)
    best_hi, best_lo = -np.inf, np.inf
    arg_hi = arg_lo = (0, 0)
    for start in range(0, gx.shape[0], chunk):
        xs = gx[start:start + chunk]
        lp = kern.log_density(xs[:, None, :], gp[None, :, :])
        if lq_static is None:
            lq = contrast.log_density(gp[None, :, :], np.broadcast_to(xs[:, None, :], lp.shape + (spec.d,)))
        else:
            lq = np.broadcast_to(lq_static, lp.shape)
        # q counts as vanishing once it underflows double precision
        bad = ~np.isfinite(lq) | (lq < LOG_TINY)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise DegenerateContrastError(f"q vanishes at x={xs[i].tolist()}, x'={gp[j].tolist()}")
        lr = lp - lq
        i_hi = np.unravel_index(np.argmax(lr), lr.shape)
        i_lo = np.unravel_index(np.argmin(lr), lr.shape)
        if lr[i_hi] > best_hi:
            best_hi, arg_hi = float(lr[i_hi]), (start + i_hi[0], i_hi[1])
        if lr[i_lo] < best_lo:
            best_lo, arg_lo = float(lr[i_lo]), (start + i_lo[0], i_lo[1])
    log_cq = max(best_hi, -best_lo, 0.0)
    return CqReport(
        c_q=math.exp(log_cq) if log_cq < 709.0 else math.inf,
        log_c_q=log_cq,
        argmax_ratio_point=(gx[arg_hi[0]].tolist(), gp[arg_hi[1]].tolist()),
        argmin_ratio_point=(gx[arg_lo[0]].tolist(), gp[arg_lo[1]].tolist()),
        max_log_ratio=best_hi, min_log_ratio=best_lo,
        n_x=gx.shape[0], n_xprime=gp.shape[0],
        radius=None if grid_x is not None else float(radius),
    )
