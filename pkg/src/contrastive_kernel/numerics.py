"""Quadrature, grids, seeding and Monte-Carlo summaries used by every module."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

BISECTION_ITERS = 64


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to ``[a, b]``."""
    if n < 1:
        raise ValueError("need at least one node")
    g, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return half * g + 0.5 * (a + b), half * w


def composite_gauss_legendre(n: int, a: float, b: float, n_panels: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """``n`` nodes split evenly over ``n_panels`` equal panels of ``[a, b]``."""
    per = max(int(n) // int(n_panels), 1)
    edges = np.linspace(a, b, int(n_panels) + 1)
    parts = [gauss_legendre(per, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    return np.concatenate([t for t, _ in parts]), np.concatenate([w for _, w in parts])


def default_radius(rho: float) -> float:
    """Half-width of the working box, six stationary standard deviations."""
    return 6.0 / np.sqrt(rho)


def box_grid(radius: float, n_per_axis: int, d: int = 1) -> np.ndarray:
    """Regular grid on ``[-radius, radius]^d`` as an ``(n_per_axis**d, d)`` array."""
    axis = np.linspace(-radius, radius, n_per_axis)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _find_crossings(split, lo, hi, n_coarse):
    """Locate sign changes of ``split`` on each row by a coarse scan plus bisection."""
    n_rows = lo.shape[0]
    frac = np.linspace(0.0, 1.0, n_coarse)
    t = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
    rows = np.repeat(np.arange(n_rows), n_coarse)
    s = np.asarray(split(rows, t.ravel())).reshape(n_rows, n_coarse) > 0
    r_idx, c_idx = np.nonzero(s[:, 1:] != s[:, :-1])
    if r_idx.size == 0:
        return r_idx, np.empty(0)
    a = t[r_idx, c_idx]
    b = t[r_idx, c_idx + 1]
    sa = s[r_idx, c_idx]
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (a + b)
        sm = np.asarray(split(r_idx, mid)) > 0
        left = sm == sa
        a = np.where(left, mid, a)
        b = np.where(left, b, mid)
    return r_idx, 0.5 * (a + b)


def integrate_rows(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    n_nodes: int = 512,
    n_panels: int = 8,
    split: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Batched composite Gauss-Legendre: ``out[i] = int_{lo[i]}^{hi[i]} fn(i, t) dt``.

    ``fn`` and ``split`` receive a row-index array and matching abscissae. When
    ``split`` is given, panels are additionally cut where it changes sign, which
    restores spectral accuracy for integrands with kinks such as ``|p - q|``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n_rows = lo.shape[0]
    per_panel = max(int(n_nodes) // int(n_panels), 1)

    frac = np.linspace(0.0, 1.0, n_panels + 1)
    bp_rows = np.repeat(np.arange(n_rows), n_panels + 1)
    bp_vals = (lo[:, None] + (hi - lo)[:, None] * frac[None, :]).ravel()
    if split is not None:
        c_rows, c_vals = _find_crossings(split, lo, hi, 4 * int(n_nodes))
        bp_rows = np.concatenate([bp_rows, c_rows])
        bp_vals = np.concatenate([bp_vals, c_vals])
    order = np.lexsort((bp_vals, bp_rows))
    bp_rows = bp_rows[order]
    bp_vals = bp_vals[order]
    same = bp_rows[1:] == bp_rows[:-1]
    a = bp_vals[:-1][same]
    b = bp_vals[1:][same]
    seg_rows = bp_rows[:-1][same]
    keep = b > a
    a, b, seg_rows = a[keep], b[keep], seg_rows[keep]

    g, w = _leggauss(per_panel)
    half = 0.5 * (b - a)
    t = (half[:, None] * g[None, :] + (0.5 * (a + b))[:, None]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    rows = np.repeat(seg_rows, per_panel)
    vals = np.asarray(fn(rows, t), dtype=float)
    return np.bincount(rows, weights=wt * vals, minlength=n_rows)


@dataclass(frozen=True)
class MCEstimate:
    """Monte-Carlo mean with its standard error."""

    mean: float
    se: float
    n: int

    def __float__(self) -> float:
        return float(self.mean)

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "MCEstimate":
        values = np.asarray(values, dtype=float)
        n = values.size
        se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return cls(float(values.mean()), se, n)


def derive_seed(master: int, *keys: str | int) -> int:
    """Counter-based child seed: ``SeedSequence(master, spawn_key=crc32(keys))``.

    String keys are hashed with CRC-32 so that adding a new stream never shifts
    the seeds of existing ones.
    """
    spawn = tuple(zlib.crc32(str(k).encode()) for k in keys)
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=spawn)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def log_gaussian(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log-density of ``N(mean, cov)`` evaluated row-wise on ``(..., d)`` arrays."""
    cov = np.atleast_2d(cov)
    d = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = np.asarray(x, dtype=float) - mean
    sol = np.linalg.solve(chol, diff.reshape(-1, d).T).T.reshape(diff.shape)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * np.sum(sol**2, axis=-1) - 0.5 * (d * np.log(2 * np.pi) + logdet)


def jsonable(obj):
    """Convert numpy containers to plain Python; non-finite floats become ``"inf"``/``"-inf"``/``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, MCEstimate):
        return {"mean": jsonable(obj.mean), "se": jsonable(obj.se), "n": obj.n}
    return obj
