"""Numerical instances of the kernel-recovery guarantees and the quantities inside them.

Everything defaults to ``d = 1`` with nested Gauss-Legendre quadrature: the
outer integral runs over ``x`` in ``[-R, R]`` weighted by ``pi``; the inner
integral over ``x'`` follows the kernel (``+-12`` standard deviations around
``e^{-theta eta} x``), widened to the contrast's window when ``q`` carries
weight. ``mode="mc"`` switches to Monte Carlo for any ``d``.

Notation: ``p*`` is the true kernel, ``p`` an estimate, ``q`` the contrast,
``h = p / (p + q)`` the classifier a kernel induces, and
``eps_tr = R(h) - eps*`` the excess population risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .contrastive_data import ContrastSpec, compute_cq, sample_iid_pairs
from .diffusion import OUKernel, PotentialSpec, as_points, log_stationary_density, sample_stationary
from .errors import ConstructionError, InvalidInputError, SupportViolationError, UnsupportedError
from .numerics import (
    MCEstimate,
    as_rng,
    box_grid,
    composite_gauss_legendre,
    default_radius,
    integrate_rows,
    jsonable,
    log_gaussian,
)

KERNEL_SIGMAS = 12.0
THEOREM_KL_DELTA_MAX = 7.0 / 6.0
SUPPORT_FLOOR = 1e-12


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration settings shared by every check.

    ``radius`` bounds the outer ``x`` integral (``None``: ``6 / sqrt(rho)``);
    ``grid_radius`` and ``grid_n`` define the ``(x, x')`` grid used for suprema
    such as ``c_q`` and ``Delta_min/max``.
    """

    mode: str = "quadrature"
    radius: float | None = None
    n_x: int = 256
    n_xp: int = 512
    n_panels: int = 8
    n_mc: int = 1_000_000
    seed: int = 0
    grid_radius: float = 4.0
    grid_n: int = 201

    def doubled(self) -> "QuadratureSpec":
        return replace(self, n_x=2 * self.n_x, n_xp=2 * self.n_xp)

    def describe(self) -> dict:
        if self.mode == "mc":
            return {"mode": "mc", "n_mc": self.n_mc, "seed": self.seed}
        return {"mode": "quadrature", "radius": self.radius, "n_x": self.n_x, "n_xp": self.n_xp,
                "n_panels": self.n_panels, "grid_radius": self.grid_radius, "grid_n": self.grid_n}


DEFAULT_QUADRATURE = QuadratureSpec()


def _check_mode(spec: PotentialSpec, quad: QuadratureSpec) -> None:
    if not spec.is_ou:
        raise UnsupportedError("theorem checks need the exact OU kernel")
    if quad.mode == "quadrature" and spec.d != 1:
        raise UnsupportedError("quadrature mode is one-dimensional; use mode='mc'")
    if quad.mode not in ("quadrature", "mc"):
        raise InvalidInputError(f"unknown mode {quad.mode!r}")


def _outer_nodes(spec: PotentialSpec, quad: QuadratureSpec):
    radius = default_radius(spec.rho) if quad.radius is None else quad.radius
    xs, w = composite_gauss_legendre(quad.n_x, -radius, radius, quad.n_panels)
    return xs, w * np.exp(log_stationary_density(spec, xs))


def _kernel_window(kern: OUKernel, xs):
    m = kern.mean(xs)[..., 0]
    s = KERNEL_SIGMAS * math.sqrt(kern.cov[0, 0])
    return m - s, m + s


def _window(kern, contrast, xs, with_contrast):
    lo, hi = _kernel_window(kern, xs)
    if with_contrast and contrast is not None:
        qlo, qhi = contrast.quadrature_window(xs[:, None] if contrast.is_conditional else None)
        lo = np.minimum(lo, np.ravel(qlo) if contrast.is_conditional else qlo[0])
        hi = np.maximum(hi, np.ravel(qhi) if contrast.is_conditional else qhi[0])
    return lo, hi


def _double_integral(spec, eta, quad, integrand, contrast=None, with_contrast=False, split=None):
    """``int pi(x) int integrand(x, x') dx' dx`` with ``integrand`` vectorised over pairs."""
    kern = OUKernel(spec, eta)
    xs, wx = _outer_nodes(spec, quad)
    lo, hi = _window(kern, contrast, xs, with_contrast)
    wrap = None if split is None else (lambda rows, t: split(xs[rows], t))
    inner = integrate_rows(lambda rows, t: integrand(xs[rows], t), lo, hi,
                           n_nodes=quad.n_xp, n_panels=quad.n_panels, split=wrap)
    return float(np.sum(wx * inner))


def _log_density(p, x, xp) -> np.ndarray:
    if hasattr(p, "log_density"):
        return np.asarray(p.log_density(x, xp), dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p(x, xp), dtype=float))


def _check_support(lp_star, lp):
    bad = (lp_star > math.log(SUPPORT_FLOOR)) & ~(lp > -np.inf)
    if np.any(bad) or np.any(np.isnan(lp)):
        raise SupportViolationError("estimate is not positive where the true kernel is")


class GaussianKernel:
    """``N(A x, cov)``: a generic linear-Gaussian kernel evaluator."""

    def __init__(self, A, cov):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def log_density(self, x, xp) -> np.ndarray:
        x = as_points(x, self.d)
        return log_gaussian(as_points(xp, self.d), x @ self.A.T, self.cov)

    def __call__(self, x, xp) -> np.ndarray:
        return np.exp(self.log_density(x, xp))


def gaussian_kl(mean_p, cov_p, mean_q, cov_q) -> float:
    """Closed-form ``KL(N(mean_p, cov_p) || N(mean_q, cov_q))``."""
    mean_p, mean_q = np.atleast_1d(mean_p).astype(float), np.atleast_1d(mean_q).astype(float)
    cov_p, cov_q = np.atleast_2d(cov_p).astype(float), np.atleast_2d(cov_q).astype(float)
    d = mean_p.size
    inv_q = np.linalg.inv(cov_q)
    diff = mean_q - mean_p
    _, ld_p = np.linalg.slogdet(cov_p)
    _, ld_q = np.linalg.slogdet(cov_q)
    return 0.5 * float(np.trace(inv_q @ cov_p) + diff @ inv_q @ diff - d + ld_q - ld_p)


class InducedClassifier:
    """``h = p / (p + q)``, the classifier whose extraction returns ``p``."""

    def __init__(self, kernel, contrast: ContrastSpec):
        self.kernel = kernel
        self.contrast = contrast

    @property
    def d(self) -> int:
        return self.contrast.d

    def logit(self, x, xp) -> np.ndarray:
        return _log_density(self.kernel, x, xp) - self.contrast.log_density(xp, x)

    def predict(self, x, xp) -> np.ndarray:
        return expit(self.logit(x, xp))

    __call__ = predict


def _classifier_logit(h, x, xp):
    if hasattr(h, "logit"):
        return np.asarray(h.logit(x, xp), dtype=float)
    v = np.asarray(h(x, xp), dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(v) - np.log1p(-v)


# ---------------------------------------------------------------- risks


def epsilon_star(spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                 n_mc: int | None = None, seed=None, quad: QuadratureSpec | None = None):
    """Bayes risk ``eps* = E[(h* - y)^2]`` of the pair task.

    With ``n_mc`` set, a Monte-Carlo ``MCEstimate`` over fresh pairs; otherwise
    ``quad`` decides (quadrature returns a float via
    ``eps* = 1/2 E_pi int p* q / (p* + q) dx'``).
    """
    quad = quad or DEFAULT_QUADRATURE
    if n_mc is not None or quad.mode == "mc":
        n = int(n_mc or quad.n_mc)
        x, xp, y = sample_iid_pairs(spec, contrast, eta, n, quad.seed if seed is None else seed)
        kern = OUKernel(spec, eta)
        h = expit(kern.log_density(x, xp) - contrast.log_density(xp, x))
        return MCEstimate.from_samples((h - y) ** 2)
    _check_mode(spec, quad)
    kern = OUKernel(spec, eta)

    def integrand(x, xp):
        lp, lq = kern.log_density(x, xp), contrast.log_density(xp, x)
        return 0.5 * np.exp(lp + lq - np.logaddexp(lp, lq))

    return _double_integral(spec, eta, quad, integrand)


def population_risk(h, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                    n_mc: int = 1_000_000, seed=None) -> MCEstimate:
    """Monte-Carlo squared-loss risk of classifier ``h`` on freshly generated pairs."""
    x, xp, y = sample_iid_pairs(spec, contrast, eta, int(n_mc), seed)
    return MCEstimate.from_samples((np.asarray(h(x, xp), dtype=float) - y) ** 2)


@dataclass(frozen=True)
class PairedRisk:
    risk: MCEstimate
    eps_star: MCEstimate
    excess: MCEstimate


def paired_risk(h, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                n_mc: int = 1_000_000, seed=None) -> PairedRisk:
    """Risk of ``h`` and of ``h*`` on one shared Monte-Carlo pair set, with a paired difference."""
    x, xp, y = sample_iid_pairs(spec, contrast, eta, int(n_mc), seed)
    kern = OUKernel(spec, eta)
    hs = expit(kern.log_density(x, xp) - contrast.log_density(xp, x))
    lh = (np.asarray(h(x, xp), dtype=float) - y) ** 2
    ls = (hs - y) ** 2
    return PairedRisk(MCEstimate.from_samples(lh), MCEstimate.from_samples(ls),
                      MCEstimate.from_samples(lh - ls))


def population_risk_quadrature(h, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                               quad: QuadratureSpec | None = None) -> float:
    """``R(h) = 1/2 E_pi int [p* (1 - h)^2 + q h^2] dx'`` by quadrature."""
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    kern = OUKernel(spec, eta)

    def integrand(x, xp):
        hv = np.asarray(h(x, xp), dtype=float)
        return 0.5 * (np.exp(kern.log_density(x, xp)) * (1 - hv) ** 2
                      + contrast.density(xp, x) * hv ** 2)

    return _double_integral(spec, eta, quad, integrand, contrast, with_contrast=True)


def excess_risk(h, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                quad: QuadratureSpec | None = None):
    """``eps_tr = R(h) - eps* = E_pi int (p* + q)/2 (h - h*)^2 dx'``.

    The right-hand form avoids the cancellation of subtracting two risks.
    Returns a float (quadrature) or an ``MCEstimate`` over pairs from the
    label-marginal mixture ``(p* + q) / 2``.
    """
    quad = quad or DEFAULT_QUADRATURE
    kern = OUKernel(spec, eta)
    if quad.mode == "mc":
        x, xp, _ = sample_iid_pairs(spec, contrast, eta, quad.n_mc, quad.seed)
        hs = expit(kern.log_density(x, xp) - contrast.log_density(xp, x))
        hv = expit(_classifier_logit(h, x, xp))
        return MCEstimate.from_samples((hv - hs) ** 2)
    _check_mode(spec, quad)

    def integrand(x, xp):
        lp, lq = kern.log_density(x, xp), contrast.log_density(xp, x)
        diff = expit(_classifier_logit(h, x, xp)) - expit(lp - lq)
        return 0.5 * np.exp(np.logaddexp(lp, lq)) * diff * diff

    return _double_integral(spec, eta, quad, integrand, contrast, with_contrast=True)


# ---------------------------------------------------------------- perturbed kernels


@dataclass(eq=False)
class PerturbedKernel:
    """``p = p* (1 + delta)`` with ``delta`` a function of the whitened residual ``u``.

    ``u = L^{-1}(x' - e^{-theta eta} x)`` where ``L L^T`` is the kernel
    covariance, so ``u ~ N(0, I)`` under ``p*``. Both variants subtract the
    ``p*``-mean of their bump, which keeps ``int p dx' = 1`` exactly:

    * ``smooth_bump``: ``delta = a (g(u) - gbar(x))`` with
      ``g(u) = exp(-|u - c(x)|^2 / (2 w^2))`` and ``c(x) = (center + shift tanh x_1) e_1``;
    * ``constant_on_band``: ``delta = a (1{u_1 in band} - P(band))``.
    """

    spec: PotentialSpec
    eta: float
    kind: str
    amplitude: float
    center: float = 0.0
    width: float = 1.0
    shift: float = 0.0
    band: tuple[float, float] = (-0.5, 0.5)
    measured: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kernel = OUKernel(self.spec, self.eta)
        self._chol = np.linalg.cholesky(self.kernel.cov)

    @property
    def d(self) -> int:
        return self.spec.d

    def residual(self, x, xp) -> np.ndarray:
        x = as_points(x, self.d)
        r = as_points(xp, self.d) - x @ self.kernel.A.T
        shape = r.shape
        return np.linalg.solve(self._chol, r.reshape(-1, self.d).T).T.reshape(shape)

    def _centre(self, x):
        return self.center + self.shift * np.tanh(as_points(x, self.d)[..., 0])

    def _gbar(self, c):
        w2 = self.width ** 2
        return (w2 / (1 + w2)) ** (self.d / 2) * np.exp(-c * c / (2 * (1 + w2)))

    def _band_mass(self):
        return float(norm.cdf(self.band[1]) - norm.cdf(self.band[0]))

    def delta(self, x, xp) -> np.ndarray:
        u = self.residual(x, xp)
        if self.kind == "smooth_bump":
            c = self._centre(x)
            sq = (u[..., 0] - c) ** 2 + np.sum(u[..., 1:] ** 2, axis=-1)
            return self.amplitude * (np.exp(-sq / (2 * self.width ** 2)) - self._gbar(c))
        inside = (u[..., 0] >= self.band[0]) & (u[..., 0] <= self.band[1])
        return self.amplitude * (inside.astype(float) - self._band_mass())

    def delta_bounds(self) -> tuple[float, float]:
        """Analytic ``(inf delta, sup delta)`` over all ``(x, x')``."""
        a = self.amplitude
        if self.kind == "smooth_bump":
            cs = [self.center - abs(self.shift), self.center + abs(self.shift)]
            cmin = 0.0 if cs[0] <= 0.0 <= cs[1] else min(abs(cs[0]), abs(cs[1]))
            cmax = max(abs(cs[0]), abs(cs[1]))
            g_hi, g_lo = self._gbar(cmin), self._gbar(cmax)
            vals = [a * (1 - g_lo), a * (1 - g_hi), -a * g_hi, -a * g_lo]
        else:
            pm = self._band_mass()
            vals = [a * (1 - pm), -a * pm]
        return float(min(vals)), float(max(vals))

    def log_density(self, x, xp) -> np.ndarray:
        return self.kernel.log_density(x, xp) + np.log1p(self.delta(x, xp))

    def __call__(self, x, xp) -> np.ndarray:
        return np.exp(self.log_density(x, xp))

    def split(self, x, xp) -> np.ndarray | None:
        """Sign changes mark the band edges (``None`` for the smooth variant)."""
        u = self.residual(x, xp)[..., 0]
        return (u - self.band[0]) * (u - self.band[1])

    def describe(self) -> dict:
        lo, hi = self.delta_bounds()
        return {"kind": self.kind, "amplitude": self.amplitude, "center": self.center,
                "width": self.width, "shift": self.shift, "band": list(self.band),
                "delta_range": [lo, hi], **self.measured}


def make_perturbed_kernel(spec: PotentialSpec, eta: float, kind: str = "smooth_bump",
                          amplitude: float = 0.1, center: float = 0.0, width: float = 1.0,
                          shift: float = 0.0, band: tuple[float, float] = (-0.5, 0.5),
                          target_delta_max: float | None = None, theorem_kl: bool = False,
                          quad: QuadratureSpec | None = None) -> PerturbedKernel:
    """Build ``p* (1 + delta)`` and measure its ``Delta_min/max`` on the grid of ``quad``.

    The gate is ``target_delta_max`` if given, else ``7/6`` when ``theorem_kl``.
    """
    if not spec.is_ou:
        raise UnsupportedError("perturbations are built around the exact OU kernel")
    if kind not in ("smooth_bump", "constant_on_band"):
        raise InvalidInputError(f"unknown perturbation {kind!r}")
    if amplitude < 0 or width <= 0 or band[0] >= band[1]:
        raise InvalidInputError("need amplitude >= 0, width > 0 and an ordered band")
    pk = PerturbedKernel(spec, float(eta), kind, float(amplitude), float(center), float(width),
                         float(shift), (float(band[0]), float(band[1])))
    lo, hi = pk.delta_bounds()
    if 1.0 + lo <= 0.0:
        raise ConstructionError(f"mass correction drives the kernel negative (1 + delta >= {1 + lo:.4g})")
    gate = target_delta_max if target_delta_max is not None else (
        THEOREM_KL_DELTA_MAX if theorem_kl else None)
    if gate is not None and 1.0 + hi > gate + 1e-12:
        raise ConstructionError(f"Delta_max = {1 + hi:.6g} exceeds the gate {gate:.6g}")
    mm = delta_min_max(pk, spec, eta, quad=quad)
    pk.measured = {"delta_min": mm.delta_min, "delta_max": mm.delta_max}
    return pk


# ---------------------------------------------------------------- distances


def kl_to_truth(p, spec: PotentialSpec, eta: float, quad: QuadratureSpec | None = None):
    """``E_{x ~ pi} int p* log(p* / p) dx'``.

    For an unnormalised ``p`` this is not a divergence and may dip below zero;
    ``kernel_mass`` reports the defect.
    """
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    kern = OUKernel(spec, eta)
    if quad.mode == "mc":
        rng = as_rng(quad.seed)
        x = sample_stationary(spec, quad.n_mc, rng)
        xp = kern.sample(x, rng)
        lp_star, lp = kern.log_density(x, xp), _log_density(p, x, xp)
        _check_support(lp_star, lp)
        return MCEstimate.from_samples(lp_star - lp)

    def integrand(x, xp):
        lp_star, lp = kern.log_density(x, xp), _log_density(p, x, xp)
        _check_support(lp_star, lp)
        return np.exp(lp_star) * (lp_star - lp)

    split = p.split if getattr(p, "kind", None) == "constant_on_band" else None
    return _double_integral(spec, eta, quad, integrand, split=split)


def kl_at_x(p, spec: PotentialSpec, eta: float, x: float, n_nodes: int = 512) -> float:
    """``KL(p*(x, .) || p(x, .))`` at a single ``x`` (``d = 1``)."""
    kern = OUKernel(spec, eta)
    xs = np.array([float(x)])
    lo, hi = _kernel_window(kern, xs)

    def integrand(rows, t):
        lp_star, lp = kern.log_density(xs[rows], t), _log_density(p, xs[rows], t)
        _check_support(lp_star, lp)
        return np.exp(lp_star) * (lp_star - lp)

    return float(integrate_rows(integrand, lo, hi, n_nodes=n_nodes)[0])


def l1_to_truth(p, spec: PotentialSpec, eta: float, quad: QuadratureSpec | None = None):
    """``E_{x ~ pi, x' ~ p*(x, .)} |p(x, x') - p*(x, x')|``: a gap between density values."""
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    kern = OUKernel(spec, eta)
    if quad.mode == "mc":
        rng = as_rng(quad.seed)
        x = sample_stationary(spec, quad.n_mc, rng)
        xp = kern.sample(x, rng)
        return MCEstimate.from_samples(np.abs(np.exp(_log_density(p, x, xp))
                                              - np.exp(kern.log_density(x, xp))))

    def integrand(x, xp):
        lp_star = kern.log_density(x, xp)
        return np.exp(lp_star) * np.abs(np.exp(_log_density(p, x, xp)) - np.exp(lp_star))

    def split(x, xp):
        return _log_density(p, x, xp) - kern.log_density(x, xp)

    return _double_integral(spec, eta, quad, integrand, split=split)


def expected_kernel_value(spec: PotentialSpec, eta: float, quad: QuadratureSpec | None = None) -> float:
    """``E_{x ~ pi, x' ~ p*} p*(x, x')``."""
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    kern = OUKernel(spec, eta)
    return _double_integral(spec, eta, quad, lambda x, xp: np.exp(2 * kern.log_density(x, xp)))


def kernel_mass(p, spec: PotentialSpec, eta: float, quad: QuadratureSpec | None = None) -> float:
    """``E_pi int p(x, x') dx'`` over the kernel window (1 for a normalised estimate)."""
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    split = p.split if getattr(p, "kind", None) == "constant_on_band" else None
    return _double_integral(spec, eta, quad, lambda x, xp: np.exp(_log_density(p, x, xp)),
                            split=split)


def t2_term(p, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
            quad: QuadratureSpec | None = None):
    """``T2 = E_{x ~ pi, x' ~ p*} (max(p, p*) + q)^4 / q^2``, evaluated in log space."""
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    kern = OUKernel(spec, eta)

    def log_terms(x, xp):
        lp_star, lp = kern.log_density(x, xp), _log_density(p, x, xp)
        lq = contrast.log_density(xp, x)
        return lp_star, 4.0 * np.logaddexp(np.maximum(lp, lp_star), lq) - 2.0 * lq

    if quad.mode == "mc":
        rng = as_rng(quad.seed)
        x = sample_stationary(spec, quad.n_mc, rng)
        xp = kern.sample(x, rng)
        return MCEstimate.from_samples(np.exp(log_terms(x, xp)[1]))

    def integrand(x, xp):
        lp_star, lt = log_terms(x, xp)
        return np.exp(lp_star + lt)

    def split(x, xp):
        return _log_density(p, x, xp) - kern.log_density(x, xp)

    return _double_integral(spec, eta, quad, integrand, split=split)


@dataclass
class DeltaReport:
    delta_min: float
    delta_max: float
    argmin: tuple[list, list]
    argmax: tuple[list, list]
    ordered: bool

    def to_dict(self) -> dict:
        return jsonable(self.__dict__)


def delta_min_max(p, spec: PotentialSpec, eta: float, grid_x=None, grid_xprime=None,
                  quad: QuadratureSpec | None = None) -> DeltaReport:
    """Extremes of ``p / p*`` over a grid; ``ordered`` flags ``0 < min <= 1 <= max``."""
    quad = quad or DEFAULT_QUADRATURE
    kern = OUKernel(spec, eta)
    d = spec.d
    gx = (box_grid(quad.grid_radius, quad.grid_n, d) if grid_x is None
          else as_points(grid_x, d).reshape(-1, d))
    gp = (box_grid(quad.grid_radius, quad.grid_n, d) if grid_xprime is None
          else as_points(grid_xprime, d).reshape(-1, d))
    X = np.repeat(gx, gp.shape[0], axis=0)
    XP = np.tile(gp, (gx.shape[0], 1))
    lr = _log_density(p, X, XP) - kern.log_density(X, XP)
    i_lo, i_hi = int(np.argmin(lr)), int(np.argmax(lr))
    lo, hi = float(np.exp(lr[i_lo])), float(np.exp(lr[i_hi]))
    return DeltaReport(lo, hi, (X[i_lo].tolist(), XP[i_lo].tolist()),
                       (X[i_hi].tolist(), XP[i_hi].tolist()),
                       bool(0 < lo <= 1 + 1e-12 and hi >= 1 - 1e-12))


# ---------------------------------------------------------------- theorem reports


@dataclass
class TheoremReport:
    """One theorem instance: both sides, the inputs they used, and the verdict.

    ``passed`` is ``None`` when the hypotheses fail, since the theorem then
    makes no claim. ``rhs`` may be ``inf`` when only ``log_rhs`` is representable.
    """

    theorem: str
    inputs: dict
    lhs: float
    rhs: float
    log_rhs: float
    hypothesis_satisfied: bool
    passed: bool | None
    method: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return jsonable({
            "theorem": self.theorem, "inputs": self.inputs, "lhs": self.lhs, "rhs": self.rhs,
            "log_rhs": self.log_rhs, "hypothesis_satisfied": self.hypothesis_satisfied,
            "pass": self.passed, "method": self.method, "extras": self.extras,
        })


def _le(lhs: float, log_rhs: float) -> bool:
    if lhs <= 0.0:
        return True
    return math.log(lhs) <= log_rhs


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def _common_inputs(p, spec, contrast, eta, quad, cq_grid_n):
    h = InducedClassifier(p, contrast)
    eps_tr = float(excess_risk(h, spec, contrast, eta, quad))
    eps_star = float(epsilon_star(spec, contrast, eta, quad=quad))
    cq = compute_cq(spec, contrast, eta, radius=quad.grid_radius, n_per_axis=cq_grid_n)
    dm = delta_min_max(p, spec, eta, quad=quad)
    inputs = {"eta": float(eta), "d": spec.d, "rho": spec.rho, "c_q": cq.c_q, "log_c_q": cq.log_c_q,
              "eps_tr": eps_tr, "eps_star": eps_star, "delta_min": dm.delta_min,
              "delta_max": dm.delta_max, "box_radius": quad.grid_radius}
    return inputs, cq, dm


def theorem_kl_check(p, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                     quad: QuadratureSpec | None = None, cq_grid_n: int = 401) -> TheoremReport:
    """``E_pi KL(p* || p) <= 2 (1 + c_q)^5 eps_tr / Delta_min^2`` when ``Delta_max <= 7/6``.

    ``c_q`` and ``Delta_min/max`` are taken on the ``grid_radius`` box. The
    extras record the intermediate second-order bound
    ``-E int p* delta + E int p* delta^2 / (2 Delta_min^2)``.
    """
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    inputs, cq, dm = _common_inputs(p, spec, contrast, eta, quad, cq_grid_n)
    lhs = float(kl_to_truth(p, spec, eta, quad))
    eps_tr, dmin = inputs["eps_tr"], dm.delta_min
    log_1pc = float(np.logaddexp(0.0, cq.log_c_q))
    log_rhs = math.log(2.0) + 5.0 * log_1pc + _log(max(eps_tr, 0.0)) - 2.0 * _log(dmin)
    rhs = math.exp(log_rhs) if log_rhs < 709.0 else math.inf
    hyp = bool(dm.delta_max <= THEOREM_KL_DELTA_MAX + 1e-12 and math.isfinite(cq.log_c_q)
               and dmin > 0)

    kern = OUKernel(spec, eta)
    if quad.mode == "quadrature":
        split = p.split if getattr(p, "kind", None) == "constant_on_band" else None

        def ratio_minus_one(x, xp):
            return np.expm1(_log_density(p, x, xp) - kern.log_density(x, xp))

        m1 = _double_integral(spec, eta, quad,
                              lambda x, xp: np.exp(kern.log_density(x, xp)) * ratio_minus_one(x, xp),
                              split=split)
        m2 = _double_integral(spec, eta, quad,
                              lambda x, xp: np.exp(kern.log_density(x, xp)) * ratio_minus_one(x, xp) ** 2,
                              split=split)
        extras = {"mean_delta": m1, "mean_delta_sq": m2,
                  "second_order_bound": -m1 + m2 / (2 * min(dmin, 1.0) ** 2),
                  "kernel_mass": 1.0 + m1}
    else:
        extras = {}
    extras.update({"cq_argmax": cq.argmax_ratio_point, "cq_argmin": cq.argmin_ratio_point,
                   "delta_argmin": dm.argmin, "delta_argmax": dm.argmax,
                   "delta_ordered": dm.ordered, "hypothesis": "Delta_max <= 7/6, c_q finite on box"})
    if hasattr(p, "describe"):
        extras["estimate"] = p.describe()
    return TheoremReport("kl", inputs, lhs, rhs, log_rhs, hyp, _le(lhs, log_rhs) if hyp else None,
                         quad.describe(), extras)


def theorem_orig_check(p, spec: PotentialSpec, contrast: ContrastSpec, eta: float,
                       quad: QuadratureSpec | None = None, cq_grid_n: int = 401) -> TheoremReport:
    """``l1_to_truth <= sqrt(2 eps_tr) sqrt(T2)``, the Cauchy-Schwarz chain before constants.

    Also records the scaling proxy ``sqrt(2 eps_tr) sqrt(pi(0)) (1/(rho eta^2))^{d/4}``
    and ``T2 / (pi(0) (1/(rho eta^2))^{d/2})``.
    """
    quad = quad or DEFAULT_QUADRATURE
    _check_mode(spec, quad)
    inputs, cq, dm = _common_inputs(p, spec, contrast, eta, quad, cq_grid_n)
    lhs = float(l1_to_truth(p, spec, eta, quad))
    t2 = float(t2_term(p, spec, contrast, eta, quad))
    eps_tr = max(inputs["eps_tr"], 0.0)
    rhs = math.sqrt(2 * eps_tr) * math.sqrt(t2)
    pi0 = float(np.exp(log_stationary_density(spec, np.zeros(spec.d))))
    scale = (1.0 / (spec.rho * eta * eta)) ** (spec.d / 2)
    proxy = math.sqrt(2 * eps_tr) * math.sqrt(pi0 * scale)
    hyp = bool(math.isfinite(cq.log_c_q))
    extras = {"t2": t2, "scaling_proxy": proxy, "t2_scaling_ratio": t2 / (pi0 * scale),
              "pi_at_minimiser": pi0, "cq_argmax": cq.argmax_ratio_point,
              "hypothesis": "c_q finite on box"}
    if hasattr(p, "describe"):
        extras["estimate"] = p.describe()
    return TheoremReport("orig", inputs, lhs, rhs, _log(rhs), hyp,
                         bool(lhs <= rhs) if hyp else None, quad.describe(), extras)


# ---------------------------------------------------------------- proof ingredients


def r_function(p_star, q, delta) -> np.ndarray:
    """``r(delta) = (p* q delta / ((p* (1 + delta) + q)(p* + q)))^2 = (h - h*)^2``."""
    p_star, q, delta = (np.asarray(v, dtype=float) for v in (p_star, q, delta))
    return (p_star * q * delta / ((p_star * (1 + delta) + q) * (p_star + q))) ** 2


def r_second_derivative(p_star, q, delta) -> np.ndarray:
    """Closed form ``2 a^2 b^2 (1 - 2 a delta) / (1 + a delta)^4`` with ``a = p*/(p*+q)``, ``b = 1 - a``."""
    p_star, q, delta = (np.asarray(v, dtype=float) for v in (p_star, q, delta))
    a = p_star / (p_star + q)
    b = 1 - a
    return 2 * a * a * b * b * (1 - 2 * a * delta) / (1 + a * delta) ** 4


@dataclass
class CurvatureReport:
    min_r2: float
    floor: float
    log_c_q: float
    passed: bool
    hand_value: float
    hand_floor: float
    pointwise_min_margin: float
    argmin: dict
    fd_step: float

    def to_dict(self) -> dict:
        return jsonable(self.__dict__)


def curvature_check(spec: PotentialSpec, contrast: ContrastSpec, eta: float, grid_x=None,
                    grid_xprime=None, deltas=None, fd_step: float = 1e-4,
                    quad: QuadratureSpec | None = None, n_per_axis: int = 101) -> CurvatureReport:
    """Second central difference of ``r`` over an ``(x, x', delta)`` grid against ``2/(1+c_q)^5``.

    ``c_q`` is measured on the same ``(x, x')`` grid. ``pointwise_min_margin`` is
    the smallest ``r'' - 2/(1 + c(x, x'))^5`` where ``c(x, x')`` is the local ratio.
    """
    quad = quad or DEFAULT_QUADRATURE
    d = spec.d
    gx = (box_grid(quad.grid_radius, n_per_axis, d) if grid_x is None
          else as_points(grid_x, d).reshape(-1, d))
    gp = (box_grid(quad.grid_radius, n_per_axis, d) if grid_xprime is None
          else as_points(grid_xprime, d).reshape(-1, d))
    if deltas is None:
        deltas = np.linspace(-0.5, 1.0 / 6.0, 25)
    deltas = np.asarray(deltas, dtype=float)
    if deltas.max() > 1.0 / 6.0 + 1e-12:
        raise InvalidInputError("curvature check needs delta <= 1/6 (Delta_max <= 7/6)")
    kern = OUKernel(spec, eta)
    X = np.repeat(gx, gp.shape[0], axis=0)
    XP = np.tile(gp, (gx.shape[0], 1))
    lp, lq = kern.log_density(X, XP), contrast.log_density(XP, X)
    # work with the normalised pair (a, b) = (p*, q)/(p* + q) to keep r in range
    ln = np.logaddexp(lp, lq)
    a, b = np.exp(lp - ln), np.exp(lq - ln)
    log_c = float(np.max(np.abs(lp - lq)))
    floor = 2.0 * math.exp(-5.0 * float(np.logaddexp(0.0, log_c)))
    h = float(fd_step)
    best, where, margin = math.inf, {}, math.inf
    local_floor = 2.0 * np.exp(-5.0 * np.logaddexp(0.0, np.abs(lp - lq)))
    for dv in deltas:
        r2 = (r_function(a, b, dv + h) - 2 * r_function(a, b, dv) + r_function(a, b, dv - h)) / (h * h)
        i = int(np.argmin(r2))
        if r2[i] < best:
            best = float(r2[i])
            where = {"x": X[i].tolist(), "xp": XP[i].tolist(), "delta": float(dv)}
        margin = min(margin, float(np.min(r2 - local_floor)))
    hand = float((r_function(1.0, 1.0, h) - 2 * r_function(1.0, 1.0, 0.0)
                  + r_function(1.0, 1.0, -h)) / (h * h))
    return CurvatureReport(best, floor, log_c, bool(best >= floor - 1e-6), hand, 2.0 / 2 ** 5,
                           margin, where, h)


@dataclass
class KernelBoundsReport:
    c: float | None
    C: float | None
    feasible: bool
    eta: float
    radius: float
    n_points: int
    min_c_needed: float
    detail: str

    def to_dict(self) -> dict:
        return jsonable(self.__dict__)


def kernel_bounds_fit(spec: PotentialSpec, eta: float, grid_x=None, grid_xprime=None,
                      radius: float = 4.0, n_per_axis: int = 201, force_C: float | None = None,
                      n_scan: int = 50, scan_range: tuple[float, float] = (1.01, 100.0)) -> KernelBoundsReport:
    """Fit the two-sided Gaussian envelopes

    ``p* >= c^{-1} eta^{-d/2} exp(-C |x - x'|^2 / eta) exp(-C eta |x|^2)`` and
    ``p* <= c eta^{-d/2} exp(-|x - x'|^2 / (C eta)) exp(C eta |x|^2)``

    over a log-spaced ``n_scan x n_scan`` scan of ``(c, C)``, choosing the
    smallest feasible ``c`` and then the smallest ``C``. ``force_C`` replaces
    the ``C`` axis by that single value.
    """
    if not spec.is_ou:
        raise UnsupportedError("kernel bounds are fitted against the exact OU kernel")
    d = spec.d
    gx = box_grid(radius, n_per_axis, d) if grid_x is None else as_points(grid_x, d).reshape(-1, d)
    gp = box_grid(radius, n_per_axis, d) if grid_xprime is None else as_points(grid_xprime, d).reshape(-1, d)
    X = np.repeat(gx, gp.shape[0], axis=0)
    XP = np.tile(gp, (gx.shape[0], 1))
    L = OUKernel(spec, eta).log_density(X, XP) + 0.5 * d * math.log(eta)
    D = np.sum((X - XP) ** 2, axis=-1) / eta
    S = eta * np.sum(X * X, axis=-1)
    c_axis = np.geomspace(scan_range[0], scan_range[1], n_scan)
    C_axis = np.array([float(force_C)]) if force_C is not None else c_axis
    # log c needed for each C: both envelopes rearranged as log c >= ...
    need = np.array([max(float(np.max(-L - C * (D + S))), float(np.max(L + D / C - C * S)))
                     for C in C_axis])
    ok = np.log(c_axis)[:, None] >= need[None, :] - 1e-12
    detail = f"{n_scan}x{len(C_axis)} log-spaced scan on [{scan_range[0]}, {scan_range[1]}]"
    if not ok.any():
        return KernelBoundsReport(None, None, False, float(eta), float(radius), X.shape[0],
                                  float(np.exp(need.min())), detail)
    i = int(np.argmax(ok.any(axis=1)))
    j = int(np.argmax(ok[i]))
    return KernelBoundsReport(float(c_axis[i]), float(C_axis[j]), True, float(eta), float(radius),
                              X.shape[0], float(np.exp(need.min())), detail)


def t2_eta_sweep(spec: PotentialSpec, etas, kernel_for_eta, contrast_for_eta,
                 quad: QuadratureSpec | None = None) -> dict:
    """``T2`` over ``etas`` and its log-log slope (least squares)."""
    etas = np.asarray(etas, dtype=float)
    t2 = np.array([float(t2_term(kernel_for_eta(e), spec, contrast_for_eta(e), e, quad)) for e in etas])
    slope, intercept = np.polyfit(np.log(etas), np.log(t2), 1)
    return {"eta": etas.tolist(), "t2": t2.tolist(), "slope": float(slope),
            "intercept": float(intercept), "target_slope": -float(spec.d)}


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])

