"""beta-mixing coefficients, the blocked generalization bound, and Rademacher estimates."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm, spearmanr

from .classifier import TrainConfig, backprop, empirical_risk, init_model, train
from .contrastive_data import ContrastSpec, build_pairs, sample_iid_pairs
from .diffusion import (
    OUKernel,
    PotentialSpec,
    as_points,
    expected_norm_quadrature,
    log_stationary_density,
    sample_stationary,
    simulate_trajectory,
)
from .errors import InvalidConfigError, InvalidInputError, UnsupportedError
from .numerics import (
    MCEstimate,
    as_rng,
    composite_gauss_legendre,
    default_radius,
    derive_seed,
    integrate_rows,
    jsonable,
)

NORMALIZATION_TOL = 1e-6


@dataclass
class TVResult:
    tv: float
    mass_p: float
    mass_q: float
    normalized: bool | None
    method: str
    se: float | None = None

    def __float__(self) -> float:
        return self.tv


def tv_distance(p_eval: Callable, q_eval: Callable, mode: str = "quadrature",
                interval: tuple[float, float] = (-20.0, 20.0), n_nodes: int = 1024,
                sample_p: Callable | None = None, n_mc: int = 100_000, seed=None) -> TVResult:
    """``1/2 int |p - q|`` for two one-argument densities.

    ``quadrature`` (``d = 1``) cuts panels where ``p - q`` changes sign. ``mc``
    uses ``TV = E_p[(1 - q/p)_+]`` with draws from ``sample_p(n, rng)``.
    Unnormalised inputs are not an error: the masses are reported and
    ``normalized`` is cleared. MC mode cannot see the masses and leaves it ``None``.
    """
    if mode == "quadrature":
        lo, hi = np.array([float(interval[0])]), np.array([float(interval[1])])
        one = lambda f: integrate_rows(lambda r, t: f(t), lo, hi, n_nodes=n_nodes)[0]
        diff = lambda r, t: np.asarray(p_eval(t), float) - np.asarray(q_eval(t), float)
        tv = 0.5 * integrate_rows(lambda r, t: np.abs(diff(r, t)), lo, hi, n_nodes=n_nodes,
                                  split=diff)[0]
        mp, mq = float(one(p_eval)), float(one(q_eval))
        se, method = None, f"gauss-legendre {n_nodes} nodes on [{interval[0]}, {interval[1]}]"
    elif mode == "mc":
        if sample_p is None:
            raise InvalidInputError("MC mode needs a sampler for p")
        xs = sample_p(int(n_mc), as_rng(seed))
        pv, qv = np.asarray(p_eval(xs), float), np.asarray(q_eval(xs), float)
        vals = np.clip(1.0 - qv / pv, 0.0, None)
        est = MCEstimate.from_samples(vals)
        tv, se = est.mean, est.se
        mp = mq = float("nan")
        method = f"monte carlo, {int(n_mc)} draws from p"
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    normalized = None if mode == "mc" else bool(abs(mp - 1) <= NORMALIZATION_TOL
                                                and abs(mq - 1) <= NORMALIZATION_TOL)
    return TVResult(float(tv), mp, mq, normalized, method, se)


def _conditional_tv(spec: PotentialSpec, t: float, xs: np.ndarray, n_nodes: int) -> np.ndarray:
    """``TV(P^t(x, .), pi)`` for each ``x`` in ``xs`` (OU, ``d = 1``), by split quadrature."""
    kern = OUKernel(spec, t)
    m = kern.mean(xs)[..., 0]
    s_t = math.sqrt(kern.cov[0, 0])
    s_pi = 1.0 / math.sqrt(spec.theta[0, 0])
    lo = np.minimum(m - 12.0 * s_t, -12.0 * s_pi)
    hi = np.maximum(m + 12.0 * s_t, 12.0 * s_pi)

    def diff(rows, u):
        return np.exp(kern.log_density(xs[rows], u)) - np.exp(log_stationary_density(spec, u))

    return 0.5 * integrate_rows(lambda r, u: np.abs(diff(r, u)), lo, hi, n_nodes=n_nodes,
                                split=diff)


def beta_point(spec: PotentialSpec, t: float, mode: str = "quadrature", n_x: int = 256,
               n_nodes: int = 512, radius: float | None = None, n_mc: int = 100_000,
               seed=None) -> float:
    """``beta(t) = E_{x ~ pi} TV(P^t(x, .), pi)`` for an OU potential."""
    if not spec.is_ou:
        raise UnsupportedError("beta needs the closed-form OU transition")
    if not t > 0:
        raise InvalidInputError("t must be positive")
    if mode == "quadrature":
        if spec.d != 1:
            raise UnsupportedError("quadrature beta is one-dimensional; use mode='mc'")
        r = default_radius(spec.rho) if radius is None else radius
        xs, w = composite_gauss_legendre(n_x, -r, r)
        w = w * np.exp(log_stationary_density(spec, xs))
        return float(np.sum(w * _conditional_tv(spec, t, xs, n_nodes)))
    rng = as_rng(seed)
    kern = OUKernel(spec, t)
    x = sample_stationary(spec, n_mc, rng)
    y = kern.sample(x, rng)
    ratio = np.exp(log_stationary_density(spec, y) - kern.log_density(x, y))
    return float(np.mean(np.clip(1.0 - ratio, 0.0, None)))


def tv_bound(B: float, t) -> np.ndarray:
    """``B / sqrt(2 pi t)``."""
    return B / np.sqrt(2.0 * math.pi * np.asarray(t, dtype=float))


def ou_beta_bound(B: float) -> Callable[[float], float]:
    """``t -> min(1, B / sqrt(2 pi t))``."""
    return lambda t: float(min(1.0, B / math.sqrt(2.0 * math.pi * t)))


def mean_distance_to_pi(spec: PotentialSpec, x) -> np.ndarray:
    """``E_{y ~ pi} |x - y|`` for a 1-d OU (folded-normal mean)."""
    if not spec.is_ou or spec.d != 1:
        raise UnsupportedError("closed form for 1-d OU only")
    s = 1.0 / math.sqrt(spec.theta[0, 0])
    x = np.asarray(x, dtype=float)
    return s * math.sqrt(2 / math.pi) * np.exp(-x * x / (2 * s * s)) + x * (1 - 2 * norm.cdf(-x / s))


@dataclass
class MixingReport:
    B: float
    B_reference: float | None
    rows: list[dict]
    passed: bool
    n_violations: int
    tol: float

    def to_dict(self) -> dict:
        return jsonable(asdict(self))

    def write_csv(self, path) -> None:
        keys = ["x", "t", "tv", "bound", "ok", "x_dependent_bound"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for r in self.rows:
                w.writerow([f"{r[k]:.17g}" if isinstance(r[k], float) else r[k] for k in keys])


def mixing_bound_check(spec: PotentialSpec, t_grid, x_grid, B: float | None = None,
                       n_nodes: int = 1024, tol: float = 1e-8) -> MixingReport:
    """``TV(P^t(x, .), pi) <= B / sqrt(2 pi t)`` at every ``(x, t)``.

    ``B`` defaults to ``E_pi |x|`` by quadrature. Each row also carries the
    ``x``-dependent coupling bound ``E_pi |x - y| / sqrt(2 pi t)``.
    """
    if not spec.is_ou or spec.d != 1:
        raise UnsupportedError("mixing bound check is implemented for 1-d OU")
    if B is None:
        B = expected_norm_quadrature(spec)
    ref = math.sqrt(2.0 / (math.pi * spec.theta[0, 0]))
    xs = np.asarray(x_grid, dtype=float).ravel()
    rows = []
    for t in np.asarray(t_grid, dtype=float).ravel():
        tv = _conditional_tv(spec, float(t), xs, n_nodes)
        bound = float(tv_bound(B, t))
        local = mean_distance_to_pi(spec, xs) / math.sqrt(2 * math.pi * t)
        for x, v, lb in zip(xs, tv, local):
            rows.append({"x": float(x), "t": float(t), "tv": float(v), "bound": bound,
                         "ok": bool(v <= bound + tol), "x_dependent_bound": float(lb)})
    bad = sum(not r["ok"] for r in rows)
    return MixingReport(float(B), ref, rows, bad == 0, bad, tol)


# ---------------------------------------------------------------- finite chains


@dataclass(eq=False)
class FiniteChain:
    """Stationary finite Markov chain with a contrast vector for negative draws."""

    P: np.ndarray
    pi_vec: np.ndarray
    q_vec: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.pi_vec = np.asarray(self.pi_vec, dtype=float)
        self.q_vec = np.asarray(self.q_vec, dtype=float)
        n = self.P.shape[0]
        if self.P.shape != (n, n) or np.any(self.P < 0):
            raise InvalidInputError("P must be a square non-negative matrix")
        if np.max(np.abs(self.P.sum(axis=1) - 1)) > 1e-12:
            raise InvalidInputError("rows of P must sum to 1")
        if np.max(np.abs(self.pi_vec @ self.P - self.pi_vec)) > 1e-10:
            raise InvalidInputError("pi_vec is not stationary for P")
        if np.any(self.q_vec <= 0) or abs(self.q_vec.sum() - 1) > 1e-12:
            raise InvalidInputError("q_vec must be a strictly positive probability vector")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @classmethod
    def from_matrix(cls, P, q_vec=None) -> "FiniteChain":
        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        # stationary vector: null space of (P^T - I) with the normalisation row appended
        A = np.vstack([P.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi_vec = np.linalg.lstsq(A, b, rcond=None)[0]
        q_vec = np.full(n, 1.0 / n) if q_vec is None else np.asarray(q_vec, dtype=float)
        return cls(P, pi_vec, q_vec)


def random_chain(n_states: int, seed=None, concentration: float = 1.0) -> FiniteChain:
    """Dirichlet rows and a Dirichlet contrast vector."""
    rng = as_rng(seed)
    P = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    P /= P.sum(axis=1, keepdims=True)
    q = rng.dirichlet(np.full(n_states, concentration))
    q = np.maximum(q, 1e-6)
    return FiniteChain.from_matrix(P, q / q.sum())


def _beta_chain(chain: FiniteChain, lag: int) -> float:
    Pt = np.linalg.matrix_power(chain.P, lag)
    return float(0.5 * np.sum(chain.pi_vec[:, None] * np.abs(Pt - chain.pi_vec[None, :])))


@dataclass
class BetaPairResult:
    t: list[int]
    beta_points: list[float]
    beta_pairs: list[float]
    beta_pairs_labeled: list[float]
    beta_pairs_factorized: list[float]
    max_abs_diff: float
    equal: bool
    sandwich_ok: bool
    tol: float

    def to_dict(self) -> dict:
        return jsonable(asdict(self))


def beta_pair_exact(chain: FiniteChain, t_steps, tol: float = 1e-12) -> BetaPairResult:
    """Exact beta coefficients of the point chain and of the pair chain built from it.

    Pair ``i`` is ``(X_{2i}, X'_i)`` with ``X'_i = X_{2i+1}`` or a ``q`` draw,
    each with probability 1/2. A pair lag ``t`` spans ``2t`` point steps, so
    ``beta_points`` is reported at lag ``2t``. Given pair ``(x, x')``, the
    hidden ``X_{2i+1}`` has law ``w = a delta_{x'} + (1 - a) P(x, .)`` with
    ``a = P(x, x') / (P(x, x') + q(x'))``; the pair ``t`` steps later has first
    coordinate ``w P^{2t-1}``, and its second coordinate's conditional law is
    shared with the stationary pair law, so
    ``beta_pairs(t) = sum_{x, x'} mu(x, x') TV(w P^{2t-1}, pi)``.

    Also reported: the same coefficient when labels are observed
    (``(beta(2t) + beta(2t - 1)) / 2``) and the value the factorised argument
    yields (``beta(2t)``). Convexity gives
    ``beta(2t) <= beta_pairs(t) <= (beta(2t) + beta(2t - 1)) / 2``.
    """
    n = chain.n_states
    if n > 50:
        raise InvalidInputError("exact enumeration is limited to 50 states")
    P, pi, q = chain.P, chain.pi_vec, chain.q_vec
    K = 0.5 * P + 0.5 * q[None, :]
    mu = pi[:, None] * K
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(P + q[None, :] > 0, P / (P + q[None, :]), 0.0)
    # W[x, x', :] = a delta_{x'} + (1 - a) P(x, .)
    W = (1 - a)[:, :, None] * P[:, None, :] + a[:, :, None] * np.eye(n)[None, :, :]
    ts = [int(t) for t in np.atleast_1d(t_steps)]
    if min(ts) < 1:
        raise InvalidInputError("lags must be >= 1")
    pts, pairs, labeled = [], [], []
    for t in ts:
        law = W @ np.linalg.matrix_power(P, 2 * t - 1)
        tv = 0.5 * np.abs(law - pi[None, None, :]).sum(axis=-1)
        pairs.append(float(np.sum(mu * tv)))
        b2, b1 = _beta_chain(chain, 2 * t), _beta_chain(chain, 2 * t - 1)
        pts.append(b2)
        labeled.append(0.5 * (b2 + b1))
    diff = float(np.max(np.abs(np.array(pairs) - np.array(pts))))
    sandwich = all(p0 - 1e-12 <= p1 <= l1 + 1e-12 for p0, p1, l1 in zip(pts, pairs, labeled))
    return BetaPairResult(ts, pts, pairs, labeled, list(pts), diff, diff <= tol, sandwich, tol)


# ---------------------------------------------------------------- blocked bound


@dataclass
class GeneralizationConfig:
    """Inputs of the blocked generalization bound; ``T`` and ``eta`` are in time units."""

    T: float
    eta: float
    mu: int = 1
    delta: float = 0.05
    k_proxy: float = 1.0
    B: float = math.sqrt(2.0 / math.pi)
    delta_gen_target: float = 0.1

    def __post_init__(self):
        if int(self.mu) < 1:
            raise InvalidConfigError("mu must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise InvalidConfigError("delta must lie in (0, 1)")
        for name in ("T", "eta", "k_proxy", "B", "delta_gen_target"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive")

    @property
    def n_pairs(self) -> int:
        return int(math.floor(self.T / (2 * self.eta) + 1e-9))


def rademacher_proxy(k: float) -> Callable[[int], float]:
    """``mu -> k sqrt((1 + log mu) / mu)``, the assumed complexity decay.

    The ``1 +`` keeps ``R_1 = k``; plain ``log mu`` would make a single block free.
    """
    return lambda mu: float(k * math.sqrt((1.0 + math.log(mu)) / mu))


@dataclass
class MohriResult:
    mu: int
    delta_appr: float
    rademacher: float
    bound_value: float | None
    valid: bool


def mohri_bound(cfg: GeneralizationConfig, rademacher_at_mu, beta_fn: Callable[[float], float]) -> MohriResult:
    """``R_mu + sqrt(log(2 / (delta - Delta_appr)) / (2 mu))`` with ``Delta_appr = 2 (mu - 1) beta(T / (2 mu))``."""
    mu = int(cfg.mu)
    r = float(rademacher_at_mu(mu) if callable(rademacher_at_mu) else rademacher_at_mu)
    appr = 0.0 if mu == 1 else 2.0 * (mu - 1) * float(beta_fn(cfg.T / (2.0 * mu)))
    if cfg.delta <= appr:
        return MohriResult(mu, appr, r, None, False)
    return MohriResult(mu, appr, r, r + math.sqrt(math.log(2.0 / (cfg.delta - appr)) / (2.0 * mu)), True)


@dataclass
class SelectMuResult:
    feasible: bool
    mu_star: int | None
    bound_at_mu_star: float | None
    interior: bool
    mu_grid: list[int]
    bounds: list[float | None]
    recipe_mu_squared: float | None
    recipe_mu_linear: float | None
    T_required: float
    delta_appr_at_mu_star: float | None
    notes: str = ""

    def to_dict(self) -> dict:
        return jsonable(asdict(self))


def select_mu(cfg: GeneralizationConfig, rademacher_fn=None, beta_fn=None, mu_min: int = 1,
              mu_max: int | None = None) -> SelectMuResult:
    """Exhaustive search of the blocked bound over integer ``mu``, plus the closed-form recipes.

    Recipes: ``k sqrt(log(1/(delta - Delta_appr))) / Delta_gen^2`` and the same
    over ``Delta_gen``, both with ``Delta_appr`` at the grid optimum; and
    ``T_required = B^2 k^3 / (delta^2 Delta_gen^3) log(1/delta)^{3/2}``.
    ``interior`` means ``mu_star > mu_min`` and both neighbours are worse
    (an inadmissible neighbour counts as worse).
    """
    rademacher_fn = rademacher_fn or rademacher_proxy(cfg.k_proxy)
    beta_fn = beta_fn or ou_beta_bound(cfg.B)
    hi = int(mu_max) if mu_max is not None else max(cfg.n_pairs, 1)
    grid = list(range(int(mu_min), hi + 1))
    bounds: list[float | None] = []
    for mu in grid:
        res = mohri_bound(GeneralizationConfig(cfg.T, cfg.eta, mu, cfg.delta, cfg.k_proxy, cfg.B,
                                               cfg.delta_gen_target), rademacher_fn, beta_fn)
        bounds.append(res.bound_value)
    k, dg, dl = cfg.k_proxy, cfg.delta_gen_target, cfg.delta
    t_req = cfg.B ** 2 * k ** 3 / (dl ** 2 * dg ** 3) * math.log(1.0 / dl) ** 1.5
    vals = np.array([math.inf if b is None else b for b in bounds])
    if not np.isfinite(vals).any():
        return SelectMuResult(False, None, None, False, grid, bounds, None, None, t_req, None,
                              "no admissible mu: delta <= Delta_appr everywhere on the grid")
    i = int(np.argmin(vals))
    mu_star = grid[i]
    appr = 0.0 if mu_star == 1 else 2.0 * (mu_star - 1) * float(beta_fn(cfg.T / (2.0 * mu_star)))
    left = vals[i - 1] if i > 0 else math.inf
    right = vals[i + 1] if i + 1 < len(vals) else math.inf
    interior = bool(mu_star > grid[0] and left > vals[i] and right > vals[i])
    core = k * math.sqrt(math.log(1.0 / (dl - appr)))
    return SelectMuResult(True, mu_star, float(vals[i]), interior, grid, bounds, core / dg ** 2,
                          core / dg, t_req, appr)


# ---------------------------------------------------------------- Rademacher complexity


class ZeroClass:
    """``{h = 0}``."""

    def sup_correlation(self, x, xp, signs, rng) -> float:
        return 0.0


class ConstantClass:
    """``{h = c : c in [0, 1]}``; the supremum of ``|sum eps_i c|`` sits at ``c = 1``."""

    def sup_correlation(self, x, xp, signs, rng) -> float:
        return float(abs(np.sum(signs)))


class MLPClass:
    """The default MLP family; the supremum is searched by restarted gradient ascent.

    Each restart draws a fresh initialisation and ascends ``s * sum eps_i h(x_i)``
    with ``s = +1`` on even restarts and ``-1`` on odd ones, so the result is a
    lower estimate of ``sup |sum eps_i h(x_i)|``.
    """

    def __init__(self, d: int = 1, hidden=(64, 64), activation: str = "tanh",
                 restarts: int = 20, steps: int = 200, step_size: float = 0.1, momentum: float = 0.9):
        self.d, self.hidden, self.activation = int(d), tuple(hidden), activation
        self.restarts, self.steps = int(restarts), int(steps)
        self.step_size, self.momentum = float(step_size), float(momentum)

    def sup_correlation(self, x, xp, signs, rng) -> float:
        signs = np.asarray(signs, dtype=float)
        n = signs.size
        best = 0.0
        for r in range(self.restarts):
            s = 1.0 if r % 2 == 0 else -1.0
            model = init_model(self.d, self.hidden, self.activation, rng)
            vel = [np.zeros_like(a) for a in model.weights + model.biases]
            for _ in range(self.steps):
                h, gw, gb = backprop(model, x, xp, s * signs / n)
                best = max(best, abs(float(signs @ h)))
                for k, (p, g) in enumerate(zip(model.weights + model.biases, gw + gb)):
                    vel[k] = self.momentum * vel[k] + self.step_size * g
                    p += vel[k]
            best = max(best, abs(float(signs @ model.predict(x, xp).reshape(-1))))
        return best


def empirical_rademacher(h_class, x, xp, n_sign_draws: int = 10, seed=None) -> MCEstimate:
    """``(1/mu) E_eps sup_h |sum eps_i h(x_i, x'_i)|`` over Rademacher signs.

    For searched classes this is a lower estimate of the true supremum.
    """
    rng = as_rng(seed)
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    n = x.shape[0]
    if n < 1:
        raise InvalidInputError("need at least one sample")
    vals = []
    for _ in range(int(n_sign_draws)):
        signs = rng.choice([-1.0, 1.0], size=n)
        vals.append(h_class.sup_correlation(x, xp, signs, rng) / n)
    return MCEstimate.from_samples(np.array(vals))


# ---------------------------------------------------------------- generalization gap


@dataclass
class GapRow:
    T: float
    m: int
    gap_mean: float
    gap_se: float
    gaps: list[float]
    oracle_gap_mean: float
    oracle_gap_se: float
    epochs: int


@dataclass
class GapTable:
    rows: list[GapRow]
    spearman: float
    spearman_pvalue: float
    n_mc: int
    label: str = "gap at the trained model: a lower estimate of the sup over the class"
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return jsonable(asdict(self))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "m", "gap_mean", "gap_se", "oracle_gap_mean", "oracle_gap_se", "epochs"])
            for r in self.rows:
                w.writerow([f"{r.T:.17g}", r.m, f"{r.gap_mean:.17g}", f"{r.gap_se:.17g}",
                            f"{r.oracle_gap_mean:.17g}", f"{r.oracle_gap_se:.17g}", r.epochs])


def generalization_gap_measure(spec: PotentialSpec, contrast: ContrastSpec, eta: float, T_grid,
                               train_cfg: TrainConfig | None = None, n_repeats: int = 5,
                               n_mc: int = 1_000_000, seed: int = 0, hidden=(64, 64),
                               min_steps: int = 3000, n_workers: int = 1) -> GapTable:
    """``|empirical risk - population risk|`` of a model trained on one trajectory per repeat.

    Training uses the whole dataset (no holdout, no early stopping) for at
    least ``min_steps`` minibatch updates. The oracle ``h*`` is measured on the
    same data as a control; its gap is pure sampling noise.
    """
    if n_repeats < 5:
        raise InvalidConfigError("n_repeats must be >= 5")
    from .classifier import oracle_classifier

    base = train_cfg or TrainConfig()
    orc = oracle_classifier(spec, contrast, eta)
    pop_x, pop_xp, pop_y = sample_iid_pairs(spec, contrast, eta, int(n_mc), derive_seed(seed, "population"))
    orc_pop = float(np.mean((orc(pop_x, pop_xp) - pop_y) ** 2))
    def one(T, rep, m, epochs):
        traj = simulate_trajectory(spec, eta, T, seed=derive_seed(seed, "trajectory", T, rep))
        data = build_pairs(traj, contrast, seed=derive_seed(seed, "pairs", T, rep))
        cfg = TrainConfig(**{**base.to_dict(), "holdout_fraction": 0.0, "restore_best": False,
                             "epochs": epochs, "seed": derive_seed(seed, "train", T, rep)})
        model = init_model(spec.d, hidden, seed=derive_seed(seed, "init", T, rep))
        res = train(model, data, cfg)
        pop = float(np.mean((res.model(pop_x, pop_xp) - pop_y) ** 2))
        return abs(res.train_risk - pop), abs(empirical_risk(orc, data) - orc_pop)

    rows = []
    with ThreadPoolExecutor(max_workers=max(1, int(n_workers))) as pool:
        for T in T_grid:
            m = int(math.floor(T / eta + 1e-9)) // 2
            steps_per_epoch = max(1, math.ceil(m / base.batch_size))
            epochs = max(int(base.epochs), math.ceil(min_steps / steps_per_epoch))
            # each repeat is seeded independently, so the result does not depend on n_workers
            out = list(pool.map(lambda rep: one(T, rep, m, epochs), range(int(n_repeats))))
            g = np.array([o[0] for o in out])
            og = np.array([o[1] for o in out])
            rows.append(GapRow(float(T), m, float(g.mean()), float(g.std(ddof=1) / math.sqrt(len(g))),
                               g.tolist(), float(og.mean()), float(og.std(ddof=1) / math.sqrt(len(og))),
                               epochs))
    if len(rows) > 1:
        rho, pval = spearmanr([r.T for r in rows], [r.gap_mean for r in rows])
    else:
        rho, pval = float("nan"), float("nan")
    return GapTable(rows, float(rho), float(pval), int(n_mc),
                    config={"eta": eta, "n_repeats": n_repeats, "min_steps": min_steps,
                            "train": base.to_dict(), "hidden": list(hidden), "seed": seed})
