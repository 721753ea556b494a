import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from contrastive_kernel.classifier import TrainConfig
from contrastive_kernel.contrastive_data import ContrastSpec
from contrastive_kernel.diffusion import PotentialSpec
from contrastive_kernel.errors import InvalidConfigError, InvalidInputError, UnsupportedError
from contrastive_kernel.mixing import (
    ConstantClass,
    FiniteChain,
    GeneralizationConfig,
    MLPClass,
    ZeroClass,
    beta_pair_exact,
    beta_point,
    empirical_rademacher,
    generalization_gap_measure,
    mean_distance_to_pi,
    mixing_bound_check,
    mohri_bound,
    ou_beta_bound,
    rademacher_proxy,
    random_chain,
    select_mu,
    tv_bound,
    tv_distance,
)


def _normal(m, s=1.0):
    return lambda t: norm.pdf(t, m, s)


def test_tv_examples():
    assert tv_distance(_normal(0), _normal(0)).tv == pytest.approx(0.0, abs=1e-14)
    r = tv_distance(_normal(0), _normal(1))
    assert r.tv == pytest.approx(2 * norm.cdf(0.5) - 1, abs=1e-10)
    assert r.normalized
    far = tv_distance(_normal(-10, 0.5), _normal(10, 0.5))
    assert far.tv == pytest.approx(1.0, abs=1e-10)
    half = tv_distance(lambda t: 0.5 * norm.pdf(t), _normal(0))
    assert half.normalized is False and half.mass_p == pytest.approx(0.5)


def test_tv_mc_mode():
    r = tv_distance(_normal(0), _normal(1), mode="mc", n_mc=200_000, seed=0,
                    sample_p=lambda n, rng: rng.normal(size=n))
    assert abs(r.tv - (2 * norm.cdf(0.5) - 1)) < 5 * r.se
    assert r.normalized is None
    with pytest.raises(InvalidInputError):
        tv_distance(_normal(0), _normal(1), mode="mc")


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_tv_triangle_inequality(a, b, c):
    ab = tv_distance(_normal(a), _normal(b)).tv
    bc = tv_distance(_normal(b), _normal(c)).tv
    ac = tv_distance(_normal(a), _normal(c)).tv
    assert ac <= ab + bc + 1e-9
    assert 0.0 <= ab <= 1.0 + 1e-12


def test_beta_examples(ou):
    assert beta_point(ou, 20.0) < 1e-6
    b1 = beta_point(ou, 1.0)
    assert b1 <= 1 / math.pi
    mc = beta_point(ou, 1.0, mode="mc", n_mc=400_000, seed=0)
    assert abs(mc - b1) < 5e-3
    vals = [beta_point(ou, t, n_x=64, n_nodes=256) for t in (0.25, 0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(UnsupportedError):
        beta_point(PotentialSpec.named("quadratic_logcosh"), 1.0)
    with pytest.raises(InvalidInputError):
        beta_point(ou, 0.0)


def test_mixing_report_examples(ou):
    rep = mixing_bound_check(ou, [1.0, 4.0], [0.0, 1.0], n_nodes=512)
    assert rep.B == pytest.approx(math.sqrt(2 / math.pi), abs=1e-6)
    by = {(r["x"], r["t"]): r for r in rep.rows}
    assert by[(0.0, 1.0)]["ok"] and by[(1.0, 4.0)]["ok"]
    assert all(r["tv"] <= r["x_dependent_bound"] + 1e-8 for r in rep.rows)


def test_bound_slope():
    ts = np.array([1.0, 4.0, 16.0])
    assert np.polyfit(np.log(ts), np.log(tv_bound(1.0, ts)), 1)[0] == pytest.approx(-0.5)
    assert ou_beta_bound(1.0)(1e-6) == 1.0


def test_mean_distance_to_pi(ou):
    assert mean_distance_to_pi(ou, 0.0) == pytest.approx(math.sqrt(2 / math.pi))


def test_beta_pairs_two_state_and_trivial_chains():
    two = FiniteChain.from_matrix([[0.9, 0.1], [0.2, 0.8]], [0.5, 0.5])
    res = beta_pair_exact(two, range(1, 6))
    assert res.sandwich_ok
    iid = FiniteChain.from_matrix(np.tile([0.2, 0.3, 0.5], (3, 1)), [0.3, 0.3, 0.4])
    res = beta_pair_exact(iid, [1, 2, 3])
    assert res.max_abs_diff < 1e-15 and res.equal


def test_beta_pairs_chain_validation():
    with pytest.raises(InvalidInputError):
        FiniteChain(np.eye(2), np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    with pytest.raises(InvalidInputError):
        beta_pair_exact(random_chain(3, seed=0), [0])


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_beta_pairs_sandwich(n_states, seed):
    res = beta_pair_exact(random_chain(n_states, seed=seed), range(1, 6))
    assert res.sandwich_ok
    assert all(0 <= b <= 1 for b in res.beta_pairs)


def test_beta_pairs_differs_from_points_in_general():
    # the pair chain can only equal beta(2t) up to the sandwich; a random
    # chain shows a visible gap, which the exact result reports
    res = beta_pair_exact(random_chain(5, seed=1), [1])
    assert res.sandwich_ok and not res.equal
    assert res.max_abs_diff > 1e-3


def test_mohri_examples():
    cfg = GeneralizationConfig(T=1e4, eta=0.1, mu=1)
    r = mohri_bound(cfg, rademacher_proxy(1.0), ou_beta_bound(cfg.B))
    assert r.delta_appr == 0.0 and r.valid
    assert r.bound_value == pytest.approx(1.0 + math.sqrt(math.log(2 / 0.05) / 2))
    bad = mohri_bound(GeneralizationConfig(T=1e4, eta=0.1, mu=5), 0.1, lambda t: 1.0)
    assert not bad.valid and bad.bound_value is None
    with pytest.raises(InvalidConfigError):
        GeneralizationConfig(T=1.0, eta=0.1, delta=1.5)


def test_mohri_monotone_in_beta():
    cfg = GeneralizationConfig(T=1e4, eta=0.1, mu=4)
    lo = mohri_bound(cfg, 0.1, lambda t: 1e-4)
    hi = mohri_bound(cfg, 0.1, lambda t: 1e-3)
    assert lo.bound_value < hi.bound_value


def test_select_mu_interior_and_monotone_in_T():
    stars = []
    for T in (1e3, 1e4, 1e5):
        res = select_mu(GeneralizationConfig(T=T, eta=0.1), mu_max=200)
        assert res.feasible and res.interior
        assert res.recipe_mu_squared > res.recipe_mu_linear > 0
        stars.append(res.mu_star)
    assert stars == sorted(stars) and stars[0] < stars[-1]


def test_select_mu_infeasible():
    res = select_mu(GeneralizationConfig(T=1e3, eta=0.1), beta_fn=lambda t: 1.0, mu_min=2, mu_max=20)
    assert not res.feasible and res.mu_star is None
    assert res.T_required > 0


def test_rademacher_trivial_classes(rng):
    x, xp = rng.normal(size=(2, 40, 1))
    assert empirical_rademacher(ZeroClass(), x, xp, 5, seed=0).mean == 0.0
    single = empirical_rademacher(ConstantClass(), x[:1], xp[:1], 5, seed=0)
    assert single.mean == pytest.approx(1.0)


def test_rademacher_mlp_shrinks_with_sample(rng):
    cls = MLPClass(1, (16,), restarts=5, steps=200)
    x, xp = rng.normal(size=(2, 640, 1))
    small = empirical_rademacher(cls, x[:40], xp[:40], 3, seed=0).mean
    large = empirical_rademacher(cls, x, xp, 3, seed=0).mean
    assert 0 < large < small <= 1


def test_gap_measure_oracle_control(ou):
    q = ContrastSpec.matched_ou(1.0)
    cfg = TrainConfig(epochs=1, batch_size=64)
    table = generalization_gap_measure(ou, q, 0.1, [20.0, 80.0], cfg, n_repeats=5, n_mc=20_000,
                                       seed=0, hidden=(4,), min_steps=5)
    assert [r.m for r in table.rows] == [100, 400]
    for r in table.rows:
        assert r.oracle_gap_mean < 0.1 and len(r.gaps) == 5
    with pytest.raises(InvalidConfigError):
        generalization_gap_measure(ou, q, 0.1, [20.0], cfg, n_repeats=3)
