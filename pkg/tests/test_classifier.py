import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contrastive_kernel import classifier as clf
from contrastive_kernel.classifier import (
    ClassifierModel,
    ConstantClassifier,
    TrainConfig,
    backprop,
    empirical_risk,
    forward,
    grad_loss,
    init_model,
    l2_loss,
    oracle_classifier,
    train,
)
from contrastive_kernel.contrastive_data import ContrastSpec, PairDataset, build_pairs
from contrastive_kernel.diffusion import PotentialSpec, simulate_trajectory, transition_density_ou
from contrastive_kernel.errors import (
    InvalidConfigError,
    InvalidInputError,
    TrainingDivergedError,
    UnsupportedError,
)


def _dataset(n_points=2000, seed=0):
    spec = PotentialSpec.ou(1.0)
    traj = simulate_trajectory(spec, 0.1, 0.1 * n_points, seed=seed)
    return build_pairs(traj, ContrastSpec.matched_ou(1.0), seed=seed + 1)


def test_layer_sizes_and_features():
    m = init_model(2, (8, 4), seed=0)
    assert m.layer_sizes == [4, 8, 4, 1]
    assert m.n_params == 4 * 8 + 8 + 8 * 4 + 4 + 4 + 1


def test_zero_last_layer_gives_half():
    m = init_model(1, seed=0, zero_last=True)
    x = np.random.default_rng(0).normal(size=(50, 1))
    np.testing.assert_array_equal(forward(m, x, -x), 0.5)


def test_forward_range_and_determinism(rng):
    m = init_model(1, seed=3)
    x, xp = rng.normal(scale=5, size=(2, 10_000, 1))
    h = forward(m, x, xp)
    assert np.all((h > 0) & (h < 1))
    np.testing.assert_array_equal(h, forward(m, x, xp))


def test_forward_dimension_mismatch():
    m = init_model(2, seed=0)
    with pytest.raises(InvalidInputError):
        forward(m, np.zeros((3, 3)), np.zeros((3, 3)))


def test_l2_loss_examples():
    half = ConstantClassifier(0.5)
    assert l2_loss(half, [0.0], [0.0], [1])[0] == 0.25
    assert l2_loss(half, [0.0], [0.0], [0])[0] == 0.25
    near = ConstantClassifier(1 - 1e-9)
    assert l2_loss(near, [0.0], [0.0], [1])[0] < 1e-17
    with pytest.raises(InvalidInputError):
        l2_loss(half, [0.0], [0.0], [2])


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_gradient_check(activation):
    rng = np.random.default_rng(1)
    m = init_model(1, (16, 16), activation, seed=2)
    x, xp = rng.normal(size=(2, 32, 1))
    y = rng.integers(0, 2, 32)
    _, gw, gb = grad_loss(m, x, xp, y)
    flat_grad = np.concatenate([a.ravel() for pair in zip(gw, gb) for a in pair])
    theta = m.get_flat()
    h = 1e-6
    errs = []
    for i in rng.choice(theta.size, 100, replace=False):
        for sgn, store in ((1, "p"), (-1, "m")):
            t = theta.copy()
            t[i] += sgn * h
            m.set_flat(t)
            if store == "p":
                lp = float(np.mean(l2_loss(m, x, xp, y)))
            else:
                lm = float(np.mean(l2_loss(m, x, xp, y)))
        m.set_flat(theta)
        fd = (lp - lm) / (2 * h)
        g = flat_grad[i]
        if activation == "relu" and abs(fd - g) > 1e-3 * max(abs(g), 1e-3):
            continue  # a kink crossed within the stencil
        errs.append(abs(fd - g) / max(abs(g), abs(fd), 1e-8))
    assert len(errs) >= 90
    assert max(errs) < 1e-5


def test_duplicated_batch_same_gradient():
    m = init_model(1, (8,), seed=0)
    x, xp, y = np.array([[0.3]]), np.array([[-0.2]]), np.array([1])
    _, g1, b1 = grad_loss(m, x, xp, y)
    _, g2, b2 = grad_loss(m, np.repeat(x, 5, 0), np.repeat(xp, 5, 0), np.repeat(y, 5))
    for a, b in zip(g1 + b1, g2 + b2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_zero_gradient_at_interpolation():
    m = init_model(1, (8,), seed=0)
    x, xp = np.random.default_rng(0).normal(size=(2, 10, 1))
    y_fit = forward(m, x, xp)
    # squared error with the model's own outputs as targets is stationary
    _, gw, gb = backprop(m, x, xp, 2 * (forward(m, x, xp) - y_fit))
    assert all(np.all(g == 0) for g in gw + gb)


def test_train_config_validation():
    with pytest.raises(InvalidConfigError):
        TrainConfig(step_size=0.0)
    with pytest.raises(InvalidConfigError):
        TrainConfig(holdout_fraction=0.6)


def test_zero_epochs_is_noop():
    data = _dataset(400)
    m = init_model(1, (8,), seed=0)
    res = train(m, data, TrainConfig(epochs=0))
    np.testing.assert_array_equal(res.model.get_flat(), m.get_flat())
    assert res.train_risk == res.initial_risk


def test_training_deterministic_and_improves():
    data = _dataset(4000)
    cfg = TrainConfig(epochs=8, seed=5)
    a = train(init_model(1, (16, 16), seed=1), data, cfg)
    b = train(init_model(1, (16, 16), seed=1), data, cfg)
    assert a.loss_curve == b.loss_curve
    assert a.holdout_risk <= a.loss_curve[0]["holdout_risk"]
    assert a.loss_curve[-1]["train_risk"] < a.loss_curve[0]["train_risk"]


def test_divergence_detected(monkeypatch):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.5, 2, (200, 1)) * rng.choice([-1, 1], (200, 1))
    data = PairDataset(x, x.copy(), (x[:, 0] > 0).astype(int), 0.1, 0, None, None)
    m = init_model(1, (4,), seed=0, zero_last=True)
    m.weights[0][:] = 0.0
    m.weights[0][0, 0] = 1.0
    m.weights[1][0, 0] = 3.0
    assert empirical_risk(m, data) < 0.05
    real = clf.grad_loss

    def ascent(*args):
        loss, gw, gb = real(*args)
        return loss, [-g for g in gw], [-g for g in gb]

    monkeypatch.setattr(clf, "grad_loss", ascent)
    with pytest.raises(TrainingDivergedError):
        train(m, data, TrainConfig(step_size=1.0, epochs=20, holdout_fraction=0.0))


def test_checkpoint_round_trip(tmp_path):
    m = init_model(1, seed=4)
    m.save(tmp_path / "m.json")
    back = ClassifierModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.get_flat(), m.get_flat())
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["layer_sizes"] == [2, 64, 64, 1]


def test_oracle_examples():
    spec = PotentialSpec.ou(1.0)
    q = ContrastSpec.matched_ou(1.0)
    h = oracle_classifier(spec, q, 0.1)
    p0 = transition_density_ou(spec, 0.1, 0.0, 0.0)
    assert h(0.0, 0.0) == pytest.approx(p0 / (p0 + 1 / math.sqrt(2 * math.pi)), rel=1e-12)
    assert h(0.0, 0.0) == pytest.approx(0.70138, abs=1e-5)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_oracle_is_odds_of_ratio(x, xp):
    spec = PotentialSpec.ou(1.0)
    q = ContrastSpec.isotropic_gaussian([0.0], 0.7)
    h = oracle_classifier(spec, q, 0.2)
    ratio = transition_density_ou(spec, 0.2, x, xp) / q.density(xp)
    assert h(x, xp) == pytest.approx(ratio / (1 + ratio), rel=1e-9, abs=1e-300)


def test_oracle_equal_and_triple_ratio():
    # a contrast equal to the kernel at x = 0 gives h* = 1/2 on that slice
    spec = PotentialSpec.ou(1.0)
    q = ContrastSpec.isotropic_gaussian([0.0], 1 - math.exp(-0.2))
    h = oracle_classifier(spec, q, 0.1)
    np.testing.assert_allclose(h(np.zeros(5), np.linspace(-1, 1, 5)), 0.5, atol=1e-12)
    # and a ratio of 3 gives 3/4
    x, xp = 0.0, 0.0
    lp = math.log(transition_density_ou(spec, 0.1, x, xp))
    q3 = ContrastSpec.isotropic_gaussian([0.0], 1.0)
    shift = lp - math.log(3.0) - float(q3.log_density(xp))
    assert 1 / (1 + math.exp(-(lp - (float(q3.log_density(xp)) + shift)))) == pytest.approx(0.75)


def test_oracle_requires_ou():
    with pytest.raises(UnsupportedError):
        oracle_classifier(PotentialSpec.named("quadratic_logcosh"), ContrastSpec.matched_ou(1.0), 0.1)
