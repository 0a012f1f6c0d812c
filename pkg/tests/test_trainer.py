import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natrobust.errors import LabelOutOfRange, NonFiniteLoss, ShapeMismatch
from natrobust.trainer import (
    DEFAULT_GRID,
    TECHNIQUES,
    MLPModel,
    PGDConfig,
    TrainConfig,
    TrainingData,
    accuracy,
    accuracy_gate,
    cross_entropy,
    forward,
    hyperparameter_grid,
    init_mlp,
    input_gradient,
    load_model,
    loss_and_grad,
    loss_breakdown,
    pgd_attack,
    predict_labels,
    run_grid,
    save_model,
    technique_config,
    train,
)

from gradcheck import max_relative_error


def cfg(technique, reg=0.0, smoothing=0.0, **kw):
    pgd = PGDConfig(0.05, 3, 0.02) if technique == "adversarial_logit_pairing" else None
    return TrainConfig(technique=technique, reg=reg, smoothing=smoothing, pgd=pgd, **kw)


def batch(rng, n=10, d=6, k=3):
    return rng.random((n, d)), rng.integers(0, k, n)


# --- forward ----------------------------------------------------------------------

def test_forward_examples(rng):
    z = MLPModel([np.zeros((4, 3)), np.zeros((3, 2))], [np.zeros(3), np.zeros(2)])
    assert np.all(forward(z, rng.random(4)) == 0)
    ident = MLPModel([np.eye(5)], [np.zeros(5)])
    x = rng.random(5)
    assert np.array_equal(forward(ident, x), x)


def test_forward_triple_loop(rng):
    m = init_mlp((4, 3, 2), seed=5)
    m.biases = [rng.normal(size=3), rng.normal(size=2)]
    x = rng.random(4)
    h = [max(0.0, sum(x[i] * m.weights[0][i, j] for i in range(4)) + m.biases[0][j]) for j in range(3)]
    z = [sum(h[i] * m.weights[1][i, j] for i in range(3)) + m.biases[1][j] for j in range(2)]
    assert np.max(np.abs(forward(m, x) - z)) <= 1e-9


def test_forward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(init_mlp((4, 3, 2)), np.zeros(5))
    with pytest.raises(ShapeMismatch):
        MLPModel([np.zeros((4, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])


# --- losses -----------------------------------------------------------------------

@pytest.mark.parametrize("technique", ["weight_decay", "label_smoothing", "clean_logit_pairing",
                                       "clean_logit_squeezing"])
def test_degenerate_hyperparameters_equal_baseline(technique, rng):
    m = init_mlp((6, 5, 3), seed=1)
    x, y = batch(rng)
    base, _ = loss_and_grad(m, x, y, cfg("baseline"))
    loss, _ = loss_and_grad(m, x, y, cfg(technique))
    assert abs(loss - base) <= 1e-12
    assert base == pytest.approx(float(np.mean(cross_entropy(forward(m, x), y))), abs=1e-12)


def test_degenerate_alp_is_twice_ce(rng):
    m = init_mlp((6, 5, 3), seed=1)
    x, y = batch(rng)
    base, _ = loss_and_grad(m, x, y, cfg("baseline"))
    c = TrainConfig(technique="adversarial_logit_pairing", reg=0.0, pgd=PGDConfig(0.0, 3, 0.01))
    loss, _ = loss_and_grad(m, x, y, c)
    assert abs(loss - 2 * base) <= 1e-12


def test_logit_squeezing_term_example():
    m = MLPModel([np.zeros((1, 3))], [np.array([2.0, -1.0, 0.0])])
    out = loss_breakdown(m, np.zeros((1, 1)), np.array([0]), cfg("clean_logit_squeezing", reg=0.5))
    assert out["technique"] == pytest.approx(2.5, abs=1e-12)


def test_logit_pairing_uses_consecutive_pairs():
    m = MLPModel([np.eye(2)], [np.zeros(2)])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0], [5.0, 5.0]])
    out = loss_breakdown(m, x, np.zeros(5, dtype=int), cfg("clean_logit_pairing", reg=1.0))
    assert out["technique"] == pytest.approx((2.0 + 0.0) / 2)


def test_label_smoothing_and_sigmoid_closed_forms():
    m = MLPModel([np.zeros((1, 4))], [np.array([1.0, 0.0, -1.0, 0.5])])
    x, y = np.zeros((1, 1)), np.array([2])
    z = np.array([1.0, 0.0, -1.0, 0.5])
    logp = z - np.log(np.sum(np.exp(z)))
    t = 0.9 * np.eye(4)[2] + 0.1 / 4
    assert loss_breakdown(m, x, y, cfg("label_smoothing", smoothing=0.1))["base"] == pytest.approx(-t @ logp)
    onehot = np.eye(4)[2]
    bce = -np.sum(onehot * np.log(1 / (1 + np.exp(-z))) + (1 - onehot) * np.log(1 - 1 / (1 + np.exp(-z))))
    assert loss_breakdown(m, x, y, cfg("sigmoid_multiclass"))["total"] == pytest.approx(bce)


def test_weight_decay_excludes_biases():
    m = MLPModel([np.full((2, 2), 2.0)], [np.full(2, 100.0)])
    out = loss_breakdown(m, np.zeros((1, 2)), np.array([0]), cfg("weight_decay", reg=0.1))
    assert out["technique"] == pytest.approx(0.1 * 0.5 * 16)


@pytest.mark.parametrize("technique", ["weight_decay", "clean_logit_pairing", "clean_logit_squeezing"])
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), reg=st.floats(0, 2))
def test_penalty_terms_non_negative(technique, seed, reg):
    rng = np.random.default_rng(seed)
    m = init_mlp((6, 5, 3), seed=seed)
    x, y = batch(rng)
    out = loss_breakdown(m, x, y, cfg(technique, reg=reg))
    assert out["technique"] >= 0
    assert out["total"] >= out["base"] - 1e-12


@pytest.mark.parametrize("technique", TECHNIQUES)
def test_finite_differences(technique, rng):
    for trial in range(3):
        m = init_mlp((6, 5, 3), seed=trial)
        m.biases = [rng.normal(scale=0.1, size=b.shape) for b in m.biases]
        x, y = batch(rng)
        c = cfg(technique, reg=0.3, smoothing=0.1 if technique == "label_smoothing" else 0.0)
        x_adv = pgd_attack(m, x, y, c.pgd) if c.pgd else None
        assert max_relative_error(m, x, y, c, x_adv) <= 1e-4


def test_label_and_shape_errors(rng):
    m = init_mlp((6, 5, 3))
    with pytest.raises(LabelOutOfRange):
        loss_and_grad(m, rng.random((2, 6)), np.array([0, 3]), cfg("baseline"))
    with pytest.raises(ShapeMismatch):
        loss_and_grad(m, rng.random((2, 6)), np.array([0]), cfg("baseline"))
    with pytest.raises(ShapeMismatch):
        loss_and_grad(m, np.zeros((0, 6)), np.zeros(0, dtype=int), cfg("baseline"))


def test_non_finite_loss():
    m = MLPModel([np.full((2, 2), np.inf)], [np.zeros(2)])
    with pytest.raises(NonFiniteLoss):
        loss_and_grad(m, np.ones((1, 2)), np.array([0]), cfg("baseline"))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(technique="dropout")
    with pytest.raises(ValueError):
        TrainConfig(technique="adversarial_logit_pairing")  # pgd required
    with pytest.raises(ValueError):
        TrainConfig(pgd=PGDConfig())  # pgd only for ALP
    with pytest.raises(ValueError):
        TrainConfig(smoothing=1.0)
    c = TrainConfig(technique="adversarial_logit_pairing", reg=0.1, pgd=PGDConfig())
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_cosine_schedule():
    c = TrainConfig(lr=0.1, epochs=10)
    assert c.lr_at(1) == pytest.approx(0.1)
    assert all(c.lr_at(e + 1) < c.lr_at(e) for e in range(1, 10))
    assert TrainConfig(lr=0.1, lr_schedule="constant").lr_at(7) == 0.1


# --- PGD --------------------------------------------------------------------------

def test_pgd_zero_epsilon(rng):
    m = init_mlp((6, 5, 3), seed=2)
    x, y = batch(rng)
    assert np.array_equal(pgd_attack(m, x, y, PGDConfig(0.0, 5, 0.1)), x)


def test_pgd_linear_closed_form(rng):
    w = rng.normal(size=(6, 3))
    b = rng.normal(size=3)
    m = MLPModel([w], [b])
    x, y = batch(rng)
    eps, step = 0.05, 0.03
    out = pgd_attack(m, x, y, PGDConfig(eps, 1, step))
    z = x @ w + b
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    p[np.arange(len(y)), y] -= 1
    g = p @ w.T  # dCE/dx
    cand = np.clip(np.clip(x + step * np.sign(g), x - eps, x + eps), 0, 1)
    ce0 = cross_entropy(z, y)
    ce1 = cross_entropy(cand @ w + b, y)
    want = np.where((ce1 >= ce0)[:, None], cand, x)
    assert np.allclose(out, want, rtol=0, atol=1e-12)
    assert np.all(ce1 >= ce0 - 1e-12)  # linear model: the first step always ascends


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0, 0.2), steps=st.integers(0, 6),
       step=st.floats(0.001, 0.1))
def test_pgd_contract(seed, eps, steps, step):
    rng = np.random.default_rng(seed)
    m = init_mlp((6, 8, 3), seed=seed)
    x, y = batch(rng)
    adv = pgd_attack(m, x, y, PGDConfig(eps, steps, step))
    assert np.max(np.abs(adv - x)) <= eps
    assert adv.min() >= 0 and adv.max() <= 1
    if steps >= 1:
        assert np.all(cross_entropy(forward(m, adv), y) >= cross_entropy(forward(m, x), y) - 1e-9)


def test_pgd_ce_monotone_in_epsilon_linear(rng):
    m = MLPModel([rng.normal(size=(6, 3))], [np.zeros(3)])
    x, y = batch(rng)
    prev = None
    for eps in np.linspace(0, 0.2, 21):
        ce = cross_entropy(forward(m, pgd_attack(m, x, y, PGDConfig(eps, 1, 0.25))), y)
        if prev is not None:
            assert np.all(ce >= prev - 1e-12)
        prev = ce


def test_input_gradient_fd(rng):
    m = init_mlp((6, 5, 3), seed=4)
    x, y = batch(rng, n=2)
    ce, g = input_gradient(m, x, y)
    h = 1e-6
    for i in range(2):
        for j in range(6):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = (cross_entropy(forward(m, xp), y)[i] - cross_entropy(forward(m, xm), y)[i]) / (2 * h)
            assert fd == pytest.approx(g[i, j], rel=1e-5, abs=1e-8)


# --- training ---------------------------------------------------------------------

def separable(rng, n=80):
    x = rng.random((n, 4))
    y = (x[:, 0] > x[:, 1]).astype(int)
    return x, y


def test_zero_epochs_returns_init(rng):
    m = init_mlp((4, 6, 2), seed=0)
    x, y = separable(rng)
    out, log = train(m, TrainingData(x, y), TrainConfig(epochs=0))
    assert log == [] and all(np.array_equal(a, b) for a, b in zip(out.params(), m.params()))


def test_separable_reaches_full_accuracy(rng):
    x, y = separable(rng, 200)
    data = TrainingData(x[:150], y[:150], x[150:], y[150:])
    m, log = train(init_mlp((4, 16, 2), seed=0), data, TrainConfig(lr=0.1, epochs=50, lr_schedule="constant"))
    assert max(e.val_accuracy for e in log) == 1.0


@pytest.mark.parametrize("technique", TECHNIQUES)
def test_training_deterministic(technique, rng):
    x, y = separable(rng, 40)
    data = TrainingData(np.stack([x, x[::-1]], axis=1), y, x, y)
    c = technique_config(technique, TrainConfig(epochs=3, batch_size=8))
    a, la = train(init_mlp((4, 5, 2), seed=1), data, c)
    b, lb = train(init_mlp((4, 5, 2), seed=1), data, c)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert la == lb


def test_training_diverges_raises(rng):
    x, y = separable(rng, 20)
    with pytest.raises(NonFiniteLoss):
        train(init_mlp((4, 5, 2), seed=1), TrainingData(x * 1e150, y), TrainConfig(lr=1e10, epochs=3))


def test_checkpoint_roundtrip(tmp_path):
    m = init_mlp((7, 5, 3), seed=9)
    save_model(m, tmp_path / "m.json", {"note": "x"})
    back, meta = load_model(tmp_path / "m.json")
    assert meta == {"note": "x"}
    assert all(np.array_equal(a, b) for a, b in zip(back.params(), m.params()))


def test_grid_and_gate():
    base = TrainConfig(epochs=1)
    for tech in DEFAULT_GRID:
        grid = hyperparameter_grid(tech, base)
        assert len(grid) == 25 and len(set(grid)) == 25
    assert accuracy_gate(0.90, 0.885) is True
    assert accuracy_gate(0.90, 0.889) is False
    assert accuracy_gate(0.90, 0.95) is False


def test_run_grid_workers_match(rng):
    x, y = separable(rng, 30)
    data = TrainingData(x, y, x, y)
    configs = hyperparameter_grid("weight_decay", TrainConfig(epochs=2), n_seeds=1)[:2]
    init = init_mlp((4, 5, 2), seed=0)
    serial = run_grid(init, data, configs, workers=1)
    parallel = run_grid(init, data, configs, workers=2)
    for a, b in zip(serial, parallel):
        assert all(np.array_equal(p, q) for p, q in zip(a.model.params(), b.model.params()))


def test_sigmoid_argmax_compatible(rng):
    z = np.array([[0.5, 0.5, -1.0], [0.0, 2.0, 2.0]])
    assert predict_labels(z).tolist() == [0, 1]
