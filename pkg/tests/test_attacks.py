import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import requires_mnist
from tradeoff_lab import tensor as T
from tradeoff_lab.attacks import (AttackConfig, deepfool_l2, fgsm, fooling_perturbation_norms, input_gradient, pgd,
                                  per_sample_loss)
from tradeoff_lab.models import AffineClassifier, argmax_lowest, build_stdcnn, predict_logits


def binary_affine(w, b):
    """Two logits (0, w.x + b): the decision boundary is the hyperplane w.x + b = 0."""
    w = np.asarray(w, dtype=np.float64)
    return AffineClassifier(np.stack([np.zeros_like(w), w]), [0.0, b])


class ToyMLP:
    num_classes = 2

    def __init__(self, seed=0, hidden=16):
        rng = np.random.default_rng(seed)
        self.params = {
            "w1": T.Tensor(rng.normal(0, 0.5, (hidden, 2)), requires_grad=True),
            "b1": T.Tensor(np.zeros(hidden), requires_grad=True),
            "w2": T.Tensor(rng.normal(0, 0.5, (2, hidden)), requires_grad=True),
            "b2": T.Tensor(np.zeros(2), requires_grad=True),
        }

    def forward(self, x, train=False, rng=None, track_params=True):
        x = x if isinstance(x, T.Tensor) else T.Tensor(x)
        p = self.params if track_params else {k: T.Tensor(v.data) for k, v in self.params.items()}
        return T.linear(T.relu(T.linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])


@pytest.fixture(scope="module")
def toy_problem():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 600)
    x = np.where(y[:, None] == 1, [2.0, 1.0], [-2.0, -1.0]) + rng.normal(0, 0.6, (600, 2))
    model = ToyMLP(0)
    opt = T.SGDMomentum(0.05, 0.9)
    names = list(model.params)
    for _ in range(200):
        loss = T.softmax_cross_entropy(model.forward(T.Tensor(x)), y)
        opt.step(model.params, dict(zip(names, T.grad(loss, [model.params[n] for n in names]))))
    assert np.mean(predict_logits(model, x).argmax(1) == y) > 0.98
    return model, x[:60]


# FGSM ----------------------------------------------------------------------


def test_fgsm_zero_epsilon_is_identity():
    m = build_stdcnn(0)
    x = np.random.default_rng(0).uniform(0, 1, (2, 1, 28, 28))
    np.testing.assert_array_equal(fgsm(m, x, [1, 2], 0.0), x)


def test_fgsm_logistic_hand_gradient():
    v = np.array([2.0, -3.0])
    m = binary_affine(v, 0.0)
    x = np.array([[0.4, 0.5]])
    # J = log(1 + exp(v.x)) for label 0, so dJ/dx = sigmoid(v.x) * v
    s = 1 / (1 + np.exp(-(x @ v)))
    np.testing.assert_allclose(input_gradient(m, x, [0]), s[:, None] * v, atol=1e-15)
    np.testing.assert_allclose(fgsm(m, x, [0], 0.1), x + [[0.1, -0.1]], atol=1e-15)


def test_fgsm_box_clip_and_zero_gradient():
    m = binary_affine([2.0, 0.0], 0.0)
    x = np.array([[1.0, 0.3]])
    out = fgsm(m, x, [0], 0.2)
    assert out[0, 0] == 1.0  # positive gradient at the top of the box
    assert out[0, 1] == 0.3  # zero gradient: sign(0) = 0


# PGD -----------------------------------------------------------------------


def test_pgd_zero_epsilon_is_identity():
    m = build_stdcnn(0)
    x = np.random.default_rng(1).uniform(0, 1, (2, 1, 28, 28))
    np.testing.assert_array_equal(pgd(m, x, [0, 1], AttackConfig(epsilon=0.0)), x)


def test_pgd_one_step_equals_fgsm():
    m = build_stdcnn(2)
    rng = np.random.default_rng(2)
    x, y = rng.uniform(0, 1, (8, 1, 28, 28)), rng.integers(0, 10, 8)
    for step in (0.1, 0.25):
        cfg = AttackConfig(epsilon=0.1, steps=1, step_size=step, random_start=False)
        assert np.max(np.abs(pgd(m, x, y, cfg) - fgsm(m, x, y, 0.1))) <= 1e-12


def test_pgd_default_step_size():
    assert AttackConfig(epsilon=0.3, steps=40).alpha == pytest.approx(2.5 * 0.3 / 40)
    assert AttackConfig(epsilon=0.3, steps=40, step_size=0.05).alpha == 0.05
    with pytest.raises(ValueError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    with pytest.raises(ValueError):
        AttackConfig(step_size=0.0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), eps=st.floats(0.0, 1.0), steps=st.integers(1, 4), rs=st.booleans())
def test_pgd_stays_in_ball_and_box(seed, eps, steps, rs):
    m = build_stdcnn(seed % 3)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 1, (3, 1, 28, 28)), rng.integers(0, 10, 3)
    x[0, 0, :4] = 0.0
    x[0, 0, -4:] = 1.0
    out = pgd(m, x, y, AttackConfig(epsilon=eps, steps=steps, random_start=rs, seed=seed))
    assert np.all(np.abs(out - x) <= eps) and out.min() >= 0 and out.max() <= 1
    out = fgsm(m, x, y, eps)
    assert np.all(np.abs(out - x) <= eps) and out.min() >= 0 and out.max() <= 1


def test_pgd_is_seeded():
    m = build_stdcnn(0)
    x = np.random.default_rng(3).uniform(0, 1, (2, 1, 28, 28))
    a = pgd(m, x, [3, 4], AttackConfig(epsilon=0.1, steps=2, seed=9))
    np.testing.assert_array_equal(a, pgd(m, x, [3, 4], AttackConfig(epsilon=0.1, steps=2, seed=9)))


@requires_mnist
def test_pgd_loss_dominates_fgsm(mnist, small_trained_stdcnn):
    x, y = mnist[2].images[:100], mnist[2].labels[:100]
    l_fgsm = per_sample_loss(small_trained_stdcnn, fgsm(small_trained_stdcnn, x, y, 0.1), y)
    l_pgd = per_sample_loss(small_trained_stdcnn, pgd(small_trained_stdcnn, x, y, AttackConfig(epsilon=0.1, steps=10)), y)
    assert np.mean(l_pgd >= l_fgsm) >= 0.8


# DeepFool ------------------------------------------------------------------


def test_deepfool_binary_affine_distance():
    rng = np.random.default_rng(4)
    w, b = rng.normal(size=6), 0.3
    x = rng.normal(size=(20, 6))
    res = deepfool_l2(binary_affine(w, b), x, overshoot=0.02)
    expected = np.abs(x @ w + b) / np.linalg.norm(w)
    assert res.converged.all() and np.all(res.iterations == 1)
    assert np.max(np.abs(res.norms - expected)) <= 1e-8
    # r is normal to the hyperplane and lands on it
    np.testing.assert_allclose((x + res.perturbation) @ w + b, 0.0, atol=1e-10)


def test_deepfool_multiclass_affine_distance():
    rng = np.random.default_rng(5)
    W, b = rng.normal(size=(4, 5)), rng.normal(size=4)
    x = rng.normal(size=(30, 5))
    res = deepfool_l2(AffineClassifier(W, b), x)
    f = x @ W.T + b
    k = f.argmax(1)
    dist = np.full((30, 4), np.inf)
    for j in range(4):
        wd = W[j] - W[k]
        mask = j != k
        dist[mask, j] = np.abs(f[mask, j] - f[mask, k[mask]]) / np.linalg.norm(wd[mask], axis=1)
    assert res.converged.all()
    assert np.max(np.abs(res.norms - dist.min(1))) <= 1e-8


def test_deepfool_already_misclassified_returns_zero():
    m = AffineClassifier(np.zeros((3, 2)), np.zeros(3))  # tied logits: prediction is class 0
    x = np.ones((2, 2))
    res = deepfool_l2(m, x, overshoot=0.0, labels=[1, 2])
    assert res.converged.all() and np.all(res.norms == 0) and np.all(res.iterations == 0)


def test_deepfool_constant_classifier_never_converges():
    m = AffineClassifier(np.zeros((3, 4)), np.array([0.0, 1.0, 0.0]))
    norms, count = fooling_perturbation_norms(m, np.random.default_rng(0).normal(size=(5, 4)))
    assert count == 0 and norms.size == 0


def test_fooling_norms_duplicate_dataset():
    rng = np.random.default_rng(6)
    m = binary_affine(rng.normal(size=3), 0.1)
    x = rng.normal(size=(7, 3))
    n1, c1 = fooling_perturbation_norms(m, x)
    n2, c2 = fooling_perturbation_norms(m, np.concatenate([x, x]))
    assert c2 == 2 * c1
    np.testing.assert_array_equal(n2, np.concatenate([n1, n1]))


def _bisection_distance(model, x, u, k0, t_max=20.0, tol=1e-10):
    """Smallest t with predict(x + t u) != k0 found by a grid scan then bisection."""
    ts = np.linspace(0, t_max, 2001)
    preds = argmax_lowest(predict_logits(model, x[None] + ts[:, None] * u[None]))
    hi = ts[np.argmax(preds != k0)]
    lo = hi - (ts[1] - ts[0])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if argmax_lowest(predict_logits(model, (x + mid * u)[None]))[0] != k0:
            hi = mid
        else:
            lo = mid
    return hi


def _toy_ratios(model, x):
    res = deepfool_l2(model, x)
    assert res.converged.all()
    k0 = argmax_lowest(predict_logits(model, x))
    oracle = np.array([_bisection_distance(model, x[i], res.perturbation[i] / res.norms[i], k0[i])
                       for i in range(len(x))])
    return res.norms, oracle


def test_deepfool_toy_mlp_brackets_line_search(toy_problem):
    norms, oracle = _toy_ratios(*toy_problem)
    # the tested iterate x + 1.02 r has crossed, so the first crossing along r is no farther
    assert np.all(oracle <= 1.02 * norms + 1e-9)
    assert np.median(norms / oracle) <= 1.25


@pytest.mark.xfail(strict=True, reason="one linearisation step overshoots ReLU bends; median ratio ~1.15")
def test_deepfool_toy_mlp_within_ten_percent(toy_problem):
    norms, oracle = _toy_ratios(*toy_problem)
    assert np.all(np.abs(norms - oracle) <= 0.1 * oracle)
