import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from certlab import autodiff as ad
from certlab.bounds import bounds
from certlab.network import Linear, Network, ReLU, build_network, net_forward, random_small_net
from certlab.training import (AdamState, TrainConfig, TrainingError, adam_step, certified_loss,
                              cross_entropy, margin_upper_bounds, pgd_attack, schedule, train,
                              worst_case_logits)

logits = arrays(np.float64, (4, 5), elements=st.floats(-5, 5))


def test_worst_case_logits_examples():
    zh = worst_case_logits(np.array([0.2, -1.0]), np.array([1.0, 0.5]), 0)
    assert np.array_equal(ad.value(zh), [0.2, 0.5])
    zh = worst_case_logits(np.array([-1.0, -2.0, 0.0]), np.array([1.0, 2.0, 3.0]), 2)
    assert np.array_equal(ad.value(zh), [1.0, 2.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(logits, st.lists(st.integers(0, 4), min_size=4, max_size=4))
def test_point_bounds_give_natural_logits(z, y):
    assert np.array_equal(ad.value(worst_case_logits(z, z, np.array(y))), z)


@settings(max_examples=50, deadline=None)
@given(logits, logits, st.lists(st.integers(0, 4), min_size=4, max_size=4))
def test_kappa_endpoints(z, d, y):
    y = np.array(y)
    zh = z + np.abs(d)
    assert float(ad.value(certified_loss(z, zh, y, 1.0))) == pytest.approx(float(ad.value(cross_entropy(z, y))))
    assert float(ad.value(certified_loss(z, zh, y, 0.0))) == pytest.approx(float(ad.value(cross_entropy(zh, y))))


@settings(max_examples=50, deadline=None)
@given(logits, st.lists(st.integers(0, 4), min_size=4, max_size=4))
def test_cross_entropy_matches_direct(z, y):
    y = np.array(y)
    ref = np.mean([np.log(np.sum(np.exp(r - r.max()))) + r.max() - r[t] for r, t in zip(z, y)])
    assert float(ad.value(cross_entropy(z, y))) == pytest.approx(ref, abs=1e-10)


def test_schedule_points():
    cfg = TrainConfig(kind="Box", eps_train=0.3, epochs=110, warmup=10, rampup=50,
                      kappa_start=1.0, kappa_end=0.2)
    s0 = schedule(0, cfg)
    assert s0.eps == 0 and s0.kappa == 1.0 and s0.beta == 1.0
    s = schedule(60, cfg)
    assert s.eps == 0.3 and s.kappa == 0.2 and s.beta == 0.0
    assert schedule(35, cfg).eps == pytest.approx(0.15)


def test_lr_schedules():
    cfg = TrainConfig(lr=1.0, epochs=200, lr_milestones=((130, 0.1), (190, 0.1)))
    assert [schedule(e, cfg).lr for e in (0, 130, 190)] == pytest.approx([1.0, 0.1, 0.01])
    cfg = TrainConfig(lr=1.0, epochs=100, lr_halve_every=20)
    assert schedule(45, cfg).lr == 0.25


def test_invalid_config():
    with pytest.raises(TrainingError):
        TrainConfig(epochs=10, warmup=8, rampup=5).validate()
    with pytest.raises(TrainingError):
        TrainConfig(kappa_start=0.5, kappa_end=0.8).validate()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3)))
def test_adam_first_step_magnitude(g):
    p = [np.zeros(6)]
    new, _ = adam_step(p, [g], AdamState.zeros_like(p), lr=0.01)
    assert np.allclose(new[0], -0.01 * np.sign(g), rtol=1e-3)


def test_adam_zero_grad_and_constant_grad():
    p = [np.ones(3)]
    new, _ = adam_step(p, [np.zeros(3)], AdamState.zeros_like(p), lr=0.1)
    assert np.array_equal(new[0], p[0])
    g = [np.array([0.5, -2.0, 3.0])]
    p1, s1 = adam_step(p, g, AdamState.zeros_like(p), lr=0.1)
    p2, _ = adam_step(p1, g, s1, lr=0.1)
    step1, step2 = np.abs(p1[0] - p[0]), np.abs(p2[0] - p1[0])
    assert np.allclose(step2, step1, rtol=0.01)


def _blobs(n=128, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, 4)) * 0.5 + np.where(y[:, None] == 1, 1.0, -1.0)
    return X, y


def test_kappa_one_is_natural_training():
    X, y = _blobs()
    base = dict(eps_train=0.5, epochs=4, warmup=1, rampup=2, kappa_end=1.0, lr=1e-2,
                batch_size=32, clip=False)
    a, _ = train(build_network([4, 8, 2], 1), X, y, TrainConfig(kind="CROWN", **base))
    b, _ = train(build_network([4, 8, 2], 1), X, y, TrainConfig(kind="Box", **base))
    c, _ = train(build_network([4, 8, 2], 1), X, y, TrainConfig(kind="Box", **{**base, "eps_train": 0.0}))
    for p, q, r in zip(a.params(), b.params(), c.params()):
        assert np.array_equal(p, q) and np.array_equal(p, r)


def test_l1_shrinks_without_data_signal():
    # all-zero inputs and a dead first layer: only the L1 term has gradient on W1
    net = Network([Linear(np.full((3, 2), 0.5), -np.ones(3)), ReLU(),
                   Linear(np.zeros((2, 3)), np.zeros(2))])
    X, y = np.zeros((8, 2)), np.zeros(8, int)
    cfg = TrainConfig(kind="Box", eps_train=0.0, epochs=3, warmup=3, rampup=0, kappa_end=1.0,
                      l1=0.1, lr=1e-2, batch_size=8, clip=False)
    out, _ = train(net, X, y, cfg)
    assert np.all(np.abs(out.params()[0]) < 0.5)


def test_non_finite_loss_reports_epoch():
    X, y = _blobs(16)
    X[3] = np.nan
    with pytest.raises(TrainingError, match="epoch 0"):
        train(build_network([4, 3, 2], 0), X, y, TrainConfig(kind="Box", epochs=1, warmup=1, rampup=0))


def test_history_fields_and_determinism():
    X, y = _blobs()
    cfg = TrainConfig(kind="DeepZ", eps_train=0.2, epochs=3, warmup=1, rampup=1, batch_size=32,
                      clip=False, seed=3)
    a, ha = train(build_network([4, 6, 2], 0), X, y, cfg)
    b, hb = train(build_network([4, 6, 2], 0), X, y, cfg)
    assert [str(r) for r in ha] == [str(r) for r in hb]
    assert math.isnan(ha[0]["cert_loss"]) and not math.isnan(ha[-1]["cert_loss"])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_elided_margins_not_looser(seed):
    rng = np.random.default_rng(seed)
    net = random_small_net(rng, max_out=4)
    X = rng.normal(size=(3, net.dims[0]))
    y = rng.integers(0, net.dims[-1], 3)
    tn = net.tensors()
    for k in ("Box", "hBox", "DeepZ", "CROWN", "CROWN-0"):
        e = ad.value(margin_upper_bounds(tn, k, X, 0.2, y, True))
        n = ad.value(margin_upper_bounds(tn, k, X, 0.2, y, False))
        assert np.all(e <= n + 1e-9)


# -- PGD ---------------------------------------------------------------------------------------

def linear_1d(w=1.0):
    return Network([Linear(np.array([[w], [-w]]), np.zeros(2))])


def test_pgd_zero_eps():
    net = linear_1d()
    found, xa = pgd_attack(net, np.array([0.5]), 0, 0.0, clip=None)
    assert not found and xa[0] == 0.5
    found, _ = pgd_attack(net, np.array([0.5]), 1, 0.0, clip=None)
    assert found


def test_pgd_linear_model():
    found, xa = pgd_attack(linear_1d(2.0), np.array([0.0]), 0, 1.0, steps=50, step_size=0.05, clip=None)
    assert found and xa[0] < 0


def test_pgd_fails_on_certified_points():
    rng = np.random.default_rng(1)
    net = build_network([4, 10, 3], 2)
    X = rng.normal(size=(40, 4))
    y = np.argmax(ad.value(net_forward(net, X)), axis=1)
    eps = 0.05
    cert = np.all(ad.value(margin_upper_bounds(net.tensors(), "CROWN", X, eps, y, True)) < 0, axis=1)
    assert cert.any()
    found, _ = pgd_attack(net, X, y, eps, clip=None)
    assert not np.any(found & cert)
