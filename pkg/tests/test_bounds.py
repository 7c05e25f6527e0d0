import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certlab import autodiff as ad
from certlab.bounds import (BoundsError, RelaxationKind, backsub_bounds, bounds, box_propagate,
                            input_box, parse_kind, relu_relax)
from certlab.diagnostics import minimal_network
from certlab.network import Linear, Network, forward_all, from_linears, random_small_net

ALL = ["Box", "hBox", "DeepZ", "CROWN", "CROWN-0", "CROWN-IBP(R)", "Triangle", "Parallelogram"]
FAST = ["Box", "hBox", "DeepZ", "CROWN", "CROWN-0", "CROWN-IBP(R)"]
seeds = st.integers(0, 2**32 - 1)


def unit_box():
    return -np.ones(2), np.ones(2)


# -- single-neuron rules ---------------------------------------------------------------

def test_deepz_lambda():
    r = relu_relax("DeepZ", -2.0, 2.0)
    assert r.upper_slope == 0.5 and r.lower_slope == 0.5
    assert r.upper_offset == 1.0 and r.lower_offset == 0.0


def test_crown_adaptive_lower():
    assert relu_relax("CROWN", -2.0, 2.0).lower_slope == 0.0
    assert relu_relax("CROWN", -1.0, 2.0).lower_slope == 1.0


@pytest.mark.parametrize("kind", ["hBox", "DeepZ", "CROWN", "CROWN-0"])
def test_stable_cases(kind):
    r = relu_relax(kind, -3.0, -1.0)
    assert (r.lower_slope, r.lower_offset, r.upper_slope, r.upper_offset) == (0, 0, 0, 0)
    r = relu_relax(kind, 1.0, 3.0)
    if kind == "CROWN-0":
        assert (r.lower_slope, r.upper_slope, r.upper_offset) == (0, 1, 0)
    else:
        assert (r.lower_slope, r.lower_offset, r.upper_slope, r.upper_offset) == (1, 0, 1, 0)


def test_hbox_unstable():
    r = relu_relax("hBox", -1.0, 3.0)
    assert (r.lower_slope, r.lower_offset, r.upper_slope, r.upper_offset) == (0, 0, 0, 3.0)


def test_l_greater_than_u():
    with pytest.raises(BoundsError):
        relu_relax("DeepZ", 1.0, 0.0)


def test_unknown_kind():
    with pytest.raises(BoundsError):
        parse_kind("Zonotope++")


def test_wrong_engine():
    lo, hi = unit_box()
    net = from_linears([(np.eye(2), np.zeros(2))])
    for k in ("Box", "Triangle", "CROWN-IBP(R)"):
        with pytest.raises(BoundsError):
            backsub_bounds(net, k, lo, hi)


# -- worked example ---------------------------------------------------------------------

def test_box_toy(toy_net):
    lb = box_propagate(toy_net, *unit_box())
    assert np.array_equal(lb.l(3), [0, -2]) and np.array_equal(lb.u(3), [4, 2])


def test_deepz_toy(toy_net):
    lb = backsub_bounds(toy_net, "DeepZ", *unit_box())
    assert np.allclose(lb.l(1), [-2, -2]) and np.allclose(lb.u(1), [2, 2])
    assert np.allclose(lb.l(2), [-1, -1], atol=1e-12)
    # upper relaxation x2 <= x1/2 + 1 concretizes to 2 (the ReLU really reaches 2 at x=(1,1))
    assert np.allclose(lb.u(2), [2, 2], atol=1e-12)
    assert np.allclose(lb.l(3), [-1, -2], atol=1e-12)
    assert np.allclose(lb.u(3), [3, 2], atol=1e-12)


def test_crown_toy(toy_net):
    lb = backsub_bounds(toy_net, "CROWN", *unit_box())
    assert np.allclose(lb.l(3), [0, -2], atol=1e-12)
    assert np.allclose(lb.u(3), [3, 2], atol=1e-12)


def test_zero_weight_net():
    net = from_linears([(np.zeros((3, 2)), np.ones(3)), (np.zeros((2, 3)), np.array([0.5, -2.0]))])
    for k in FAST:
        lb = bounds(net, k, np.zeros(2), 1.0)
        assert np.array_equal(lb.l(-1), [0.5, -2.0]) and np.array_equal(lb.u(-1), [0.5, -2.0])


# -- minimal discontinuity network ------------------------------------------------------

@pytest.mark.parametrize("w,expected", [(-0.5, 1.0), (0.5, 0.5)])
def test_minimal_crown(w, expected):
    lb = bounds(minimal_network(w), "CROWN", np.zeros(1), 1.0)
    assert lb.l(3)[0] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("w,expected", [(0.5, -1.5), (0.0, -1.0), (1.0, 0.0), (1.2, 0.0)])
def test_minimal_hbox(w, expected):
    lb = bounds(minimal_network(w), "hBox", np.zeros(1), 1.0)
    assert lb.l(3)[1] == pytest.approx(expected, abs=1e-12)


# -- properties ---------------------------------------------------------------------------

def _case(seed):
    rng = np.random.default_rng(seed)
    net = random_small_net(rng)
    x = rng.uniform(-1, 1, net.dims[0])
    return rng, net, x, float(rng.uniform(0.01, 0.5))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_point_input_collapses(seed):
    _, net, x, _ = _case(seed)
    z = ad.value(forward_all(net, x[None])[-1])[0]
    for k in ALL:
        if k == "CROWN-0":
            continue  # its lower relaxation is 0 even on active neurons
        lb = bounds(net, k, x, 0.0)
        assert np.allclose(lb.l(-1), z, atol=1e-9) and np.allclose(lb.u(-1), z, atol=1e-9)


def test_crown0_does_not_collapse():
    net = from_linears([(np.array([[1.0]]), np.array([1.0])), (np.array([[1.0]]), np.zeros(1))])
    lb = bounds(net, "CROWN-0", np.zeros(1), 0.0)
    assert lb.l(-1)[0] == 0.0 and lb.u(-1)[0] == 1.0


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_one_linear_layer_all_coincide(seed):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    net = Network([Linear(W, b)])
    x, eps = rng.normal(size=4), 0.3
    ref = bounds(net, "Box", x, eps)
    for k in ALL:
        lb = bounds(net, k, x, eps)
        assert np.allclose(lb.l(-1), ref.l(-1), atol=1e-10)
        assert np.allclose(lb.u(-1), ref.u(-1), atol=1e-10)


# Relaxations whose per-neuron sets grow with [l, u]; the adaptive slopes of DeepZ and
# CROWN lack this nesting, so their bounds need not be monotone in eps.
NESTED = ["Box", "hBox", "Triangle", "Parallelogram"]


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_monotone_in_eps(seed):
    _, net, x, eps = _case(seed)
    for k in NESTED:
        a, b = bounds(net, k, x, eps), bounds(net, k, x, 1.5 * eps)
        assert np.all(b.l(-1) <= a.l(-1) + 1e-9) and np.all(b.u(-1) >= a.u(-1) - 1e-9)


def test_adaptive_relaxations_not_nested():
    # on [-1, 1] the DeepZ lower line at t=1 is 1/2; widening to [-1, 3] raises it to 3/4
    narrow, wide = relu_relax("DeepZ", -1.0, 1.0), relu_relax("DeepZ", -1.0, 3.0)
    assert wide.lower_slope * 1.0 + wide.lower_offset > narrow.lower_slope * 1.0 + narrow.lower_offset
    # and a wider input box can give CROWN a strictly tighter output bound
    worst = 0.0
    for seed in range(200):
        _, net, x, eps = _case(seed)
        a, b = bounds(net, "CROWN", x, eps), bounds(net, "CROWN", x, 1.5 * eps)
        worst = max(worst, np.max(b.l(-1) - a.l(-1)), np.max(a.u(-1) - b.u(-1)))
    assert worst > 1e-6


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_sound_on_samples(seed):
    rng, net, x, eps = _case(seed)
    pts = x + rng.uniform(-eps, eps, size=(300, len(x)))
    acts = [ad.value(a) for a in forward_all(net, pts)]
    for k in ALL:
        lb = bounds(net, k, x, eps)
        for i, a in enumerate(acts):
            if lb.lower[i] is None:
                continue
            assert np.all(a >= lb.l(i) - 1e-9) and np.all(a <= lb.u(i) + 1e-9), (k, i)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_hbox_dominates_box(seed):
    _, net, x, eps = _case(seed)
    b, h = bounds(net, "Box", x, eps), bounds(net, "hBox", x, eps)
    for i in range(b.n_layers + 1):
        assert np.all(h.l(i) >= b.l(i) - 1e-12) and np.all(h.u(i) <= b.u(i) + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_elided_bounds_match_output_differences(seed):
    rng, net, x, eps = _case(seed)
    y = int(rng.integers(net.dims[-1]))
    for k in ("Box", "DeepZ", "CROWN"):
        full = bounds(net, k, x, eps)
        el = bounds(net, k, x, eps, spec_y=y)
        naive = np.delete(full.u(-1), y) - full.l(-1)[y]
        assert np.all(el.u(-1) <= naive + 1e-9)


def test_clip_domain():
    lo, hi = input_box(np.array([0.05, 0.95]), 0.1, (0.0, 1.0))
    assert np.allclose(ad.value(lo), [0.0, 0.85]) and np.allclose(ad.value(hi), [0.15, 1.0])
    with pytest.raises(BoundsError):
        input_box(np.zeros(2), -0.1)


def test_bounds_are_differentiable(toy_net):
    t = ad.Tape()
    tn = toy_net.tensors(t)
    lb = bounds(tn, "CROWN", np.array([0.2, 0.1]), 0.5)
    g = ad.grad(ad.tsum(lb.lower[-1]), tn.leaves())
    assert any(np.any(x != 0) for x in g)
