import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certlab import autodiff as ad
from certlab.bounds import backsub_bounds, bounds
from certlab.lp import (LpError, LpKind, LpProblem, _Builder, check_solution, dumps_lp,
                        encode_layer, lp_bounds, lp_value_gradient, loads_lp, simplex_solve)
from certlab.network import from_linears, random_small_net

seeds = st.integers(0, 2**32 - 1)


def one_var(sense):
    return LpProblem(1, G=[[1.0], [-1.0]], h=[3.0, 0.0], c=[1.0], sense=sense)


def test_one_variable_max():
    sol = simplex_solve(one_var("max"))
    assert sol.value == pytest.approx(3.0)
    assert np.allclose(sol.ineq_duals, [1.0, 0.0])


def test_one_variable_min():
    assert simplex_solve(one_var("min")).value == pytest.approx(0.0)


def test_infeasible_and_unbounded():
    with pytest.raises(LpError):
        simplex_solve(LpProblem(1, G=[[1.0], [-1.0]], h=[-1.0, -1.0], c=[1.0]))
    with pytest.raises(LpError):
        simplex_solve(LpProblem(1, G=[[-1.0]], h=[0.0], c=[1.0], sense="max"))


def _vertex_max(G, h, c):
    """Best objective over all basic feasible points (brute force)."""
    n = G.shape[1]
    best = -np.inf
    for rows in itertools.combinations(range(len(G)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, float(c @ x))
    return best


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 6
    G = np.vstack([rng.normal(size=(4, n)), np.eye(n), -np.eye(n)])
    h = np.concatenate([rng.uniform(0.5, 2, 4), np.ones(n), np.ones(n)])  # 0 is interior
    c = rng.normal(size=n)
    sol = simplex_solve(LpProblem(n, G=G, h=h, c=c, sense="max"))
    assert sol.value == pytest.approx(_vertex_max(G, h, c), abs=1e-8)
    res = check_solution(LpProblem(n, G=G, h=h, c=c, sense="max"), sol)
    assert max(res.values()) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_variable_bounds_and_equalities(seed):
    rng = np.random.default_rng(seed)
    n = 5
    A = rng.normal(size=(2, n))
    lo, hi = -rng.uniform(0.5, 1, n), rng.uniform(0.5, 1, n)
    x0 = rng.uniform(lo / 2, hi / 2)
    p = LpProblem(n, A=A, b=A @ x0, c=rng.normal(size=n), sense="min", lo=lo, hi=hi)
    sol = simplex_solve(p)
    res = check_solution(p, sol)
    assert max(res.values()) <= 1e-8
    assert sol.value <= p.c @ x0 + 1e-9


def test_dump_roundtrip():
    p = LpProblem(2, A=[[1.0, 1.0]], b=[1.0], G=[[1.0, -1.0]], h=[0.5], c=[1.0, 2.0], c0=0.25,
                  sense="min", lo=[0.0, -np.inf], hi=[np.inf, 3.0])
    q = loads_lp(dumps_lp(p))
    assert dumps_lp(q) == dumps_lp(p)
    assert simplex_solve(q).value == pytest.approx(simplex_solve(p).value)


# -- envelope gradients ----------------------------------------------------------------------

def test_gradient_of_rhs():
    p = LpProblem(1, G=[[1.0]], h=[3.0], c=[1.0], sense="max")
    sol = simplex_solve(p)
    assert lp_value_gradient(sol, p, {"h": [[1.0]]})[0] == pytest.approx(1.0)


def test_gradient_of_scaled_lower_bound():
    # min x s.t. x >= 2 theta, written -x <= -2 theta; d/dtheta = 2
    p = LpProblem(1, G=[[-1.0]], h=[-2.0], c=[1.0], sense="min")
    sol = simplex_solve(p)
    assert sol.value == pytest.approx(2.0)
    assert lp_value_gradient(sol, p, {"h": [[-2.0]]})[0] == pytest.approx(2.0)


def fd_if_smooth(f, W, h=1e-6, tol=1e-5):
    """Central differences, or None when forward and backward differences disagree (kink)."""
    f0 = f(W)
    fd = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        fp, fm = f(Wp), f(Wm)
        if abs((fp - f0) - (f0 - fm)) > tol * h * max(1.0, abs(fp - fm) / h):
            return None
        fd[idx] = (fp - fm) / (2 * h)
    return fd


@pytest.mark.parametrize("kind", ["Triangle", "Parallelogram"])
def test_lp_bound_gradient_matches_fd(kind):
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 5:
        W1, b1 = rng.normal(size=(4, 2)), rng.normal(size=4) * 0.3
        W2, b2 = rng.normal(size=(2, 4)), rng.normal(size=2) * 0.3
        x, eps = rng.normal(size=2) * 0.3, 0.5

        def f(W):
            return bounds(from_linears([(W, b1), (W2, b2)]), kind, x, eps).l(-1)[0]

        fd = fd_if_smooth(f, W1)
        if fd is None:
            continue
        t = ad.Tape()
        tn = from_linears([(W1, b1), (W2, b2)]).tensors(t)
        g = ad.grad(bounds(tn, kind, x, eps).lower[-1][0], [tn.leaves()[0]])[0]
        assert np.abs(fd - g).max() <= 1e-3 * max(1.0, np.abs(fd).max())
        checked += 1


# -- encodings ---------------------------------------------------------------------------------

def _toy_box():
    return -np.ones((1, 2)), np.ones((1, 2))


def test_deepzlp_toy_values(toy_net):
    lb = lp_bounds(toy_net, LpKind.DEEPZ_LP, *_toy_box())
    assert np.allclose(lb.l(3), [[-1, -2]], atol=1e-8) and np.allclose(lb.u(3), [[3, 2]], atol=1e-8)


def test_triangle_toy_at_least_deepz(toy_net):
    lb = lp_bounds(toy_net, LpKind.TRIANGLE, *_toy_box())
    assert np.all(lb.l(3) >= np.array([-1, -2]) - 1e-9)
    assert np.all(lb.u(3) <= np.array([3, 2]) + 1e-9)


def test_deepzlp_stable_positive_is_equality():
    net = from_linears([(np.array([[1.0]]), np.array([2.0])), (np.array([[1.0]]), np.zeros(1))])
    lo, hi = [np.array([-1.0])], [np.array([1.0])]
    lower, upper = [np.array([-1.0]), np.array([1.0])], [np.array([1.0]), np.array([3.0])]
    bld = _Builder()
    offsets = [bld.add_vars(1, lo[0], hi[0])]
    encode_layer(LpKind.DEEPZ_LP, 1, net, (lower, upper), bld, offsets)
    encode_layer(LpKind.DEEPZ_LP, 2, net, (lower, upper), bld, offsets)
    p = bld.problem()
    # x2 - 1*x1 - 0*e = 0: the ReLU passes its input through
    row = p.A[-1]
    assert row[offsets[2]] == 1.0 and row[offsets[1]] == -1.0 and p.b[-1] == 0.0


def test_missing_prior_bounds():
    net = from_linears([(np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))])
    bld = _Builder()
    offsets = [bld.add_vars(2)]
    with pytest.raises(LpError):
        encode_layer(LpKind.TRIANGLE, 2, net, ([np.zeros(2)], [np.ones(2)]), bld, offsets)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_fast_encoding_matches_full(seed):
    rng = np.random.default_rng(seed)
    net = random_small_net(rng, max_hidden=2, max_width=6)
    x, eps = rng.normal(size=net.dims[0]), float(rng.uniform(0.05, 0.8))
    lo, hi = (x - eps)[None], (x + eps)[None]
    for kind in (LpKind.TRIANGLE, LpKind.PARALLELOGRAM, LpKind.CROWN_LP, LpKind.DEEPZ_LP):
        a = lp_bounds(net, kind, lo, hi, path="fast")
        b = lp_bounds(net, kind, lo, hi, path="full")
        for i in range(a.n_layers + 1):
            assert np.allclose(a.l(i), b.l(i), atol=1e-8) and np.allclose(a.u(i), b.u(i), atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_triangle_dominates_crown_backsub(seed):
    rng = np.random.default_rng(seed)
    net = random_small_net(rng)
    x, eps = rng.normal(size=net.dims[0]), float(rng.uniform(0.05, 0.8))
    tri = bounds(net, "Triangle", x, eps)
    cr = bounds(net, "CROWN", x, eps)
    assert np.all(tri.l(-1) >= cr.l(-1) - 1e-8) and np.all(tri.u(-1) <= cr.u(-1) + 1e-8)
