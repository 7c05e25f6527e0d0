import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certlab import autodiff as ad
from certlab.diagnostics import minimal_network
from certlab.network import (Linear, Network, NetworkError, NetworkParseError, ReLU,
                             build_network, dumps_network, elide_spec, forward_all,
                             load_network, loads_network, net_forward, random_small_net,
                             save_network, spec_matrix)

from conftest import FIXTURES


def test_build_alternates_layers():
    net = build_network([16, 20, 20, 2], 3)
    kinds = [type(l).__name__ for l in net.layers]
    assert kinds == ["Linear", "ReLU", "Linear", "ReLU", "Linear"]
    assert net.dims == [16, 20, 20, 2]


def test_fc_architecture_dims():
    net = build_network([784, 400, 200, 100, 100, 10], 0)
    assert len(net.linears) == 5 and net.dims[-1] == 10


def test_empty_dims_rejected():
    with pytest.raises(NetworkError):
        build_network([], 0)


def test_build_is_seeded():
    a, b = build_network([4, 5, 3], 7), build_network([4, 5, 3], 7)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_toy_forward(toy_net):
    acts = [ad.value(a)[0] for a in forward_all(toy_net, np.array([[1.0, 1.0]]))]
    assert np.array_equal(acts[1], [2, 0])
    assert np.array_equal(acts[2], [2, 0])
    assert np.array_equal(acts[3], [2, 2])


def test_identity_linear_net():
    net = Network([Linear(np.eye(3), np.zeros(3))])
    x = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(ad.value(net_forward(net, x)), x)


def test_minimal_network_forward():
    acts = [ad.value(a)[0] for a in forward_all(minimal_network(0.5), np.zeros((1, 1)))]
    assert np.allclose(acts[1], [0.5, 0.5])
    assert np.allclose(acts[2], [0.5, 0.5])
    assert np.allclose(acts[3], [1.5, 0.0])


def test_dimension_mismatch():
    with pytest.raises(NetworkError):
        forward_all(build_network([3, 4, 2]), np.ones((1, 5)))
    with pytest.raises(NetworkError):
        Network([Linear(np.ones((4, 3)), np.zeros(4)), ReLU(), Linear(np.ones((2, 5)), np.zeros(2))])


def test_spec_matrix_rows():
    C = spec_matrix(3, 10)
    assert C.shape == (9, 10)
    z = np.arange(10.0)
    assert np.array_equal(C @ z, np.delete(z, 3) - 3.0)


def test_elided_output_dim():
    net = build_network([5, 6, 10], 1)
    el = elide_spec(net, 3)
    assert el.dims[-1] == 9
    x = np.linspace(0, 1, 5)
    z = ad.value(net_forward(net, x))
    assert np.allclose(ad.value(net_forward(el, x)), spec_matrix(3, 10) @ z)


def test_load_fixture_forward():
    net = load_network(FIXTURES / "toy_net.txt")
    assert np.array_equal(ad.value(net_forward(net, np.array([1.0, 1.0]))), [2.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roundtrip(tmp_path_factory, seed):
    net = random_small_net(np.random.default_rng(seed))
    p = tmp_path_factory.mktemp("net") / "net.txt"
    save_network(net, p)
    back = load_network(p)
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), back.params()))
    assert dumps_network(back) == p.read_text()


def test_non_alternating_rejected():
    text = (FIXTURES / "toy_net.txt").read_text().replace("linear 2 2\n1.0 1.0\n1.0 -1.0\nbias 0.0 0.0\n",
                                                           "linear 3 2\n1 1\n1 1\n1 1\nbias 0 0 0\n", 1)
    with pytest.raises(NetworkError):
        loads_network(text)


def test_malformed_reports_offset():
    text = (FIXTURES / "toy_net.txt").read_text().replace("1.0 -1.0", "1.0 oops", 1)
    with pytest.raises(NetworkParseError) as e:
        loads_network(text)
    # offset of the offending row
    assert e.value.offset == text.index("1.0 oops")
