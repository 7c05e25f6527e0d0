"""Feedforward ReLU networks: construction, evaluation, elision and text serialization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

HEADER = "certlab-net v1"


class NetworkError(ValueError):
    pass


class NetworkParseError(NetworkError):
    def __init__(self, msg: str, offset: int):
        self.offset = offset
        super().__init__(f"{msg} (byte offset {offset})")


@dataclass
class Linear:
    W: np.ndarray
    b: np.ndarray


@dataclass
class ReLU:
    pass


@dataclass
class Network:
    """Alternating Linear / ReLU layers, first and last linear.

    Layer ``i`` (1-based, as in ``x_i = h_i(x_{i-1})``) is ``layers[i-1]``.
    """

    layers: list = field(default_factory=list)

    def __post_init__(self):
        check_layers(self.layers)

    @property
    def linears(self) -> list[Linear]:
        return [l for l in self.layers if isinstance(l, Linear)]

    @property
    def dims(self) -> list[int]:
        lin = self.linears
        return [lin[0].W.shape[1]] + [l.W.shape[0] for l in lin]

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "Network":
        return Network([Linear(l.W.copy(), l.b.copy()) if isinstance(l, Linear) else ReLU()
                        for l in self.layers])

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.linears:
            out += [l.W, l.b]
        return out

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def with_params(self, params) -> "Network":
        params = list(params)
        layers, k = [], 0
        for l in self.layers:
            if isinstance(l, Linear):
                layers.append(Linear(np.array(params[k], dtype=np.float64),
                                     np.array(params[k + 1], dtype=np.float64)))
                k += 2
            else:
                layers.append(ReLU())
        return Network(layers)

    def set_flat_params(self, theta: np.ndarray) -> "Network":
        params, k = [], 0
        for p in self.params():
            params.append(np.asarray(theta[k:k + p.size]).reshape(p.shape))
            k += p.size
        return self.with_params(params)

    def tensors(self, tape: ad.Tape | None = None) -> "TensorNet":
        """Parameters as tensors; leaves on ``tape`` when given, constants otherwise."""
        pairs = []
        for l in self.linears:
            if tape is None:
                pairs.append((ad.const(l.W), ad.const(l.b)))
            else:
                pairs.append((tape.leaf(l.W), tape.leaf(l.b)))
        return TensorNet(pairs)


@dataclass
class TensorNet:
    """Linear-layer parameters as tensors, ReLU implicit between consecutive pairs.

    The last pair may carry a leading batch axis (per-example elided specification).
    """

    linears: list[tuple[Tensor, Tensor]]

    @property
    def dims(self) -> list[int]:
        return [self.linears[0][0].shape[-1]] + [W.shape[-2] for W, _ in self.linears]

    def leaves(self) -> list[Tensor]:
        return [t for pair in self.linears for t in pair]


def as_tensor_net(net) -> TensorNet:
    if isinstance(net, TensorNet):
        return net
    if isinstance(net, Network):
        return net.tensors()
    raise TypeError(f"expected Network or TensorNet, got {type(net).__name__}")


def check_layers(layers) -> None:
    if not layers:
        raise NetworkError("network has no layers")
    for k, l in enumerate(layers):
        want = Linear if k % 2 == 0 else ReLU
        if not isinstance(l, want):
            raise NetworkError(f"layer {k + 1} must be {want.__name__}: layer types alternate "
                               "and the first and last layers are linear")
    if not isinstance(layers[-1], Linear):
        raise NetworkError("last layer must be linear")
    prev = None
    for k, l in enumerate(layers):
        if not isinstance(l, Linear):
            continue
        if l.W.ndim != 2 or l.b.shape != (l.W.shape[0],):
            raise NetworkError(f"layer {k + 1}: weight {l.W.shape} / bias {l.b.shape} mismatch")
        if prev is not None and l.W.shape[1] != prev:
            raise NetworkError(f"layer {k + 1}: expects {l.W.shape[1]} inputs, previous layer has {prev}")
        if not (np.all(np.isfinite(l.W)) and np.all(np.isfinite(l.b))):
            raise NetworkError(f"layer {k + 1}: non-finite parameters")
        prev = l.W.shape[0]


def from_linears(pairs) -> Network:
    layers = []
    for k, (W, b) in enumerate(pairs):
        if k:
            layers.append(ReLU())
        layers.append(Linear(np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)))
    return Network(layers)


def build_network(dims, init_seed: int = 0) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    dims = list(dims)
    if len(dims) < 2:
        raise NetworkError("dims needs at least an input and an output width")
    if any(int(d) != d or d <= 0 for d in dims):
        raise NetworkError(f"all widths must be positive integers, got {dims}")
    rng = np.random.default_rng(init_seed)
    pairs = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        pairs.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return from_linears(pairs)


def affine(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """``W x + b`` for a batch ``x`` of shape (B, n); ``W`` is (m, n) or (B, m, n)."""
    if W.ndim == 2:
        return ad.matmul(x, ad.swapaxes(W)) + b
    return ad.matmul(W, ad.expand(x, -1))[..., 0] + b


def forward_all(net, x) -> list[Tensor]:
    """All activations x_0..x_L for a batch (B, n0)."""
    tn = as_tensor_net(net)
    x = ad.as_tensor(x)
    if x.shape[-1] != tn.dims[0]:
        raise NetworkError(f"input has {x.shape[-1]} features, network expects {tn.dims[0]}")
    acts = [x]
    for k, (W, b) in enumerate(tn.linears):
        if k:
            acts.append(ad.relu(acts[-1]))
        acts.append(affine(W, acts[-1], b))
    return acts


def net_forward(net, x) -> Tensor:
    """Logits z = h(x).  Accepts a single input (n0,) or a batch (B, n0)."""
    xt = ad.as_tensor(x)
    single = xt.ndim == 1
    if single:
        xt = ad.expand(xt, 0)
    z = forward_all(net, xt)[-1]
    return z[0] if single else z


def spec_matrix(y: int, n_classes: int) -> np.ndarray:
    """Rows c_{y'} = e_{y'} - e_y for y' != y, in increasing y' order."""
    C = np.zeros((n_classes - 1, n_classes))
    for r, yp in enumerate(k for k in range(n_classes) if k != y):
        C[r, yp] = 1.0
        C[r, y] = -1.0
    return C


@dataclass(frozen=True)
class Specification:
    y: int
    n_classes: int

    @property
    def rows(self) -> np.ndarray:
        return spec_matrix(self.y, self.n_classes)


def elide_spec(net: Network, spec: Specification | int) -> Network:
    """Merge the specification rows into the last linear layer (output dim n_L - 1)."""
    if isinstance(spec, (int, np.integer)):
        spec = Specification(int(spec), net.n_classes)
    last = net.layers[-1]
    C = spec.rows
    layers = net.copy().layers
    layers[-1] = Linear(C @ last.W, C @ last.b)
    return Network(layers)


def batch_spec_matrices(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    return np.stack([spec_matrix(int(k), n_classes) for k in y]) if len(y) else \
        np.zeros((0, n_classes - 1, n_classes))


def elide_tensors(net, y: np.ndarray) -> TensorNet:
    """Per-example elided network: last layer becomes (B, n_L - 1, n_{L-1})."""
    tn = as_tensor_net(net)
    W, b = tn.linears[-1]
    C = batch_spec_matrices(y, W.shape[-2])
    We = ad.matmul(C, W)
    be = ad.matmul(C, ad.expand(b, -1))[..., 0]
    return TensorNet(tn.linears[:-1] + [(We, be)])


# -- serialization -------------------------------------------------------------

def dumps_network(net: Network) -> str:
    lines = [HEADER, "dims: " + " ".join(str(d) for d in net.dims)]
    for l in net.linears:
        rows, cols = l.W.shape
        lines.append(f"linear {rows} {cols}")
        for r in range(rows):
            lines.append(" ".join(repr(float(v)) for v in l.W[r]))
        lines.append("bias " + " ".join(repr(float(v)) for v in l.b))
    return "\n".join(lines) + "\n"


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net), encoding="utf-8")


def _floats(text: str, offset: int, want: int) -> np.ndarray:
    parts = text.split()
    if len(parts) != want:
        raise NetworkParseError(f"expected {want} numbers, found {len(parts)}", offset)
    try:
        vals = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        raise NetworkParseError("malformed number", offset) from None
    if not np.all(np.isfinite(vals)):
        raise NetworkParseError("non-finite parameter", offset)
    return vals


def loads_network(text: str) -> Network:
    raw = text.encode("utf-8")
    lines, offsets, pos = [], [], 0
    for line in raw.split(b"\n"):
        lines.append(line.decode("utf-8").strip())
        offsets.append(pos)
        pos += len(line) + 1
    # trailing empty line from the final newline
    while lines and not lines[-1]:
        lines.pop()
        offsets.pop()
    k = 0

    def take():
        nonlocal k
        if k >= len(lines):
            raise NetworkParseError("unexpected end of file", len(raw))
        k += 1
        return lines[k - 1], offsets[k - 1]

    line, off = take()
    if line != HEADER:
        raise NetworkParseError(f"bad header {line!r}", off)
    line, off = take()
    if not line.startswith("dims:"):
        raise NetworkParseError("expected 'dims:' line", off)
    try:
        dims = [int(t) for t in line[5:].split()]
    except ValueError:
        raise NetworkParseError("malformed dims", off) from None
    if len(dims) < 2 or min(dims) <= 0:
        raise NetworkParseError("dims needs at least two positive widths", off)
    pairs = []
    relu_pending = False
    while k < len(lines):
        line, off = take()
        if line == "relu":
            # optional explicit marker; must sit between two linear layers
            if not pairs or relu_pending:
                raise NetworkParseError("layer types must alternate linear/relu", off)
            relu_pending = True
            continue
        relu_pending = False
        tok = line.split()
        if len(tok) != 3 or tok[0] != "linear":
            raise NetworkParseError(f"expected 'linear <rows> <cols>', got {line[:40]!r}", off)
        try:
            rows, cols = int(tok[1]), int(tok[2])
        except ValueError:
            raise NetworkParseError("malformed layer shape", off) from None
        W = np.empty((rows, cols))
        for r in range(rows):
            rl, ro = take()
            W[r] = _floats(rl, ro, cols)
        bl, bo = take()
        if not bl.startswith("bias"):
            raise NetworkParseError("expected 'bias' line", bo)
        b = _floats(bl[4:], bo, rows)
        pairs.append((W, b, off))
    if not pairs:
        raise NetworkParseError("no linear layers", len(raw))
    if relu_pending:
        raise NetworkParseError("last layer must be linear", len(raw))
    shape_dims = [pairs[0][0].shape[1]] + [W.shape[0] for W, _, _ in pairs]
    for (W, _, off), (Wn, _, offn) in zip(pairs, pairs[1:]):
        if Wn.shape[1] != W.shape[0]:
            raise NetworkParseError("consecutive layer dimensions do not chain", offn)
    if shape_dims != dims:
        raise NetworkParseError(f"dims line {dims} disagrees with layers {shape_dims}", offsets[1])
    return from_linears([(W, b) for W, b, _ in pairs])


def load_network(path) -> Network:
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise NetworkParseError("file is not UTF-8", e.start) from None
    return loads_network(text)


def random_small_net(rng: np.random.Generator, max_hidden: int = 3, max_width: int = 10,
                     max_in: int = 4, max_out: int = 3) -> Network:
    """Random test network: 1..max_hidden hidden layers of width 2..max_width."""
    h = int(rng.integers(1, max_hidden + 1))
    dims = [int(rng.integers(1, max_in + 1))] + [int(rng.integers(2, max_width + 1)) for _ in range(h)]
    dims.append(int(rng.integers(2, max_out + 1)))
    return from_linears([(rng.standard_normal((dims[k + 1], dims[k])) / np.sqrt(dims[k]),
                          0.5 * rng.standard_normal(dims[k + 1])) for k in range(len(dims) - 1)])
