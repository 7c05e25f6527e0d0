"""Interval and backsubstitution bound propagation.

Layer indices follow ``x_i = h_i(x_{i-1})``: ``x_0`` is the input, odd layers are
linear, even layers (> 0) are ReLU.  Every engine works on a batch of input boxes
of shape (B, n0) and records on the autodiff tape whenever the network
parameters are taped.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import Network, TensorNet, as_tensor_net, elide_tensors

DEGENERATE_WIDTH = 1e-12


class RelaxationKind(str, enum.Enum):
    BOX = "Box"
    HBOX = "hBox"
    DEEPZ = "DeepZ"
    CROWN = "CROWN"
    CROWN0 = "CROWN-0"
    CROWN_IBP_R = "CROWN-IBP(R)"
    TRIANGLE = "Triangle"
    PARALLELOGRAM = "Parallelogram"

    def __str__(self):
        return self.value


BACKSUB_KINDS = (RelaxationKind.HBOX, RelaxationKind.DEEPZ,
                 RelaxationKind.CROWN, RelaxationKind.CROWN0)
LP_KINDS = (RelaxationKind.TRIANGLE, RelaxationKind.PARALLELOGRAM)

_ALIASES = {
    "box": RelaxationKind.BOX, "ibp": RelaxationKind.BOX, "interval": RelaxationKind.BOX,
    "hbox": RelaxationKind.HBOX, "deepz": RelaxationKind.DEEPZ,
    "crown": RelaxationKind.CROWN, "deeppoly": RelaxationKind.CROWN,
    "crown-0": RelaxationKind.CROWN0, "crown0": RelaxationKind.CROWN0,
    "crown-ibp(r)": RelaxationKind.CROWN_IBP_R, "crownibpr": RelaxationKind.CROWN_IBP_R,
    "crown-ibp-r": RelaxationKind.CROWN_IBP_R,
    "triangle": RelaxationKind.TRIANGLE, "parallelogram": RelaxationKind.PARALLELOGRAM,
}


class BoundsError(ValueError):
    pass


def parse_kind(name) -> RelaxationKind:
    if isinstance(name, RelaxationKind):
        return name
    try:
        return _ALIASES[str(name).strip().lower()]
    except KeyError:
        raise BoundsError(f"unknown relaxation kind {name!r}") from None


@dataclass
class ReluRelax:
    """lower_slope*t + lower_offset <= ReLU(t) <= upper_slope*t + upper_offset on [l, u]."""

    lower_slope: float
    lower_offset: float
    upper_slope: float
    upper_offset: float


@dataclass
class LayerBounds:
    """Per-layer bounds; index 0 is the input box, index L the output."""

    lower: list
    upper: list

    def l(self, i: int) -> np.ndarray:
        return ad.value(self.lower[i])

    def u(self, i: int) -> np.ndarray:
        return ad.value(self.upper[i])

    @property
    def n_layers(self) -> int:
        return len(self.lower) - 1

    def final(self) -> tuple[np.ndarray, np.ndarray]:
        return self.l(-1), self.u(-1)

    def squeeze(self) -> "LayerBounds":
        """Drop a leading batch axis of size one."""
        return LayerBounds([t[0] for t in self.lower], [t[0] for t in self.upper])


# -- ReLU relaxations -------------------------------------------------------------

def stability(l: np.ndarray, u: np.ndarray):
    """Masks (dead, active, unstable); zero boundaries and degenerate intervals are stable."""
    l = np.asarray(l)
    u = np.asarray(u)
    dead = u <= 0
    active = (l >= 0) & ~dead
    degenerate = ~dead & ~active & (u - l < DEGENERATE_WIDTH)
    active = active | degenerate
    return dead, active, ~dead & ~active


def relax_coeffs(kind: RelaxationKind, l, u):
    """Vectorized relaxation (lower slope, lower offset, upper slope, upper offset)."""
    kind = parse_kind(kind)
    l, u = ad.as_tensor(l), ad.as_tensor(u)
    lv, uv = l.value, u.value
    dead, active, unst = stability(lv, uv)
    zeros = np.zeros(lv.shape)
    ones_active = active.astype(np.float64)
    if kind is RelaxationKind.BOX:
        return ad.const(zeros), ad.relu(l), ad.const(zeros), ad.relu(u)
    if kind in LP_KINDS:
        raise BoundsError(f"{kind} has no single lower/upper linear ReLU relaxation")

    den = ad.select(unst, u - l, 1.0)
    lam = ad.select(unst, u / den, ones_active)           # 1 active, 0 dead
    up_off = ad.select(unst, -(lam * l), 0.0)
    if kind is RelaxationKind.HBOX:
        return (ad.const(ones_active), ad.const(zeros),
                ad.const(ones_active), ad.select(unst, u, 0.0))
    if kind is RelaxationKind.DEEPZ:
        return lam, ad.const(zeros), lam, up_off
    if kind in (RelaxationKind.CROWN, RelaxationKind.CROWN_IBP_R):
        # adaptive lower bound: 0 when -l >= u, identity otherwise
        lo = np.where(unst, (-lv < uv).astype(np.float64), ones_active)
        return ad.const(lo), ad.const(zeros), lam, up_off
    if kind is RelaxationKind.CROWN0:
        return ad.const(zeros), ad.const(zeros), lam, up_off
    raise BoundsError(f"no ReLU relaxation rule for {kind}")


def relu_relax(kind, l: float, u: float) -> ReluRelax:
    if l > u:
        raise BoundsError(f"relu_relax: l={l} > u={u}")
    ls, ld, us, ud = relax_coeffs(kind, np.array([l], float), np.array([u], float))
    return ReluRelax(float(ls.value[0]), float(ld.value[0]), float(us.value[0]), float(ud.value[0]))


# -- input boxes ----------------------------------------------------------------

def input_box(x, eps: float, clip: tuple[float, float] | None = None):
    if eps < 0:
        raise BoundsError(f"eps must be >= 0, got {eps}")
    x = ad.as_tensor(x)
    lo, hi = x - eps, x + eps
    if clip is not None:
        lo = ad.maximum(lo, clip[0])
        hi = ad.minimum(hi, clip[1])
        if np.any(lo.value > hi.value):
            raise BoundsError("input lies outside the clipping domain")
    return lo, hi


def _split(A: Tensor):
    """(A+, A-) with the A >= 0 entries in A+; np.maximum is much cheaper than np.where here."""
    Ap = ad.apply("pos", (A,), lambda x: np.maximum(x, 0.0), lambda g, o, x: (g * (x >= 0),))
    return Ap, A - Ap


def _mv(A: Tensor, v: Tensor) -> Tensor:
    """Batched (B, k, n) x (B, n) -> (B, k)."""
    return ad.matmul(A, ad.expand(v, -1))[..., 0]


def _interval_affine(W: Tensor, b: Tensor, lo: Tensor, hi: Tensor):
    Wp, Wn = _split(W)
    if W.ndim == 2:
        Wp, Wn = ad.swapaxes(Wp), ad.swapaxes(Wn)
        return (ad.matmul(lo, Wp) + ad.matmul(hi, Wn) + b,
                ad.matmul(hi, Wp) + ad.matmul(lo, Wn) + b)
    return _mv(Wp, lo) + _mv(Wn, hi) + b, _mv(Wp, hi) + _mv(Wn, lo) + b


def box_propagate(net, lo, hi) -> LayerBounds:
    """Interval arithmetic through every layer."""
    tn = as_tensor_net(net)
    lower, upper = [ad.as_tensor(lo)], [ad.as_tensor(hi)]
    for k, (W, b) in enumerate(tn.linears):
        if k:
            lower.append(ad.relu(lower[-1]))
            upper.append(ad.relu(upper[-1]))
        l, u = _interval_affine(W, b, lower[-1], upper[-1])
        lower.append(l)
        upper.append(u)
    return LayerBounds(lower, upper)


def _broadcast_batch(W: Tensor, b: Tensor, batch: int):
    if W.ndim == 2:
        W = W * np.ones((batch, 1, 1))
        b = b + np.zeros((batch, 1))
    return W, b


def backsubstitute(tn: TensorNet, relax: list, p: int, A: Tensor, c: Tensor,
                   lo0: Tensor, hi0: Tensor, upper: bool) -> Tensor:
    """Concretize ``A x_{2p} + c`` (A: (B, k, n_{2p})) down to the input box.

    ``relax[q]`` holds the relaxation of ReLU layer ``x_{2q+2}``.  With
    ``upper=True`` the upper bound is returned, otherwise the lower bound.
    """
    while p > 0:
        ls, ld, us, ud = relax[p - 1]
        Ap, An = _split(A)
        if upper:
            c = c + _mv(Ap, ud) + _mv(An, ld)
            A = Ap * ad.expand(us, -2) + An * ad.expand(ls, -2)
        else:
            c = c + _mv(Ap, ld) + _mv(An, ud)
            A = Ap * ad.expand(ls, -2) + An * ad.expand(us, -2)
        W, b = tn.linears[p - 1]
        c = c + _mv(A, b) if b.ndim == 2 else c + ad.matmul(A, b)
        A = ad.matmul(A, W)
        p -= 1
    Ap, An = _split(A)
    if upper:
        return c + _mv(Ap, hi0) + _mv(An, lo0)
    return c + _mv(Ap, lo0) + _mv(An, hi0)


def _linear_layer_bounds(tn, relax, p, lo0, hi0):
    """Bounds of the output of linear layer ``p`` (0-based) by full backsubstitution."""
    if p == 0:  # nothing to substitute: plain interval arithmetic, no batch copy of W
        return _interval_affine(*tn.linears[0], lo0, hi0)
    W, b = _broadcast_batch(*tn.linears[p], lo0.shape[0])
    lower = backsubstitute(tn, relax, p, W, b, lo0, hi0, upper=False)
    upper = backsubstitute(tn, relax, p, W, b, lo0, hi0, upper=True)
    return lower, upper


def _relu_layer_bounds(tn, relax, p, lo0, hi0):
    """Bounds of ReLU layer x_{2p}, backsubstituting its own relaxation."""
    ls, ld, us, ud = relax[p - 1]
    eye = np.eye(ls.shape[-1])
    A_lo = ad.expand(ls, -1) * eye
    A_hi = ad.expand(us, -1) * eye
    lower = _from_preactivation(tn, relax, p, A_lo, ld, lo0, hi0, upper=False)
    upper = _from_preactivation(tn, relax, p, A_hi, ud, lo0, hi0, upper=True)
    return lower, upper


def _from_preactivation(tn, relax, p, A, c, lo0, hi0, upper):
    """Concretize ``A x_{2p-1} + c`` where x_{2p-1} is the output of linear layer p-1."""
    W, b = tn.linears[p - 1]
    c = c + _mv(A, b) if b.ndim == 2 else c + ad.matmul(A, b)
    A = ad.matmul(A, W)
    return backsubstitute(tn, relax, p - 1, A, c, lo0, hi0, upper)


def backsub_bounds(net, kind, lo, hi, relu_layers: bool = True) -> LayerBounds:
    """hBox / DeepZ / CROWN / CROWN-0 bounds, each layer backsubstituted to the input."""
    kind = parse_kind(kind)
    if kind not in BACKSUB_KINDS:
        raise BoundsError(f"{kind} is not a backsubstitution relaxation")
    tn = as_tensor_net(net)
    lo0, hi0 = ad.as_tensor(lo), ad.as_tensor(hi)
    lower, upper = [lo0], [hi0]
    relax = []
    for p in range(len(tn.linears)):
        if p:
            relax.append(relax_coeffs(kind, lower[-1], upper[-1]))
            if relu_layers:
                l, u = _relu_layer_bounds(tn, relax, p, lo0, hi0)
            else:
                l = u = None
            lower.append(l)
            upper.append(u)
        l, u = _linear_layer_bounds(tn, relax, p, lo0, hi0)
        lower.append(l)
        upper.append(u)
    return LayerBounds(lower, upper)


def crown_ibp_r_bounds(net, lo, hi) -> LayerBounds:
    """Box bounds everywhere except the output, which gets one CROWN backsubstitution."""
    tn = as_tensor_net(net)
    box = box_propagate(tn, lo, hi)
    relax = [relax_coeffs(RelaxationKind.CROWN, box.lower[2 * q + 1], box.upper[2 * q + 1])
             for q in range(len(tn.linears) - 1)]
    l, u = _linear_layer_bounds(tn, relax, len(tn.linears) - 1,
                                ad.as_tensor(lo), ad.as_tensor(hi))
    return LayerBounds(box.lower[:-1] + [l], box.upper[:-1] + [u])


def bounds(net, kind, x, eps: float, input_domain_clip=None, spec_y=None,
           relu_layers: bool = True) -> LayerBounds:
    """Bounds of every layer over the L-infinity ball of radius ``eps`` around ``x``.

    ``x`` may be a single input (n0,) or a batch (B, n0).  With ``spec_y`` the last
    layer is elided with the specification rows of those labels, so the output
    bounds are bounds on ``c_{y'}^T z``.
    """
    kind = parse_kind(kind)
    xt = ad.as_tensor(x)
    single = xt.ndim == 1
    if single:
        xt = ad.expand(xt, 0)
    tn = as_tensor_net(net)
    if spec_y is not None:
        tn = elide_tensors(tn, np.atleast_1d(spec_y))
    lo, hi = input_box(xt, eps, input_domain_clip)
    if kind is RelaxationKind.BOX:
        lb = box_propagate(tn, lo, hi)
    elif kind in BACKSUB_KINDS:
        lb = backsub_bounds(tn, kind, lo, hi, relu_layers=relu_layers)
    elif kind is RelaxationKind.CROWN_IBP_R:
        lb = crown_ibp_r_bounds(tn, lo, hi)
    elif kind in LP_KINDS:
        from .lp import lp_bounds
        lb = lp_bounds(tn, kind, lo, hi)
    else:
        raise BoundsError(f"unknown relaxation kind {kind!r}")
    return lb.squeeze() if single else lb
