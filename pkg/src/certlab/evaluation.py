"""Certification verdicts, CR curves and their AUC, cross matrices, accuracy/PGD reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bounds import LP_KINDS, RelaxationKind, parse_kind
from .network import Network, as_tensor_net, net_forward
from .training import margin_upper_bounds, pgd_attack

CHUNK = 256


def _const_net(net):
    tn = as_tensor_net(net)
    if isinstance(net, Network):
        return tn
    from .network import TensorNet
    return TensorNet([(ad.const(ad.value(W)), ad.const(ad.value(b))) for W, b in tn.linears])


def margin_bounds(net, kind, X, y, eps: float, clip=None, elision: bool = True) -> np.ndarray:
    """Upper bounds on c_{y'}^T z, shape (B, n-1), computed in chunks."""
    tn = _const_net(net)
    X = np.atleast_2d(np.asarray(X, float))
    y = np.atleast_1d(np.asarray(y, np.int64))
    out = []
    for s in range(0, len(X), CHUNK):
        m = margin_upper_bounds(tn, kind, X[s:s + CHUNK], eps, y[s:s + CHUNK], elision, clip)
        out.append(ad.value(m))
    return np.concatenate(out) if out else np.zeros((0, tn.dims[-1] - 1))


def certify(net, kind, x, y, eps: float, clip=None, elision: bool = True):
    """True iff every c_{y'}^T z is provably < 0.  Single input -> bool, batch -> bool array."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    single = np.asarray(x).ndim == 1
    ok = np.all(margin_bounds(net, kind, x, y, eps, clip, elision) < 0, axis=-1)
    return bool(ok[0]) if single else ok


# -- CR curves -------------------------------------------------------------------------

@dataclass
class CrCurve:
    eps: np.ndarray
    frac: np.ndarray
    kind: str
    slice_id: str = ""

    def __post_init__(self):
        self.eps = np.asarray(self.eps, float)
        self.frac = np.asarray(self.frac, float)
        if len(self.eps) != len(self.frac) or np.any(np.diff(self.eps) <= 0):
            raise ValueError("CR curve needs strictly increasing eps and one fraction per eps")

    def rows(self):
        return list(zip(self.eps.tolist(), self.frac.tolist()))


def _bisect_last(ok_at, n: int) -> int:
    """Largest index i with ok_at(i), assuming monotone verdicts; -1 if none."""
    if not ok_at(0):
        return -1
    lo, hi = 0, n  # ok_at(lo) holds; indices >= hi are unknown-or-false
    if ok_at(n - 1):
        return n - 1
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok_at(mid):
            lo = mid
        else:
            hi = mid
    return lo


def cr_curve(net, kind, X, y, eps_max: float, samples: int = 100, clip=None,
             elision: bool = True, bisect=None, slice_id: str = "") -> CrCurve:
    """Certified fraction on a uniform grid [0, eps_max].

    Misclassified examples count as not certified.  For LP kinds the per-example
    certified radius is located by bisection over the grid (their bounds are
    monotone in eps); other kinds are evaluated at every grid point.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    kind = parse_kind(kind)
    grid = np.linspace(0.0, eps_max, samples)
    X = np.atleast_2d(np.asarray(X, float))
    y = np.atleast_1d(np.asarray(y, np.int64))
    if bisect is None:
        bisect = kind in LP_KINDS
    if bisect:
        counts = np.zeros(samples)
        for i in range(len(X)):
            last = _bisect_last(lambda k: bool(certify(net, kind, X[i:i + 1], y[i:i + 1],
                                                       grid[k], clip, elision)[0]), samples)
            counts[:last + 1] += 1
        frac = counts / max(len(X), 1)
    else:
        frac = np.array([np.mean(certify(net, kind, X, y, e, clip, elision)) if len(X) else 0.0
                         for e in grid])
    return CrCurve(grid, frac, str(kind), slice_id)


def cr_auc(curve: CrCurve, percent: bool = False) -> float:
    """Trapezoidal area under the curve, in eps * fraction units (x100 with ``percent``)."""
    e, f = curve.eps, curve.frac
    area = float(np.sum(np.diff(e) * (f[1:] + f[:-1]) / 2.0))
    return 100.0 * area if percent else area


def write_curves(curves, path) -> None:
    """CSV ``eps,<kind1>,<kind2>,...``; all curves must share a grid."""
    grid = curves[0].eps
    if any(len(c.eps) != len(grid) or np.any(c.eps != grid) for c in curves):
        raise ValueError("curves do not share an eps grid")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["eps"] + [c.kind for c in curves])
        for k, e in enumerate(grid):
            w.writerow([repr(float(e))] + [repr(float(c.frac[k])) for c in curves])


# -- cross matrix and reports ----------------------------------------------------------------

@dataclass
class CrossRow:
    train_kind: str
    cr: dict


def cross_matrix(net, train_kind: str, kinds, X, y, eps: float, clip=None,
                 elision: bool = True) -> CrossRow:
    return CrossRow(str(train_kind), {str(parse_kind(k)): float(np.mean(
        certify(net, k, X, y, eps, clip, elision))) for k in kinds})


def write_cross(rows, path) -> None:
    kinds = list(rows[0].cr)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["train_kind"] + kinds)
        for r in rows:
            w.writerow([r.train_kind] + [repr(r.cr[k]) for k in kinds])


@dataclass
class EvalReport:
    acc: float
    pgd: float
    cr: dict = field(default_factory=dict)
    n: int = 0
    eps: float = 0.0

    def to_json(self) -> str:
        return json.dumps({"acc": self.acc, "pgd": self.pgd, "cr": self.cr, "n": self.n,
                           "eps": self.eps}, indent=2, sort_keys=True)


def accuracy(net, X, y) -> float:
    if len(X) == 0:
        return 0.0
    z = ad.value(net_forward(_const_net(net), np.atleast_2d(X)))
    return float(np.mean(np.argmax(z, axis=-1) == y))


def evaluate(net, X, y, eps: float, kinds, clip=None, elision: bool = True,
             pgd_steps: int = 100, pgd_step_size: float = 0.01) -> EvalReport:
    X = np.atleast_2d(np.asarray(X, float))
    y = np.atleast_1d(np.asarray(y, np.int64))
    z = ad.value(net_forward(_const_net(net), X))
    correct = np.argmax(z, axis=-1) == y
    attacked, _ = pgd_attack(net, X, y, eps, steps=pgd_steps, step_size=pgd_step_size, clip=clip)
    robust = correct & ~attacked
    cr = {str(parse_kind(k)): float(np.mean(certify(net, k, X, y, eps, clip, elision)))
          for k in kinds}
    return EvalReport(float(np.mean(correct)), float(np.mean(robust)), cr, len(y), float(eps))
