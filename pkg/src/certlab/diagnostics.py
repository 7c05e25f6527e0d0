"""Bound landscapes: parameter sweeps, jump detection, sensitivity formulas, toy examples."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .bounds import (BACKSUB_KINDS, LP_KINDS, RelaxationKind, backsub_bounds, box_propagate,
                     crown_ibp_r_bounds, input_box, parse_kind)
from .network import Network, from_linears

DEFAULT_TAU = 0.1


class DiagnosticsError(RuntimeError):
    pass


class MinimalExampleError(DiagnosticsError):
    def __init__(self, msg: str, dump: dict):
        super().__init__(msg)
        self.dump = dump


def output_bounds(tn, kind, lo, hi):
    """(lower, upper) output tensors, shape (B, n_L)."""
    kind = parse_kind(kind)
    if kind is RelaxationKind.BOX:
        lb = box_propagate(tn, lo, hi)
    elif kind in BACKSUB_KINDS:
        lb = backsub_bounds(tn, kind, lo, hi, relu_layers=False)
    elif kind is RelaxationKind.CROWN_IBP_R:
        lb = crown_ibp_r_bounds(tn, lo, hi)
    else:
        from .lp import lp_bounds
        lb = lp_bounds(tn, kind, lo, hi, solve_all=False)
    return lb.lower[-1], lb.upper[-1]


def bound_value(net: Network, kind, x, eps: float, target: int, side: str = "lower",
                clip=None) -> float:
    lo, hi = input_box(np.atleast_2d(np.asarray(x, float)), eps, clip)
    l, u = output_bounds(net.tensors(), kind, lo, hi)
    return float(ad.value(l if side == "lower" else u)[0, target])


# -- sweeps ------------------------------------------------------------------------------

@dataclass
class SweepResult:
    deltas: np.ndarray
    values: dict                       # kind -> array over deltas
    direction: np.ndarray | None
    target: int
    evaluator: Callable | None = field(default=None, repr=False, compare=False)

    def write_csv(self, path) -> None:
        kinds = list(self.values)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["delta"] + kinds)
            for k, d in enumerate(self.deltas):
                w.writerow([repr(float(d))] + [repr(float(self.values[c][k])) for c in kinds])


def _grid(lo: float, hi: float, points: int) -> np.ndarray:
    if points < 3:
        raise DiagnosticsError("a sweep needs at least 3 grid points")
    # rounding keeps grid points such as 0 exact
    return np.round(np.linspace(lo, hi, points), 12)


def param_sweep(make_net: Callable[[float], Network], kinds, x, eps: float, grid,
                target: int, side: str = "lower", clip=None) -> SweepResult:
    """Bound of output ``target`` for every parameter value t in ``grid``, net = make_net(t)."""
    kinds = [str(parse_kind(k)) for k in kinds]

    def evaluate(t, kind):
        return bound_value(make_net(float(t)), kind, x, eps, target, side, clip)

    grid = np.asarray(grid, float)
    values = {k: np.array([evaluate(t, k) for t in grid]) for k in kinds}
    return SweepResult(grid, values, None, target, evaluate)


def first_layer_direction(net: Network, kind, x, eps: float, target: int, clip=None) -> np.ndarray:
    """Unit-norm gradient of l_{L,target} w.r.t. the first-layer weight matrix."""
    tape = ad.Tape()
    tn = net.tensors(tape)
    lo, hi = input_box(np.atleast_2d(np.asarray(x, float)), eps, clip)
    l, _ = output_bounds(tn, kind, lo, hi)
    g = ad.grad(l[0, target], [tn.linears[0][0]])[0]
    n = np.linalg.norm(g)
    if n == 0:
        raise DiagnosticsError("bound gradient w.r.t. first-layer weights vanishes at delta=0")
    return g / n


def shift_first_layer(net: Network, direction: np.ndarray, delta: float) -> Network:
    params = net.params()
    params[0] = params[0] + delta * direction
    return net.with_params(params)


def delta_sweep(net: Network, kinds, x, eps: float, target: int, delta_max: float,
                points: int = 101, direction=None, clip=None,
                fallback_seed: int | None = 0) -> SweepResult:
    """Shift all first-layer weights by delta along the (unit) gradient direction of the
    first kind's target lower bound.  An even ``points`` is bumped by one so 0 is on the grid.
    If that gradient vanishes a seeded random unit direction is used (``fallback_seed=None``
    raises instead)."""
    if points % 2 == 0:
        points += 1
    if direction is None:
        try:
            direction = first_layer_direction(net, kinds[0], x, eps, target, clip)
        except DiagnosticsError:
            if fallback_seed is None:
                raise
            # flat bound (e.g. every neuron dead): any unit direction is as good
            direction = np.random.default_rng(fallback_seed).standard_normal(net.params()[0].shape)
            direction /= np.linalg.norm(direction)
    direction = np.asarray(direction, float)
    res = param_sweep(lambda d: shift_first_layer(net, direction, d), kinds, x, eps,
                      _grid(-delta_max, delta_max, points), target, "lower", clip)
    res.direction = direction
    return res


# -- discontinuities ---------------------------------------------------------------------------

@dataclass
class Jump:
    kind: str
    lo: float
    hi: float
    magnitude: float     # f(hi) - f(lo) after localization

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "magnitude": self.magnitude}


def _localize(f, a: float, b: float, fa: float, fb: float, tol: float):
    while b - a > tol:
        m = 0.5 * (a + b)
        fm = f(m)
        if abs(fm - fa) >= abs(fb - fm):
            b, fb = m, fm
        else:
            a, fa = m, fm
    return a, b, fa, fb


def detect_jumps(sweep: SweepResult, tau: float = DEFAULT_TAU, refine: int = 4,
                 persist: float = 0.5, tol: float = 1e-9) -> list[Jump]:
    """Adjacent-grid differences above tau that survive a local ``refine``-fold grid
    refinement (shrinking by no more than ``persist``), localized by bisection to ``tol``."""
    if tau <= 0:
        raise DiagnosticsError("tau must be > 0")
    if sweep.evaluator is None:
        raise DiagnosticsError("sweep has no evaluator; cannot refine")
    out = []
    d = sweep.deltas
    for kind, vals in sweep.values.items():
        f = lambda t, k=kind: sweep.evaluator(t, k)
        for i in np.flatnonzero(np.abs(np.diff(vals)) > tau):
            a, b = float(d[i]), float(d[i + 1])
            sub = np.linspace(a, b, refine + 1)
            fv = np.array([vals[i]] + [f(t) for t in sub[1:-1]] + [vals[i + 1]])
            diffs = np.abs(np.diff(fv))
            j = int(np.argmax(diffs))
            if diffs[j] < (1.0 - persist) * abs(vals[i + 1] - vals[i]):
                continue
            lo, hi, flo, fhi = _localize(f, sub[j], sub[j + 1], fv[j], fv[j + 1], tol)
            if abs(fhi - flo) > tau:
                out.append(Jump(kind, float(lo), float(hi), float(fhi - flo)))
    return out


def write_jumps(jumps, path) -> None:
    with open(path, "w") as f:
        for j in jumps:
            f.write(json.dumps(j.to_dict(), sort_keys=True) + "\n")


def refinement_continuity(values_fine: np.ndarray, refinements: int = 3, lo: float = 0.3,
                          hi: float = 0.7, floor: float = 1e-9):
    """Continuity test on nested grids taken from one fine grid of 2^r * k + 1 points.

    Each halving of the step must roughly halve the maximal adjacent jump (ratio
    in [lo, hi]) unless that jump is already below ``floor``.  Returns (passed, ratios).
    """
    v = np.asarray(values_fine, float)
    step = 2 ** refinements
    if (len(v) - 1) % step:
        raise DiagnosticsError("fine grid size must be 2^refinements * k + 1")
    jumps = [np.max(np.abs(np.diff(v[::step >> r]))) for r in range(refinements + 1)]
    ratios, ok = [], True
    for r in range(refinements):
        if jumps[r + 1] < floor:
            ratios.append(0.0)
            continue
        q = jumps[r + 1] / jumps[r]
        ratios.append(q)
        ok &= lo <= q <= hi
    return bool(ok), ratios


# -- empirical sensitivity proxies -----------------------------------------------------------------

def kink_cells(values: np.ndarray, tol: float = 1e-9) -> int:
    """Grid cells with a nonvanishing second difference (breakpoints of a piecewise-linear sweep)."""
    d2 = np.abs(np.diff(np.asarray(values, float), 2))
    scale = max(1.0, float(np.max(np.abs(values))))
    return int(np.sum(d2 > tol * scale))


def linear_pieces(values: np.ndarray, tol: float = 1e-9) -> int:
    """Number of maximal linear runs, counting a breakpoint once even if it smears over two cells."""
    d2 = np.abs(np.diff(np.asarray(values, float), 2))
    scale = max(1.0, float(np.max(np.abs(values))))
    bad = d2 > tol * scale
    starts = np.sum(bad[1:] & ~bad[:-1]) + int(bad[0]) if len(bad) else 0
    return int(starts) + 1


def poly_fit_residuals(deltas, values, max_degree: int = 4) -> list[float]:
    """RMS residual of least-squares polynomial fits of degree 1..max_degree."""
    x = np.asarray(deltas, float)
    y = np.asarray(values, float)
    out = []
    for deg in range(1, max_degree + 1):
        c = np.polynomial.polynomial.polyfit(x, y, deg)
        out.append(float(np.sqrt(np.mean((np.polynomial.polynomial.polyval(x, c) - y) ** 2))))
    return out


# -- theoretical sensitivity --------------------------------------------------------------------------

@dataclass
class SensitivityFormula:
    kind: str
    L: int
    M: int
    B: int
    value: int


def theoretical_sensitivity(kind, L: int, M: int) -> int:
    """Closed-form sensitivity degree with B = ceil(L/2) - 1 blocks."""
    kind = parse_kind(kind)
    if L < 2 or M < 2:
        raise DiagnosticsError("need L >= 2 and M >= 2")
    B = math.ceil(L / 2) - 1
    if kind in (RelaxationKind.BOX, RelaxationKind.HBOX):
        return 1
    if kind in (RelaxationKind.DEEPZ, RelaxationKind.CROWN):
        return 2 * 3 ** B * M ** (B + 1)
    if kind is RelaxationKind.CROWN_IBP_R:
        num = 2 * M ** (B + 2) - M ** (B + 1) - M
        q, r = divmod(num, M - 1)
        assert r == 0
        return q
    raise DiagnosticsError(f"sensitivity of {kind} is not derived in closed form")


def sensitivity_formula(kind, L: int, M: int) -> SensitivityFormula:
    return SensitivityFormula(str(parse_kind(kind)), L, M, math.ceil(L / 2) - 1,
                              theoretical_sensitivity(kind, L, M))


# -- the minimal discontinuity network -----------------------------------------------------------------

def minimal_network(w: float) -> Network:
    """x1 = (x0 + w, x0 + w); x3 = (x2_2 + 1, x2_2 - x2_1)."""
    return from_linears([(np.array([[1.0], [1.0]]), np.array([w, w])),
                         (np.array([[0.0, 1.0], [-1.0, 1.0]]), np.array([1.0, 0.0]))])


def crown_l31(w: float) -> float:
    return 1.0 if w <= 0 else w


def hbox_l32(w: float) -> float:
    return -1.0 - w if -1.0 < w < 1.0 else 0.0


def minimal_sweeps(grid=None):
    if grid is None:
        grid = _grid(-1.0, 1.5, 251)
    x, eps = np.zeros(1), 1.0
    crown = param_sweep(minimal_network, ["CROWN"], x, eps, grid, target=0)
    hbox = param_sweep(minimal_network, ["hBox"], x, eps, grid, target=1)
    return crown, hbox


def minimal_examples(grid=None, tol: float = 1e-9, jump_tol: float = 1e-6) -> dict:
    """Closed-form check of CROWN l_{3,1} and hBox l_{3,2} plus their jumps.

    Raises MinimalExampleError with per-layer bounds at the worst point on failure.
    """
    crown, hbox = minimal_sweeps(grid)
    w = crown.deltas
    err_c = np.abs(crown.values["CROWN"] - np.array([crown_l31(t) for t in w]))
    err_h = np.abs(hbox.values["hBox"] - np.array([hbox_l32(t) for t in w]))
    jc = detect_jumps(crown)
    jh = detect_jumps(hbox)
    checks = {
        "crown_values": bool(err_c.max() <= tol),
        "hbox_values": bool(err_h.max() <= tol),
        "crown_jump": bool(len(jc) == 1 and abs(jc[0].lo) < 1e-6 and abs(abs(jc[0].magnitude) - 1.0) <= jump_tol),
        "hbox_jump": bool(len(jh) == 1 and abs(jh[0].hi - 1.0) < 1e-6 and abs(abs(jh[0].magnitude) - 2.0) <= jump_tol),
    }
    report = {
        "grid": {"lo": float(w[0]), "hi": float(w[-1]), "points": int(len(w))},
        "crown_l31": {"max_err": float(err_c.max()), "jumps": [j.to_dict() for j in jc]},
        "hbox_l32": {"max_err": float(err_h.max()), "jumps": [j.to_dict() for j in jh]},
        "checks": checks,
        "passed": all(checks.values()),
    }
    if not report["passed"]:
        from .bounds import bounds
        worst = float(w[np.argmax(np.maximum(err_c, err_h))])
        dump = {}
        for k in ("CROWN", "hBox"):
            lb = bounds(minimal_network(worst), k, np.zeros(1), 1.0)
            dump[k] = {"w": worst, "lower": [lb.l(i).tolist() for i in range(lb.n_layers + 1)],
                       "upper": [lb.u(i).tolist() for i in range(lb.n_layers + 1)]}
        report["dump"] = dump
        raise MinimalExampleError("minimal example values do not match closed forms", report)
    return report


# -- gradient ascent along a fixed direction ---------------------------------------------------------------

@dataclass
class LandscapeRecipe:
    net: Network
    x: np.ndarray
    eps: float


def landscape_recipe(seed: int, hidden: int = 10, depth: int = 2) -> LandscapeRecipe:
    """Random 1-input net with integer weights/biases in [-4, 4] and eps in [0.1, 4.1]."""
    rng = np.random.default_rng(seed)
    dims = [1] + [hidden] * depth + [2]
    pairs = [(rng.integers(-4, 5, size=(dims[k + 1], dims[k])).astype(float),
              rng.integers(-4, 5, size=dims[k + 1]).astype(float)) for k in range(len(dims) - 1)]
    x = rng.integers(-4, 5, size=1).astype(float)
    eps = float(rng.uniform(0.1, 4.1))
    return LandscapeRecipe(from_linears(pairs), x, eps)


@dataclass
class Trajectory:
    kind: str
    deltas: np.ndarray
    objective: np.ndarray
    direction: np.ndarray

    def max_drop(self) -> float:
        """Largest single-step decrease of the objective (positive number), 0 if none."""
        d = np.diff(self.objective)
        return float(max(0.0, -d.min())) if len(d) else 0.0


def landscape_gd(recipe: LandscapeRecipe, kind, lr: float = 0.02, lr_decay: float = 0.99,
                 epochs: int = 20, target: int = 0, direction=None) -> Trajectory:
    """1-D gradient ascent on l_{L,target}(delta) along the initial first-layer gradient."""
    net, x, eps = recipe.net, recipe.x, recipe.eps
    if direction is None:
        direction = first_layer_direction(net, kind, x, eps, target)
    lo, hi = input_box(np.atleast_2d(x), eps)
    delta = 0.0
    ds, objs = [], []
    for t in range(epochs + 1):
        tape = ad.Tape()
        tn = shift_first_layer(net, direction, delta).tensors(tape)
        l, _ = output_bounds(tn, kind, lo, hi)
        obj = l[0, target]
        ds.append(delta)
        objs.append(float(obj.value))
        if t == epochs:
            break
        g = ad.grad(obj, [tn.linears[0][0]])[0]
        delta = delta + lr * lr_decay ** t * float(np.sum(g * direction))
    return Trajectory(str(parse_kind(kind)), np.array(ds), np.array(objs), direction)
