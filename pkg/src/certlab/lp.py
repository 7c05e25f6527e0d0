"""LP-encoded ReLU relaxations, a general LP front end, and envelope-theorem gradients.

Two encodings live here.

*Full encoding* (``lp_bounds(..., path="full")``): one variable per neuron of every
layer, equality rows for linear layers (sign-split inequality rows for BoxLP),
kind-specific ReLU rows, and the already computed bounds of every earlier neuron
as variable bounds.  Each neuron is minimized and maximized separately.  This is
the reference implementation; it returns plain arrays.

*Fast encoding* (default for Triangle, Parallelogram, DeepZLP, CrownLP): linear
layers are substituted away, leaving the input and every post-ReLU neuron as
variables.  Each ReLU neuron contributes one lower row ``y >= ls*z + ld``, one upper
row ``y <= us*z + ud`` and a box ``[vlo, vhi]``; stable neurons turn into an
equality or a fixed variable.  The feasible set projected onto the neurons is the
same as for the full encoding.  Values enter the tape through one custom op per
layer whose VJP is built from the primal point and the duals.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import simplex
from .bounds import (LayerBounds, RelaxationKind, _interval_affine, backsub_bounds,
                     parse_kind, relax_coeffs, stability)
from .network import TensorNet, as_tensor_net


class LpError(RuntimeError):
    def __init__(self, msg: str, basis=None):
        super().__init__(msg)
        self.basis = basis


class LpKind(str, enum.Enum):
    TRIANGLE = "Triangle"
    PARALLELOGRAM = "Parallelogram"
    BOX_LP = "BoxLP"
    DEEPZ_LP = "DeepZLP"
    CROWN_LP = "CrownLP"

    def __str__(self):
        return self.value


def parse_lp_kind(kind) -> LpKind:
    if isinstance(kind, LpKind):
        return kind
    if isinstance(kind, RelaxationKind):
        kind = kind.value
    key = str(kind).strip().lower()
    for k in LpKind:
        if k.value.lower() == key:
            return k
    raise LpError(f"unknown LP encoding {kind!r}")


# -- general problems ------------------------------------------------------------

@dataclass
class LpProblem:
    """``min|max c.x + c0`` s.t. ``A x = b``, ``G x <= h``, ``lo <= x <= hi``."""

    n_vars: int
    A: np.ndarray = None
    b: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None
    c: np.ndarray = None
    c0: float = 0.0
    sense: str = "max"
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        n = self.n_vars
        self.A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, float))
        self.G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, float))
        self.b = np.zeros(len(self.A)) if self.b is None else np.asarray(self.b, float).ravel()
        self.h = np.zeros(len(self.G)) if self.h is None else np.asarray(self.h, float).ravel()
        self.c = np.zeros(n) if self.c is None else np.asarray(self.c, float).ravel()
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, float).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, float).copy()
        if self.sense not in ("min", "max"):
            raise LpError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if self.A.shape[1] != n or self.G.shape[1] != n or self.c.shape != (n,):
            raise LpError("constraint rows must reference exactly n_vars variables")
        if len(self.b) != len(self.A) or len(self.h) != len(self.G):
            raise LpError("right-hand side length does not match the row count")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.G))):
            raise LpError("constraint matrices must be finite")
        if np.any(self.lo > self.hi):
            raise LpError("variable bound lo > hi")

    def with_objective(self, c, sense: str, c0: float = 0.0) -> "LpProblem":
        return LpProblem(self.n_vars, self.A, self.b, self.G, self.h, c, c0, sense, self.lo, self.hi)

    def unit_objective(self, index: int, sense: str) -> "LpProblem":
        c = np.zeros(self.n_vars)
        c[index] = 1.0
        return self.with_objective(c, sense)


@dataclass
class LpSolution:
    value: float
    x: np.ndarray
    eq_duals: np.ndarray      # mu
    ineq_duals: np.ndarray    # lambda >= 0
    lo_duals: np.ndarray      # d value / d lo
    hi_duals: np.ndarray      # d value / d hi
    active: np.ndarray        # indices of inequality rows with zero slack
    degenerate: bool = False
    pivots: int = 0
    basis: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def _standardize(p: LpProblem):
    """Map x = M x' + 0 with every x' having a finite lower bound."""
    cols, lo2, hi2 = [], [], []
    for k in range(p.n_vars):
        lo, hi = p.lo[k], p.hi[k]
        if np.isfinite(lo):
            cols.append((k, 1.0)); lo2.append(lo); hi2.append(hi)
        elif np.isfinite(hi):
            cols.append((k, -1.0)); lo2.append(-hi); hi2.append(np.inf)
        else:
            cols.append((k, 1.0)); lo2.append(0.0); hi2.append(np.inf)
            cols.append((k, -1.0)); lo2.append(0.0); hi2.append(np.inf)
    M = np.zeros((p.n_vars, len(cols)))
    for j, (k, s) in enumerate(cols):
        M[k, j] = s
    return M, np.array(lo2), np.array(hi2), cols


def simplex_solve(p: LpProblem) -> LpSolution:
    M, lo2, hi2, cols = _standardize(p)
    G2 = np.vstack([p.G, p.A]) @ M
    h2 = np.concatenate([p.h, p.b])
    eq = np.concatenate([np.zeros(len(p.G), bool), np.ones(len(p.A), bool)])
    s = 1.0 if p.sense == "min" else -1.0
    c2 = s * (M.T @ p.c)
    st, val, x2, pi, d2, at_hi, basis, piv, deg = simplex.solve_min(
        np.ascontiguousarray(G2), h2, eq, lo2, hi2, c2)
    if st == simplex.INFEASIBLE:
        raise LpError("LP infeasible")
    if st == simplex.UNBOUNDED:
        raise LpError("LP unbounded")
    if st == simplex.ITERATION_LIMIT:
        raise LpError("simplex iteration cap exceeded after anti-cycling engaged", basis=basis)
    if st != simplex.OPTIMAL:
        raise LpError(f"simplex failed with status {st}", basis=basis)
    x = M @ x2
    lam = -pi[:len(p.G)]
    mu = -pi[len(p.G):]
    lo_d = np.zeros(p.n_vars)
    hi_d = np.zeros(p.n_vars)
    basic = set(int(j) for j in basis)
    for j, (k, sg) in enumerate(cols):
        if j in basic or not np.isfinite(lo2[j]) or d2[j] == 0.0:
            continue
        if at_hi[j]:
            hi_d[k] += s * d2[j]          # only reachable for sg == +1
        elif sg > 0 and np.isfinite(p.lo[k]):
            lo_d[k] += s * d2[j]
        elif sg < 0 and np.isfinite(p.hi[k]) and not np.isfinite(p.lo[k]):
            hi_d[k] -= s * d2[j]
    slack = p.h - p.G @ x
    active = np.flatnonzero(np.abs(slack) <= 1e-9 * (1.0 + np.abs(p.h)))
    return LpSolution(s * val + p.c0, x, mu, lam, lo_d, hi_d, active, bool(deg), int(piv), basis)


def check_solution(p: LpProblem, sol: LpSolution) -> dict:
    """Residuals of the optimality conditions (all should be ~0)."""
    s = 1.0 if p.sense == "min" else -1.0
    x = sol.x
    primal = 0.0
    if len(p.A):
        primal = max(primal, float(np.abs(p.A @ x - p.b).max()))
    if len(p.G):
        primal = max(primal, float(np.max(p.G @ x - p.h, initial=0.0)))
    primal = max(primal, float(np.max(p.lo - x, initial=0.0)), float(np.max(x - p.hi, initial=0.0)))
    compl = float(np.abs(sol.ineq_duals * (p.h - p.G @ x)).max(initial=0.0))
    # dual objective of the min-form problem, rescaled to the user's sense
    lo_f = np.where(np.isfinite(p.lo), p.lo, 0.0)
    hi_f = np.where(np.isfinite(p.hi), p.hi, 0.0)
    dual = -(sol.ineq_duals @ p.h) - (sol.eq_duals @ p.b) if s > 0 else \
        (sol.ineq_duals @ p.h) + (sol.eq_duals @ p.b)
    dual += sol.lo_duals @ lo_f + sol.hi_duals @ hi_f + p.c0
    return {
        "primal": primal,
        "dual": float(-min(sol.ineq_duals.min(initial=0.0), 0.0)),
        "complementarity": compl,
        "gap": abs(float(sol.value - dual)),
    }


def lp_value_gradient(solution: LpSolution, p: LpProblem, sensitivities: dict) -> np.ndarray:
    """d value / d theta from d(A, b, G, h, c, c0, lo, hi)/d theta (leading axis = theta).

    dv = dc.x + dc0 + s [mu.(dA x - db) + lam.(dG x - dh)] + dlo.lo_duals + dhi.hi_duals,
    with s = +1 for minimization and -1 for maximization.
    """
    s = 1.0 if p.sense == "min" else -1.0
    x = solution.x
    P = None
    for v in sensitivities.values():
        P = np.asarray(v).shape[0]
        break
    if P is None:
        return np.zeros(0)
    g = np.zeros(P)
    sens = {k: np.asarray(v, float) for k, v in sensitivities.items()}
    if "c" in sens:
        g += sens["c"] @ x
    if "c0" in sens:
        g += sens["c0"].reshape(P)
    if "A" in sens:
        g += s * np.einsum("r,prk,k->p", solution.eq_duals, sens["A"], x)
    if "b" in sens:
        g -= s * sens["b"] @ solution.eq_duals
    if "G" in sens:
        g += s * np.einsum("r,prk,k->p", solution.ineq_duals, sens["G"], x)
    if "h" in sens:
        g -= s * sens["h"] @ solution.ineq_duals
    if "lo" in sens:
        g += sens["lo"] @ solution.lo_duals
    if "hi" in sens:
        g += sens["hi"] @ solution.hi_duals
    return g


def dumps_lp(p: LpProblem) -> str:
    """Debug dump: ``lp n``, ``eq|le coeffs... rhs`` rows, ``bound j lo hi``, objective line."""
    f = repr
    lines = [f"lp {p.n_vars}"]
    for a, r in zip(p.A, p.b):
        lines.append("eq " + " ".join(f(float(v)) for v in a) + " " + f(float(r)))
    for g, r in zip(p.G, p.h):
        lines.append("le " + " ".join(f(float(v)) for v in g) + " " + f(float(r)))
    for j in range(p.n_vars):
        if np.isfinite(p.lo[j]) or np.isfinite(p.hi[j]):
            lines.append(f"bound {j} {f(float(p.lo[j]))} {f(float(p.hi[j]))}")
    nz = np.flatnonzero(p.c)
    if p.c0 == 0.0 and len(nz) == 1 and p.c[nz[0]] == 1.0:
        lines.append(f"{p.sense} {nz[0]}")
    else:
        lines.append(f"{p.sense} * {f(float(p.c0))} " + " ".join(f(float(v)) for v in p.c))
    return "\n".join(lines) + "\n"


def loads_lp(text: str) -> LpProblem:
    A, b, G, h, bnd = [], [], [], [], {}
    n = None
    c, c0, sense = None, 0.0, "max"
    for ln, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "lp":
                n = int(tok[1])
            elif tok[0] in ("eq", "le"):
                vals = [float(t) for t in tok[1:]]
                if len(vals) != n + 1:
                    raise LpError(f"line {ln}: expected {n} coefficients and a rhs")
                (A if tok[0] == "eq" else G).append(vals[:-1])
                (b if tok[0] == "eq" else h).append(vals[-1])
            elif tok[0] == "bound":
                bnd[int(tok[1])] = (float(tok[2]), float(tok[3]))
            elif tok[0] in ("min", "max"):
                sense = tok[0]
                c = np.zeros(n)
                if tok[1] == "*":
                    c0 = float(tok[2])
                    c[:] = [float(t) for t in tok[3:]]
                else:
                    c[int(tok[1])] = 1.0
            else:
                raise LpError(f"line {ln}: unknown record {tok[0]!r}")
        except (ValueError, IndexError, TypeError) as e:
            raise LpError(f"line {ln}: {e}") from None
    if n is None or c is None:
        raise LpError("missing 'lp' header or objective line")
    lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
    for j, (a, z) in bnd.items():
        lo[j], hi[j] = a, z
    return LpProblem(n, np.array(A).reshape(-1, n), b, np.array(G).reshape(-1, n), h, c, c0, sense, lo, hi)


# -- full (reference) encoding ------------------------------------------------------

class _Builder:
    def __init__(self):
        self.n = 0
        self.lo, self.hi = [], []
        self.eq, self.le = [], []        # (dict var->coef, rhs)

    def add_vars(self, k, lo=None, hi=None):
        start = self.n
        self.n += k
        self.lo.extend([-np.inf] * k if lo is None else list(lo))
        self.hi.extend([np.inf] * k if hi is None else list(hi))
        return start

    def problem(self) -> LpProblem:
        def mat(rows):
            M = np.zeros((len(rows), self.n))
            for r, (coef, _) in enumerate(rows):
                for j, v in coef.items():
                    M[r, j] += v
            return M, np.array([rhs for _, rhs in rows], float)
        A, b = mat(self.eq)
        G, h = mat(self.le)
        return LpProblem(self.n, A, b, G, h, None, 0.0, "max", np.array(self.lo), np.array(self.hi))


def encode_layer(kind, i: int, net, bounds: LayerBounds | dict, builder: _Builder, offsets: list):
    """Append the rows of layer ``i`` (1-based, odd = linear) to ``builder``.

    ``offsets[k]`` is the first variable index of layer k; layer ``i`` variables are
    created here.  ``bounds`` must hold (l_k, u_k) for every k < i.
    """
    kind = parse_lp_kind(kind)
    tn = as_tensor_net(net)
    lower, upper = (bounds.lower, bounds.upper) if isinstance(bounds, LayerBounds) else bounds
    if len(lower) < i:
        raise LpError(f"encode_layer({i}) needs bounds for layers 0..{i - 1}")
    lp_prev = np.asarray(ad.value(lower[i - 1]), float)
    up_prev = np.asarray(ad.value(upper[i - 1]), float)
    prev = offsets[i - 1]
    if i % 2 == 1:
        W, b = (np.asarray(ad.value(t)) for t in tn.linears[(i - 1) // 2])
        n = W.shape[0]
        cur = builder.add_vars(n)
        offsets.append(cur)
        for j in range(n):
            if kind is LpKind.BOX_LP:
                Wp, Wn = np.maximum(W[j], 0), np.minimum(W[j], 0)
                builder.le.append(({cur + j: 1.0}, float(Wp @ up_prev + Wn @ lp_prev + b[j])))
                builder.le.append(({cur + j: -1.0}, -float(Wp @ lp_prev + Wn @ up_prev + b[j])))
            else:
                coef = {cur + j: 1.0}
                for k in range(W.shape[1]):
                    if W[j, k] != 0.0:
                        coef[prev + k] = -W[j, k]
                builder.eq.append((coef, float(b[j])))
        return
    n = len(lp_prev)
    cur = builder.add_vars(n)
    offsets.append(cur)
    dead, active, unst = stability(lp_prev, up_prev)
    for j in range(n):
        l, u, x, z = lp_prev[j], up_prev[j], cur + j, prev + j
        if kind is LpKind.BOX_LP:
            builder.le.append(({x: 1.0}, max(0.0, u)))
            builder.le.append(({x: -1.0}, -max(0.0, l)))
            continue
        if kind is LpKind.DEEPZ_LP:
            if dead[j]:
                lam, mu = 0.0, 0.0
            elif active[j]:
                lam, mu = 1.0, 0.0
            else:
                lam, mu = u / (u - l), -0.5 * l * u / (u - l)
            e = builder.add_vars(1, [-1.0], [1.0])
            builder.eq.append(({x: 1.0, z: -lam, e: -mu}, mu))
            continue
        if dead[j]:
            builder.eq.append(({x: 1.0}, 0.0))
            continue
        if active[j]:
            builder.eq.append(({x: 1.0, z: -1.0}, 0.0))
            continue
        lam = u / (u - l)
        if kind is LpKind.CROWN_LP:
            ls = relax_coeffs(RelaxationKind.CROWN, np.array([l]), np.array([u]))[0].value[0]
            builder.le.append(({x: 1.0, z: -lam}, -lam * l))
            if ls == 0.0:
                builder.le.append(({x: -1.0}, 0.0))
            else:
                builder.le.append(({z: 1.0, x: -1.0}, 0.0))
        elif kind is LpKind.TRIANGLE:
            builder.le.append(({x: -1.0}, 0.0))
            builder.le.append(({z: 1.0, x: -1.0}, 0.0))
            builder.le.append(({x: 1.0, z: -lam}, -lam * l))
        elif kind is LpKind.PARALLELOGRAM:
            builder.le.append(({x: -1.0}, 0.0))
            builder.le.append(({z: 1.0, x: -1.0}, 0.0))
            builder.le.append(({x: 1.0}, u))
            builder.le.append(({x: 1.0, z: -1.0}, -l))


def _full_bounds_single(tn: TensorNet, kind: LpKind, lo0: np.ndarray, hi0: np.ndarray):
    lower, upper = [lo0.copy()], [hi0.copy()]
    n_layers = 2 * len(tn.linears) - 1
    for i in range(1, n_layers + 1):
        bld = _Builder()
        offsets = [bld.add_vars(len(lo0), lo0, hi0)]
        for k in range(1, i + 1):
            encode_layer(kind, k, tn, (lower, upper), bld, offsets)
            if k < i:
                # box rows of every earlier neuron, realized as variable bounds
                start = offsets[k]
                nk = len(lower[k])
                bld.lo[start:start + nk] = list(lower[k])
                bld.hi[start:start + nk] = list(upper[k])
        base = bld.problem()
        start, nk = offsets[i], (len(bld.lo) - offsets[i]) if i == n_layers else None
        width = tn.dims[(i + 1) // 2] if i % 2 else len(lower[i - 1])
        l, u = np.empty(width), np.empty(width)
        for j in range(width):
            l[j] = simplex_solve(base.unit_objective(start + j, "min")).value
            u[j] = simplex_solve(base.unit_objective(start + j, "max")).value
        lower.append(l)
        upper.append(u)
    return lower, upper


def lp_bounds_full(net, kind, lo, hi) -> LayerBounds:
    """Reference per-neuron LP bounds (no gradients) for a batch of boxes."""
    kind = parse_lp_kind(kind)
    tn = as_tensor_net(net)
    tn = TensorNet([(ad.const(ad.value(W)), ad.const(ad.value(b))) for W, b in tn.linears])
    lo = np.atleast_2d(ad.value(lo))
    hi = np.atleast_2d(ad.value(hi))
    if any(W.ndim == 3 for W, _ in tn.linears):
        per = []
        for k in range(len(lo)):
            tk = TensorNet([(ad.const(W.value[k]) if W.ndim == 3 else W,
                             ad.const(b.value[k]) if b.ndim == 2 else b) for W, b in tn.linears])
            per.append(_full_bounds_single(tk, kind, lo[k], hi[k]))
    else:
        per = [_full_bounds_single(tn, kind, lo[k], hi[k]) for k in range(len(lo))]
    n_layers = len(per[0][0])
    lower = [ad.const(np.stack([p[0][i] for p in per])) for i in range(n_layers)]
    upper = [ad.const(np.stack([p[1][i] for p in per])) for i in range(n_layers)]
    return LayerBounds(lower, upper)


# -- fast encoding -------------------------------------------------------------------

_CHEAP = {
    LpKind.TRIANGLE: RelaxationKind.CROWN,
    LpKind.PARALLELOGRAM: RelaxationKind.HBOX,
    LpKind.CROWN_LP: RelaxationKind.CROWN,
    LpKind.DEEPZ_LP: RelaxationKind.DEEPZ,
}

LE, EQ, DROP = 0, 1, 2


def lp_relax_rows(kind: LpKind, l, u):
    """Per-neuron (ls, ld, us, ud, vlo, vhi, lower_code, upper_code) for the fast encoding."""
    l, u = ad.as_tensor(l), ad.as_tensor(u)
    dead, active, unst = stability(l.value, u.value)
    if kind in (LpKind.DEEPZ_LP, LpKind.CROWN_LP):
        ls, ld, us, ud = relax_coeffs(RelaxationKind.DEEPZ if kind is LpKind.DEEPZ_LP
                                      else RelaxationKind.CROWN, l, u)
        vlo = ls * l + ld
        vhi = us * u + ud
        lower_code = np.where(unst & (ls.value != 0.0), LE, DROP)
        if kind is LpKind.CROWN_LP:
            vlo = ad.select(unst & (ls.value == 0.0), 0.0, vlo)
    else:
        ones = np.ones(l.shape)
        den = ad.select(unst, u - l, 1.0)
        lam = ad.select(unst, u / den, active.astype(float))
        ls = ad.const(np.where(unst, 1.0, 0.0))
        ld = ad.const(np.zeros(l.shape))
        if kind is LpKind.TRIANGLE:
            us = lam
            ud = ad.select(unst, -(lam * l), 0.0)
        else:
            us = ad.const(np.where(dead, 0.0, ones))
            ud = ad.select(unst, -l, 0.0)
        vlo = ad.select(active, l, 0.0)
        vhi = ad.select(dead, 0.0, u)
        lower_code = np.where(unst, LE, DROP)
    upper_code = np.where(unst, LE, np.where(active, EQ, DROP))
    return ls, ld, us, ud, vlo, vhi, lower_code, upper_code


def _lp_op(G, h, vlo, vhi, C, codes, want):
    """Tape op: per example, min and max of every objective row of C (B, K, n).

    Returns (B, 2K): the first K entries are minima, the last K maxima.  Entries
    with ``want`` False are 0 and carry no gradient.
    """
    Gv, hv, lov, hiv, Cv = (np.ascontiguousarray(ad.value(t)) for t in (G, h, vlo, vhi, C))
    K = Cv.shape[1]
    C2 = np.concatenate([Cv, -Cv], axis=1)
    vals, X, PH, PLO, PHI, flags = simplex.solve_batch(Gv, hv, codes.astype(np.int64), lov, hiv,
                                                       C2, want)
    bad = want & (flags >= 2)
    if bad.any():
        b, k = map(int, np.argwhere(bad)[0])
        raise LpError(f"LP solve failed (example {b}, objective {k}, status {flags[b, k] - 2})")
    S = np.concatenate([np.ones(K), -np.ones(K)])
    out = vals * S
    Dh = PH * S[None, :, None]
    Dlo = PLO * S[None, :, None]
    Dhi = PHI * S[None, :, None]
    degenerate = want & (flags == 1)

    def backward(g, o, *_):
        g = np.where(want, g, 0.0)
        gh = np.einsum("bk,bkm->bm", g, Dh)
        gG = -np.einsum("bk,bkm,bkn->bmn", g, Dh, X)
        glo = np.einsum("bk,bkn->bn", g, Dlo)
        ghi = np.einsum("bk,bkn->bn", g, Dhi)
        gC = g[:, :K, None] * X[:, :K] + g[:, K:, None] * X[:, K:]
        return gG, gh, glo, ghi, gC

    return ad.custom("lp", (G, h, vlo, vhi, C), out, backward), degenerate


def _pad_cols(T, left: int, total: int):
    """Place (B, r, w) between ``left`` zero columns and zero columns up to ``total``."""
    B, r, w = T.shape
    parts = []
    if left:
        parts.append(np.zeros((B, r, left)))
    parts.append(T)
    if total - left - w:
        parts.append(np.zeros((B, r, total - left - w)))
    return ad.concat(parts, axis=-1) if len(parts) > 1 else T


def lp_bounds_fast(net, kind, lo, hi, solve_all: bool = True, final: str = "both") -> LayerBounds:
    """Differentiable LP bounds.

    With ``solve_all=False`` intermediate neurons that the cheap sound relaxation
    already proves stable are not solved (their reported bounds are the cheap
    ones); such neurons have the same encoding either way, so the final bounds
    are unchanged.  ``final`` in {"both", "upper", "lower"} limits the last layer.
    """
    kind = parse_lp_kind(kind)
    if kind is LpKind.BOX_LP:
        raise LpError("BoxLP is only available in the full encoding")
    tn = as_tensor_net(net)
    lo0, hi0 = ad.as_tensor(lo), ad.as_tensor(hi)
    B = lo0.shape[0]
    cheap = None
    if not solve_all:
        ctn = TensorNet([(ad.const(W.value), ad.const(b.value)) for W, b in tn.linears])
        cheap = backsub_bounds(ctn, _CHEAP[kind], ad.const(lo0.value), ad.const(hi0.value),
                               relu_layers=False)
    W0, b0 = tn.linears[0]
    l, u = _interval_affine(W0, b0, lo0, hi0)
    lower, upper = [lo0, l], [hi0, u]
    widths = [lo0.shape[-1]]
    row_blocks = []          # per ReLU layer: (Glow, hlow, Gup, hup, codes_low, codes_up, left)
    var_lo, var_hi = [lo0], [hi0]
    n_lin = len(tn.linears)
    n_degenerate = 0
    for p in range(1, n_lin):
        ls, ld, us, ud, vlo, vhi, cl, cu = lp_relax_rows(kind, lower[-1], upper[-1])
        W, b = tn.linears[p - 1]
        left = sum(widths[:-1])
        n_prev, n_cur = widths[-1], W.shape[-2]
        WB = W if W.ndim == 3 else ad.expand(W, 0)
        Gl = ad.expand(ls, -1) * WB                                   # (B, n_cur, n_prev)
        Gu = -(ad.expand(us, -1) * WB)
        hl = -(ls * b + ld)
        hu = us * b + ud
        row_blocks.append((Gl, hl, Gu, hu, cl, cu, left, n_prev, n_cur))
        widths.append(n_cur)
        var_lo.append(vlo)
        var_hi.append(vhi)
        lower.append(vlo)
        upper.append(vhi)

        total = sum(widths)
        rows_G, rows_h, codes = [], [], []
        eye_cache = {}
        for (Gl_, hl_, Gu_, hu_, cl_, cu_, left_, np_, nc_) in row_blocks:
            eye = eye_cache.setdefault(nc_, np.eye(nc_)[None])
            blk_l = ad.concat([Gl_, -eye * np.ones((B, 1, 1))], axis=-1)
            blk_u = ad.concat([Gu_, eye * np.ones((B, 1, 1))], axis=-1)
            rows_G += [_pad_cols(blk_l, left_, total), _pad_cols(blk_u, left_, total)]
            rows_h += [hl_, hu_]
            codes += [np.broadcast_to(cl_, (B, nc_)), np.broadcast_to(cu_, (B, nc_))]
        G = ad.concat(rows_G, axis=-2)
        h = ad.concat(rows_h, axis=-1)
        code = np.concatenate(codes, axis=-1)
        vlo_all = ad.concat(var_lo, axis=-1)
        vhi_all = ad.concat(var_hi, axis=-1)

        Wn, bn = tn.linears[p]
        WnB = Wn if Wn.ndim == 3 else ad.expand(Wn, 0) * np.ones((B, 1, 1))
        C = _pad_cols(WnB, total - n_cur, total)
        K = WnB.shape[-2]
        last = p == n_lin - 1
        want = np.ones((B, 2 * K), bool)
        if last:
            if final == "upper":
                want[:, :K] = False
            elif final == "lower":
                want[:, K:] = False
        elif cheap is not None:
            cl_, cu_ = cheap.l(2 * p + 1), cheap.u(2 * p + 1)
            _, _, unst = stability(cl_, cu_)
            want = np.concatenate([unst, unst], axis=-1)
        vals, degenerate = _lp_op(G, h, vlo_all, vhi_all, C, code, want)
        n_degenerate += int(degenerate.sum())
        lmin = vals[:, :K] + bn
        umax = vals[:, K:] + bn
        if cheap is not None and not last:
            skip = ~want[:, :K]
            lmin = ad.select(skip, cheap.l(2 * p + 1), lmin)
            umax = ad.select(skip, cheap.u(2 * p + 1), umax)
        elif last and final != "both":
            # the unused side gets the (sound, looser) interval bound
            il, iu = _interval_affine(ad.const(Wn.value), ad.const(bn.value),
                                      ad.const(vlo.value), ad.const(vhi.value))
            if final == "upper":
                lmin = il
            else:
                umax = iu
        lower.append(lmin)
        upper.append(umax)
    lb = LayerBounds(lower, upper)
    lb.degenerate_lps = n_degenerate
    return lb


def lp_bounds(net, kind, lo, hi, path: str = "auto", solve_all: bool = True,
              final: str = "both") -> LayerBounds:
    """Per-neuron min/max LP bounds for every layer, multilevel."""
    kind = parse_lp_kind(kind)
    tn = as_tensor_net(net)
    if len(tn.linears) == 1:
        W, b = tn.linears[0]
        l, u = _interval_affine(W, b, ad.as_tensor(lo), ad.as_tensor(hi))
        return LayerBounds([ad.as_tensor(lo), l], [ad.as_tensor(hi), u])
    if path == "full" or (path == "auto" and kind is LpKind.BOX_LP):
        return lp_bounds_full(tn, kind, lo, hi)
    return lp_bounds_fast(tn, kind, lo, hi, solve_all=solve_all, final=final)


# -- equivalence / dominance suite ---------------------------------------------------

def lp_check(n_nets: int = 100, seed: int = 0, tol: float = 1e-8) -> dict:
    """BoxLP vs Box, DeepZLP vs DeepZ, and Triangle dominance over DeepZLP, CrownLP and
    Parallelogram, at every layer of ``n_nets`` random small networks."""
    from .bounds import box_propagate
    from .network import random_small_net
    rng = np.random.default_rng(seed)
    worst = {"BoxLP=Box": 0.0, "DeepZLP=DeepZ": 0.0, "Triangle>=DeepZLP": 0.0,
             "Triangle>=CrownLP": 0.0, "Triangle>=Parallelogram": 0.0}
    for _ in range(n_nets):
        net = random_small_net(rng)
        x = rng.standard_normal(net.dims[0])
        eps = float(rng.uniform(0.05, 1.0))
        lo, hi = (x - eps)[None], (x + eps)[None]

        def get(kind):
            lb = lp_bounds(net, kind, lo, hi)
            return [lb.l(i) for i in range(lb.n_layers + 1)], [lb.u(i) for i in range(lb.n_layers + 1)]

        ref_box = box_propagate(net.tensors(), ad.const(lo), ad.const(hi))
        ref_dz = backsub_bounds(net.tensors(), RelaxationKind.DEEPZ, ad.const(lo), ad.const(hi))
        tri = get(LpKind.TRIANGLE)
        for name, kind, ref in (("BoxLP=Box", LpKind.BOX_LP, ref_box),
                                ("DeepZLP=DeepZ", LpKind.DEEPZ_LP, ref_dz)):
            L, U = get(kind)
            for i in range(len(L)):
                d = max(np.abs(L[i] - ref.l(i)).max(), np.abs(U[i] - ref.u(i)).max())
                worst[name] = max(worst[name], float(d))
        for name, kind in (("Triangle>=DeepZLP", LpKind.DEEPZ_LP), ("Triangle>=CrownLP", LpKind.CROWN_LP),
                           ("Triangle>=Parallelogram", LpKind.PARALLELOGRAM)):
            L, U = get(kind)
            for i in range(len(L)):
                v = max((L[i] - tri[0][i]).max(), (tri[1][i] - U[i]).max(), 0.0)
                worst[name] = max(worst[name], float(v))
    return {"n_nets": n_nets, "seed": seed, "tol": tol, "worst": worst,
            "passed": all(v <= tol for v in worst.values())}
