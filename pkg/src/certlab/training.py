"""Certified training: worst-case logits, kappa mixing, schedules, Adam, PGD."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bounds import BACKSUB_KINDS, RelaxationKind, input_box, parse_kind
from .bounds import backsub_bounds, box_propagate, crown_ibp_r_bounds
from .network import Network, TensorNet, batch_spec_matrices, elide_tensors, forward_all

log = logging.getLogger(__name__)

HYBRID = "CROWN-IBP"
HISTORY_FIELDS = ["epoch", "eps", "kappa", "beta", "lr", "nat_loss", "cert_loss", "nat_acc"]


class TrainingError(RuntimeError):
    pass


def parse_train_kind(kind):
    """RelaxationKind, or the string ``"CROWN-IBP"`` for the CROWN-IBP(R)/Box hybrid."""
    if isinstance(kind, str) and kind.strip().lower() in ("crown-ibp", "crownibp", "hybrid"):
        return HYBRID
    return parse_kind(kind)


@dataclass
class TrainConfig:
    kind: object = RelaxationKind.BOX
    eps_train: float = 0.1
    eps_test: float = 0.1
    epochs: int = 200
    warmup: int = 10           # N_w
    rampup: int = 50           # N_r
    kappa_start: float = 1.0
    kappa_end: float = 0.0
    l1: float = 0.0
    lr: float = 1e-3
    lr_milestones: tuple = ()  # ((epoch, factor), ...)
    lr_halve_every: int = 0
    batch_size: int = 64
    elision: bool = True
    seed: int = 0
    clip: bool = True
    kappa_mixing: str = "loss"     # or "logits"
    hybrid_blend: str = "logits"   # or "loss"

    def __post_init__(self):
        self.kind = parse_train_kind(self.kind)
        self.lr_milestones = tuple((int(e), float(f)) for e, f in self.lr_milestones)

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.kappa_end <= self.kappa_start <= 1.0:
            raise TrainingError("need 0 <= kappa_end <= kappa_start <= 1")
        if self.warmup < 0 or self.rampup < 0 or self.warmup + self.rampup > self.epochs:
            raise TrainingError("need warmup + rampup <= epochs")
        if self.eps_train < 0 or self.eps_test < 0:
            raise TrainingError("eps must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise TrainingError("batch_size must be >= 1 and epochs >= 0")
        if self.kappa_mixing not in ("loss", "logits") or self.hybrid_blend not in ("loss", "logits"):
            raise TrainingError("kappa_mixing / hybrid_blend must be 'loss' or 'logits'")
        return self


@dataclass
class ScheduleState:
    eps: float
    kappa: float
    beta: float
    lr: float


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    lr = cfg.lr
    for e, factor in cfg.lr_milestones:
        if epoch >= e:
            lr *= factor
    if cfg.lr_halve_every > 0:
        lr *= 0.5 ** (epoch // cfg.lr_halve_every)
    return lr


def schedule(epoch: int, cfg: TrainConfig) -> ScheduleState:
    """Warm-up, then linear ramps of eps (0 -> eps_train), kappa and beta (1 -> 0)."""
    lr = learning_rate(epoch, cfg)
    if epoch < cfg.warmup:
        return ScheduleState(0.0, cfg.kappa_start, 1.0, lr)
    if epoch < cfg.warmup + cfg.rampup:
        t = (epoch - cfg.warmup) / cfg.rampup
        return ScheduleState(t * cfg.eps_train, cfg.kappa_start + t * (cfg.kappa_end - cfg.kappa_start),
                             1.0 - t, lr)
    return ScheduleState(cfg.eps_train, cfg.kappa_end, 0.0, lr)


# -- losses ----------------------------------------------------------------------------

def worst_case_logits(lower, upper, y):
    """z_hat with l for the true class and u elsewhere. Accepts (n,) or (B, n)."""
    lower, upper = ad.as_tensor(lower), ad.as_tensor(upper)
    y = np.atleast_1d(np.asarray(y))
    n = lower.shape[-1]
    mask = np.eye(n, dtype=bool)[y]
    if lower.ndim == 1:
        mask = mask[0]
    return ad.select(mask, lower, upper)


def _other_classes(y: np.ndarray, n: int) -> np.ndarray:
    return np.array([[k for k in range(n) if k != t] for t in y], dtype=np.int64).reshape(len(y), n - 1)


def logit_margins(z, y):
    """z_{y'} - z_y for y' != y, shape (B, n-1)."""
    z = ad.as_tensor(z)
    y = np.asarray(y)
    C = batch_spec_matrices(y, z.shape[-1])
    return ad.matmul(C, ad.expand(z, -1))[..., 0]


def margin_ce(margins):
    """Per-example CE written over margins: log(1 + sum exp(m))."""
    m = ad.as_tensor(margins)
    zeros = np.zeros(m.shape[:-1] + (1,))
    return ad.logsumexp(ad.concat([zeros, m], axis=-1), axis=-1)


def cross_entropy(z, y):
    """Mean CE(z, y) over the batch, via a stable log-sum-exp."""
    z = ad.as_tensor(z)
    if z.ndim == 1:
        return ad.logsumexp(z, axis=-1) - z[int(y)]
    return ad.tsum(margin_ce(logit_margins(z, y))) / z.shape[0]


def certified_loss(z, z_hat, y, kappa: float, mixing: str = "loss"):
    """kappa*CE(z, y) + (1-kappa)*CE(z_hat, y); ``mixing="logits"`` mixes the logits instead."""
    if mixing == "logits":
        return cross_entropy(kappa * ad.as_tensor(z) + (1 - kappa) * ad.as_tensor(z_hat), y)
    return kappa * cross_entropy(z, y) + (1 - kappa) * cross_entropy(z_hat, y)


def margin_upper_bounds(tn, kind, x, eps: float, y, elision: bool, clip=None):
    """Upper bounds on c_{y'}^T z for every y' != y, shape (B, n-1).

    With elision the bound comes from the elided network; otherwise it is
    u_{y'} - l_y, which equals the margin form of the worst-case logits.
    """
    kind = parse_kind(kind)
    y = np.asarray(y)
    lo, hi = input_box(x, eps, clip)
    net = elide_tensors(tn, y) if elision else tn
    lp_final = "upper" if elision else "both"
    if kind is RelaxationKind.BOX:
        lb = box_propagate(net, lo, hi)
    elif kind in BACKSUB_KINDS:
        lb = backsub_bounds(net, kind, lo, hi, relu_layers=False)
    elif kind is RelaxationKind.CROWN_IBP_R:
        lb = crown_ibp_r_bounds(net, lo, hi)
    else:
        from .lp import lp_bounds
        lb = lp_bounds(net, kind, lo, hi, solve_all=False, final=lp_final)
    if elision:
        return lb.upper[-1]
    n = lb.upper[-1].shape[-1]
    zh = worst_case_logits(lb.lower[-1], lb.upper[-1], y)
    return logit_margins(zh, y)


# -- optimizer ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise TrainingError("adam_step: parameter / gradient shapes differ")
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1 ** t)
        vh = v / (1 - beta2 ** t)
        new_p.append(p - lr * mh / (np.sqrt(vh) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# -- training loop -----------------------------------------------------------------------

def _batch_loss(tn: TensorNet, cfg: TrainConfig, st: ScheduleState, xb, yb):
    clip = (0.0, 1.0) if cfg.clip else None
    z = forward_all(tn, xb)[-1]
    nat_m = logit_margins(z, yb)
    nat_ce = margin_ce(nat_m)
    B = xb.shape[0]
    nat = ad.tsum(nat_ce) / B
    cert = None
    if st.kappa < 1.0:
        if st.eps == 0.0:
            # all relaxations collapse to the forward pass at eps = 0
            M = nat_m
        elif cfg.kind == HYBRID:
            parts = []
            if st.beta > 0:
                parts.append((st.beta, margin_upper_bounds(tn, RelaxationKind.CROWN_IBP_R, xb, st.eps,
                                                           yb, cfg.elision, clip)))
            if st.beta < 1:
                parts.append((1 - st.beta, margin_upper_bounds(tn, RelaxationKind.BOX, xb, st.eps,
                                                               yb, cfg.elision, clip)))
            if cfg.hybrid_blend == "loss":
                M = None
                cert = sum(w * ad.tsum(margin_ce(m)) / B for w, m in parts)
            else:
                M = parts[0][0] * parts[0][1]
                for w, m in parts[1:]:
                    M = M + w * m
        else:
            M = margin_upper_bounds(tn, cfg.kind, xb, st.eps, yb, cfg.elision, clip)
        if cert is None:
            if cfg.kappa_mixing == "logits":
                cert = ad.tsum(margin_ce(st.kappa * nat_m + (1 - st.kappa) * M)) / B
            else:
                cert = ad.tsum(margin_ce(M)) / B
    if cert is None:
        loss = nat
    elif cfg.kappa_mixing == "logits":
        loss = cert
    else:
        loss = st.kappa * nat + (1 - st.kappa) * cert
    acc = float(np.mean(np.argmax(z.value, axis=-1) == yb))
    return loss, nat, cert, acc


def train(net: Network, X: np.ndarray, y: np.ndarray, cfg: TrainConfig, progress=None):
    """Returns (trained network, history rows)."""
    cfg.validate()
    X = np.asarray(X, float)
    y = np.asarray(y, np.int64)
    if len(X) == 0 or len(X) != len(y):
        raise TrainingError("dataset is empty or inputs/labels differ in length")
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    state = AdamState.zeros_like(params)
    history = []
    for epoch in range(cfg.epochs):
        st = schedule(epoch, cfg)
        perm = rng.permutation(len(X))
        nat_sum = cert_sum = acc_sum = 0.0
        n_b = 0
        have_cert = False
        for k, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            tape = ad.Tape()
            tn = net.with_params(params).tensors(tape)
            loss, nat, cert, acc = _batch_loss(tn, cfg, st, X[idx], y[idx])
            leaves = tn.leaves()
            if cfg.l1 > 0:
                loss = loss + cfg.l1 * sum((ad.tsum(ad.tabs(t)) for t in leaves), ad.const(0.0))
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {k}")
            grads = ad.grad(loss, leaves)
            params, state = adam_step(params, grads, state, st.lr)
            w = len(idx)
            nat_sum += float(nat.value) * w
            acc_sum += acc * w
            if cert is not None:
                cert_sum += float(cert.value) * w
                have_cert = True
            n_b += w
        row = {"epoch": epoch, "eps": st.eps, "kappa": st.kappa, "beta": st.beta, "lr": st.lr,
               "nat_loss": nat_sum / n_b, "cert_loss": cert_sum / n_b if have_cert else float("nan"),
               "nat_acc": acc_sum / n_b}
        history.append(row)
        if progress is not None:
            progress(row)
        log.info("epoch %d eps=%.4f kappa=%.3f nat=%.4f cert=%.4f acc=%.3f", epoch, st.eps,
                 st.kappa, row["nat_loss"], row["cert_loss"], row["nat_acc"])
    return net.with_params(params), history


def write_history(history, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in HISTORY_FIELDS[1:]])


# -- PGD -----------------------------------------------------------------------------------

def pgd_attack(net, x, y, eps: float, steps: int = 100, step_size: float = 0.01,
               clip=(0.0, 1.0), restarts: int = 0, seed: int = 0):
    """Sign-gradient ascent on CE, projected onto the eps-ball (and ``clip``).

    Starts deterministically at x.  Returns (success flags, x_adv) for a batch,
    or (bool, x_adv) for a single input.  The first adversarial iterate found is kept.
    """
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    Y = np.atleast_1d(np.asarray(y, np.int64))
    params = net.tensors() if isinstance(net, Network) else net
    lo, hi = X - eps, X + eps
    if clip is not None:
        lo, hi = np.maximum(lo, clip[0]), np.minimum(hi, clip[1])

    def wrong(xa):
        return np.argmax(forward_all(params, xa)[-1].value, axis=-1) != Y

    def run(start):
        xa = np.clip(start, lo, hi)
        found = wrong(xa)
        best = xa.copy()
        for _ in range(steps if eps > 0 else 0):
            if found.all():
                break
            tape = ad.Tape()
            xt = tape.leaf(xa)
            z = forward_all(params, xt)[-1]
            loss = ad.tsum(margin_ce(logit_margins(z, Y)))
            g = ad.grad(loss, [xt])[0]
            xa = np.clip(xa + step_size * np.sign(g), lo, hi)
            now = wrong(xa) & ~found
            best[now] = xa[now]
            found |= now
            best[~found] = xa[~found]
        return found, best

    found, best = run(X)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        if found.all():
            break
        f2, b2 = run(X + rng.uniform(-eps, eps, size=X.shape))
        new = f2 & ~found
        best[new] = b2[new]
        found |= new
    if single:
        return bool(found[0]), best[0]
    return found, best
