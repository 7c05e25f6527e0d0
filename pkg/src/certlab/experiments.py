"""Desk-scale experiment drivers shared by scripts/ and the acceptance tests."""
from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np

from .config import TOY_KINDS, _slug, get_preset
from .data import load_dataset
from .evaluation import accuracy, certify, cr_auc, cr_curve
from .network import build_network
from .training import TrainConfig, train

log = logging.getLogger(__name__)

NON_LP = ["Box", "hBox", "DeepZ", "CROWN", "CROWN-IBP(R)"]


# -- LP toy training ------------------------------------------------------------------------

def lp_toy_run(kind: str, seed: int, data_dir=None, epochs: int | None = None) -> dict:
    """Train the 2x20 toy net with ``kind`` and certify with the same kind at eps_test."""
    cfg = get_preset(f"toy-{_slug(kind)}", seed=seed)
    t = cfg.train
    if epochs is not None:
        scale = epochs / t.epochs
        t = replace(t, epochs=epochs, warmup=int(round(t.warmup * scale)),
                    rampup=int(round(t.rampup * scale)))
    tr = load_dataset("toy", "train", data_dir)
    te = load_dataset("toy", "test", data_dir)
    net, hist = train(build_network(list(cfg.dims), seed), tr.X, tr.y, t)
    cr = float(np.mean(certify(net, kind, te.X, te.y, t.eps_test)))
    return {"kind": kind, "seed": seed, "acc": accuracy(net, te.X, te.y), "cr": cr,
            "final_cert_loss": hist[-1]["cert_loss"],
            "cert_loss_tail": [h["cert_loss"] for h in hist[-(t.epochs - t.warmup - t.rampup):]],
            "net": net}


def lp_toy_verdict(results: list[dict], seeds) -> dict:
    """Per-seed checks: LP kinds within 1 point of the best non-LP CR and lowest final loss."""
    by = {(r["kind"], r["seed"]): r for r in results}
    out = {}
    for lp in ("Triangle", "Parallelogram"):
        cr_ok, loss_ok = 0, 0
        for s in seeds:
            best = max(by[(k, s)]["cr"] for k in NON_LP)
            cr_ok += by[(lp, s)]["cr"] >= best - 0.01
            loss_ok += all(by[(lp, s)]["final_cert_loss"] <= by[(k, s)]["final_cert_loss"]
                           for k in NON_LP)
        out[lp] = {"cr_seeds": int(cr_ok), "loss_seeds": int(loss_ok)}
    return out


# -- tightness ordering ------------------------------------------------------------------------

def standard_net(seed: int, data_dir=None, n_train: int = 2000, dims=(784, 30, 30, 10),
                 epochs: int = 20):
    tr = load_dataset("mnist", "train", data_dir).take(n_train)
    cfg = TrainConfig(kind="Box", eps_train=0.0, epochs=epochs, warmup=epochs, rampup=0,
                      kappa_end=1.0, batch_size=100, seed=seed)
    net, _ = train(build_network(list(dims), seed), tr.X, tr.y, cfg)
    return net


def tightness_run(seed: int, data_dir=None, eps_max: float = 0.07, samples: int = 100,
                  n_eval: int = 500, n_lp: int = 50, kinds=("Box", "hBox", "DeepZ", "CROWN"),
                  lp_kinds=("Triangle",)) -> dict:
    """CR-AUC (percent) of each kind on a standard-trained net.  LP kinds use the first
    ``n_lp`` test examples; CROWN is also reported on that slice for a like-for-like check."""
    net = standard_net(seed, data_dir)
    te = load_dataset("mnist", "test", data_dir)
    clip = (0.0, 1.0)
    auc = {}
    ev = te.take(n_eval)
    for k in kinds:
        auc[k] = cr_auc(cr_curve(net, k, ev.X, ev.y, eps_max, samples, clip), percent=True)
    small = te.take(n_lp)
    auc_small = {}
    for k in ("CROWN",) + tuple(lp_kinds):
        auc_small[k] = cr_auc(cr_curve(net, k, small.X, small.y, eps_max, samples, clip, bisect=True),
                              percent=True)
    return {"seed": seed, "auc": auc, "auc_first": auc_small, "acc": accuracy(net, ev.X, ev.y)}


def tightness_ok(r: dict) -> bool:
    a, s = r["auc"], r["auc_first"]
    return a["Box"] < a["hBox"] and a["DeepZ"] < a["CROWN"] and s["CROWN"] <= s["Triangle"] + 1e-12


# -- desk certified training ---------------------------------------------------------------------

def desk_box_run(seed: int = 0, data_dir=None, n_eval: int = 500) -> dict:
    cfg = get_preset("desk-box", seed=seed)
    tr = load_dataset("mnist", "train", data_dir).take(cfg.n_train)
    te = load_dataset("mnist", "test", data_dir).take(n_eval)
    net, hist = train(build_network(list(cfg.dims), seed), tr.X, tr.y, cfg.train)
    cr = float(np.mean(certify(net, "Box", te.X, te.y, cfg.train.eps_test, (0.0, 1.0))))
    return {"cr": cr, "acc": accuracy(net, te.X, te.y), "history": hist}


def monotone_within(values, band: float = 0.05) -> bool:
    """Each value is at most (1 + band) times the smallest value before it in the window."""
    v = [x for x in values if not math.isnan(x)]
    return all(v[k] <= (1 + band) * min(v[:k]) for k in range(1, len(v)))
