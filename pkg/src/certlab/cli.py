"""certlab command line.

Exit codes: 0 success, 1 failed check or runtime failure, 2 usage error
(unknown flag, missing file, invalid config).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("certlab")


class UsageError(Exception):
    pass


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _kinds(text: str) -> list[str]:
    from .bounds import parse_kind
    try:
        return [str(parse_kind(k.strip())) for k in text.split(",") if k.strip()]
    except ValueError as e:
        raise UsageError(str(e)) from None


def _out(args, default: str) -> Path:
    p = Path(args.out or default)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_net(path):
    from .network import load_network
    if not Path(path).exists():
        raise UsageError(f"network file not found: {path}")
    return load_network(path)


def _dataset(args, split: str):
    from .data import load_dataset
    ds = load_dataset(args.dataset, split, args.data_dir, seed=args.data_seed)
    start = getattr(args, "start", 0) or 0
    n = getattr(args, "n", 0) or None
    return ds.take(n, start)


def _clip(ds):
    return (0.0, 1.0) if ds.clip else None


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .config import get_preset, load_config, save_config
    from .data import load_dataset
    from .network import build_network, save_network
    from .training import train, write_history
    if bool(args.config) == bool(args.preset):
        raise UsageError("train needs exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else get_preset(args.preset)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if args.epochs is not None:
        t = cfg.train
        cfg = replace(cfg, train=replace(t, epochs=args.epochs, warmup=min(t.warmup, args.epochs),
                                         rampup=min(t.rampup, args.epochs - min(t.warmup, args.epochs))))
    cfg.validate()
    ds = load_dataset(cfg.dataset, "train", args.data_dir, seed=args.data_seed)
    if cfg.n_train:
        ds = ds.take(cfg.n_train)
    if ds.n_features != cfg.dims[0] or ds.n_classes != cfg.dims[-1]:
        raise UsageError(f"dims {cfg.dims} do not fit dataset ({ds.n_features} features, "
                         f"{ds.n_classes} classes)")
    out = _out(args, cfg.out_dir)
    tcfg = replace(cfg.train, clip=cfg.train.clip and ds.clip)
    net = build_network(list(cfg.dims), cfg.seed)
    net, hist = train(net, ds.X, ds.y, tcfg)
    save_network(net, out / "net.txt")
    write_history(hist, out / "history.csv")
    save_config(cfg, out / "config.ini")
    last = hist[-1] if hist else {}
    print(f"trained {tcfg.kind} for {len(hist)} epochs: nat_loss={last.get('nat_loss', float('nan')):.4f} "
          f"cert_loss={last.get('cert_loss', float('nan')):.4f} nat_acc={last.get('nat_acc', float('nan')):.4f}")
    print(f"wrote {out / 'net.txt'}, {out / 'history.csv'}")
    return EXIT_OK


def cmd_certify(args) -> int:
    from .evaluation import evaluate
    net = _load_net(args.net)
    ds = _dataset(args, args.split)
    rep = evaluate(net, ds.X, ds.y, args.eps, _kinds(args.kinds), _clip(ds),
                   elision=not args.no_elision, pgd_steps=args.pgd_steps)
    out = _out(args, "runs/certify")
    (out / "report.json").write_text(rep.to_json() + "\n")
    print(f"n={rep.n} eps={rep.eps} acc={rep.acc:.4f} pgd={rep.pgd:.4f} "
          + " ".join(f"cr[{k}]={v:.4f}" for k, v in rep.cr.items()))
    return EXIT_OK


def cmd_curve(args) -> int:
    from .evaluation import cr_auc, cr_curve, write_curves
    net = _load_net(args.net)
    ds = _dataset(args, args.split)
    curves = [cr_curve(net, k, ds.X, ds.y, args.eps_max, args.samples, _clip(ds),
                       elision=not args.no_elision, slice_id=f"{args.dataset}:{args.split}")
              for k in _kinds(args.kinds)]
    out = _out(args, "runs/curve")
    write_curves(curves, out / "curve.csv")
    auc = {c.kind: cr_auc(c, percent=args.percent) for c in curves}
    _dump_json({"auc": auc, "percent": args.percent, "eps_max": args.eps_max,
                "samples": args.samples, "n": len(ds)}, out / "auc.json")
    for k, v in auc.items():
        print(f"CR-AUC[{k}] = {v:.6g}")
    return EXIT_OK


def cmd_cross(args) -> int:
    from .evaluation import cross_matrix, write_cross
    ds = _dataset(args, args.split)
    rows = []
    for item in args.nets:
        if "=" not in item:
            raise UsageError(f"--nets entries must be label=path, got {item!r}")
        label, path = item.split("=", 1)
        rows.append(cross_matrix(_load_net(path), label, _kinds(args.kinds), ds.X, ds.y, args.eps,
                                 _clip(ds), elision=not args.no_elision))
    out = _out(args, "runs/cross")
    write_cross(rows, out / "cross.csv")
    for r in rows:
        print(r.train_kind + ": " + " ".join(f"{k}={v:.4f}" for k, v in r.cr.items()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .diagnostics import delta_sweep, detect_jumps, minimal_sweeps, write_jumps
    out = _out(args, "runs/sweep")
    if args.minimal:
        sweeps = list(minimal_sweeps())
    else:
        if not args.net:
            raise UsageError("sweep needs --net or --minimal")
        net = _load_net(args.net)
        ds = _dataset(args, args.split)
        if not len(ds):
            raise UsageError("empty dataset slice")
        sweeps = [delta_sweep(net, _kinds(args.kinds), ds.X[0], args.eps, args.target,
                              args.delta_max, args.points, clip=_clip(ds),
                              fallback_seed=args.seed or 0)]
    jumps = []
    for k, sw in enumerate(sweeps):
        sw.write_csv(out / (f"sweep_{k}.csv" if len(sweeps) > 1 else "sweep.csv"))
        jumps += detect_jumps(sw, args.tau)
    write_jumps(jumps, out / "jumps.jsonl")
    if sweeps[0].direction is not None:
        np.savetxt(out / "direction.txt", sweeps[0].direction.reshape(-1), fmt="%.17g")
    print(f"{len(jumps)} jump(s) above tau={args.tau}")
    for j in jumps:
        print(f"  {j.kind}: [{j.lo:.9g}, {j.hi:.9g}] magnitude {j.magnitude:.9g}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    from .diagnostics import DiagnosticsError, landscape_gd, landscape_recipe
    import csv
    out = _out(args, "runs/landscape")
    seeds = range(args.seed or 0, (args.seed or 0) + args.runs)
    with open(out / "landscape.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "step", "delta", "objective"])
        best = None
        for s in seeds:
            try:
                tr = landscape_gd(landscape_recipe(s), args.kind, args.lr, args.lr_decay,
                                  args.epochs, args.target)
            except DiagnosticsError:
                continue
            for t, (d, o) in enumerate(zip(tr.deltas, tr.objective)):
                w.writerow([s, t, repr(float(d)), repr(float(o))])
            if best is None or tr.max_drop() > best[1]:
                best = (s, tr.max_drop())
    if best:
        print(f"largest single-step drop: {best[1]:.6g} (seed {best[0]})")
    return EXIT_OK


def cmd_minimal(args) -> int:
    from .diagnostics import MinimalExampleError, minimal_examples
    out = _out(args, "runs/minimal")
    try:
        rep = minimal_examples()
    except MinimalExampleError as e:
        _dump_json(e.dump, out / "minimal.json")
        print(f"FAIL: {e}")
        return EXIT_FAIL
    _dump_json(rep, out / "minimal.json")
    for k, v in rep["checks"].items():
        print(f"{k}: {'ok' if v else 'FAIL'}")
    return EXIT_OK


def cmd_lp_check(args) -> int:
    from .lp import lp_check
    rep = lp_check(args.n_nets, args.seed or 0)
    out = _out(args, "runs/lp-check")
    _dump_json(rep, out / "lp_check.json")
    for k, v in rep["worst"].items():
        print(f"{k}: worst deviation {v:.3g}")
    print("passed" if rep["passed"] else "FAILED")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


def cmd_fetch_presets(args) -> int:
    from .config import presets, save_config
    out = _out(args, "presets")
    table = presets()
    for name, cfg in table.items():
        save_config(cfg, out / f"{name}.ini")
    print(f"wrote {len(table)} presets to {out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", default=None, help="dataset directory (else $CERTLAB_DATA, else ./data)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--out", default=None, help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", default="synth", choices=["mnist", "toy", "synth"])
    data.add_argument("--split", default="test")
    data.add_argument("--n", type=int, default=0, help="first n examples (0 = all)")
    data.add_argument("--start", type=int, default=0)
    data.add_argument("--data-seed", type=int, default=0, help="seed of the toy PCA sample")
    data.add_argument("--no-elision", action="store_true")

    p = argparse.ArgumentParser(prog="certlab", description="convex-relaxation certification lab")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="certified training")
    s.add_argument("--config")
    s.add_argument("--preset")
    s.add_argument("--epochs", type=int)
    s.add_argument("--data-seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("certify", parents=[common, data], help="accuracy, PGD and certified robustness")
    s.add_argument("--net", required=True)
    s.add_argument("--kinds", default="Box")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--pgd-steps", type=int, default=100)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("curve", parents=[common, data], help="certified-robustness curves and CR-AUC")
    s.add_argument("--net", required=True)
    s.add_argument("--kinds", default="Box")
    s.add_argument("--eps-max", type=float, required=True)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--percent", action="store_true")
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("cross", parents=[common, data], help="train-kind x certify-kind matrix")
    s.add_argument("--nets", nargs="+", required=True, metavar="LABEL=PATH")
    s.add_argument("--kinds", default="Box,hBox,DeepZ,CROWN,CROWN-IBP(R)")
    s.add_argument("--eps", type=float, required=True)
    s.set_defaults(func=cmd_cross)

    s = sub.add_parser("sweep", parents=[common, data], help="first-layer delta sweep and jump detection")
    s.add_argument("--net")
    s.add_argument("--minimal", action="store_true", help="sweep w on the minimal network instead")
    s.add_argument("--kinds", default="Box,CROWN")
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--target", type=int, default=0)
    s.add_argument("--delta-max", type=float, default=1.0)
    s.add_argument("--points", type=int, default=201)
    s.add_argument("--tau", type=float, default=0.1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("landscape", parents=[common], help="1-D gradient ascent on an output bound")
    s.add_argument("--kind", default="CROWN")
    s.add_argument("--lr", type=float, default=0.02)
    s.add_argument("--lr-decay", type=float, default=0.99)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--target", type=int, default=0)
    s.set_defaults(func=cmd_landscape)

    s = sub.add_parser("minimal-examples", parents=[common], help="check the minimal discontinuity network")
    s.set_defaults(func=cmd_minimal)

    s = sub.add_parser("lp-check", parents=[common], help="LP equivalence and Triangle dominance suite")
    s.add_argument("--n-nets", type=int, default=100)
    s.set_defaults(func=cmd_lp_check)

    s = sub.add_parser("fetch-presets", parents=[common], help="write preset configs")
    s.set_defaults(func=cmd_fetch_presets)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv=None) -> int:
    from .config import ConfigError
    from .data import DataError
    from .diagnostics import DiagnosticsError
    from .lp import LpError
    from .network import NetworkError
    from .training import TrainingError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.data_dir is None:
        args.data_dir = os.environ.get("CERTLAB_DATA")
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, NetworkError) as e:
        print(f"certlab: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"certlab: data error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, LpError, DiagnosticsError) as e:
        print(f"certlab: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
