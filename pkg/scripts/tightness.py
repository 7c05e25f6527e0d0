"""CR-AUC of each relaxation on naturally trained width-30 MNIST networks.

Writes ``<out>/tightness.jsonl`` (one line per seed) and prints the ordering
check Box < hBox, DeepZ < CROWN <= Triangle for every seed.
"""
import argparse
import json
import time
from pathlib import Path

from certlab.experiments import tightness_ok, tightness_run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/tightness")
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--eps-max", type=float, default=0.07)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--n-eval", type=int, default=500)
    ap.add_argument("--n-lp", type=int, default=50)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    passed = 0
    with open(out / "tightness.jsonl", "w") as f:
        for seed in range(args.seeds):
            t0 = time.time()
            r = tightness_run(seed, args.data_dir, args.eps_max, args.samples, args.n_eval, args.n_lp)
            r["ok"] = tightness_ok(r)
            r["seconds"] = round(time.time() - t0, 1)
            passed += r["ok"]
            f.write(json.dumps(r, sort_keys=True) + "\n")
            aucs = " ".join(f"{k}={v:.3f}" for k, v in r["auc"].items())
            first = " ".join(f"{k}={v:.3f}" for k, v in r["auc_first"].items())
            print(f"seed {seed} acc {r['acc']:.3f} | {aucs} | first {args.n_lp}: {first} | "
                  f"{'ok' if r['ok'] else 'VIOLATED'} ({r['seconds']}s)", flush=True)
    print(f"ordering holds on {passed}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
