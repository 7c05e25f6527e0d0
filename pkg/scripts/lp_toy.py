"""Train the 2x20 toy network with all seven relaxations over several seeds.

Each finished run is appended to ``<out>/runs.jsonl`` and skipped on restart,
so an interrupted sweep resumes where it stopped.  The verdict (LP kinds vs the
best non-LP kind per seed) is written to ``<out>/verdict.json``.
"""
import argparse
import json
import time
from pathlib import Path

from certlab.config import TOY_KINDS
from certlab.experiments import lp_toy_run, lp_toy_verdict


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/lp_toy")
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=None, help="shrink the schedule proportionally")
    ap.add_argument("--kinds", default=",".join(TOY_KINDS))
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = out / "runs.jsonl"
    done = {}
    if log.exists():
        for line in log.read_text().splitlines():
            r = json.loads(line)
            done[(r["kind"], r["seed"])] = r
    seeds = list(range(args.seeds))
    for seed in seeds:
        for kind in args.kinds.split(","):
            if (kind, seed) in done:
                continue
            t0 = time.time()
            r = lp_toy_run(kind, seed, args.data_dir, args.epochs)
            r.pop("net")
            r["seconds"] = round(time.time() - t0, 1)
            done[(kind, seed)] = r
            with open(log, "a") as f:
                f.write(json.dumps(r) + "\n")
            print(f"seed {seed} {kind:14s} acc {r['acc']:.3f} cr {r['cr']:.3f} "
                  f"loss {r['final_cert_loss']:.4f} ({r['seconds']}s)", flush=True)
    verdict = lp_toy_verdict(list(done.values()), seeds)
    (out / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    print(json.dumps(verdict, sort_keys=True))


if __name__ == "__main__":
    main()
