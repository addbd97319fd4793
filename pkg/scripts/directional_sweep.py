"""Raw vs refined comparison on the synthetic corpus over several seeds.

    python scripts/directional_sweep.py --seeds 10 --count 500 --out runs/sweep
"""
import argparse
import os

from ctxrefine.cli import main


def run():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--two-target-ratio", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="runs/sweep")
    args = p.parse_args()

    os.makedirs(args.out, exist_ok=True)
    cfg = os.path.join(args.out, "synthetic.cfg")
    with open(cfg, "w") as fh:
        fh.write(f"count = {args.count}\ntwo_target_ratio = {args.two_target_ratio}\ndim = {args.dim}\n")
    argv = ["eval", "--synthetic", cfg, "--refine-inline", "--seeds", str(args.seeds), "--out", args.out]
    if args.workers:
        argv += ["--workers", str(args.workers)]
    return main(argv)


if __name__ == "__main__":
    raise SystemExit(run())
