"""Write per-aspect vector populations (context baseline vs refined) to CSV for plotting.

    python scripts/export_aspect_vectors.py --seed 0 --out runs/aspects.csv
"""
import argparse

from ctxrefine.harness import separation_populations, separation_statistic, write_aspect_vectors_csv
from ctxrefine.refiner import RefinerConfig, refine_corpus
from ctxrefine.synthetic import SyntheticConfig, generate_synthetic, synthetic_embeddings


def run():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="aspects.csv")
    args = p.parse_args()

    syn = SyntheticConfig(seed=args.seed, count=args.count)
    sentences, table = generate_synthetic(syn), synthetic_embeddings(syn)
    cfg = RefinerConfig(seed=args.seed)
    refined = refine_corpus(sentences, table, syn.aspects, cfg, workers=args.workers)
    base, ref = separation_populations(sentences, syn.aspects, table, refined, cfg.alpha)
    write_aspect_vectors_csv(args.out, {"context_baseline": base, "refined": ref})
    print(f"separation: baseline {separation_statistic(base):.3f}, refined {separation_statistic(ref):.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    run()
