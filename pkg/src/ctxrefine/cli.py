"""Command line entry point: ``ctxrefine {refine,eval,inspect,selfcheck}``.

Settings resolve as flags > ``--config`` JSON file > built-in defaults, and
the resolved configuration is written next to every output.
"""
import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import checks
from .corpus import TOP_ASPECTS, filter_top_aspects, load_sentihood, split_sentences
from .embeddings import DEFAULT_DIM, parse_embedding_file
from .errors import InputError, NumericalDivergenceError, UndefinedMetricError
from .harness import (MODES, TrainConfig, VectorSource, build_dataset, evaluate,
                      report_from_predictions, separation_populations, separation_statistic, train)
from .metrics import EvalReport, render_table
from .parallel import default_workers
from .refiner import (RefinerConfig, read_refined, refine_corpus, refine_pair, to_record,
                      write_records)
from .synthetic import SyntheticConfig, generate_synthetic, load_synthetic_config, synthetic_embeddings

log = logging.getLogger("ctxrefine")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DIVERGENCE, EXIT_UNDEFINED = 0, 1, 2, 3, 4


@dataclass
class RunConfig:
    glove: str = None
    dim: int = DEFAULT_DIM
    data: str = None
    synthetic: str = None  # path, or "" for the built-in synthetic defaults
    c: int = 4
    alpha: float = 1.0
    beta: float = 0.5
    lam: float = 0.01
    lr: float = 0.05
    max_iters: int = 200
    seed: int = 0
    seeds: int = 1
    epochs: int = TrainConfig.epochs
    workers: int = None
    out: str = "runs/latest"
    refined: str = None
    refine_inline: bool = False

    def refiner_config(self, offset=0):
        return RefinerConfig(c=self.c, alpha=self.alpha, beta=self.beta, lam=self.lam,
                             learning_rate=self.lr, max_iters=self.max_iters, seed=self.seed + offset)

    def to_dict(self):
        return asdict(self)


def resolve_config(args):
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                values.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot load config {args.config}: {exc}") from exc
    names = {f.name for f in fields(RunConfig)}
    unknown = set(values) - names
    if unknown:
        raise InputError(f"unknown config keys {sorted(unknown)}")
    for name in names:
        val = getattr(args, name, None)
        if val is not None:
            values[name] = val
    rc = RunConfig(**values)
    if rc.workers is None:
        rc.workers = default_workers()
    return rc


@dataclass
class Inputs:
    sentences: list
    table: object
    aspects: tuple
    source: str
    rejected: int = 0


def load_inputs(rc, offset=0):
    """Corpus, embedding table and aspect set for sweep index ``offset``."""
    if rc.synthetic is None and rc.data is None:
        raise InputError("one of --data or --synthetic is required")
    if rc.synthetic is not None and rc.data is not None:
        raise InputError("--data and --synthetic are mutually exclusive")
    table_seed = rc.seed + offset
    if rc.synthetic is not None:
        syn = load_synthetic_config(rc.synthetic) if rc.synthetic else SyntheticConfig()
        syn = replace(syn, seed=syn.seed + offset)
        if rc.glove:
            table = parse_embedding_file(rc.glove, rc.dim, seed=table_seed)
        else:
            table = synthetic_embeddings(syn, table_seed=table_seed)
        return Inputs(generate_synthetic(syn), table, tuple(syn.aspects), "synthetic")
    if not rc.glove:
        raise InputError("--glove is required with --data")
    if not os.path.exists(rc.data):
        raise InputError(f"data path {rc.data} does not exist")
    table = parse_embedding_file(rc.glove, rc.dim, seed=table_seed)
    sentences, errors = load_sentihood(rc.data)
    for err in errors:
        log.warning("rejected record %s: %s", err.record_id, err.message)
    return Inputs(filter_top_aspects(sentences, TOP_ASPECTS), table, TOP_ASPECTS, "sentihood",
                  rejected=len(errors))


def _atomic_write(path, text):
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_config(rc, name="config.json"):
    _atomic_write(os.path.join(rc.out, name), json.dumps(rc.to_dict(), sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------- refine

def run_refine(rc):
    inputs = load_inputs(rc)
    cfg = rc.refiner_config()
    errors = []
    results = refine_corpus(inputs.sentences, inputs.table, inputs.aspects, cfg,
                            workers=rc.workers, errors=errors)
    records = [to_record(sid, tid, a, res) for (sid, tid, a), res in results.items()]
    n = len(records)
    summary = {
        "records": n,
        "errors": len(errors),
        "convergence_rate": sum(r["converged"] for r in records) / n if n else None,
        "mean_iterations": float(np.mean([r["iterations"] for r in records])) if n else None,
        "mean_k": float(np.mean([r["k"] for r in records])) if n else None,
    }
    os.makedirs(rc.out, exist_ok=True)
    path = os.path.join(rc.out, "refined.jsonl")
    fd, tmp = tempfile.mkstemp(dir=rc.out, prefix=".tmp-")
    os.close(fd)
    write_records(tmp, records)
    os.replace(tmp, path)
    if errors:
        _atomic_write(os.path.join(rc.out, "refine_errors.log"),
                      "".join(f"{e}\n" for e in errors))
    write_config(rc)
    _atomic_write(os.path.join(rc.out, "refine_summary.json"), json.dumps(summary, indent=2) + "\n")
    return summary, errors


# ---------------------------------------------------------------- eval

def _comparison(rc, inputs, refined, offset, predictor=None):
    split, split_kind = split_sentences(inputs.sentences, rc.seed + offset)
    tcfg = TrainConfig(epochs=rc.epochs, seed=rc.seed + offset)
    reports = {}
    for mode in MODES:
        source = VectorSource(inputs.table, mode, refined)
        meta = {"split": split_kind, "seed": rc.seed + offset}
        if predictor is not None:
            items, feats = build_dataset(split["test"], inputs.aspects, source)
            probs = predictor(items, feats, mode)
            reports[mode] = report_from_predictions(items, probs, inputs.aspects, {"mode": mode, **meta})
            continue
        items, feats = build_dataset(split["train"], inputs.aspects, source)
        model = train(list(zip(feats, [g for *_, g in items])), tcfg)
        reports[mode] = evaluate(model, split["test"], inputs.aspects, source, meta)
    base, ref = separation_populations(inputs.sentences, inputs.aspects, inputs.table, refined, rc.alpha)
    return {
        "seed": rc.seed + offset,
        "raw": reports["raw"].to_dict(),
        "refined": reports["refined"].to_dict(),
        "delta": _delta(reports["raw"], reports["refined"]),
        "separation": {"context_baseline": separation_statistic(base),
                       "refined": separation_statistic(ref)},
    }


def _delta(raw, refined):
    out = {}
    for name in EvalReport.METRICS:
        a, b = getattr(raw, name), getattr(refined, name)
        out[name] = None if a is None or b is None else b - a
    return out


def _summarize(runs):
    summary = {}
    for block in ("raw", "refined", "delta"):
        summary[block] = {}
        for name in EvalReport.METRICS:
            vals = [r[block][name] for r in runs if r[block][name] is not None]
            summary[block][name] = ({"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
                                    if vals else None)
    summary["separation_refined_wins"] = sum(
        r["separation"]["refined"] > r["separation"]["context_baseline"] for r in runs)
    return summary


def run_eval(rc, predictor=None):
    """Train and evaluate raw vs refined for each sweep seed.

    ``predictor(items, feats, mode) -> probs`` replaces the trained
    classifier when given (used to inject oracle predictions in tests).
    """
    if not rc.refined and not rc.refine_inline:
        raise InputError("eval needs --refined FILE or --refine-inline")
    if rc.refined and rc.seeds > 1:
        raise InputError("a precomputed --refined file cannot serve a multi-seed sweep")
    runs = []
    for offset in range(rc.seeds):
        inputs = load_inputs(rc, offset)
        if rc.refined:
            refined = read_refined(rc.refined)
        else:
            refined = refine_corpus(inputs.sentences, inputs.table, inputs.aspects,
                                    rc.refiner_config(offset), workers=rc.workers)
        runs.append(_comparison(rc, inputs, refined, offset, predictor))
    result = {"runs": runs, "summary": _summarize(runs)}
    text = json.dumps(result, sort_keys=True, indent=2, default=_json_default) + "\n"
    _atomic_write(os.path.join(rc.out, "eval_report.json"), text)
    write_config(rc)
    return result


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def render_eval(result):
    lines = []
    for run in result["runs"]:
        raw, ref = EvalReport.from_dict(run["raw"]), EvalReport.from_dict(run["refined"])
        lines.append(f"seed {run['seed']}")
        lines.append(render_table([("raw", raw), ("RE (refined)", ref)]))
        d = run["delta"]["aspect_macro_f1"]
        lines.append(f"aspect macro-F1 delta (refined - raw): {100 * d:+.2f} points")
        sep = run["separation"]
        lines.append(f"aspect separation: refined {sep['refined']:.3f} vs context baseline "
                     f"{sep['context_baseline']:.3f}")
        lines.append("")
    if len(result["runs"]) > 1:
        s = result["summary"]
        lines.append(f"mean over {len(result['runs'])} seeds")
        for block in ("raw", "refined", "delta"):
            cells = []
            for name in EvalReport.METRICS:
                v = s[block][name]
                if v is None:
                    cells.append(f"{name}=---")
                elif block == "delta":
                    cells.append(f"{name}={100 * v['mean']:+.2f}±{100 * v['std']:.2f}")
                else:
                    cells.append(f"{name}={100 * v['mean']:.1f}±{100 * v['std']:.1f}")
            lines.append(f"  {block:8s} " + "  ".join(cells))
        lines.append(f"  separation: refined > baseline on {s['separation_refined_wins']} of "
                     f"{len(result['runs'])} seeds")
    return "\n".join(lines)


# ---------------------------------------------------------------- inspect

def run_inspect(rc, sentence_id, target, aspect):
    inputs = load_inputs(rc)
    by_id = {s.id: s for s in inputs.sentences}
    if sentence_id not in by_id:
        raise InputError(f"unknown sentence id {sentence_id!r}")
    sentence = by_id[sentence_id]
    if target is None:
        target = sentence.targets[0]
    if aspect is None:
        aspect = inputs.aspects[0]
    if target not in sentence.target_positions:
        raise InputError(f"sentence {sentence_id} has no target {target!r}")
    res = refine_pair(sentence, target, aspect, inputs.table, rc.refiner_config(), trace=True)
    paths = {}
    for name, path in (("target", res.target_path), ("aspect", res.aspect_path)):
        paths[name] = {
            "u": path.state.u.tolist(),
            "u_sparse": path.state.u_sparse.tolist(),
            "selected": [tok for tok, v in zip(sentence.tokens, path.state.u_sparse) if v != 0.0],
            "loss_curve": path.history,
            "k": path.state.k,
            "iterations": path.iterations,
            "converged": path.converged,
        }
    return {
        "sentence_id": sentence.id,
        "target": target,
        "aspect": aspect,
        "gold": sentence.gold(target, aspect),
        "tokens": list(sentence.tokens),
        "paths": paths,
        "norms": {"t": float(np.linalg.norm(inputs.table.target(target))),
                  "t_refined": float(np.linalg.norm(res.refined_target)),
                  "a_refined": float(np.linalg.norm(res.refined_aspect))},
    }


def render_inspect(trace):
    lines = [f"sentence {trace['sentence_id']}  target {trace['target']}  aspect {trace['aspect']}  "
             f"gold {trace['gold']}"]
    tp, ap = trace["paths"]["target"], trace["paths"]["aspect"]
    lines.append(f"{'token':>16} {'u(t)':>8} {'u_(t)':>8} {'u(a)':>8} {'u_(a)':>8}")
    for i, tok in enumerate(trace["tokens"]):
        lines.append(f"{tok:>16} {tp['u'][i]:8.4f} {tp['u_sparse'][i]:8.4f} "
                     f"{ap['u'][i]:8.4f} {ap['u_sparse'][i]:8.4f}")
    for name, p in (("target", tp), ("aspect", ap)):
        status = "converged" if p["converged"] else "not converged"
        lines.append(f"{name}: k={p['k']} {status} at iteration {p['iterations']}; "
                     f"selected {p['selected']}")
        lines.append(f"  loss curve: {' '.join(f'{v:.5f}' for v in p['loss_curve'])}")
    n = trace["norms"]
    lines.append(f"norms: |t|={n['t']:.4f} |t~|={n['t_refined']:.4f} |a~|={n['a_refined']:.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("inputs")
    g.add_argument("--config", help="JSON file with RunConfig keys")
    g.add_argument("--glove", help="GloVe text embedding file")
    g.add_argument("--dim", type=int, help=f"embedding dimension (default {DEFAULT_DIM})")
    g.add_argument("--data", help="SentiHood JSON file or directory")
    g.add_argument("--synthetic", nargs="?", const="", metavar="CFG",
                   help="use the synthetic corpus, optionally with a key=value config file")
    r = common.add_argument_group("refiner")
    r.add_argument("--c", type=int, help="stop once at most c coefficients survive (default 4)")
    r.add_argument("--alpha", type=float, help="context weight in the aspect update (default 1)")
    r.add_argument("--beta", type=float, help="repulsion from the other target (default 0.5)")
    r.add_argument("--lambda", dest="lam", type=float, help="sparsity penalty (default 0.01)")
    r.add_argument("--lr", type=float, help="gradient descent step (default 0.05)")
    r.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap (default 200)")
    o = common.add_argument_group("run")
    o.add_argument("--seed", type=int)
    o.add_argument("--workers", type=int, help="parallel width (default: available cores)")
    o.add_argument("--out", help="output directory (default runs/latest)")
    o.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    o.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctxrefine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("refine", parents=[common], help="refine target/aspect embeddings over a corpus")
    ev = sub.add_parser("eval", parents=[common], help="compare raw vs refined embeddings downstream")
    ev.add_argument("--refined", help="refined.jsonl produced by `refine`")
    ev.add_argument("--refine-inline", dest="refine_inline", action="store_const", const=True,
                    help="refine in the same process instead of reading --refined")
    ev.add_argument("--seeds", type=int, help="number of consecutive seeds to sweep (default 1)")
    ev.add_argument("--epochs", type=int, help="classifier training epochs")
    ins = sub.add_parser("inspect", parents=[common], help="trace one (sentence, target, aspect)")
    ins.add_argument("sentence_id", nargs="?")
    ins.add_argument("--sentence", dest="sentence_opt", metavar="ID",
                     help="sentence id (alternative to the positional, safe after a bare --synthetic)")
    ins.add_argument("--target")
    ins.add_argument("--aspect")
    sub.add_parser("selfcheck", parents=[common], help="run the invariant suites")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except UndefinedMetricError as exc:
        print(f"undefined metric: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED


def _dispatch(args):
    if args.command == "selfcheck":
        results = checks.run_all(seed=args.seed or 0)
        if args.json:
            print(json.dumps([asdict(r) for r in results], indent=2))
        else:
            for r in results:
                print(r.line())
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL
    rc = resolve_config(args)
    if args.command == "refine":
        summary, errors = run_refine(rc)
        if args.json:
            print(json.dumps(summary, indent=2))
        else:
            print(f"wrote {summary['records']} records to {os.path.join(rc.out, 'refined.jsonl')}")
            if summary["records"]:
                print(f"convergence rate {summary['convergence_rate']:.3f}, mean iterations "
                      f"{summary['mean_iterations']:.2f}, mean k {summary['mean_k']:.2f}")
        if errors:
            print(f"{len(errors)} items failed, see refine_errors.log", file=sys.stderr)
            return EXIT_DIVERGENCE
        return EXIT_OK
    if args.command == "eval":
        result = run_eval(rc)
        print(json.dumps(result, sort_keys=True, indent=2, default=_json_default)
              if args.json else render_eval(result))
        return EXIT_OK
    if args.command == "inspect":
        sentence_id = args.sentence_opt or args.sentence_id
        if sentence_id is None:
            raise InputError("inspect needs a sentence id")
        trace = run_inspect(rc, sentence_id, args.target, args.aspect)
        print(json.dumps(trace, indent=2) if args.json else render_inspect(trace))
        return EXIT_OK
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
