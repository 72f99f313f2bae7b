"""Command-line entry point.

Subcommands: synth, validate, build-supervision, train, eval,
inspect-attention, bench. Every command writes a run manifest before any
long-running work. Exit codes are a fixed contract: 0 success, 1 usage,
2 data validation, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .config import ModelConfig, TrainConfig, load_config, save_config
from .data import (
    CorpusError,
    Vocabulary,
    filter_training,
    load_stopwords,
    read_corpus,
    synth_generate,
    write_corpus,
)
from .decode import agreement, evaluate
from .model import Model
from .objective import target_mass
from .supervision import SUPERVISION_KINDS, build
from .train import multi_seed

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def write_manifest(target, command: str, options: dict):
    """Record enough to reproduce the run, before doing any work."""
    target = Path(target)
    if target.suffix:
        path = target.with_name(target.name + ".manifest.json")
        target.parent.mkdir(parents=True, exist_ok=True)
    else:
        target.mkdir(parents=True, exist_ok=True)
        path = target / "manifest.json"
    manifest = {
        "command": command,
        "options": {k: v for k, v in sorted(options.items())},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_corpus_or_die(path, what: str):
    instances, errors = read_corpus(path)
    for e in errors[:10]:
        print(f"{what}: {e}", file=sys.stderr)
    if errors:
        print(f"{what}: rejected {len(errors)} malformed line(s)", file=sys.stderr)
    if not instances:
        raise CorpusError(f"{what}: no valid instances in {path}")
    return instances


def _parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise UsageError(f"bad seed list {text!r}; expected e.g. 1,2,3")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    write_manifest(args.out, "synth", {"count": args.count, "seed": args.seed,
                                       "out": str(args.out)})
    instances = synth_generate(args.count, args.seed)
    write_corpus(args.out, instances)
    print(f"wrote {len(instances)} instances to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    instances, errors = read_corpus(args.data)
    for e in errors:
        print(e, file=sys.stderr)
    print(f"{len(instances)} valid instance(s), {len(errors)} rejected line(s)")
    return EXIT_OK if not errors else EXIT_DATA


def cmd_build_supervision(args) -> int:
    kinds = [k.strip() for k in args.type.split(",")]
    for kind in kinds:
        if kind not in SUPERVISION_KINDS:
            raise UsageError(
                f"unknown supervision type {kind!r}; expected one of"
                f" {', '.join(SUPERVISION_KINDS)}"
            )
    write_manifest(args.out, "build-supervision",
                   {"data": str(args.data), "type": args.type, "out": str(args.out)})
    instances = _load_corpus_or_die(args.data, "build-supervision")
    skipped = 0
    stats = {kind: {"k": [], "targets": []} for kind in kinds}
    with open(args.out, "w") as fh:
        for inst in instances:
            for kind in kinds:
                try:
                    mat = build(kind, inst.annotation)
                except Exception as e:  # annotation defect: skip and report
                    skipped += 1
                    print(f"{inst.id}: {kind}: {e}", file=sys.stderr)
                    continue
                record = {"id": inst.id}
                record.update(mat.to_obj())
                fh.write(json.dumps(record, sort_keys=True))
                fh.write("\n")
                stats[kind]["k"].append(mat.k)
                targets = [len(cols) for cols in mat.rows.values()]
                stats[kind]["targets"].extend(targets or [0])
    for kind in kinds:
        ks = stats[kind]["k"]
        ts = stats[kind]["targets"]
        print(
            f"{kind}: {len(ks)} matrices, mean k {np.mean(ks):.2f},"
            f" mean targets/supervised row {np.mean(ts):.2f}"
        )
    if skipped:
        print(f"skipped {skipped} matrices", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    out_dir = Path(args.out)
    write_manifest(out_dir, "train", {
        "config": str(args.config), "train": str(args.train), "dev": str(args.dev),
        "test": str(args.test) if args.test else None,
        "seeds": seeds, "out": str(out_dir), "no_filter": args.no_filter,
    })
    train_instances = _load_corpus_or_die(args.train, "train corpus")
    dev_instances = _load_corpus_or_die(args.dev, "dev corpus")
    test_instances = _load_corpus_or_die(args.test, "test corpus") if args.test else None
    if not args.no_filter:
        stop = load_stopwords(args.stopwords)
        before = len(train_instances)
        train_instances = filter_training(train_instances, stop)
        print(f"training filter kept {len(train_instances)}/{before} instances")
        if not train_instances:
            raise CorpusError("no training instances left after filtering")
    vocab = Vocabulary.build(train_instances, min_count=args.min_count)
    vocab.save(out_dir / "vocab.json")
    save_config(out_dir / "config.json", model_cfg, train_cfg)
    summary, results = multi_seed(
        train_instances, dev_instances, vocab, model_cfg, train_cfg,
        seeds, out_dir, test_instances=test_instances, log=print,
    )
    summary["runs"] = [
        {
            "seed": r.seed, "epochs_run": r.epochs_run, "best_epoch": r.best_epoch,
            "best_dev_accuracy": r.best_dev_accuracy, "stopped_early": r.stopped_early,
            "aborted": r.aborted, "checkpoint_ema": r.checkpoint_ema,
            "checkpoint_raw": r.checkpoint_raw, "metrics": r.metrics_path,
        }
        for r in results
    ]
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if summary["mean"] is None:
        print("all runs aborted", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"accuracy mean {summary['mean']:.4f} max {summary['max']:.4f}"
          f" std {summary['std']:.4f} over {len(summary['accuracies'])} run(s)")
    return EXIT_OK


def _load_model(args) -> tuple[Model, Vocabulary, ModelConfig]:
    model_cfg, _ = load_config(args.config)
    vocab = Vocabulary.load(args.vocab)
    model = Model(model_cfg, vocab.size, vocab.char_size, seed=0)
    model.store.load(args.checkpoint)
    return model, vocab, model_cfg


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    write_manifest(out_dir, "eval", {
        "config": str(args.config), "vocab": str(args.vocab),
        "checkpoint": str(args.checkpoint), "data": str(args.data),
        "subsets": args.subsets, "agree": str(args.agree) if args.agree else None,
        "out": str(out_dir),
    })
    model, vocab, _ = _load_model(args)
    instances = _load_corpus_or_die(args.data, "eval corpus")
    subsets = tuple(s for s in (args.subsets or "").split(",") if s)
    report, preds = evaluate(model, instances, vocab, subsets=subsets)
    with open(out_dir / "predictions.jsonl", "w") as fh:
        for inst, p in zip(instances, preds):
            fh.write(json.dumps(
                {"id": inst.id, "predicted": p.predicted_word,
                 "summed_prob": p.summed_prob}, sort_keys=True))
            fh.write("\n")
    with open(out_dir / "report.txt", "w") as fh:
        fh.write(report.to_text())
        fh.write("\n")
    summary = report.to_obj()
    if args.agree:
        with open(args.agree) as fh:
            other = [json.loads(line)["predicted"] for line in fh if line.strip()]
        frac = agreement([p.predicted_word for p in preds], other)
        summary["agreement"] = frac
        print(f"agreement with {args.agree}: {frac:.4f}")
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.to_text())
    return EXIT_OK


def cmd_inspect_attention(args) -> int:
    write_manifest(args.out, "inspect-attention", {
        "config": str(args.config), "vocab": str(args.vocab),
        "checkpoint": str(args.checkpoint), "data": str(args.data),
        "instance": args.instance, "out": str(args.out),
    })
    model, vocab, model_cfg = _load_model(args)
    instances = _load_corpus_or_die(args.data, "corpus")
    matches = [i for i in instances if i.id == args.instance]
    if not matches:
        print(f"instance {args.instance!r} not found in {args.data}", file=sys.stderr)
        return EXIT_RUNTIME
    inst = matches[0]
    from .data import make_batch

    kinds = sorted({a.kind for a in model_cfg.supervision})
    batch = make_batch([inst], vocab, kinds=tuple(kinds))
    out = model.forward(batch, mode="eval")
    n = len(inst.context_tokens)
    supervised = {(a.location, a.layer, a.head): a.kind for a in model_cfg.supervision}
    dump = {"id": inst.id, "n": n, "tokens": inst.context_tokens, "locations": {}}
    for location, layers in out.attention.items():
        loc_dump = []
        for li, heads in enumerate(layers):
            head_dump = []
            for hi, attn in enumerate(heads):
                matrix = attn.data[0, :n, :n]
                entry = {"head": hi, "matrix": [[round(v, 6) for v in row] for row in matrix]}
                kind = supervised.get((location, li, hi))
                if kind is not None:
                    mat = build(kind, inst.annotation)
                    per_row, mean = target_mass(matrix, mat)
                    entry["supervised_kind"] = kind
                    entry["target_mass"] = {
                        "rows": {str(i): round(v, 6) for i, v in sorted(per_row.items())},
                        "mean": None if mean is None else round(mean, 6),
                    }
                head_dump.append(entry)
            loc_dump.append({"layer": li, "heads": head_dump})
        dump["locations"][location] = loc_dump
    with open(args.out, "w") as fh:
        json.dump(dump, fh, sort_keys=True)
        fh.write("\n")
    print(f"wrote attention dump for {inst.id} to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    impls = kernels.implementations()
    rng = np.random.default_rng(0)
    B, T_len, H = args.batch, args.length, args.hidden
    xp = rng.normal(size=(B, T_len, 3 * H))
    u = rng.normal(size=(H, 3 * H)) * 0.1
    b = rng.normal(size=H) * 0.1
    h0 = np.zeros((B, H))
    mask = np.ones((B, T_len))
    g = rng.normal(size=(B, T_len, H))
    results = {}
    for name, fns in impls.items():
        fwd, bwd = fns["gru_seq_forward"], fns["gru_seq_backward"]
        out = fwd(xp, u, b, h0, mask, False)  # warm up / compile
        bwd(g, xp, u, mask, out[0], h0, out[1], out[2], out[3], out[4], False)
        t0 = time.perf_counter()
        for _ in range(args.reps):
            out = fwd(xp, u, b, h0, mask, False)
            bwd(g, xp, u, mask, out[0], h0, out[1], out[2], out[3], out[4], False)
        elapsed = (time.perf_counter() - t0) / args.reps
        results[name] = {"ms_per_pass": elapsed * 1000.0, "sample": out[0]}
    print(f"gru forward+backward, batch {B} x length {T_len} x hidden {H},"
          f" {args.reps} reps (active backend: {kernels.BACKEND})")
    for name, r in results.items():
        print(f"  {name:<6} {r['ms_per_pass']:8.2f} ms/pass")
    if "numba" in results and "numpy" in results:
        diff = float(np.max(np.abs(results["numba"]["sample"] - results["numpy"]["sample"])))
        speedup = results["numpy"]["ms_per_pass"] / results["numba"]["ms_per_pass"]
        print(f"  speedup {speedup:.2f}x, max |difference| {diff:.3g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="corefread",
                description="cloze reading comprehension with supervised self-attention")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("validate", help="check a corpus file against the schema")
    s.add_argument("--data", type=Path, required=True)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("build-supervision", help="write sparse supervision matrices")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--type", required=True,
                   help=f"comma-separated kinds from: {', '.join(SUPERVISION_KINDS)}")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(fn=cmd_build_supervision)

    s = sub.add_parser("train", help="train one or more seeds")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--train", type=Path, required=True)
    s.add_argument("--dev", type=Path, required=True)
    s.add_argument("--test", type=Path)
    s.add_argument("--seeds", default="1", help="comma-separated seed list")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--stopwords", type=Path, help="custom stopword file")
    s.add_argument("--no-filter", action="store_true",
                   help="skip the answer-in-context / stopword training filter")
    s.add_argument("--min-count", type=int, default=1)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--subsets", help="comma-separated: pos,entity")
    s.add_argument("--agree", type=Path, help="second predictions file to compare")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("inspect-attention", help="dump attention matrices for one instance")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--instance", required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(fn=cmd_inspect_attention)

    s = sub.add_parser("bench", help="time the GRU kernels on both backends")
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--length", type=int, default=80)
    s.add_argument("--hidden", type=int, default=100)
    s.add_argument("--reps", type=int, default=5)
    s.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # runtime failures keep the 0/1/2/3 contract
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
