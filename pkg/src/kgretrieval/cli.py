"""Command-line entry points: gen-data, extract, train, eval."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .kg import save_graph
from .model import FUSION_MODES, EncoderConfig
from .synthdata import generate_dataset, write_dataset
from .text import load_noun_lexicon, load_plural_exceptions, load_vocab_tokens, vocab_from_tokens
from .train import (
    KNOWLEDGE_SOURCES,
    RunConfig,
    TrainingDiverged,
    evaluate_run,
    export_eval_artifacts,
    extract_corpus,
    load_checkpoint,
    load_config,
    load_knowledge_graph,
    packaged_data,
    train_run,
)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="dataset", help="dataset directory with manifest.json")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--kg", default=None, help="domain knowledge graph TSV (default: shipped)")
    p.add_argument("--conceptnet", default=None, help="commonsense graph TSV (default: shipped)")
    p.add_argument("--source", default="combined", choices=KNOWLEDGE_SOURCES)
    p.add_argument("--m", type=int, default=5, help="max triplets per caption")
    p.add_argument("--strategy", default="random", choices=["random", "relevance", "diversity"])
    p.add_argument("--seed", type=int, default=0)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fusion", default="cross_attention", choices=list(FUSION_MODES))
    p.add_argument("--w1", type=float, default=1.0, help="contrastive loss weight")
    p.add_argument("--w2", type=float, default=1.0, help="matching loss weight")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--d-proj", type=int, default=32)


def _run_config(args, **overrides) -> RunConfig:
    base = dict(
        data_dir=args.data,
        out_dir=args.out,
        kg_path=args.kg,
        conceptnet_path=args.conceptnet,
        knowledge_source=args.source,
        m=args.m,
        strategy=args.strategy,
        seed=args.seed,
    )
    base.update(overrides)
    return RunConfig(**base)


def cmd_gen_data(args) -> int:
    manifest, images, mini_kg = generate_dataset(args.n, args.seed, args.omit)
    out = Path(args.out)
    write_dataset(manifest, images, out)
    save_graph(mini_kg, out / "mini_kg.tsv")
    print(f"wrote {len(manifest.entries)} images and mini_kg.tsv to {out}")
    return 0


def cmd_extract(args) -> int:
    run = _run_config(args)
    cfg = EncoderConfig()
    out_path = Path(args.out)
    if out_path.suffix != ".jsonl":
        out_path = out_path / "knowledge.jsonl"
    n = extract_corpus(run, cfg, out_path)
    print(f"wrote {n} records to {out_path}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(
        args,
        w1=args.w1,
        w2=args.w2,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
    )
    cfg = EncoderConfig(
        d_model=args.d_model,
        n_heads=args.n_heads,
        n_layers=args.n_layers,
        d_proj=args.d_proj,
        fusion_mode=args.fusion,
    )
    result = train_run(run, cfg)
    last = result["log"][-1]
    print(
        f"trained {result['steps']} steps; final total loss {last['total']}"
        f" -> {result['checkpoint']}"
    )
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    run, cfg = load_config(run_dir / "config.cfg")
    if args.data:
        run.data_dir = args.data
    run.out_dir = args.out or str(run_dir)
    run.export_sim = args.export_sim
    if args.top_k is not None:
        run.top_k = args.top_k

    tokens = load_vocab_tokens(run_dir / "vocab.txt")
    graph = load_knowledge_graph(run)
    nouns = load_noun_lexicon(packaged_data("nouns.txt"))
    if graph is not None:
        nouns |= graph.objects
    vocab = vocab_from_tokens(
        tokens, nouns, load_plural_exceptions(packaged_data("plural_exceptions.tsv"))
    )
    params, _ = load_checkpoint(run_dir / "checkpoint.ktir", cfg, len(vocab))
    result = evaluate_run(run, cfg, params, split=args.split, graph=graph, vocab=vocab)
    written = export_eval_artifacts(result, run.out_dir, run)
    print(result["metrics"].to_json())
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgretrieval",
        description="Knowledge-graph-expanded text-image retrieval toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic scene corpus")
    p.add_argument("--out", default="dataset")
    p.add_argument("--n", type=int, default=300, help="number of images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--omit", type=float, default=0.5, help="per-caption object omission probability")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract", help="dump keywords/triplets/knowledge sentences as JSONL")
    _add_run_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the retrieval model")
    _add_run_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run directory")
    p.add_argument("--run", required=True, help="run directory (checkpoint, config, vocab)")
    p.add_argument("--data", default=None, help="override dataset directory")
    p.add_argument("--out", default=None, help="output directory (default: run dir)")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--export-sim", action="store_true", help="write similarity CSV artifacts")
    p.add_argument("--top-k", type=int, default=None, help="match-head shortlist size (0 = dense)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
