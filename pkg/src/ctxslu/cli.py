"""Command-line entry point: synth | train | eval | ablate.

Every run resolves its full configuration (flags over an optional key=value
config file over defaults), logs it next to its outputs, and derives all
randomness from the single --seed flag, so identical invocations produce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from .context import mean_role_attention
from .corpus import ALL, LabelVocab, SynthSpec, corpus_vocab, generate_synthetic, \
    load_corpus, load_embeddings, split_sessions, write_corpus
from .model import Model, ModelConfig, load_checkpoint, resolve_variant, \
    save_checkpoint
from .training import TrainConfig, train


class UsageError(Exception):
    category = "usage"


class DataError(Exception):
    category = "data"


def _parse_window(s: str):
    if s == "all":
        return ALL
    n = int(s)
    if n < 1:
        raise UsageError("--window must be >= 1 or 'all'")
    return n


def _read_config_file(path) -> dict:
    cfg = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            cfg[key.replace("-", "_")] = val
    return cfg


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Config file values fill in flags the user left at their defaults.

    The resolved values are written back onto ``args`` so command handlers
    see them, and returned as a dict for logging.
    """
    resolved = vars(args).copy()
    resolved.pop("func", None)
    cfg_path = resolved.pop("config", None)
    if cfg_path:
        file_cfg = _read_config_file(cfg_path)
        actions = list(parser._actions)
        for a in parser._actions:
            if isinstance(a, argparse._SubParsersAction):
                actions.extend(a.choices[args.command]._actions)
        defaults = {a.dest: a.default for a in actions}
        for key, raw in file_cfg.items():
            if key not in resolved:
                raise UsageError(f"config file: unknown key {key!r}")
            if resolved[key] == defaults.get(key):
                cur = defaults[key]
                if isinstance(cur, bool):
                    resolved[key] = raw.lower() in ("1", "true", "yes")
                elif isinstance(cur, int):
                    resolved[key] = int(raw)
                elif isinstance(cur, float):
                    resolved[key] = float(raw)
                else:
                    resolved[key] = raw
                setattr(args, key, resolved[key])
    return resolved


def _log_resolved(resolved: dict, out_dir: str, name: str):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    safe = {k: (v if isinstance(v, (str, int, float, bool, list, type(None)))
                else str(v)) for k, v in resolved.items()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(safe, f, indent=2, sort_keys=True)


# -- synth ----------------------------------------------------------------------

def cmd_synth(args, parser):
    resolved = _resolve(args, parser)
    spec = SynthSpec.from_file(args.spec) if args.spec else SynthSpec()
    if args.rule:
        spec.rule = args.rule
    if args.r2_role:
        spec.r2_role = args.r2_role
    sessions, meta = generate_synthetic(spec, args.seed)
    tr, dev, te = split_sessions(sessions)
    os.makedirs(args.out, exist_ok=True)
    for name, part in (("train", tr), ("dev", dev), ("test", te)):
        write_corpus(part, os.path.join(args.out, f"{name}.jsonl"))
    with open(os.path.join(args.out, "rule_meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    _log_resolved(resolved, args.out, "resolved_config.json")
    print(f"wrote {len(tr)}/{len(dev)}/{len(te)} train/dev/test sessions to {args.out}")
    return 0


# -- train ----------------------------------------------------------------------

def _model_config(args, vocab: LabelVocab) -> ModelConfig:
    try:
        vid = resolve_variant(args.variant)
    except ValueError as e:
        raise UsageError(str(e))
    if args.no_context and vid != "c":
        raise UsageError(f"--no-context conflicts with variant {args.variant!r}")
    cfg = ModelConfig.for_variant(
        vid,
        embed_dim=args.embed_dim,
        hidden=args.hidden,
        num_labels=vocab.num_labels,
        annotation_dim=vocab.annotation_dim,
    )
    cfg.attention.role_time_aggregator = args.role_time_agg
    cfg.validate()
    return cfg


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch, epochs=args.epochs,
                       learning_rate=args.lr, seed=args.seed,
                       window=_parse_window(args.window))


def _load_split(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} corpus not found: {path}")
    return load_corpus(path)


def cmd_train(args, parser):
    resolved = _resolve(args, parser)
    tr = _load_split(args.train, "train")
    dev = _load_split(args.dev, "dev")
    vocab = LabelVocab.build(tr)
    model_cfg = _model_config(args, vocab)
    train_cfg = _train_config(args)
    words = corpus_vocab(tr) | corpus_vocab(dev)
    embeddings = load_embeddings(args.embeddings, words,
                                 dimension=args.embed_dim, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    _log_resolved(resolved, args.out, "resolved_config.json")
    model, _ = train(tr, dev, model_cfg, train_cfg, vocab, embeddings,
                     metric_log_path=os.path.join(args.out, "metrics.jsonl"),
                     progress=lambda rec: print(
                         f"epoch {rec['epoch']}: loss {rec['train_loss']:.4f} "
                         f"dev-f1 {rec['dev_f1_all']}", flush=True))
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), model,
                    vocab, embeddings)
    print(f"checkpoint written to {os.path.join(args.out, 'checkpoint.json')}")
    return 0


# -- eval -----------------------------------------------------------------------

def cmd_eval(args, parser):
    resolved = _resolve(args, parser)
    model, vocab, embeddings = load_checkpoint(args.checkpoint)
    sessions = _load_split(args.test, "test")
    test_vocab = LabelVocab.build(sessions)
    unseen = set(test_vocab.labels) - set(vocab.labels)
    if unseen and not set(vocab.labels) & set(test_vocab.labels):
        raise DataError("checkpoint and corpus share no labels: vocab mismatch")
    contexts = list(corpus_mod.iter_contexts(
        sessions, window=_parse_window(args.window),
        own_role=args.own_role_history))
    records = eval_mod.evaluate(model, contexts, vocab, embeddings)
    result = {split: eval_mod.corpus_f1(records, split)
              for split in ("tourist", "guide", "all")}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _log_resolved(resolved, args.out, "resolved_config.json")
        with open(os.path.join(args.out, "metrics.json"), "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
        if args.dump_attention or args.dump_records:
            eval_mod.dump_records(records, os.path.join(args.out, "records.jsonl"))
    if args.role_attention_report:
        if not model.config.attention.role_active:
            raise UsageError("--role-attention-report needs a role-level "
                             "attention variant")
        table = mean_role_attention(records)
        result["role_attention"] = table
    if args.format == "json":
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print(f"F1 tourist {result['tourist']:.2f}  guide {result['guide']:.2f}  "
              f"all {result['all']:.2f}")
        if "role_attention" in result:
            for task, w in result["role_attention"].items():
                print(f"{task} understanding: tourist-context {w['tourist']:.3f} "
                      f"guide-context {w['guide']:.3f}")
    return 0


# -- ablate ----------------------------------------------------------------------

def _cell_hook(out_dir):
    cells = os.path.join(out_dir, "cells")
    os.makedirs(cells, exist_ok=True)

    def hook(op, vid, seed, result=None):
        path = os.path.join(cells, f"{vid}_{seed}.json")
        if op == "load":
            if os.path.exists(path):
                with open(path) as f:
                    return json.load(f)
            return None
        slim = {k: result[k] for k in
                ("f1_tourist", "f1_guide", "f1_all", "per_utterance_f1")}
        with open(path, "w") as f:
            json.dump(slim, f, sort_keys=True)

    return hook


def cmd_ablate(args, parser):
    resolved = _resolve(args, parser)
    tr = _load_split(args.train, "train")
    dev = _load_split(args.dev, "dev")
    te = _load_split(args.test, "test")
    try:
        variants = [resolve_variant(v.strip())
                    for v in args.variants.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(str(e))
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    _log_resolved(resolved, args.out, "resolved_config.json")
    train_cfg = TrainConfig(batch_size=args.batch, epochs=args.epochs,
                            learning_rate=args.lr,
                            window=_parse_window(args.window))
    overrides = dict(embed_dim=args.embed_dim, hidden=args.hidden)
    hook = _cell_hook(args.out) if args.resume else None
    rows, failures = eval_mod.run_ablation(
        tr, dev, te, variants, seeds, overrides, train_cfg,
        cell_hook=hook,
        progress=lambda v, s, r: print(f"variant {v} seed {s}: "
                                       f"all-F1 {r['f1_all']:.2f}", flush=True))
    table = eval_mod.format_table(rows, args.format)
    print(table)
    with open(os.path.join(args.out, "table.txt"), "w") as f:
        f.write(eval_mod.format_table(rows, "text") + "\n")
    with open(os.path.join(args.out, "table.json"), "w") as f:
        f.write(eval_mod.format_table(rows, "json") + "\n")
    if failures:
        print(f"failures: {json.dumps(failures)}", file=sys.stderr)
        return 3
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxslu",
        description="Contextual SLU with role- and time-aware attention")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file; flags override")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--format", choices=("text", "json"), default="text")

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p_synth)
    p_synth.add_argument("--spec", help="synthetic-spec key=value file")
    p_synth.add_argument("--rule", choices=corpus_mod.RULE_FAMILIES)
    p_synth.add_argument("--r2-role", dest="r2_role",
                         choices=("tourist", "guide", "self"))
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    def train_flags(p, with_variant=True):
        p.add_argument("--train", required=True)
        p.add_argument("--dev", required=True)
        p.add_argument("--hidden", type=int, default=128)
        p.add_argument("--embed-dim", dest="embed_dim", type=int, default=200)
        p.add_argument("--embeddings", help="pretrained embedding text file")
        p.add_argument("--batch", type=int, default=256)
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--window", default="all")
        p.add_argument("--role-time-agg", dest="role_time_agg",
                       choices=("min", "avg"), default="min")

    p_train = sub.add_parser("train", help="train one variant")
    common(p_train)
    train_flags(p_train)
    p_train.add_argument("--variant", default="e",
                         help="variant id c..n or named alias")
    p_train.add_argument("--no-context", dest="no_context", action="store_true")
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--test", required=True)
    p_eval.add_argument("--window", default="all")
    p_eval.add_argument("--own-role-history", action="store_true",
                        help="restrict history to the current speaker's role")
    p_eval.add_argument("--dump-attention", dest="dump_attention",
                        action="store_true")
    p_eval.add_argument("--dump-records", dest="dump_records", action="store_true")
    p_eval.add_argument("--role-attention-report", dest="role_attention_report",
                        action="store_true")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="run the variant matrix")
    common(p_abl)
    train_flags(p_abl)
    p_abl.add_argument("--test", required=True)
    p_abl.add_argument("--variants", default=",".join("cdefghijklmn"))
    p_abl.add_argument("--seeds", default="1,2,3,4,5")
    p_abl.add_argument("--resume", action="store_true")
    p_abl.add_argument("--jobs", type=int, default=1,
                       help="reserved; rows currently run sequentially")
    p_abl.add_argument("--out", required=True)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except UsageError as e:
        print(f"usage: {e}", file=sys.stderr)
        return 2
    except (DataError, corpus_mod.CorpusError) as e:
        print(f"data: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"numeric: {e}", file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f"data: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
