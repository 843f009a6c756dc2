"""Utterance-level F1, role-split reporting, the ablation harness over the
model-variant matrix, paired-bootstrap significance, and the role-attention
analyses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import SPEAKERS, LabelVocab, iter_contexts
from .encoder import decide_labels


@dataclass
class PredictionRecord:
    session_id: str
    turn_index: int
    speaker: str
    gold: frozenset            # label indices
    predicted: frozenset       # label indices
    scores: np.ndarray
    sentence_weights: dict = None   # turn_index -> weight
    role_weights: dict = None       # role -> weight

    @property
    def f1(self) -> float:
        return utterance_f1(self.gold, self.predicted)

    def to_dict(self):
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "speaker": self.speaker,
            "gold": sorted(self.gold),
            "predicted": sorted(self.predicted),
            "scores": [float(s) for s in self.scores],
            "sentence_weights": self.sentence_weights,
            "role_weights": self.role_weights,
        }


def utterance_f1(gold, pred) -> float:
    """F1 of two label sets; both empty -> 1.0, exactly one empty -> 0.0."""
    gold, pred = set(gold), set(pred)
    if not gold and not pred:
        return 1.0
    if not gold or not pred:
        return 0.0
    tp = len(gold & pred)
    if tp == 0:
        return 0.0
    precision = tp / len(pred)
    recall = tp / len(gold)
    return 2 * precision * recall / (precision + recall)


def micro_f1(records) -> float:
    """Micro-averaged F1 over all label decisions (alternative reading)."""
    tp = sum(len(r.gold & r.predicted) for r in records)
    np_ = sum(len(r.predicted) for r in records)
    ng = sum(len(r.gold) for r in records)
    if np_ == 0 and ng == 0:
        return 100.0
    if np_ == 0 or ng == 0 or tp == 0:
        return 0.0
    p, r = tp / np_, tp / ng
    return 100.0 * 2 * p * r / (p + r)


def split_records(records, split: str):
    if split == "all":
        return list(records)
    if split not in SPEAKERS:
        raise ValueError(f"unknown split {split!r}")
    return [r for r in records if r.speaker == split]


def corpus_f1(records, split: str = "all") -> float:
    """Mean per-utterance F1 over a speaker split, as a percentage."""
    recs = split_records(records, split)
    if not recs:
        raise ValueError(f"corpus_f1: no records in split {split!r}")
    return 100.0 * float(np.mean([r.f1 for r in recs]))


def records_from_scores(scored, vocab: LabelVocab, theta: float):
    """Build PredictionRecords from (context, scores, attn) triples."""
    records = []
    for ctx, scores, attn in scored:
        gold = frozenset(k for k, v in enumerate(vocab.target_vector(ctx.current.labels))
                         if v > 0.5)
        records.append(PredictionRecord(
            session_id=ctx.current.session_id,
            turn_index=ctx.current.turn_index,
            speaker=ctx.current.speaker,
            gold=gold,
            predicted=frozenset(decide_labels(scores, theta)),
            scores=scores,
            sentence_weights=attn.get("sentence"),
            role_weights=attn.get("role"),
        ))
    return records


def score_contexts(model, contexts, vocab, embeddings):
    scored = []
    for ctx in contexts:
        scores, attn = model.forward(ctx, vocab, embeddings)
        scored.append((ctx, scores.data, attn))
    return scored


def evaluate(model, contexts, vocab, embeddings):
    scored = score_contexts(model, contexts, vocab, embeddings)
    return records_from_scores(scored, vocab, model.head.theta)


def dump_records(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict()) + "\n")


# -- significance --------------------------------------------------------------

def paired_bootstrap(f1_a, f1_b, resamples: int = 10_000, seed: int = 0) -> float:
    """One-sided paired bootstrap p-value for mean(b) > mean(a).

    Resamples utterance indices with replacement and counts how often the
    mean difference (b - a) fails to exceed zero.
    """
    a = np.asarray(f1_a, dtype=np.float64)
    b = np.asarray(f1_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired arrays differ in length: {a.shape} vs {b.shape}")
    diff = b - a
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diff), size=(resamples, len(diff)))
    means = diff[idx].mean(axis=1)
    return float(np.mean(means <= 0.0))


def significance(records_a, records_b, resamples: int = 10_000, seed: int = 0) -> float:
    """Paired bootstrap on per-utterance F1 of two runs over the same split."""
    key = lambda r: (r.session_id, r.turn_index)
    a = sorted(records_a, key=key)
    b = sorted(records_b, key=key)
    if [key(r) for r in a] != [key(r) for r in b]:
        raise ValueError("significance: record sets cover different utterances")
    return paired_bootstrap([r.f1 for r in a], [r.f1 for r in b],
                            resamples=resamples, seed=seed)


# -- ablation harness -----------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    seeds: list
    f1_tourist: list
    f1_guide: list
    f1_all: list
    per_utterance_f1: list  # one array per seed, in utterance order

    def mean_std(self, split: str):
        vals = {"tourist": self.f1_tourist, "guide": self.f1_guide,
                "all": self.f1_all}[split]
        return float(np.mean(vals)), float(np.std(vals))

    def to_dict(self):
        d = {"variant": self.variant, "seeds": self.seeds}
        for split in ("tourist", "guide", "all"):
            mean, std = self.mean_std(split)
            d[f"f1_{split}"] = {"runs": getattr(self, f"f1_{split}"),
                                "mean": mean, "std": std}
        return d


DEFAULT_SEEDS = (1, 2, 3, 4, 5)


def run_ablation(train_sessions, dev_sessions, test_sessions, variants,
                 seeds=DEFAULT_SEEDS, model_overrides=None, train_config=None,
                 embeddings=None, vocab=None, role_filter_own=False,
                 progress=None, cell_hook=None):
    """Train and evaluate each variant per seed; returns (rows, failures).

    ``cell_hook(variant, seed)`` may return a cached AblationRow fragment
    (records skipped) or a callable to store results, enabling resume.
    Failures are collected per row instead of aborting the matrix.
    """
    from .model import ModelConfig, resolve_variant
    from .training import TrainConfig, train

    if vocab is None:
        vocab = LabelVocab.build(train_sessions)
    train_config = train_config or TrainConfig()
    model_overrides = model_overrides or {}
    rows, failures = [], {}
    for variant in variants:
        vid = resolve_variant(variant)
        row = AblationRow(vid, [], [], [], [], [])
        for seed in seeds:
            cached = cell_hook("load", vid, seed) if cell_hook else None
            if cached is not None:
                result = cached
            else:
                try:
                    result = _run_cell(vid, seed, train_sessions, dev_sessions,
                                       test_sessions, model_overrides,
                                       train_config, vocab, embeddings,
                                       role_filter_own)
                except Exception as e:  # isolate row failures
                    failures.setdefault(vid, []).append((seed, repr(e)))
                    continue
                if cell_hook:
                    cell_hook("store", vid, seed, result)
            row.seeds.append(seed)
            row.f1_tourist.append(result["f1_tourist"])
            row.f1_guide.append(result["f1_guide"])
            row.f1_all.append(result["f1_all"])
            row.per_utterance_f1.append(result["per_utterance_f1"])
            if progress:
                progress(vid, seed, result)
        rows.append(row)
    return rows, failures


def _run_cell(vid, seed, train_sessions, dev_sessions, test_sessions,
              model_overrides, train_config, vocab, embeddings,
              role_filter_own):
    import dataclasses
    from .model import ModelConfig
    from .corpus import load_embeddings, corpus_vocab

    cfg = ModelConfig.for_variant(
        vid, num_labels=vocab.num_labels,
        annotation_dim=vocab.annotation_dim, **model_overrides)
    tc = dataclasses.replace(train_config, seed=seed,
                             own_role_history=role_filter_own)
    emb = embeddings
    if emb is None:
        words = corpus_vocab(train_sessions) | corpus_vocab(dev_sessions) \
            | corpus_vocab(test_sessions)
        emb = load_embeddings(None, words, dimension=cfg.embed_dim, seed=seed)
    from .training import train
    model, _ = train(train_sessions, dev_sessions, cfg, tc, vocab, emb)
    contexts = _test_contexts(test_sessions, tc.window, role_filter_own)
    records = evaluate(model, contexts, vocab, emb)
    key = lambda r: (r.session_id, r.turn_index)
    records.sort(key=key)
    return {
        "f1_tourist": corpus_f1(records, "tourist"),
        "f1_guide": corpus_f1(records, "guide"),
        "f1_all": corpus_f1(records, "all"),
        "per_utterance_f1": [r.f1 for r in records],
        "records": records,
    }


def _test_contexts(test_sessions, window, role_filter_own):
    from .corpus import build_context
    contexts = []
    for session in test_sessions:
        for t in range(len(session)):
            rf = session[t].speaker if role_filter_own else None
            contexts.append(build_context(session, t, window, role_filter=rf))
    return contexts


def format_table(rows, fmt: str = "text") -> str:
    """Aligned plain-text (or JSON) table over the ablation rows."""
    if fmt == "json":
        return json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True)
    header = f"{'Variant':<10} {'Tourist':>16} {'Guide':>16} {'All':>16}"
    lines = [header, "-" * len(header)]
    for r in rows:
        cells = []
        for split in ("tourist", "guide", "all"):
            mean, std = r.mean_std(split)
            cells.append(f"{mean:7.2f} ± {std:5.2f}")
        lines.append(f"{r.variant:<10} " + " ".join(f"{c:>16}" for c in cells))
    return "\n".join(lines)


# -- §-style analyses ------------------------------------------------------------

def single_role_history_ablation(train_sessions, dev_sessions, test_sessions,
                                 seeds=DEFAULT_SEEDS, variant="e",
                                 model_overrides=None, train_config=None,
                                 embeddings=None, vocab=None):
    """Compare both-role history against own-role-only history.

    The own-role run restricts each utterance's history to its own speaker
    at both training and evaluation time, so the model is never asked to
    consume a history distribution it was not trained on.  Returns a dict
    with per-task F1 for both modes and per-utterance arrays for bootstrap.
    """
    both_rows, f_both = run_ablation(train_sessions, dev_sessions, test_sessions,
                                     [variant], seeds, model_overrides,
                                     train_config, embeddings, vocab)
    own_rows, f_own = run_ablation(train_sessions, dev_sessions, test_sessions,
                                   [variant], seeds, model_overrides,
                                   train_config, embeddings, vocab,
                                   role_filter_own=True)
    if f_both or f_own:
        raise RuntimeError(f"ablation cells failed: {f_both} {f_own}")
    both, own = both_rows[0], own_rows[0]
    report = {"variant": variant, "seeds": list(seeds)}
    for split in ("tourist", "guide", "all"):
        mb, _ = both.mean_std(split)
        mo, _ = own.mean_std(split)
        report[split] = {"both_roles": mb, "own_role_only": mo, "delta": mo - mb}
    report["per_utterance_f1"] = {
        "both_roles": [x for run in both.per_utterance_f1 for x in run],
        "own_role_only": [x for run in own.per_utterance_f1 for x in run],
    }
    return report
