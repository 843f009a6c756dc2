"""Training objective, Adam optimizer, mini-batch loop, and threshold tuning.

The multi-label objective is two-sided binary cross-entropy summed over
labels (the single-term form is degenerate under independent sigmoid
outputs), averaged over the utterances of a batch.  Runs exactly the
configured number of epochs with no early stopping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import ALL, LabelVocab, iter_contexts
from .model import Model, ModelConfig
from .evaluation import corpus_f1, records_from_scores, score_contexts, utterance_f1

CLAMP = 1e-12
THETA_GRID = [round(0.10 + 0.05 * i, 2) for i in range(17)]  # 0.10 .. 0.90


def bce_loss(scores: Tensor, targets: np.ndarray) -> Tensor:
    """-sum_k [q_k log p_k + (1-q_k) log(1-p_k)], scores clamped before log."""
    p = ag.clip(scores, CLAMP, 1.0 - CLAMP)
    q = np.asarray(targets, dtype=np.float64)
    pos = ag.mul(ag.log(p), q)
    neg = ag.mul(ag.log(ag.sub(Tensor(np.ones_like(q)), p)), 1.0 - q)
    return ag.scale(ag.sum_reduce(ag.add(pos, neg)), -1.0)


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 1
    window: object = ALL
    own_role_history: bool = False  # single-role history ablation
    grad_clip: float = 0.0  # 0 disables

    def validate(self):
        if self.batch_size <= 0 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("hyperparameters must be positive")


class Adam:
    """Standard Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if np.any(~np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** t)
            v_hat = self.v[name] / (1 - self.beta2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def _tune_theta_scored(scored, vocab: LabelVocab, grid=THETA_GRID) -> float:
    """Grid-search the decision threshold maximizing mean dev F1."""
    pairs = [(np.asarray(s), vocab.target_vector(ctx.current.labels))
             for ctx, s, _ in scored]
    best_theta, best_f1 = grid[0], -1.0
    for theta in grid:
        f1s = []
        for s, q in pairs:
            pred = {k for k, v in enumerate(s) if v > theta}
            gold = {k for k, v in enumerate(q) if v > 0.5}
            f1s.append(utterance_f1(gold, pred))
        f1 = float(np.mean(f1s)) if f1s else 0.0
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return best_theta


def tune_theta(model: Model, contexts, vocab, embeddings, grid=THETA_GRID) -> float:
    """Grid-search theta on freshly scored contexts."""
    scored = score_contexts(model, contexts, vocab, embeddings)
    return _tune_theta_scored(scored, vocab, grid)


def train(train_sessions, dev_sessions, model_config: ModelConfig,
          train_config: TrainConfig, vocab: LabelVocab, embeddings,
          metric_log_path=None, progress=None):
    """Train a model; returns (model, per-epoch metric records).

    Deterministic given (seed, corpus, config): the parameter init and the
    per-epoch shuffles all derive from train_config.seed.
    """
    train_config.validate()
    model = Model(model_config, seed=train_config.seed)
    opt = Adam(model.params, lr=train_config.learning_rate,
               beta1=train_config.beta1, beta2=train_config.beta2,
               epsilon=train_config.epsilon)
    contexts = list(iter_contexts(train_sessions, window=train_config.window,
                                  own_role=train_config.own_role_history))
    dev_contexts = list(iter_contexts(dev_sessions, window=train_config.window,
                                      own_role=train_config.own_role_history))
    shuffle_rng = np.random.default_rng([train_config.seed, 0xBA7C4])
    records = []
    order = np.arange(len(contexts))
    for epoch in range(train_config.epochs):
        shuffle_rng.shuffle(order)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), train_config.batch_size):
            batch = [contexts[i] for i in order[start:start + train_config.batch_size]]
            model.zero_grad()
            losses = []
            for ctx in batch:
                scores, _ = model.forward(ctx, vocab, embeddings)
                losses.append(bce_loss(scores, vocab.target_vector(ctx.current.labels)))
            total = losses[0]
            for l in losses[1:]:
                total = ag.add(total, l)
            batch_loss = ag.scale(total, 1.0 / len(batch))
            if not np.isfinite(batch_loss.data):
                raise FloatingPointError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch {n_batches}")
            ag.backward(batch_loss)
            if train_config.grad_clip > 0:
                _clip_grads(model.params, train_config.grad_clip)
            opt.step()
            epoch_loss += float(batch_loss.data)
            n_batches += 1
        if dev_contexts:
            scored = score_contexts(model, dev_contexts, vocab, embeddings)
            model.head.theta = theta = _tune_theta_scored(scored, vocab)
            dev_records = records_from_scores(scored, vocab, theta)
        else:
            theta, dev_records = model.head.theta, []
        rec = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_batches, 1),
            "dev_f1_tourist": corpus_f1(dev_records, "tourist") if dev_records else None,
            "dev_f1_guide": corpus_f1(dev_records, "guide") if dev_records else None,
            "dev_f1_all": corpus_f1(dev_records, "all") if dev_records else None,
            "theta": theta,
        }
        records.append(rec)
        if progress:
            progress(rec)
    if metric_log_path:
        with open(metric_log_path, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
    return model, records


def _clip_grads(params: dict, max_norm: float):
    total = np.sqrt(sum(float(np.sum(p.grad ** 2))
                        for p in params.values() if p.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
