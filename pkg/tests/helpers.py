"""Shared test fixtures: toy dialogues, finite-difference gradient checks,
and an independent straight-line forward-pass oracle."""

import numpy as np

from ctxslu import autograd as ag
from ctxslu import training
from ctxslu.corpus import (GUIDE, TOURIST, DialogueContext, LabelVocab,
                           Utterance, build_context)
from ctxslu.model import Model, ModelConfig, VARIANTS


def toy_vocab():
    sessions = [[
        Utterance("s", 0, GUIDE, ("hello", "there"), frozenset({"QST-WHEN"})),
        Utterance("s", 1, TOURIST, ("on", "august"), frozenset({"RES-WHEN"})),
        Utterance("s", 2, GUIDE, ("good", "choice"), frozenset({"ACK-LOC"})),
    ]]
    return sessions, LabelVocab.build(sessions)


class ToyEmbeddings:
    """Deterministic random embeddings with a fixed dimension."""

    def __init__(self, dimension, seed=0):
        self.dimension = dimension
        self._rng_seed = seed
        self.vectors = {}
        self.oov_vector = np.zeros(dimension)

    def lookup(self, word):
        if word not in self.vectors:
            rng = np.random.default_rng([self._rng_seed, abs(hash(word)) % 2**31])
            self.vectors[word] = rng.uniform(-0.5, 0.5, self.dimension)
        return self.vectors[word]


def toy_model(variant, seed, embed_dim=5, hidden=4, attn_hidden=3):
    sessions, vocab = toy_vocab()
    cfg = ModelConfig.for_variant(
        variant, embed_dim=embed_dim, hidden=hidden, attn_hidden=attn_hidden,
        num_labels=vocab.num_labels, annotation_dim=vocab.annotation_dim)
    model = Model(cfg, seed=seed)
    emb = ToyEmbeddings(embed_dim, seed=seed)
    contexts = [build_context(sessions[0], t) for t in range(3)]
    return model, vocab, emb, contexts


def batch_loss(model, contexts, vocab, emb):
    losses = []
    for ctx in contexts:
        scores, _ = model.forward(ctx, vocab, emb)
        losses.append(training.bce_loss(scores, vocab.target_vector(ctx.current.labels)))
    total = losses[0]
    for l in losses[1:]:
        total = ag.add(total, l)
    return ag.scale(total, 1.0 / len(losses))


def gradient_check(model, contexts, vocab, emb, h=1e-5, rel_tol=1e-3):
    """Compare analytic gradients to central differences for every parameter.

    Returns the worst relative error seen.  The denominator floors the
    numerical magnitude at 1e-4 so entries with a true zero gradient don't
    blow up the ratio.  Finite-difference evals run with the tape disabled.
    """
    model.zero_grad()
    loss = batch_loss(model, contexts, vocab, emb)
    ag.backward(loss)
    worst = 0.0
    with ag.no_grad():
        for name, p in model.params.items():
            analytic = np.array(p.grad if p.grad is not None
                                else np.zeros_like(p.data))
            flat = p.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = batch_loss(model, contexts, vocab, emb).data
                flat[i] = orig - h
                down = batch_loss(model, contexts, vocab, emb).data
                flat[i] = orig
                num[i] = (up - down) / (2 * h)
            num = num.reshape(p.data.shape)
            scale = np.maximum(np.abs(num), 1e-4)
            err = float(np.max(np.abs(analytic - num) / scale))
            assert err < rel_tol, f"{name}: max rel err {err:.2e}"
            worst = max(worst, err)
    return worst


ALL_VARIANTS = tuple(sorted(VARIANTS))
