"""Role-split history encoders and the content/time x sentence/role
attention matrix producing the history summary vector.

The circular dependency between content-attention scores and the current
encoding is broken with a two-pass scheme: a context-free current encoding
(history vector zeroed) scores the attention, and only the final encoding
consumes the attended history summary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import SPEAKERS
from .encoder import BlstmParams, lstm_final_state

LEVEL_NONE = "none"
LEVEL_SENTENCE = "sentence"
LEVEL_ROLE = "role"
LEVEL_BOTH = "both"
LEVELS = (LEVEL_NONE, LEVEL_SENTENCE, LEVEL_ROLE, LEVEL_BOTH)


@dataclass
class AttentionConfig:
    content_enabled: bool = False
    time_enabled: bool = False
    level: str = LEVEL_NONE
    role_time_aggregator: str = "min"   # or "avg"
    literal_role_time: bool = False     # min over reciprocals (see role_time_attention)
    normalize_time: bool = False        # renormalize 1/d weights across items
    time_decay: str = "reciprocal"      # "exponential" available, untested vs reference

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown attention level {self.level!r}")
        if self.level == LEVEL_NONE and (self.content_enabled or self.time_enabled):
            raise ValueError("attention level 'none' requires both flags off")
        if self.level != LEVEL_NONE and not (self.content_enabled or self.time_enabled):
            raise ValueError(f"attention level {self.level!r} needs content or time enabled")

    @property
    def sentence_active(self):
        return self.level in (LEVEL_SENTENCE, LEVEL_BOTH)

    @property
    def role_active(self):
        return self.level in (LEVEL_ROLE, LEVEL_BOTH)


@dataclass
class HistoryItem:
    features: Tensor      # annotation one-hot lifted to a tensor
    role: str
    distance: int
    turn_index: int


class MlpParams:
    """One-hidden-layer scorer: tanh hidden, scalar output."""

    def __init__(self, W1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor):
        self.W1, self.b1, self.w2, self.b2 = W1, b1, w2, b2

    def score(self, x: Tensor) -> Tensor:
        h = ag.tanh(ag.add(ag.matmul(self.W1, x), self.b1))
        return ag.add(ag.sum_reduce(ag.mul(self.w2, h)), self.b2)


def content_attention_sentence(v_cur_free: Tensor, items, mlp: MlpParams,
                               proj: Tensor) -> Tensor:
    """Softmax-normalized content weights over ALL history items jointly.

    ``proj`` lifts each item's annotation features to the encoding width
    before the additive combination with the context-free current encoding.
    """
    if not items:
        raise ValueError("content attention: empty history")
    scores = [mlp.score(ag.add(v_cur_free, ag.matmul(proj, it.features)))
              for it in items]
    return ag.softmax(ag.concat(scores))


def time_attention(d: int, decay: str = "reciprocal") -> float:
    """Fixed (non-learned) temporal weight for a history item at distance d."""
    if d < 1:
        raise ValueError(f"time attention: distance must be >= 1, got {d}")
    if decay == "reciprocal":
        return 1.0 / d
    if decay == "exponential":
        return float(np.exp(1 - d))
    raise ValueError(f"unknown time decay {decay!r}")


def role_time_attention(distances, aggregator: str = "min",
                        literal: bool = False) -> float:
    """Temporal weight of one role's whole history.

    Default reading: reciprocal of the minimum (i.e. most recent) distance.
    ``literal=True`` instead takes the minimum over the reciprocals, which
    selects the farthest utterance.  ``aggregator="avg"`` averages the
    reciprocals.  A role absent from history gets weight 0.
    """
    if not distances:
        return 0.0
    recips = [1.0 / d for d in distances]
    if aggregator == "avg":
        return sum(recips) / len(recips)
    if aggregator != "min":
        raise ValueError(f"unknown role-time aggregator {aggregator!r}")
    return min(recips) if literal else max(recips)


def scale_items(items, content_w, time_w):
    """Scale each item's features by its enabled attention factors.

    ``content_w`` maps item index -> scalar weight tensor (or None);
    ``time_w`` maps item index -> float (or None).  Disabled factors
    default to the multiplicative identity.
    """
    scaled = []
    for idx, it in enumerate(items):
        x = it.features
        if content_w is not None:
            x = ag.mul(x, content_w[idx])
        if time_w is not None:
            x = ag.scale(x, time_w[idx])
        scaled.append(x)
    return scaled


def encode_history(inputs, blstm: BlstmParams) -> Tensor:
    """BLSTM summary of a history feature sequence; empty -> zero vector."""
    if not inputs:
        return ag.zeros(2 * blstm.hidden)
    fwd = lstm_final_state(inputs, blstm.fwd)
    bwd = lstm_final_state(list(reversed(inputs)), blstm.bwd)
    return ag.concat([fwd, bwd])


def combine_roles(role_summaries, role_distances, cfg: AttentionConfig,
                  v_cur_free, mlp: MlpParams):
    """Combine per-role history summaries into v_his.

    Without role-level attention this is the plain sum.  Content role weights
    are a softmax over the two roles (an absent role's zero summary still
    competes); time role weights come from role_time_attention, unnormalized;
    with both enabled the two factors multiply.

    Returns (v_his, weights) where weights maps role -> float (None when no
    role-level attention ran).
    """
    roles = list(SPEAKERS)
    if not cfg.role_active:
        return ag.add(role_summaries[roles[0]], role_summaries[roles[1]]), None

    content_w = None
    if cfg.content_enabled:
        scores = [mlp.score(ag.add(v_cur_free, role_summaries[r])) for r in roles]
        content_w = ag.softmax(ag.concat(scores))
    time_w = None
    if cfg.time_enabled:
        time_w = [role_time_attention(role_distances[r], cfg.role_time_aggregator,
                                      cfg.literal_role_time) for r in roles]

    parts, reported = [], {}
    for i, r in enumerate(roles):
        v = role_summaries[r]
        w = 1.0
        if content_w is not None:
            cw = ag.index(content_w, i)
            v = ag.mul(v, cw)
            w *= float(cw.data)
        if time_w is not None:
            v = ag.scale(v, time_w[i])
            w *= time_w[i]
        parts.append(v)
        reported[r] = w
    return ag.add(parts[0], parts[1]), reported


def normalize_role_weights(weights: dict) -> dict:
    """Composite role weights normalized to sum 1 (for analysis reporting)."""
    total = sum(weights.values())
    if total == 0:
        return {r: 0.0 for r in weights}
    return {r: w / total for r, w in weights.items()}


def mean_role_attention(records) -> dict:
    """Average normalized role weight per understanding task.

    Records must come from a role-level-attention variant; splits by the
    current utterance's speaker.
    """
    sums = {task: {r: 0.0 for r in SPEAKERS} for task in SPEAKERS}
    counts = {task: 0 for task in SPEAKERS}
    for rec in records:
        if rec.role_weights is None:
            continue
        task = rec.speaker
        norm = normalize_role_weights(rec.role_weights)
        for r in SPEAKERS:
            sums[task][r] += norm[r]
        counts[task] += 1
    if not any(counts.values()):
        raise ValueError("mean_role_attention: no records carry role weights "
                         "(variant without role-level attention?)")
    return {task: {r: (sums[task][r] / counts[task] if counts[task] else float("nan"))
                   for r in SPEAKERS}
            for task in SPEAKERS}
