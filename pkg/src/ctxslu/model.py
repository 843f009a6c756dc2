"""Model configuration, variant matrix, parameter construction, and the full
forward pass from a dialogue context to label scores.

The twelve variants mirror the ablation grid: three context baselines plus
{content, time, content+time} x {sentence, role, both} attention, all on the
role-split contextual model.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from . import context as ctxmod
from .context import AttentionConfig, HistoryItem, MlpParams
from .corpus import SPEAKERS, DialogueContext, LabelVocab, encode_annotations
from .encoder import BlstmParams, LstmParams, OutputHead, encode_current, \
    decide_labels, predict_scores

VARIANTS = {
    "c": dict(use_context=False, role_split=False, attention=dict(level="none")),
    "d": dict(use_context=True, role_split=False, attention=dict(level="none")),
    "e": dict(use_context=True, role_split=True, attention=dict(level="none")),
    "f": dict(use_context=True, role_split=True,
              attention=dict(content_enabled=True, level="sentence")),
    "g": dict(use_context=True, role_split=True,
              attention=dict(content_enabled=True, level="role")),
    "h": dict(use_context=True, role_split=True,
              attention=dict(content_enabled=True, level="both")),
    "i": dict(use_context=True, role_split=True,
              attention=dict(time_enabled=True, level="sentence")),
    "j": dict(use_context=True, role_split=True,
              attention=dict(time_enabled=True, level="role")),
    "k": dict(use_context=True, role_split=True,
              attention=dict(time_enabled=True, level="both")),
    "l": dict(use_context=True, role_split=True,
              attention=dict(content_enabled=True, time_enabled=True, level="sentence")),
    "m": dict(use_context=True, role_split=True,
              attention=dict(content_enabled=True, time_enabled=True, level="role")),
    "n": dict(use_context=True, role_split=True,
              attention=dict(content_enabled=True, time_enabled=True, level="both")),
}

VARIANT_NAMES = {
    "no-context": "c",
    "context": "d",
    "role-context": "e",
    "content-sentence": "f",
    "content-role": "g",
    "content-both": "h",
    "time-sentence": "i",
    "time-role": "j",
    "time-both": "k",
    "content-time-sentence": "l",
    "content-time-role": "m",
    "content-time-both": "n",
}


def resolve_variant(name: str) -> str:
    vid = VARIANT_NAMES.get(name, name)
    if vid not in VARIANTS:
        known = ", ".join(sorted(set(VARIANTS) | set(VARIANT_NAMES)))
        raise ValueError(f"unknown variant {name!r} (known: {known})")
    return vid


@dataclass
class ModelConfig:
    embed_dim: int = 200
    hidden: int = 128
    attn_hidden: int = 64
    num_labels: int = 0          # set from the label vocabulary
    annotation_dim: int = 0      # set from the label vocabulary
    # one-hot annotation features enter an order of magnitude hotter than
    # the [-0.1, 0.1] word embeddings; this input gain harmonizes the scales
    annotation_scale: float = 0.15
    use_context: bool = True
    role_split: bool = True
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    history_mode: str = "concat"  # or "init" (alternative Eq-style conditioning)
    theta: float = 0.5

    @classmethod
    def for_variant(cls, variant: str, **overrides):
        spec = VARIANTS[resolve_variant(variant)]
        att = AttentionConfig(**spec["attention"])
        return cls(use_context=spec["use_context"], role_split=spec["role_split"],
                   attention=att, **overrides)

    def validate(self):
        if self.embed_dim <= 0 or self.hidden <= 0 or self.attn_hidden <= 0:
            raise ValueError("embed_dim, hidden, attn_hidden must be positive")
        if self.attention.level != "none" and not self.use_context:
            raise ValueError("attention requires context enabled")
        if self.attention.role_active and not self.role_split:
            raise ValueError("role-level attention requires the role-split model")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["attention"] = AttentionConfig(**d["attention"])
        return cls(**d)


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # per-parameter stream keyed by name: shared parameters get identical
    # draws across variants with the same seed
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _uniform(seed, name, shape, bound) -> Tensor:
    data = _param_rng(seed, name).uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)


def _lstm_params(params: dict, seed: int, prefix: str, in_dim: int, H: int):
    bound = 1.0 / np.sqrt(H)
    W = _uniform(seed, f"{prefix}.W", (4 * H, in_dim + H), bound)
    b = _uniform(seed, f"{prefix}.b", 4 * H, bound)
    b.data[H:2 * H] += 1.0  # forget-gate bias
    params[f"{prefix}.W"] = W
    params[f"{prefix}.b"] = b
    return LstmParams(W, b)


def _blstm_params(params, seed, prefix, in_dim, H) -> BlstmParams:
    return BlstmParams(_lstm_params(params, seed, f"{prefix}.fwd", in_dim, H),
                       _lstm_params(params, seed, f"{prefix}.bwd", in_dim, H))


def _mlp_params(params, seed, prefix, in_dim, hidden) -> MlpParams:
    bound = 1.0 / np.sqrt(hidden)
    p = {}
    for name, shape in (("W1", (hidden, in_dim)), ("b1", hidden),
                        ("w2", hidden), ("b2", ())):
        p[name] = _uniform(seed, f"{prefix}.{name}", shape, bound)
        params[f"{prefix}.{name}"] = p[name]
    return MlpParams(p["W1"], p["b1"], p["w2"], p["b2"])


class Model:
    """Parameter container plus the forward pass for one config."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict = None):
        config.validate()
        if config.num_labels <= 0:
            raise ValueError("config.num_labels must be set from the label vocabulary")
        self.config = config
        self.params: dict = {}
        c, E, H, A = config, config.embed_dim, config.hidden, config.annotation_dim
        bound = 1.0 / np.sqrt(H)

        # concat mode always reserves the history slot, even without context
        cur_in = 2 * E if c.history_mode == "concat" else E
        self.utt_blstm = _blstm_params(self.params, seed, "utt", cur_in, H)
        self.head = OutputHead(
            _uniform(seed, "head.W", (c.num_labels, 2 * H), bound),
            Tensor(np.zeros(c.num_labels), requires_grad=True),
            theta=c.theta)
        self.params["head.W"] = self.head.W
        self.params["head.b"] = self.head.b

        self.W_his = None
        self.hist_blstm = None
        self.role_blstms = None
        self.sent_mlp = None
        self.sent_proj = None
        self.role_mlp = None
        if c.use_context:
            if A <= 0:
                raise ValueError("config.annotation_dim must be set for context variants")
            proj_out = E if c.history_mode == "concat" else H
            self.W_his = _uniform(seed, "W_his", (proj_out, 2 * H), bound)
            self.params["W_his"] = self.W_his
            if c.role_split:
                self.role_blstms = {
                    r: _blstm_params(self.params, seed, f"hist.{r}", A, H)
                    for r in SPEAKERS}
            else:
                self.hist_blstm = _blstm_params(self.params, seed, "hist.shared", A, H)
            att = c.attention
            if att.content_enabled and att.sentence_active:
                self.sent_proj = _uniform(seed, "sent_att.proj", (2 * H, A), bound)
                self.params["sent_att.proj"] = self.sent_proj
                self.sent_mlp = _mlp_params(self.params, seed, "sent_att.mlp",
                                            2 * H, c.attn_hidden)
            if att.content_enabled and att.role_active:
                self.role_mlp = _mlp_params(self.params, seed, "role_att.mlp",
                                            2 * H, c.attn_hidden)
        if params is not None:
            self._load_param_data(params)

    def _load_param_data(self, data: dict):
        missing = set(self.params) - set(data)
        extra = set(data) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)} "
                             f"extra={sorted(extra)}")
        for name, t in self.params.items():
            arr = np.asarray(data[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {t.data.shape}")
            t.data = arr

    def zero_grad(self):
        ag.zero_grad(self.params)

    # -- forward --------------------------------------------------------------

    def forward(self, context: DialogueContext, vocab: LabelVocab, embeddings):
        """Score a dialogue context.

        Returns (scores tensor [K], attention dict with optional
        'sentence' {turn_index: weight} and 'role' {role: weight} entries).
        """
        c = self.config
        att = c.attention
        embs = [Tensor(embeddings.lookup(w)) for w in context.current.tokens]
        if not embs:
            embs = [Tensor(np.zeros(embeddings.dimension))]
        attn_info = {"sentence": None, "role": None}

        v_his = None
        if c.use_context and context.history:
            items = [HistoryItem(
                features=Tensor(c.annotation_scale * encode_annotations(u, vocab)),
                role=u.speaker, distance=d, turn_index=u.turn_index)
                for u, d in context.history]
            v_cur_free = None
            if att.content_enabled:
                v_cur_free = encode_current(embs, None, self.W_his,
                                            self.utt_blstm, c.history_mode)

            content_w = None
            if att.content_enabled and att.sentence_active:
                w = ctxmod.content_attention_sentence(v_cur_free, items,
                                                      self.sent_mlp, self.sent_proj)
                content_w = [ag.index(w, i) for i in range(len(items))]
                attn_info["sentence"] = {it.turn_index: float(w.data[i])
                                         for i, it in enumerate(items)}
            time_w = None
            if att.time_enabled and att.sentence_active:
                time_w = [ctxmod.time_attention(it.distance, att.time_decay)
                          for it in items]
                if att.normalize_time:
                    total = sum(time_w)
                    time_w = [w / total for w in time_w]
                if attn_info["sentence"] is None:
                    attn_info["sentence"] = {it.turn_index: tw
                                             for it, tw in zip(items, time_w)}
                else:
                    attn_info["sentence"] = {
                        it.turn_index: attn_info["sentence"][it.turn_index] * tw
                        for it, tw in zip(items, time_w)}

            scaled = ctxmod.scale_items(items, content_w, time_w)
            if c.role_split:
                summaries, distances = {}, {}
                for r in SPEAKERS:
                    seq = [x for x, it in zip(scaled, items) if it.role == r]
                    summaries[r] = ctxmod.encode_history(seq, self.role_blstms[r])
                    distances[r] = [it.distance for it in items if it.role == r]
                v_his, role_w = ctxmod.combine_roles(summaries, distances, att,
                                                     v_cur_free, self.role_mlp)
                attn_info["role"] = role_w
            else:
                v_his = ctxmod.encode_history(scaled, self.hist_blstm)
        elif c.use_context:
            v_his = None  # empty history degrades to the no-context path

        v_cur = encode_current(embs, v_his, self.W_his, self.utt_blstm,
                               c.history_mode)
        scores = predict_scores(v_cur, self.head)
        return scores, attn_info

    def predict(self, context, vocab, embeddings):
        scores, attn = self.forward(context, vocab, embeddings)
        return scores.data, decide_labels(scores.data, self.head.theta), attn


CHECKPOINT_FORMAT = "ctxslu-checkpoint-v1"


def save_checkpoint(path, model: Model, vocab: LabelVocab, embeddings) -> None:
    """JSON container: format tag, config, label vocab, embeddings, params.

    Floats are serialized with shortest-roundtrip repr, so identical models
    produce byte-identical files.
    """
    import json
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        "theta": model.head.theta,
        "embeddings": {
            "dimension": embeddings.dimension,
            "oov": embeddings.oov_vector.tolist(),
            "vectors": {w: v.tolist() for w, v in sorted(embeddings.vectors.items())},
        },
        "params": {name: t.data.tolist() for name, t in sorted(model.params.items())},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path):
    """Returns (model, vocab, embeddings)."""
    import json
    from .corpus import EmbeddingTable
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    tag = payload.get("format")
    if tag != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {tag!r}")
    config = ModelConfig.from_dict(payload["config"])
    config.theta = payload["theta"]
    vocab = LabelVocab.from_dict(payload["vocab"])
    model = Model(config, seed=0, params=payload["params"])
    model.head.theta = payload["theta"]
    emb = payload["embeddings"]
    embeddings = EmbeddingTable(
        {w: np.asarray(v) for w, v in emb["vectors"].items()},
        np.asarray(emb["oov"]))
    return model, vocab, embeddings
