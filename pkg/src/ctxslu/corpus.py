"""Dialogue data model, JSONL corpus ingestion, annotation encoding,
word-embedding loading, and deterministic synthetic corpus generation.

Corpus file format (UTF-8 JSON-lines, one utterance per line):

    {"session_id": str, "turn_index": int, "speaker": "tourist"|"guide",
     "transcript": str, "labels": [str]}

Labels are act-attribute pairs such as ``"QST-WHEN"``; the act is the part
before the first hyphen.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TOURIST = "tourist"
GUIDE = "guide"
SPEAKERS = (TOURIST, GUIDE)

ALL = "all"  # sentinel for an unbounded history window


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    session_id: str
    turn_index: int
    speaker: str
    tokens: tuple
    labels: frozenset

    @property
    def uid(self):
        return (self.session_id, self.turn_index)


@dataclass(frozen=True)
class DialogueContext:
    """Current utterance plus preceding same-session utterances.

    ``history`` holds (utterance, distance) pairs ordered oldest first, so
    distances strictly decrease toward the most recent entry.
    """
    current: Utterance
    history: tuple  # of (Utterance, int)


def tokenize(transcript: str) -> tuple:
    return tuple(transcript.lower().split())


def load_corpus(path) -> list:
    """Parse a JSONL corpus into sessions (lists of Utterance, sorted by turn)."""
    sessions: dict = {}
    seen: set = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                u = Utterance(
                    session_id=str(rec["session_id"]),
                    turn_index=int(rec["turn_index"]),
                    speaker=rec["speaker"],
                    tokens=tokenize(rec["transcript"]),
                    labels=frozenset(rec["labels"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise CorpusError(f"{path}: malformed line {lineno}: {e}") from e
            if u.speaker not in SPEAKERS:
                raise CorpusError(f"{path}: line {lineno}: unknown speaker {u.speaker!r}")
            if u.turn_index < 0:
                raise CorpusError(f"{path}: line {lineno}: negative turn_index")
            if u.uid in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate (session, turn) {u.uid}")
            seen.add(u.uid)
            sessions.setdefault(u.session_id, []).append(u)
    if not sessions:
        warnings.warn(f"{path}: empty corpus")
    return [sorted(us, key=lambda u: u.turn_index)
            for _, us in sorted(sessions.items())]


def write_corpus(sessions, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for session in sessions:
            for u in session:
                rec = {
                    "session_id": u.session_id,
                    "turn_index": u.turn_index,
                    "speaker": u.speaker,
                    "transcript": " ".join(u.tokens),
                    "labels": sorted(u.labels),
                }
                f.write(json.dumps(rec) + "\n")


def build_context(session, t: int, window=ALL, role_filter=None) -> DialogueContext:
    """History = up to ``window`` most recent preceding utterances.

    Distance is the turn-index difference, >= 1.  ``role_filter`` keeps only
    history from one speaker (the own-role ablation path).
    """
    if not 0 <= t < len(session):
        raise IndexError(f"turn {t} out of range for session of {len(session)}")
    current = session[t]
    hist = [(u, current.turn_index - u.turn_index) for u in session[:t]]
    if role_filter is not None:
        hist = [(u, d) for u, d in hist if u.speaker == role_filter]
    if window != ALL:
        hist = hist[-int(window):]
    return DialogueContext(current=current, history=tuple(hist))


def iter_contexts(sessions, window=ALL, role_filter=None, own_role=False):
    """Contexts for every utterance; ``own_role`` keeps only history spoken
    by the current utterance's own speaker (the single-role ablation)."""
    for session in sessions:
        for t in range(len(session)):
            rf = session[t].speaker if own_role else role_filter
            yield build_context(session, t, window, rf)


# -- label vocabulary and one-hot annotation features -------------------------

def split_label(label: str) -> tuple:
    """A label is ``ACT`` or ``ACT-ATTR`` (attr may itself contain hyphens)."""
    act, _, attr = label.partition("-")
    return act, attr


@dataclass(frozen=True)
class LabelVocab:
    labels: tuple          # full act-attr label strings (classifier targets)
    acts: tuple            # distinct acts
    attrs: tuple           # distinct non-empty attributes
    label_index: dict = field(repr=False, default=None)
    act_index: dict = field(repr=False, default=None)
    attr_index: dict = field(repr=False, default=None)

    @classmethod
    def build(cls, sessions):
        labels, acts, attrs = set(), set(), set()
        for session in sessions:
            for u in session:
                for lab in u.labels:
                    labels.add(lab)
                    act, attr = split_label(lab)
                    acts.add(act)
                    if attr:
                        attrs.add(attr)
        labels, acts, attrs = tuple(sorted(labels)), tuple(sorted(acts)), tuple(sorted(attrs))
        return cls(labels, acts, attrs,
                   {l: i for i, l in enumerate(labels)},
                   {a: i for i, a in enumerate(acts)},
                   {a: i for i, a in enumerate(attrs)})

    @property
    def num_labels(self):
        return len(self.labels)

    @property
    def annotation_dim(self):
        return len(self.acts) + len(self.attrs)

    def target_vector(self, labels) -> np.ndarray:
        v = np.zeros(len(self.labels))
        for lab in labels:
            i = self.label_index.get(lab)
            if i is not None:
                v[i] = 1.0
        return v

    def to_dict(self):
        return {"labels": list(self.labels), "acts": list(self.acts),
                "attrs": list(self.attrs)}

    @classmethod
    def from_dict(cls, d):
        labels, acts, attrs = tuple(d["labels"]), tuple(d["acts"]), tuple(d["attrs"])
        return cls(labels, acts, attrs,
                   {l: i for i, l in enumerate(labels)},
                   {a: i for i, a in enumerate(acts)},
                   {a: i for i, a in enumerate(attrs)})


class OOVCounter:
    def __init__(self):
        self.count = 0


def encode_annotations(u: Utterance, vocab: LabelVocab, oov: OOVCounter = None) -> np.ndarray:
    """One-hot act + attribute features for a history utterance.

    Labels unseen in the training vocabulary contribute nothing (and bump the
    OOV counter); the function is total.
    """
    v = np.zeros(vocab.annotation_dim)
    n_acts = len(vocab.acts)
    for lab in u.labels:
        act, attr = split_label(lab)
        hit = False
        ai = vocab.act_index.get(act)
        if ai is not None:
            v[ai] = 1.0
            hit = True
        if attr:
            ti = vocab.attr_index.get(attr)
            if ti is not None:
                v[n_acts + ti] = 1.0
                hit = True
        if not hit and oov is not None:
            oov.count += 1
    return v


# -- word embeddings ----------------------------------------------------------

class EmbeddingTable:
    """word -> vector lookup with an OOV fallback; lookup is total."""

    def __init__(self, vectors: dict, oov_vector: np.ndarray):
        self.vectors = vectors
        self.oov_vector = oov_vector
        self.dimension = oov_vector.shape[0]

    def lookup(self, word: str) -> np.ndarray:
        return self.vectors.get(word, self.oov_vector)


def corpus_vocab(sessions) -> set:
    return {w for session in sessions for u in session for w in u.tokens}


def load_embeddings(path, vocab, dimension: int = 200, seed: int = 0) -> EmbeddingTable:
    """Load pretrained text-format vectors restricted to ``vocab``.

    With no file, initialize uniformly in [-0.1, 0.1] from ``seed``.  The OOV
    vector is the average of the loaded (or generated) vectors.
    """
    vectors: dict = {}
    if path is None:
        rng = np.random.default_rng(seed)
        for w in sorted(vocab):
            vectors[w] = rng.uniform(-0.1, 0.1, size=dimension)
    else:
        dim = None
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                word, vals = parts[0], parts[1:]
                if dim is None:
                    dim = len(vals)
                elif len(vals) != dim:
                    raise CorpusError(
                        f"{path}: line {lineno}: dimension {len(vals)} != {dim}")
                if word in vocab:
                    vectors[word] = np.asarray([float(v) for v in vals])
        if dim is None:
            raise CorpusError(f"{path}: no vectors found")
        dimension = dim
    if vectors:
        oov = np.mean(np.stack(list(vectors.values())), axis=0)
    else:
        oov = np.zeros(dimension)
    return EmbeddingTable(vectors, oov)


# -- synthetic corpus generation ----------------------------------------------

R1, R2, R3 = "r1", "r2", "r3"
RULE_FAMILIES = (R1, R2, R3)


@dataclass
class SynthSpec:
    """Generator parameters for a DSTC4-format-compatible synthetic corpus.

    Every utterance carries a topic symbol, surfaced as a token and as an
    ``INF-T<k>`` label.  Rule families add an ``FOL-E<k>`` echo label whose
    topic comes from history:

      r1  no echo label; labels are a function of current tokens only.
      r2  echo copies the topic of the most recent utterance by ``r2_role``
          ("guide", "tourist", or "self" = the current speaker's own role);
          with ``r2_max_age`` > 0 the echo only applies when that utterance
          lies at most ``r2_max_age`` turns back (staleness cut), making the
          label depend on the source's distance, not just its content.
      r3  echo copies the topic of the utterance ``r3_k`` turns back,
          regardless of role.

    ``speaker_pattern`` is "alternating" (tourist/guide by turn parity) or
    "random" (fair coin per turn).  With probability ``noise`` the echo topic
    is resampled uniformly, putting a ceiling below 1.0 on any classifier.
    """
    sessions: int = 200
    turns: int = 10
    topics: int = 6
    filler_vocab: int = 20
    tokens_per_utterance: int = 5
    noise: float = 0.1
    rule: str = R2
    r2_role: str = GUIDE
    r2_max_age: int = 0
    r3_k: int = 2
    speaker_pattern: str = "alternating"

    def validate(self):
        if self.sessions <= 0 or self.turns <= 0 or self.topics <= 0:
            raise CorpusError("synthetic spec: sessions, turns, topics must be positive")
        if self.rule not in RULE_FAMILIES:
            raise CorpusError(f"synthetic spec: unknown rule family {self.rule!r}")
        if self.rule == R2 and self.r2_role not in (TOURIST, GUIDE, "self"):
            raise CorpusError(f"synthetic spec: bad r2_role {self.r2_role!r}")
        if self.rule == R3 and self.r3_k < 1:
            raise CorpusError("synthetic spec: r3_k must be >= 1")
        if self.r2_max_age < 0:
            raise CorpusError("synthetic spec: r2_max_age must be >= 0")
        if self.speaker_pattern not in ("alternating", "random"):
            raise CorpusError(
                f"synthetic spec: bad speaker_pattern {self.speaker_pattern!r}")
        if not 0.0 <= self.noise < 1.0:
            raise CorpusError("synthetic spec: noise must be in [0, 1)")

    @classmethod
    def from_file(cls, path):
        """Key-value file: ``name = value`` per line, ``#`` comments."""
        kwargs = {}
        casts = {f: type(getattr(cls(), f)) for f in cls.__dataclass_fields__}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CorpusError(f"{path}: line {lineno}: expected key = value")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in casts:
                    raise CorpusError(f"{path}: line {lineno}: unknown key {key!r}")
                kwargs[key] = casts[key](val)
        return cls(**kwargs)


def topic_label(k: int) -> str:
    return f"INF-T{k}"


def echo_label(k: int) -> str:
    # distinct attribute namespace from topic_label so the act+attr one-hot
    # encoding stays injective on the label sets this generator emits
    return f"FOL-E{k}"


def _echo_source(spec: SynthSpec, speakers, topics, t: int):
    """Index of the history turn the echo label copies from, or None."""
    if spec.rule == R1:
        return None
    if spec.rule == R3:
        return t - spec.r3_k if t - spec.r3_k >= 0 else None
    role = speakers[t] if spec.r2_role == "self" else spec.r2_role
    for j in range(t - 1, -1, -1):
        if speakers[j] == role:
            if spec.r2_max_age and t - j > spec.r2_max_age:
                return None
            return j
    return None


def generate_synthetic(spec: SynthSpec, seed: int):
    """Deterministic corpus plus ground-truth rule metadata.

    Returns (sessions, meta) where meta records, per utterance, the echo
    source turn so tests can assert against the generating rule directly.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    sessions, meta = [], {"rule": spec.rule, "spec": vars(spec).copy(),
                          "seed": seed, "echo_source": {}}
    for s in range(spec.sessions):
        sid = f"synth-{s:04d}"
        if spec.speaker_pattern == "random":
            speakers = [SPEAKERS[int(rng.integers(2))] for _ in range(spec.turns)]
        else:
            speakers = [SPEAKERS[t % 2] for t in range(spec.turns)]
        topics = [int(rng.integers(spec.topics)) for _ in range(spec.turns)]
        session = []
        for t in range(spec.turns):
            labels = {topic_label(topics[t])}
            src = _echo_source(spec, speakers, topics, t)
            if src is not None:
                echo_topic = topics[src]
                if spec.noise > 0 and rng.random() < spec.noise:
                    echo_topic = int(rng.integers(spec.topics))
                labels.add(echo_label(echo_topic))
            fillers = [f"f{int(rng.integers(spec.filler_vocab))}"
                       for _ in range(max(0, spec.tokens_per_utterance - 1))]
            tokens = tuple(fillers + [f"topic{topics[t]}"])
            session.append(Utterance(sid, t, speakers[t], tokens, frozenset(labels)))
            meta["echo_source"][f"{sid}:{t}"] = src
        sessions.append(session)
    return sessions, meta


def split_sessions(sessions, ratios=(0.7, 0.15, 0.15)):
    """Deterministic train/dev/test split by session order."""
    n = len(sessions)
    n_train = int(round(ratios[0] * n))
    n_dev = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_dev = min(n_dev, n - n_train)
    return (sessions[:n_train],
            sessions[n_train:n_train + n_dev],
            sessions[n_train + n_dev:])
