"""BLSTM utterance encoder, history-conditioned current-utterance encoding,
and the sigmoid multi-label output head with thresholded decisions.

LSTM gates are computed from one stacked affine map per step (order: input,
forget, output, candidate); the BLSTM summary is the concatenation of the
final forward and final backward hidden states, so its width is always 2H.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class LstmParams:
    """One direction's stacked gate weights: W [4H, in+H], b [4H]."""

    def __init__(self, W: Tensor, b: Tensor):
        self.W = W
        self.b = b
        self.hidden = W.shape[0] // 4


class BlstmParams:
    def __init__(self, fwd: LstmParams, bwd: LstmParams):
        self.fwd = fwd
        self.bwd = bwd
        self.hidden = fwd.hidden


def lstm_final_state(inputs, p: LstmParams) -> Tensor:
    """Run the cell over ``inputs`` (list of 1-D tensors), return final h.

    Gate layout in the stacked pre-activation: input, forget, output (the
    three sigmoid gates together), then the tanh candidate.
    """
    H = p.hidden
    h = ag.zeros(H)
    c = ag.zeros(H)
    for x in inputs:
        z = ag.add(ag.matmul(p.W, ag.concat([x, h])), p.b)
        ifo = ag.sigmoid(ag.slice1d(z, 0, 3 * H))
        i = ag.slice1d(ifo, 0, H)
        f = ag.slice1d(ifo, H, 2 * H)
        o = ag.slice1d(ifo, 2 * H, 3 * H)
        g = ag.tanh(ag.slice1d(z, 3 * H, 4 * H))
        c = ag.add(ag.mul(f, c), ag.mul(i, g))
        h = ag.mul(o, ag.tanh(c))
    return h


def blstm_encode(inputs, p: BlstmParams) -> Tensor:
    """Concat of final forward and final backward hidden states, width 2H."""
    if not inputs:
        raise ValueError("blstm_encode: empty input sequence")
    fwd = lstm_final_state(inputs, p.fwd)
    bwd = lstm_final_state(list(reversed(inputs)), p.bwd)
    return ag.concat([fwd, bwd])


def encode_current(embeddings, v_his, W_his: Tensor, p: BlstmParams,
                   mode: str = "concat") -> Tensor:
    """Encode the current utterance conditioned on the history summary.

    ``mode="concat"`` (default): the projected history vector W_his @ v_his
    is concatenated to every timestep's word embedding; with no history a
    zero vector of the same width is used, keeping parameter shapes fixed
    across variants.  ``mode="init"`` instead seeds both directions' initial
    hidden state with the projection (alternative reading, non-default).
    """
    if W_his is not None and v_his is not None:
        proj = ag.matmul(W_his, v_his)
    else:
        proj = None
    if mode == "concat":
        # the history slot is always present (zeroed when there is no
        # history), keeping parameter shapes fixed across variants
        if proj is None:
            proj = ag.zeros(embeddings[0].size if embeddings else 0)
        inputs = [ag.concat([e, proj]) for e in embeddings]
        return blstm_encode(inputs, p)
    if mode == "init":
        return _blstm_encode_init(list(embeddings), p, proj)
    raise ValueError(f"encode_current: unknown mode {mode!r}")


def _blstm_encode_init(inputs, p: BlstmParams, h0) -> Tensor:
    if not inputs:
        raise ValueError("blstm_encode: empty input sequence")
    outs = []
    for dir_p, seq in ((p.fwd, inputs), (p.bwd, list(reversed(inputs)))):
        H = dir_p.hidden
        h = ag.zeros(H) if h0 is None else h0
        c = ag.zeros(H)
        for x in seq:
            z = ag.add(ag.matmul(dir_p.W, ag.concat([x, h])), dir_p.b)
            ifo = ag.sigmoid(ag.slice1d(z, 0, 3 * H))
            i = ag.slice1d(ifo, 0, H)
            f = ag.slice1d(ifo, H, 2 * H)
            o = ag.slice1d(ifo, 2 * H, 3 * H)
            g = ag.tanh(ag.slice1d(z, 3 * H, 4 * H))
            c = ag.add(ag.mul(f, c), ag.mul(i, g))
            h = ag.mul(o, ag.tanh(c))
        outs.append(h)
    return ag.concat(outs)


class OutputHead:
    def __init__(self, W: Tensor, b: Tensor, theta: float = 0.5):
        self.W = W
        self.b = b
        self.theta = theta


def predict_scores(v_cur: Tensor, head: OutputHead) -> Tensor:
    return ag.sigmoid(ag.add(ag.matmul(head.W, v_cur), head.b))


def decide_labels(scores: np.ndarray, theta: float) -> set:
    """Strictly-above-threshold decision; the empty set is a valid output."""
    return {k for k, s in enumerate(scores) if s > theta}


def predict(v_cur: Tensor, head: OutputHead):
    scores = predict_scores(v_cur, head)
    return scores, decide_labels(scores.data, head.theta)
