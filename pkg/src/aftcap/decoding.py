"""Autoregressive caption generation: greedy and beam search.

Both searches talk to a model through one method, ``next_log_probs(prefixes)
-> (B, V) array``, scoring the next token for a batch of equal-length
prefixes.  The real adapter recomputes the decoder forward pass on the whole
prefix each step (quadratic but trivially correct: by causality it matches
the full-sequence forward exactly); planted toy models implement the same
protocol in tests.

Hypothesis scores are cumulative log-probs; final ranking normalizes by
generated length (exponent 1) so short captions are not systematically
favored.  Padding and start markers are never candidates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .decoder import EOS_ID, PAD_ID, SOS_ID


@dataclass
class DecodeResult:
    ids: list[int]          # includes the start marker and, if finished, the end marker
    log_prob: float         # sum of chosen log-probs
    finished: bool

    @property
    def generated(self) -> int:
        return len(self.ids) - 1

    @property
    def norm_score(self) -> float:
        return self.log_prob / max(1, self.generated)


class DecoderLM:
    """Next-token scorer for one clip's features under a trained model."""

    def __init__(self, model, clip_features: np.ndarray):
        self.model = model
        if model.encoder is not None:
            feats = model.encoder.encode(clip_features, train=False)
            mask = None
        else:
            feats = Tensor(clip_features[None])
            mask = None
        self._feats = feats.data[0]
        self._mask = mask
        self.vocab_size = model.decoder.cfg.vocab_size
        self.max_positions = model.decoder.cfg.n_max

    def next_log_probs(self, prefixes: list[list[int]]) -> np.ndarray:
        ids = np.asarray(prefixes, dtype=np.int64)
        feats = Tensor(np.broadcast_to(self._feats, (ids.shape[0],) + self._feats.shape).copy())
        lp = self.model.decoder.forward(ids, feats)
        return lp.data[:, -1, :]


def _masked_row(row: np.ndarray) -> np.ndarray:
    out = row.copy()
    out[PAD_ID] = -np.inf
    out[SOS_ID] = -np.inf
    return out


def greedy_decode(lm, max_len: int) -> DecodeResult:
    """Append the argmax token until the end marker or the length cap.

    Ties break toward the lowest token id.  Hitting the cap yields an
    unterminated caption, flagged via ``finished=False``.
    """
    if max_len > lm.max_positions:
        raise ValueError(f"max_len {max_len} exceeds the model's {lm.max_positions} positions")
    prefix = [SOS_ID]
    total = 0.0
    for _ in range(max_len):
        row = _masked_row(lm.next_log_probs([prefix])[0])
        tok = int(np.argmax(row))  # first maximum = lowest id on ties
        total += float(row[tok])
        prefix.append(tok)
        if tok == EOS_ID:
            return DecodeResult(ids=prefix, log_prob=total, finished=True)
    return DecodeResult(ids=prefix, log_prob=total, finished=False)


def beam_decode(lm, k: int = 5, max_len: int = 30) -> tuple[DecodeResult, list[DecodeResult]]:
    """Breadth-k best-first search; returns (best, k-best list).

    Each step expands every live hypothesis over the whole vocabulary and
    keeps the global top k by cumulative score (ties: lower token id, then
    older hypothesis).  Hypotheses choosing the end marker freeze.  The
    final ranking uses length-normalized scores, preferring finished
    hypotheses; with k = 1 the search walks exactly the greedy path.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    if max_len > lm.max_positions:
        raise ValueError(f"max_len {max_len} exceeds the model's {lm.max_positions} positions")
    live: list[tuple[list[int], float]] = [([SOS_ID], 0.0)]
    finished: list[DecodeResult] = []
    for _ in range(max_len):
        if not live:
            break
        rows = lm.next_log_probs([p for p, _ in live])
        v = rows.shape[1]
        scores = np.array([s for _, s in live])[:, None] + rows
        scores[:, PAD_ID] = -np.inf
        scores[:, SOS_ID] = -np.inf
        flat = scores.ravel()
        n_take = min(k, int(np.isfinite(flat).sum()))
        # sort by (-score, hyp index, token id): deterministic tie-breaking
        hyp_idx = np.repeat(np.arange(len(live)), v)
        tok_idx = np.tile(np.arange(v), len(live))
        order = np.lexsort((tok_idx, hyp_idx, -flat))[:n_take]
        next_live = []
        for pos in order:
            h, t = int(hyp_idx[pos]), int(tok_idx[pos])
            ids = live[h][0] + [t]
            score = float(flat[pos])
            if t == EOS_ID:
                finished.append(DecodeResult(ids=ids, log_prob=score, finished=True))
            else:
                next_live.append((ids, score))
        live = next_live
    leftovers = [DecodeResult(ids=p, log_prob=s, finished=False) for p, s in live]
    pool = finished + leftovers
    pool.sort(key=lambda r: (-int(r.finished), -r.norm_score, r.ids))
    kbest = pool[:k]
    return kbest[0], kbest


def caption_clip(model, clip_features: np.ndarray, beam: int, max_len: int) -> DecodeResult:
    lm = DecoderLM(model, clip_features)
    if beam == 1:
        return greedy_decode(lm, max_len)
    best, _ = beam_decode(lm, k=beam, max_len=max_len)
    return best


def caption_corpus(model, clips, beam: int = 5, max_len: int = 30,
                   threads: int | None = None) -> list[dict]:
    """Decode clips (concurrently when asked) into caption records."""

    def one(clip):
        result = caption_clip(model, clip.features, beam, max_len)
        return {"clip_id": clip.clip_id,
                "caption": model.vocab.caption_text(result.ids),
                "log_prob": result.log_prob}

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, clips))
    return [one(clip) for clip in clips]
