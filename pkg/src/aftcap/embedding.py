"""Tokenization, vocabulary, and skip-gram word-embedding pretraining.

Captions are lowercased, stripped of punctuation, whitespace-split, and
wrapped in ``<sos>`` ... ``<eos>``.  The vocabulary reserves ids 0..3 for
``<pad>``, ``<sos>``, ``<eos>`` and ``<unk>``; everything else comes from the
training-split captions only.  Embeddings pretrain with skip-gram negative
sampling (unigram^0.75 noise distribution) and are fine-tuned during caption
training unless frozen.
"""

from __future__ import annotations

import string

import numpy as np

from .decoder import PAD_ID, UNK_ID

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
RESERVED = (PAD, SOS, EOS, UNK)

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def tokenize(caption: str) -> list[str]:
    """Lowercase, drop punctuation, split, and wrap with sequence markers."""
    if not caption or not caption.strip():
        raise ValueError("empty caption")
    words = caption.lower().translate(_PUNCT_TABLE).split()
    if not words:
        raise ValueError("caption contains no words after normalization")
    return [SOS] + words + [EOS]


def detokenize(tokens: list[str]) -> str:
    return " ".join(t for t in tokens if t not in RESERVED)


class Vocab:
    """token <-> id bijection with fixed reserved ids."""

    def __init__(self, tokens: list[str]):
        if list(tokens[:4]) != list(RESERVED):
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, captions: list[str]) -> "Vocab":
        seen = set()
        for cap in captions:
            seen.update(tokenize(cap)[1:-1])
        return cls(list(RESERVED) + sorted(seen))

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.index.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    def encode_caption(self, caption: str) -> np.ndarray:
        return self.encode(tokenize(caption))

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def caption_text(self, ids) -> str:
        return detokenize(self.decode(ids))

    def content_hash(self) -> str:
        import hashlib
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def pad_batch(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences to the batch max length; mask True at real tokens."""
    if not seqs:
        raise ValueError("empty batch")
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = s
        mask[r, : len(s)] = True
    return ids, mask


# ---------------------------------------------------------------------------
# skip-gram with negative sampling


class WordEmbedding:
    """V x D table; the <pad> row stays exactly zero."""

    def __init__(self, table: np.ndarray, vocab: Vocab):
        self.table = np.asarray(table, dtype=np.float64)
        self.vocab = vocab
        self.table[PAD_ID] = 0.0

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def rows_for(self, vocab: Vocab, rng: np.random.Generator) -> np.ndarray:
        """Table re-indexed to another vocabulary; unseen tokens get fresh rows."""
        d = self.dim
        out = rng.normal(0.0, 1.0 / np.sqrt(d), size=(len(vocab), d))
        for i, tok in enumerate(vocab.tokens):
            j = self.vocab.index.get(tok)
            if j is not None:
                out[i] = self.table[j]
        out[PAD_ID] = 0.0
        return out


def train_word2vec(corpus: list[np.ndarray], vocab: Vocab, dim: int,
                   window: int = 5, negatives: int = 5, epochs: int = 5,
                   lr: float = 0.025, rng: np.random.Generator | None = None,
                   return_losses: bool = False):
    """Skip-gram negative-sampling embeddings from id sequences.

    Returns the input-vector table wrapped in :class:`WordEmbedding`
    (optionally with per-epoch mean objective values).  Zero epochs return
    the untouched random initialization.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if len(vocab) < negatives + 1:
        raise ValueError(f"vocabulary of {len(vocab)} too small for {negatives} negatives")
    rng = rng or np.random.default_rng(0)
    v = len(vocab)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(v, dim))
    w_out = np.zeros((v, dim))
    w_in[PAD_ID] = 0.0

    counts = np.zeros(v)
    for seq in corpus:
        for t in seq:
            counts[t] += 1
    counts[PAD_ID] = 0.0
    noise = counts ** 0.75
    if noise.sum() == 0:
        raise ValueError("corpus contains no countable tokens")
    noise /= noise.sum()

    def sigmoid(x):
        return 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))

    losses = []
    for _ in range(epochs):
        total, n_pairs = 0.0, 0
        for seq in corpus:
            length = len(seq)
            for pos in range(length):
                center = int(seq[pos])
                if center == PAD_ID:
                    continue
                span = int(rng.integers(1, window + 1))
                for ctx in range(max(0, pos - span), min(length, pos + span + 1)):
                    if ctx == pos:
                        continue
                    target = int(seq[ctx])
                    negs = rng.choice(v, size=negatives, p=noise)
                    ids = np.concatenate(([target], negs))
                    sign = np.concatenate(([1.0], -np.ones(negatives)))
                    h = w_in[center]
                    scores = w_out[ids] @ h
                    probs = sigmoid(sign * scores)
                    total += -np.log(np.maximum(probs, 1e-12)).sum()
                    n_pairs += 1
                    grad_scores = sign * (probs - 1.0)  # d(-log sigma)/d(score) * sign
                    w_in[center] = h - lr * (grad_scores @ w_out[ids])
                    w_out[ids] -= lr * grad_scores[:, None] * h
        losses.append(total / max(1, n_pairs))
    emb = WordEmbedding(w_in, vocab)
    return (emb, losses) if return_losses else emb
