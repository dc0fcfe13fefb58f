"""Teacher-forcing training: label-smoothed cross entropy, Adam, transfer.

A training step encodes (or imports) audio features, runs the decoder on the
start-marked reference, scores the reference shifted left under the smoothed
loss, backpropagates through the tape, and applies one Adam update.  Whole
runs are deterministic given the config seed.

Checkpoints use the "LAFT" container: magic ``LAFT``, a u32 version, a u32
section count, then named sections (u32 name length, UTF-8 name, u32 rank,
u32 dims, float64 payload, all little-endian).  Parameters, optimizer
moments, encoder running statistics, and a JSON metadata blob (config
snapshot, vocabulary, vocab hash) all travel as sections, so load/save
round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
import numpy as np

from .autograd import Graph, Tensor, mul, tsum
from .datagen import Clip, Corpus
from .decoder import Decoder, DecoderConfig
from .embedding import Vocab, WordEmbedding, pad_batch
from .encoder import CnnEncoder, EncoderConfig
from .frontend import LogMelSpectrogram, spec_augment


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    label_smoothing: float = 0.1
    epochs: int = 30
    seed: int = 0
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    encoder: EncoderConfig | None = None  # None: import clip features directly
    augment: bool = False
    augment_masks: int = 2
    augment_width: int = 16
    grad_clip: float | None = None
    freeze_embeddings: bool = False
    train_refs: int = 1  # references per clip used as teacher-forcing targets

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label smoothing must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def smoothed_ce_loss(log_probs: Tensor, targets: np.ndarray,
                     target_mask: np.ndarray, smoothing: float) -> Tensor:
    """Mean over real tokens of the label-smoothed negative log likelihood.

    Each real position pays -[(1 - eps) * lp[target] + eps/(V-1) * sum of
    the other log-probs].  Padded positions are excluded entirely.
    """
    b, n, v = log_probs.shape
    count = int(target_mask.sum())
    if count == 0:
        raise ValueError("loss over an all-padding target batch")
    w = np.zeros((b, n, v))
    off = smoothing / (v - 1)
    w[target_mask] = off
    rows = np.nonzero(target_mask)
    w[rows[0], rows[1], targets[target_mask]] = 1.0 - smoothing
    return mul(tsum(mul(log_probs, Tensor(w))), Tensor(-1.0 / count))


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {k}")
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def clip_gradients(params: dict[str, Tensor], max_norm: float):
    total = np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params.values() if p.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale


# ---------------------------------------------------------------------------
# model assembly


class CaptionModel:
    """Optional CNN encoder + mixing decoder + vocabulary."""

    def __init__(self, vocab: Vocab, decoder: Decoder, encoder: CnnEncoder | None):
        self.vocab = vocab
        self.decoder = decoder
        self.encoder = encoder

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.decoder.parameters())
        if self.encoder is not None:
            params.update(self.encoder.parameters())
        return params

    def state(self) -> dict[str, np.ndarray]:
        return self.encoder.state() if self.encoder is not None else {}

    def batch_features(self, clips: list[Clip], train: bool,
                       rng: np.random.Generator | None = None,
                       augment_cfg: TrainConfig | None = None):
        """Stack clip features into (B, L, D) plus a frame mask.

        With an encoder, clip features are log-mel frames (optionally
        SpecAugmented when training) run through the CNN; otherwise they are
        imported directly as decoder inputs.
        """
        if self.encoder is not None:
            mats = []
            for clip in clips:
                frames = clip.features
                if train and augment_cfg is not None and augment_cfg.augment:
                    sg = spec_augment(
                        LogMelSpectrogram(frames, 0, 0),
                        augment_cfg.augment_masks, augment_cfg.augment_masks,
                        augment_cfg.augment_width, rng)
                    frames = sg.frames
                mats.append(frames)
            t_max = max(m.shape[0] for m in mats)
            t_max += (-t_max) % 16
            batch = np.zeros((len(mats), t_max, mats[0].shape[1]))
            mask = np.zeros((len(mats), t_max // 16), dtype=bool)
            for i, m in enumerate(mats):
                batch[i, : m.shape[0]] = m
                mask[i, : self.encoder.out_len(m.shape[0])] = True
            return self.encoder.encode(batch, train=train), mask
        dim = self.decoder.cfg.dim
        l_max = max(c.features.shape[0] for c in clips)
        feats = np.zeros((len(clips), l_max, dim))
        mask = np.zeros((len(clips), l_max), dtype=bool)
        for i, clip in enumerate(clips):
            l, d = clip.features.shape
            if d != dim:
                raise ValueError(f"imported features have dim {d}, decoder expects {dim}")
            feats[i, :l] = clip.features
            mask[i, :l] = True
        return Tensor(feats), mask


def build_model(corpus: Corpus, cfg: TrainConfig,
                embedding: WordEmbedding | None = None,
                vocab: Vocab | None = None) -> CaptionModel:
    """Model sized to the corpus: vocab from the training split's captions."""
    if vocab is None:
        caps = [c for clip in corpus.split_clips("train") for c in clip.captions]
        vocab = Vocab.build(caps)
    rng = np.random.default_rng(cfg.seed)
    dec_cfg = cfg.decoder
    dec_cfg.vocab_size = len(vocab)
    if cfg.encoder is None and corpus.spec.bands != dec_cfg.dim:
        raise ValueError(
            f"feature-import corpus carries dim {corpus.spec.bands}, decoder dim is {dec_cfg.dim}")
    table = None
    if embedding is not None:
        if embedding.dim != dec_cfg.dim:
            raise ValueError(f"pretrained embedding dim {embedding.dim} != decoder dim {dec_cfg.dim}")
        table = embedding.rows_for(vocab, rng)
    decoder = Decoder(dec_cfg, rng, embedding=table)
    encoder = CnnEncoder(cfg.encoder, rng) if cfg.encoder is not None else None
    return CaptionModel(vocab, decoder, encoder)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: CaptionModel
    history: list[dict]
    best_epoch: int


def _samples(corpus: Corpus, split: str, vocab: Vocab, refs: int):
    out = []
    for clip in corpus.split_clips(split):
        for cap in clip.captions[:refs]:
            out.append((clip, vocab.encode_caption(cap)))
    return out


def _batches(samples, batch_size, rng):
    # group similar caption lengths to limit padding waste, then shuffle batches
    order = sorted(range(len(samples)), key=lambda i: (len(samples[i][1]), i))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(chunks)
    return [[samples[i] for i in chunk] for chunk in chunks]


def _step_loss(model: CaptionModel, batch, cfg: TrainConfig, train: bool,
               rng: np.random.Generator) -> Tensor:
    clips = [clip for clip, _ in batch]
    ids, mask = pad_batch([ids for _, ids in batch])
    feats, frame_mask = model.batch_features(clips, train=train, rng=rng, augment_cfg=cfg)
    log_probs = model.decoder.forward(ids[:, :-1], feats, frame_mask=frame_mask,
                                      key_mask=mask[:, :-1])
    return smoothed_ce_loss(log_probs, ids[:, 1:], mask[:, 1:], cfg.label_smoothing)


def evaluate_loss(model: CaptionModel, corpus: Corpus, split: str, cfg: TrainConfig) -> float:
    samples = _samples(corpus, split, model.vocab, cfg.train_refs)
    if not samples:
        return float("nan")
    total, count = 0.0, 0
    for i in range(0, len(samples), cfg.batch_size):
        batch = samples[i:i + cfg.batch_size]
        loss = _step_loss(model, batch, cfg, train=False, rng=np.random.default_rng(0))
        total += loss.item() * len(batch)
        count += len(batch)
    return total / count


def next_token_accuracy(model: CaptionModel, corpus: Corpus, split: str, cfg: TrainConfig) -> float:
    """Teacher-forced share of correctly argmax-predicted next tokens."""
    samples = _samples(corpus, split, model.vocab, cfg.train_refs)
    hit, total = 0, 0
    for i in range(0, len(samples), cfg.batch_size):
        batch = samples[i:i + cfg.batch_size]
        clips = [clip for clip, _ in batch]
        ids, mask = pad_batch([ids for _, ids in batch])
        feats, frame_mask = model.batch_features(clips, train=False)
        lp = model.decoder.forward(ids[:, :-1], feats, frame_mask=frame_mask,
                                   key_mask=mask[:, :-1]).data
        pred = lp.argmax(axis=-1)
        tmask = mask[:, 1:]
        hit += int((pred[tmask] == ids[:, 1:][tmask]).sum())
        total += int(tmask.sum())
    return hit / max(1, total)


def train(corpus: Corpus, cfg: TrainConfig,
          embedding: WordEmbedding | None = None,
          model: CaptionModel | None = None,
          log_path=None, stop_fn=None) -> TrainResult:
    """Run the full loop; the returned model carries the best-val parameters.

    ``stop_fn(model, epoch)`` may end training early by returning True
    (checked after each epoch).
    """
    if model is None:
        model = build_model(corpus, cfg, embedding=embedding)
    params = model.parameters()
    optimized = dict(params)
    if cfg.freeze_embeddings:
        optimized.pop("dec.embed")
    opt = Adam(optimized, lr=cfg.lr)
    train_samples = _samples(corpus, "train", model.vocab, cfg.train_refs)
    if not train_samples:
        raise ValueError("training split is empty")
    history = []
    best = (float("inf"), -1, None, None)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        total, count = 0.0, 0
        for batch in _batches(train_samples, cfg.batch_size, rng):
            opt.zero_grad()
            with Graph() as graph:
                loss = _step_loss(model, batch, cfg, train=True, rng=rng)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"loss diverged to {value} at epoch {epoch}, step {count}; "
                    "lower the learning rate or check the input features")
            graph.backward(loss, params=list(optimized.values()))
            if cfg.grad_clip is not None:
                clip_gradients(optimized, cfg.grad_clip)
            opt.step()
            total += value * len(batch)
            count += len(batch)
        eval_loss = evaluate_loss(model, corpus, "val", cfg)
        record = {"epoch": epoch, "train_loss": total / count, "eval_loss": eval_loss}
        history.append(record)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        if np.isfinite(eval_loss) and eval_loss < best[0]:
            best = (eval_loss, epoch,
                    {k: p.data.copy() for k, p in params.items()},
                    dict(model.state()))
        if stop_fn is not None and stop_fn(model, epoch):
            return TrainResult(model=model, history=history, best_epoch=epoch)
    if best[2] is not None:
        for k, p in params.items():
            p.data[:] = best[2][k]
        if model.encoder is not None:
            model.encoder.load_state(best[3])
    return TrainResult(model=model, history=history, best_epoch=best[1])


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"LAFT"
CKPT_VERSION = 1


def _write_section(fh, name: str, array: np.ndarray):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    arr = np.ascontiguousarray(array, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def _encode_meta(meta: dict) -> np.ndarray:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(blob, dtype=np.uint8).astype(np.float64)


def _decode_meta(arr: np.ndarray) -> dict:
    return json.loads(arr.astype(np.uint8).tobytes().decode("utf-8"))


@dataclass
class Checkpoint:
    meta: dict
    params: dict[str, np.ndarray]
    state: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.meta["vocab"])


def save_checkpoint(path, model: CaptionModel, cfg: TrainConfig,
                    optimizer: Adam | None = None, extra_meta: dict | None = None):
    meta = {
        "vocab": model.vocab.tokens,
        "vocab_hash": model.vocab.content_hash(),
        "decoder": model.decoder.cfg.to_dict(),
        "encoder": model.encoder.cfg.to_dict() if model.encoder is not None else None,
        "train": {"batch_size": cfg.batch_size, "lr": cfg.lr,
                  "label_smoothing": cfg.label_smoothing, "epochs": cfg.epochs,
                  "seed": cfg.seed, "train_refs": cfg.train_refs},
        "adam_t": optimizer.t if optimizer is not None else 0,
    }
    if extra_meta:
        meta.update(extra_meta)
    sections = [("__meta__", _encode_meta(meta))]
    sections += [(f"param/{k}", p.data) for k, p in sorted(model.parameters().items())]
    sections += [(f"state/{k}", v) for k, v in sorted(model.state().items())]
    if optimizer is not None:
        sections += [(f"adam/m/{k}", v) for k, v in sorted(optimizer.m.items())]
        sections += [(f"adam/v/{k}", v) for k, v in sorted(optimizer.v.items())]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(sections)))
        for name, arr in sections:
            _write_section(fh, name, arr)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"not a checkpoint: bad magic {raw[:4]!r}")
    version, n_sections = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    sections = {}
    for _ in range(n_sections):
        (nlen,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        dims = struct.unpack(f"<{ndim}I", raw[pos:pos + 4 * ndim]) if ndim else ()
        pos += 4 * ndim
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(raw[pos:pos + 8 * n], dtype="<f8").reshape(dims)
        pos += 8 * n
        sections[name] = np.array(arr)
    meta = _decode_meta(sections.pop("__meta__"))
    out = Checkpoint(meta=meta, params={}, state={}, adam_m={}, adam_v={})
    for name, arr in sections.items():
        kind, _, key = name.partition("/")
        if kind == "param":
            out.params[key] = arr
        elif kind == "state":
            out.state[key] = arr
        elif kind == "adam":
            sub, _, key2 = key.partition("/")
            (out.adam_m if sub == "m" else out.adam_v)[key2] = arr
    return out


def model_from_checkpoint(ckpt: Checkpoint) -> CaptionModel:
    vocab = ckpt.vocab
    dec_cfg = DecoderConfig.from_dict(ckpt.meta["decoder"])
    rng = np.random.default_rng(0)
    decoder = Decoder(dec_cfg, rng)
    encoder = None
    if ckpt.meta.get("encoder"):
        encoder = CnnEncoder(EncoderConfig.from_dict(ckpt.meta["encoder"]), rng)
    model = CaptionModel(vocab, decoder, encoder)
    for k, p in model.parameters().items():
        if p.data.shape != ckpt.params[k].shape:
            raise ValueError(f"checkpoint/model shape mismatch for {k}")
        p.data[:] = ckpt.params[k]
    if encoder is not None and ckpt.state:
        encoder.load_state(ckpt.state)
    return model


def finetune(ckpt: Checkpoint, corpus: Corpus, cfg: TrainConfig,
             log_path=None) -> TrainResult:
    """Resume from a checkpoint on a new corpus.

    A changed vocabulary triggers an explicit remap: embedding rows and
    output-head columns follow their tokens; genuinely new tokens get fresh
    rows.  Every other parameter transfers as-is, so feature dims must match.
    """
    caps = [c for clip in corpus.split_clips("train") for c in clip.captions]
    new_vocab = Vocab.build(caps)
    old_vocab = ckpt.vocab
    dec_cfg = DecoderConfig.from_dict(ckpt.meta["decoder"])
    if cfg.decoder.dim != dec_cfg.dim:
        raise ValueError(f"checkpoint decoder dim {dec_cfg.dim} != configured dim {cfg.decoder.dim}")
    cfg.decoder = dec_cfg
    same_vocab = new_vocab.content_hash() == ckpt.meta["vocab_hash"]
    model = build_model(corpus, cfg, vocab=old_vocab if same_vocab else new_vocab)
    rng = np.random.default_rng([cfg.seed, 777])
    params = model.parameters()
    for k, p in params.items():
        src = ckpt.params.get(k)
        if src is None:
            continue
        if k == "dec.embed" and not same_vocab:
            for i, tok in enumerate(new_vocab.tokens):
                j = old_vocab.index.get(tok)
                if j is not None:
                    p.data[i] = src[j]
        elif k == "dec.out.w" and not same_vocab:
            for i, tok in enumerate(new_vocab.tokens):
                j = old_vocab.index.get(tok)
                if j is not None:
                    p.data[:, i] = src[:, j]
        elif k == "dec.out.b" and not same_vocab:
            for i, tok in enumerate(new_vocab.tokens):
                j = old_vocab.index.get(tok)
                if j is not None:
                    p.data[i] = src[j]
        else:
            if src.shape != p.data.shape:
                raise ValueError(f"checkpoint/config shape mismatch for {k}: {src.shape} vs {p.data.shape}")
            p.data[:] = src
    if model.encoder is not None and ckpt.state:
        model.encoder.load_state(ckpt.state)
    if cfg.epochs == 0:
        return TrainResult(model=model, history=[], best_epoch=-1)
    return train(corpus, cfg, model=model, log_path=log_path)
