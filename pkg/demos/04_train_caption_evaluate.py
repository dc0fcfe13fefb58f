"""End-to-end desk run: synthesize a corpus, train, decode, score.

Uses the encoder-space fast path (features imported directly) so the whole
demo takes well under a minute on one CPU core.
"""

from aftcap import datagen as dg
from aftcap.decoder import DecoderConfig
from aftcap.decoding import caption_corpus
from aftcap.embedding import tokenize
from aftcap.metrics import EvalPair, evaluate_pairs, strip_specials
from aftcap.training import TrainConfig, train

_, spec_b = dg.standard_pairs(space="encoder")
corpus = dg.generate_corpus(spec_b)
print(f"corpus: {len(corpus.clips)} clips, features {corpus.spec.frames}x{corpus.spec.bands}")
print("sample references:")
for cap in corpus.clips[0].captions[:3]:
    print("   ", cap)

cfg = TrainConfig(
    batch_size=16, lr=1e-3, epochs=8, seed=0,
    decoder=DecoderConfig(dim=corpus.spec.bands, n_blocks=2, n_max=40, l_max=64, window=5))
result = train(corpus, cfg)
for rec in result.history:
    print(f"epoch {rec['epoch']}: train {rec['train_loss']:.3f}  val {rec['eval_loss']:.3f}")

eval_clips = corpus.split_clips("eval")
records = caption_corpus(result.model, eval_clips, beam=5, max_len=30)
print("\nsample decodes (beam 5):")
for rec in records[:5]:
    truth = corpus.by_id(rec["clip_id"]).captions[0]
    print(f"  model: {rec['caption']}")
    print(f"  truth: {truth}\n")


def toks(text):
    return strip_specials(tokenize(text)[1:-1]) if text.strip() else []


pairs = [EvalPair(toks(r["caption"]), [toks(c) for c in corpus.by_id(r["clip_id"]).captions])
         for r in records]
scores = evaluate_pairs(pairs)
print("eval-split metrics:")
for k, v in sorted(scores.items()):
    print(f"  {k:8s} {v:.4f}")
