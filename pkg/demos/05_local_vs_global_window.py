"""The ablation in miniature: local-window vs window-free cross weights.

Trains both variants on the same seeds and prints the CIDEr-D comparison;
`aftcap ablate` runs the full-size version of this with a table on disk.
"""

import statistics

from aftcap import datagen as dg
from aftcap.decoder import DecoderConfig
from aftcap.decoding import caption_corpus
from aftcap.embedding import tokenize
from aftcap.metrics import EvalPair, cider_d, strip_specials
from aftcap.training import TrainConfig, train

spec_a, _ = dg.standard_pairs(space="encoder")
spec_a.n_clips = 300  # a slice of corpus A keeps the demo quick
corpus = dg.generate_corpus(spec_a)
window = max(1, round(corpus.spec.frames / 4))
print(f"feature length {corpus.spec.frames}, local window {window}")

refs = {c.clip_id: c.captions for c in corpus.split_clips("eval")}


def toks(text):
    return strip_specials(tokenize(text)[1:-1]) if text.strip() else []


def run(win, seed):
    cfg = TrainConfig(batch_size=16, lr=1e-3, epochs=8, seed=seed,
                      decoder=DecoderConfig(dim=corpus.spec.bands, n_blocks=2,
                                            n_max=40, l_max=64, window=win))
    result = train(corpus, cfg)
    records = caption_corpus(result.model, corpus.split_clips("eval"), beam=5, max_len=30)
    pairs = [EvalPair(toks(r["caption"]), [toks(c) for c in refs[r["clip_id"]]])
             for r in records]
    return cider_d(pairs)


scores = {"local": [], "global": []}
for seed in range(3):
    for name, win in (("local", window), ("global", None)):
        score = run(win, seed)
        scores[name].append(score)
        print(f"seed {seed} {name:6s} CIDEr-D {score:.4f}")

print("\nmedians:")
for name, vals in scores.items():
    print(f"  {name:6s} {statistics.median(vals):.4f}")
