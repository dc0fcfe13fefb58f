"""Independent oracles shared by the unit and acceptance suites.

Everything here is written as literal transcriptions (loops, dense vectors,
exhaustive enumeration), deliberately ignorant of the library's vectorized
implementations.
"""

import math

import numpy as np

from aftcap.decoder import EOS_ID, PAD_ID, SOS_ID
from aftcap.decoding import DecodeResult
from aftcap.metrics import ngrams


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def token_mix_loop(q, k, v, m):
    """Per-(position, channel) double loop of the causal gated average."""
    n, d = q.shape
    out = np.zeros((n, d))
    for nn in range(n):
        for dd in range(d):
            num = 0.0
            den = 0.0
            for i in range(nn + 1):  # only already-generated positions
                w = np.exp(m[nn, i]) * np.exp(k[i, dd])
                num += w * v[i, dd]
                den += w
            out[nn, dd] = sigmoid(q[nn, dd]) * num / den
    return out


def local_rule(z, nn, ll, s):
    # 1-based indices, strict inequality
    return z if ((ll + 1) - (nn + 1)) < s else 0.0


def frame_mix_loop(gate_in, hk, hv, z, s):
    """Per-(position, channel) double loop of the windowed cross average."""
    n, d = gate_in.shape
    l = hk.shape[0]
    out = np.zeros((n, d))
    for nn in range(n):
        for dd in range(d):
            num = 0.0
            den = 0.0
            for ll in range(l):
                w = np.exp(local_rule(z[nn, ll], nn, ll, s)) * np.exp(hk[ll, dd])
                num += w * hv[ll, dd]
                den += w
            out[nn, dd] = sigmoid(gate_in[nn, dd]) * num / den
    return out


def cider_reference_transcription(pairs, n_max=4, sigma=6.0):
    """Dense-vector re-implementation of the consensus metric."""
    n_docs = len(pairs)
    scores = []
    for k in range(1, n_max + 1):
        df = {}
        for p in pairs:
            union = set()
            for ref in p.references:
                union |= set(ngrams(ref, k))
            for g in union:
                df[g] = df.get(g, 0) + 1
        per_pair = []
        for p in pairs:
            universe = sorted(set(ngrams(p.candidate, k)) | {g for r in p.references for g in ngrams(r, k)})
            gi = {g: i for i, g in enumerate(universe)}

            def vec(tokens):
                v = np.zeros(len(universe))
                for g, c in ngrams(tokens, k).items():
                    v[gi[g]] = c * (math.log(n_docs) - math.log(max(1.0, df.get(g, 0))))
                return v

            cv = vec(p.candidate)
            acc = 0.0
            for ref in p.references:
                rv = vec(ref)
                ncv, nrv = np.linalg.norm(cv), np.linalg.norm(rv)
                if ncv == 0 or nrv == 0:
                    continue
                sim = float(np.minimum(cv, rv) @ rv) / (ncv * nrv)
                acc += math.exp(-((len(p.candidate) - len(ref)) ** 2) / (2 * sigma ** 2)) * sim
            per_pair.append(acc / len(p.references))
        scores.append(per_pair)
    return float((np.array(scores).mean(axis=0) * 10.0).mean())


def exhaustive_best_decode(lm, max_len):
    """Enumerate the entire candidate space and rank like the beam search."""
    words = [t for t in range(lm.vocab_size) if t not in (PAD_ID, SOS_ID, EOS_ID)]
    results = []

    def extend(prefix, score):
        if len(prefix) - 1 == max_len:
            results.append(DecodeResult(ids=prefix, log_prob=score, finished=False))
            return
        row = lm.next_log_probs([prefix])[0]
        results.append(DecodeResult(ids=prefix + [EOS_ID], log_prob=score + row[EOS_ID], finished=True))
        for w in words:
            extend(prefix + [w], score + row[w])

    extend([SOS_ID], 0.0)
    results.sort(key=lambda r: (-int(r.finished), -r.norm_score, r.ids))
    return results[0]


class PlantedModel:
    """Deterministic random next-token distributions, seeded per prefix."""

    def __init__(self, vocab_size, seed=0, max_positions=40):
        self.vocab_size = vocab_size
        self.seed = seed
        self.max_positions = max_positions

    def row(self, prefix):
        rng = np.random.default_rng([self.seed] + list(prefix))
        logits = rng.uniform(-3, 3, self.vocab_size)
        return logits - np.log(np.exp(logits).sum())

    def next_log_probs(self, prefixes):
        return np.stack([self.row(p) for p in prefixes])
