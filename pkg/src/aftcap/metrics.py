"""Corpus-level caption metrics: BLEU_1..4, ROUGE-L, CIDEr-D.

Conventions match the standard captioning-challenge evaluator: BLEU uses
clipped n-gram counts, a geometric mean over orders, and the closest-length
brevity penalty; ROUGE-L takes the max F-score over references with
beta = 1.2; CIDEr-D uses TF-IDF n-gram cosines (n = 1..4) with count
clipping and a gaussian length penalty (sigma = 6), scaled by 10.

Inputs are token lists with special markers already stripped.  All scores
are pure functions of the token sequences.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass


@dataclass
class EvalPair:
    candidate: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references:
            raise ValueError("need at least one reference")


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def bleu_n(pairs: list[EvalPair], n: int) -> float:
    """Corpus BLEU with orders 1..n."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    clipped = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        cand = pair.candidate
        cand_len += len(cand)
        # closest reference length; ties prefer the shorter
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in pair.references)[1]
        for k in range(1, n + 1):
            counts = ngrams(cand, k)
            max_ref = Counter()
            for ref in pair.references:
                for g, c in ngrams(ref, k).items():
                    max_ref[g] = max(max_ref[g], c)
            totals[k - 1] += max(0, len(cand) - k + 1)
            clipped[k - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
    if any(t == 0 for t in totals) or any(c == 0 for c in clipped):
        return 0.0
    log_p = sum(math.log(c / t) for c, t in zip(clipped, totals)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(1, cand_len))
    return bp * math.exp(log_p)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_len(a: list[str], b: list[str]) -> int:
    dp = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[-1]


def rouge_l(pairs: list[EvalPair], beta: float = 1.2) -> float:
    """Mean over pairs of the best F_beta(LCS precision, LCS recall) per reference."""
    scores = []
    for pair in pairs:
        cand = pair.candidate
        best = 0.0
        for ref in pair.references:
            if not cand or not ref:
                continue
            lcs = _lcs_len(cand, ref)
            if lcs == 0:
                continue
            p = lcs / len(cand)
            r = lcs / len(ref)
            best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
        scores.append(best)
    return float(sum(scores) / len(scores)) if scores else 0.0


# ---------------------------------------------------------------------------
# CIDEr-D


def cider_d(pairs: list[EvalPair], n_max: int = 4, sigma: float = 6.0) -> float:
    """Consensus score: clipped TF-IDF n-gram cosines with a length penalty.

    Document frequency counts, per n-gram, how many clips have it in at
    least one reference; IDF is log(#clips) - log(max(1, df)).  Needs a
    corpus of at least two clips for the IDF to be defined.
    """
    if len(pairs) < 2:
        raise ValueError("IDF undefined: need a corpus of at least 2 clips")
    doc_freq = [defaultdict(int) for _ in range(n_max)]
    for pair in pairs:
        for k in range(1, n_max + 1):
            seen = set()
            for ref in pair.references:
                seen.update(ngrams(ref, k).keys())
            for g in seen:
                doc_freq[k - 1][g] += 1
    log_docs = math.log(len(pairs))

    def tfidf(tokens: list[str], k: int) -> dict:
        vec = {}
        for g, c in ngrams(tokens, k).items():
            idf = log_docs - math.log(max(1.0, doc_freq[k - 1][g]))
            vec[g] = c * idf
        return vec

    def norm(vec: dict) -> float:
        return math.sqrt(sum(v * v for v in vec.values()))

    total = 0.0
    for pair in pairs:
        per_n = []
        for k in range(1, n_max + 1):
            cvec = tfidf(pair.candidate, k)
            cnorm = norm(cvec)
            acc = 0.0
            for ref in pair.references:
                rvec = tfidf(ref, k)
                rnorm = norm(rvec)
                if cnorm == 0.0 or rnorm == 0.0:
                    continue
                # clipped dot product: candidate counts capped by the reference's
                dot = sum(min(cvec[g], rvec[g]) * rvec[g] for g in cvec if g in rvec)
                delta = len(pair.candidate) - len(ref)
                penalty = math.exp(-(delta ** 2) / (2.0 * sigma ** 2))
                acc += penalty * dot / (cnorm * rnorm)
            per_n.append(acc / len(pair.references))
        total += 10.0 * sum(per_n) / n_max
    return total / len(pairs)


def evaluate_pairs(pairs: list[EvalPair]) -> dict:
    out = {f"bleu{k}": bleu_n(pairs, k) for k in range(1, 5)}
    out["rouge_l"] = rouge_l(pairs)
    out["cider_d"] = cider_d(pairs)
    return out


# ---------------------------------------------------------------------------
# file formats


def strip_specials(words: list[str]) -> list[str]:
    return [w for w in words if not (w.startswith("<") and w.endswith(">"))]


def read_eval_pairs(path) -> list[EvalPair]:
    """JSON-lines records {clip_id, candidate, references[]} with plain text fields."""
    from .embedding import tokenize
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            cand = strip_specials(tokenize(rec["candidate"])[1:-1]) if rec["candidate"].strip() else []
            refs = [strip_specials(tokenize(r)[1:-1]) for r in rec["references"]]
            pairs.append(EvalPair(candidate=cand, references=refs))
    return pairs
