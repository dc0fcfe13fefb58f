import json
import math
import random

import pytest

from aftcap.metrics import EvalPair, bleu_n, cider_d, evaluate_pairs, read_eval_pairs, rouge_l


def pair(cand, *refs):
    return EvalPair(candidate=cand.split(), references=[r.split() for r in refs])


# ---------------------------------------------------------------------------
# BLEU


def test_bleu_identity_is_one():
    pairs = [pair("a dog barks in the rain", "a dog barks in the rain")]
    for n in range(1, 5):
        assert bleu_n(pairs, n) == pytest.approx(1.0)


def test_bleu_clipping_and_brevity_hand_case():
    # candidate "the the the the" vs reference "the cat is on the mat":
    # p1 = clip(4 -> 2)/4, BP = exp(1 - 6/4) since the candidate is shorter.
    pairs = [pair("the the the the", "the cat is on the mat")]
    want = (2.0 / 4.0) * math.exp(1.0 - 6.0 / 4.0)
    assert bleu_n(pairs, 1) == pytest.approx(want, abs=1e-12)


def test_bleu_disjoint_is_zero():
    assert bleu_n([pair("a b c", "x y z")], 1) == 0.0


def test_bleu_empty_candidate_scores_zero():
    assert bleu_n([EvalPair(candidate=[], references=[["a", "b"]])], 2) == 0.0


def test_bleu_zero_precision_at_any_order_zeroes_score():
    # shares unigrams but no bigram
    pairs = [pair("a c b", "a b c a")]
    assert bleu_n(pairs, 1) > 0.0
    assert bleu_n(pairs, 3) == 0.0


def test_bleu_prefix_extension_never_lowers_p1():
    rng = random.Random(0)
    vocab = list("abcdefg")
    for _ in range(50):
        ref = [rng.choice(vocab) for _ in range(8)]
        cut = rng.randrange(1, 7)
        shorter = [pair(" ".join(ref[:cut]), " ".join(ref))]
        longer = [pair(" ".join(ref[:cut + 1]), " ".join(ref))]
        assert bleu_n(longer, 1) >= bleu_n(shorter, 1) - 1e-12


# ---------------------------------------------------------------------------
# ROUGE-L


def test_rouge_identity_is_one():
    assert rouge_l([pair("a b c", "a b c")]) == pytest.approx(1.0)


def test_rouge_hand_lcs_case():
    # cand "a b c d", ref "a c d": LCS 3, P = 3/4, R = 1, beta = 1.2
    beta2 = 1.2 ** 2
    p, r = 3.0 / 4.0, 1.0
    want = (1 + beta2) * p * r / (r + beta2 * p)
    assert rouge_l([pair("a b c d", "a c d")]) == pytest.approx(want, abs=1e-12)


def test_rouge_disjoint_zero():
    assert rouge_l([pair("a b", "x y")]) == 0.0


# ---------------------------------------------------------------------------
# CIDEr-D


def test_cider_requires_corpus():
    with pytest.raises(ValueError, match="IDF undefined"):
        cider_d([pair("a b", "a b")])


def test_cider_identity_beats_perturbations():
    refs_a = ["a dog barks at night", "the dog is barking"]
    refs_b = ["rain falls softly", "soft rain keeps falling"]

    def corpus(cand_a):
        return [EvalPair(cand_a.split(), [r.split() for r in refs_a]),
                EvalPair(refs_b[0].split(), [r.split() for r in refs_b])]

    base = cider_d(corpus(refs_a[0]))
    for worse in ("a dog barks at", "a dog barks at dawn", "a cat barks at night", "night at barks dog a"):
        assert base > cider_d(corpus(worse))


def test_cider_no_overlap_zero_for_that_pair():
    pairs = [pair("q w e", "a b c", "a b d"),
             pair("x y z", "x y z")]
    only_second = [pair("", "a b c"), pairs[1]]
    # first pair contributes zero, so halving the corpus score of the
    # second pair alone reproduces the mixed corpus
    assert cider_d(pairs) == pytest.approx(cider_d(only_second), abs=1e-12)


from oracles import cider_reference_transcription as _cider_reference_transcription


def test_cider_matches_independent_transcription():
    pairs = [
        pair("a dog barks loudly", "a dog barks", "the dog barks loudly", "dog barking sounds"),
        pair("rain falls on the roof", "rain falls on a roof", "heavy rain on the roof"),
        pair("a horn honks twice", "the horn honks", "a car horn honks twice"),
    ]
    assert cider_d(pairs) == pytest.approx(_cider_reference_transcription(pairs), abs=1e-9)


# ---------------------------------------------------------------------------
# shared properties


def test_metrics_invariant_to_reference_order():
    rng = random.Random(1)
    pairs = [pair("a dog barks", "a dog barks softly", "the dog barks", "dogs bark"),
             pair("rain falls", "rain falls hard", "the rain falls")]
    shuffled = []
    for p in pairs:
        refs = list(p.references)
        rng.shuffle(refs)
        shuffled.append(EvalPair(p.candidate, refs))
    for fn in (lambda ps: bleu_n(ps, 4), rouge_l, cider_d):
        assert fn(pairs) == pytest.approx(fn(shuffled), abs=1e-12)


def test_evaluate_pairs_keys():
    pairs = [pair("a b", "a b"), pair("c d", "c d e")]
    out = evaluate_pairs(pairs)
    assert sorted(out) == ["bleu1", "bleu2", "bleu3", "bleu4", "cider_d", "rouge_l"]


def test_read_eval_pairs_jsonl(tmp_path):
    path = tmp_path / "pairs.jsonl"
    recs = [
        {"clip_id": "c0", "candidate": "A dog barks.", "references": ["a dog barks", "the dog barks"]},
        {"clip_id": "c1", "candidate": "rain falls", "references": ["rain falls"]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in recs))
    pairs = read_eval_pairs(path)
    assert pairs[0].candidate == ["a", "dog", "barks"]
    assert len(pairs[0].references) == 2
    assert bleu_n([pairs[1]], 1) == pytest.approx(1.0)
