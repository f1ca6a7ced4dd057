import json
import math
import os
from collections import Counter
from functools import lru_cache

import numpy as np
import pytest

from corpus_tools import load_dataset
from metrics import (
    UnmatchedIdsError, bleu4_corpus, evaluate, format_report, make_pairs, meteor_lite, meteor_lite_pair, rouge_l,
    rouge_l_pair, score, sentence_bleu,
)
from models import EvalPair, GeneratedRecord
from tokenizer_vocab import tokenize


def pair(candidate, *references):
    return make_pairs([candidate], [list(references)])[0]


@pytest.fixture
def fixture_pairs(fixtures_dir):
    candidates, references = [], []
    with open(os.path.join(fixtures_dir, "metric_pairs.jsonl"), encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            candidates.append(row["candidate"])
            references.append(row["references"])
    return make_pairs(candidates, references)


def naive_bleu(pairs):
    matched, totals = [0] * 4, [0] * 4
    c = r = 0
    for p in pairs:
        for n in range(1, 5):
            grams = [tuple(p.candidate[i:i + n]) for i in range(len(p.candidate) - n + 1)]
            for gram in set(grams):
                best = 0
                for ref in p.references:
                    ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
                    best = max(best, ref_grams.count(gram))
                matched[n - 1] += min(grams.count(gram), best)
            totals[n - 1] += len(grams)
        c += len(p.candidate)
        lengths = sorted(len(ref) for ref in p.references)
        r += min(lengths, key=lambda length: abs(length - len(p.candidate)))
    if 0 in matched:
        return 0.0
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(sum(math.log(m / t) for m, t in zip(matched, totals)) / 4)


def naive_lcs(a, b):
    @lru_cache(maxsize=None)
    def lcs(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + lcs(i + 1, j + 1)
        return max(lcs(i + 1, j), lcs(i, j + 1))
    return lcs(0, 0)


def naive_rouge(pairs, beta=1.2):
    total = 0.0
    for p in pairs:
        best = 0.0
        for ref in p.references:
            lcs = naive_lcs(tuple(p.candidate), tuple(ref))
            if lcs:
                rec, prec = lcs / len(ref), lcs / len(p.candidate)
                best = max(best, (1 + beta ** 2) * rec * prec / (rec + beta ** 2 * prec))
        total += best
    return total / len(pairs)


def naive_meteor_pair(candidate, reference):
    """Best METEOR-lite score over every maximum exact-match alignment."""
    best_matches, best_chunks = 0, None

    def walk(i, used, links):
        nonlocal best_matches, best_chunks
        if i == len(candidate):
            if not links:
                return
            chunks = 1 + sum(1 for (a, b), (c, d) in zip(links, links[1:]) if c != a + 1 or d != b + 1)
            if len(links) > best_matches or (len(links) == best_matches and chunks < best_chunks):
                best_matches, best_chunks = len(links), chunks
            return
        walk(i + 1, used, links)
        for j, tok in enumerate(reference):
            if tok == candidate[i] and j not in used:
                walk(i + 1, used | {j}, links + [(i, j)])

    walk(0, frozenset(), [])
    if best_matches == 0:
        return 0.0
    precision, recall = best_matches / len(candidate), best_matches / len(reference)
    f_mean = precision * recall / (0.9 * precision + 0.1 * recall)
    return f_mean * (1 - 0.5 * (best_chunks / best_matches) ** 3)


def naive_meteor(pairs):
    return sum(max(naive_meteor_pair(p.candidate, ref) for ref in p.references) for p in pairs) / len(pairs)


def test_bleu_identity_and_zero():
    assert bleu4_corpus([pair("what does tom eat for breakfast ?", "what does tom eat for breakfast ?")]) == 1.0
    assert bleu4_corpus([pair("a b c d", "e f g h")]) == 0.0
    assert bleu4_corpus([pair("", "chess")]) == 0.0
    with pytest.raises(ValueError):
        bleu4_corpus([])


def test_smoothed_sentence_bleu_hand_computed():
    p = pair("the cat on the mat", "the cat sat on the mat")
    expected = math.exp(-0.2) * (1 * 0.8 * 0.5 / 3) ** 0.25
    assert sentence_bleu(p.candidate, p.references) == pytest.approx(expected, abs=1e-12)
    assert sentence_bleu(p.candidate, p.references, smooth=False) == 0.0


def test_rouge_l_hand_computed():
    assert rouge_l_pair(tokenize("tom eats bread"), tokenize("tom eats brown bread")) == pytest.approx(1.83 / 2.19)
    assert rouge_l_pair(["a", "c", "d"], ["a", "b", "c", "d"]) == pytest.approx(2.44 * 0.75 / (0.75 + 1.44))
    assert rouge_l_pair(["a"], ["b"]) == 0.0
    assert rouge_l_pair([], ["b"]) == 0.0


def test_meteor_lite_hand_computed():
    assert meteor_lite_pair(["chess"], ["chess"]) == pytest.approx(0.5)
    assert meteor_lite_pair(tokenize("quick the fox"), tokenize("the quick fox")) == pytest.approx(0.5)
    words = tokenize("what does tom eat ?")
    assert meteor_lite_pair(words, words) == pytest.approx(1 - 0.5 / 125)
    assert meteor_lite_pair([], ["chess"]) == 0.0


def test_fixture_matches_naive_reimplementation(fixture_pairs):
    assert len(fixture_pairs) == 10
    assert bleu4_corpus(fixture_pairs) == pytest.approx(naive_bleu(fixture_pairs), abs=1e-9)
    assert rouge_l(fixture_pairs) == pytest.approx(naive_rouge(fixture_pairs), abs=1e-9)
    assert meteor_lite(fixture_pairs) == pytest.approx(naive_meteor(fixture_pairs), abs=1e-9)


def test_meteor_lite_never_beats_the_best_alignment():
    rng = np.random.default_rng(5)
    words = ["a", "b", "c", "the"]
    for _ in range(200):
        candidate = [str(w) for w in rng.choice(words, size=int(rng.integers(1, 7)))]
        reference = [str(w) for w in rng.choice(words, size=int(rng.integers(1, 7)))]
        assert meteor_lite_pair(candidate, reference) <= naive_meteor_pair(candidate, reference) + 1e-12
    # greedy takes "a b" at the front and splits the match into two chunks
    candidate, reference = tokenize("a b c"), tokenize("a b x a b c")
    assert naive_meteor_pair(candidate, reference) == pytest.approx((0.5 / 0.95) * (1 - 0.5 / 27))
    assert meteor_lite_pair(candidate, reference) == pytest.approx((0.5 / 0.95) * (1 - 0.5 * (2 / 3) ** 3))


def test_scores_ignore_pair_order(fixture_pairs):
    shuffled = fixture_pairs[::-1]
    assert bleu4_corpus(shuffled) == bleu4_corpus(fixture_pairs)
    assert rouge_l(shuffled) == pytest.approx(rouge_l(fixture_pairs), abs=1e-12)
    assert meteor_lite(shuffled) == pytest.approx(meteor_lite(fixture_pairs), abs=1e-12)


def test_extra_reference_never_lowers_scores(fixture_pairs):
    for p in fixture_pairs:
        extended = EvalPair(candidate=p.candidate, references=p.references + [tokenize("the fox at home")])
        assert rouge_l([extended]) >= rouge_l([p])
        assert meteor_lite([extended]) >= meteor_lite([p])
        if p.candidate:
            exact = EvalPair(candidate=p.candidate, references=p.references + [p.candidate])
            assert sentence_bleu(exact.candidate, exact.references) >= sentence_bleu(p.candidate, p.references)


def test_text_is_tokenized_before_scoring():
    assert bleu4_corpus(make_pairs(["What does Tom eat?"], [["what does tom eat ?"]])) == 1.0


def test_empty_score_report():
    report = score([])
    assert (report.bleu4, report.rouge_l, report.meteor, report.n) == (0.0, 0.0, 0.0, 0)


def gold_records(examples):
    return [GeneratedRecord(id=ex.id, passage_id=ex.pid, keyphrases=[], question=ex.question, answer=ex.answer,
                            iteration=1) for ex in examples]


def test_evaluate_gold_against_itself(fixtures_dir):
    gold = load_dataset(os.path.join(fixtures_dir, "golden.jsonl"))
    question, answer = evaluate(gold_records(gold), gold)
    assert question.n == answer.n == 3
    text = format_report(question, answer)
    for key in ("question.bleu4=100.00", "question.rouge_l=100.00", "answer.bleu4=100.00", "answer.rouge_l=100.00"):
        assert key in text.split()


def test_evaluate_rejects_unknown_passages(fixtures_dir):
    gold = load_dataset(os.path.join(fixtures_dir, "golden.jsonl"))
    stray = GeneratedRecord(id="x-q0", passage_id="nowhere", keyphrases=[], question="q", answer="a", iteration=1)
    with pytest.raises(UnmatchedIdsError) as info:
        evaluate(gold_records(gold) + [stray], gold)
    assert info.value.ids == ["x-q0"]


def test_report_layout():
    report = score([pair("the cat on the mat", "the cat sat on the mat")])
    lines = format_report(report, report).splitlines()
    assert len(lines) == 4
    assert lines[0].split() == ["BLEU-4", "ROUGE-L", "METEOR-lite", "n"]
    assert lines[1].startswith("question") and lines[2].startswith("answer")
    keys = [item.split("=")[0] for item in lines[3].split()]
    assert keys == ["question.bleu4", "question.rouge_l", "question.meteor_lite", "question.n",
                    "answer.bleu4", "answer.rouge_l", "answer.meteor_lite", "answer.n"]
    assert Counter(keys).most_common(1)[0][1] == 1
