"""Corpus BLEU-4, ROUGE-L and an exact-match METEOR variant (meteor_lite).

All text is tokenized with ``tokenizer_vocab.tokenize`` before scoring.
meteor_lite has no stemming or synonym stages, so its values are not
comparable to the reference METEOR implementation.
"""
import logging
import math
from collections import Counter
from typing import Dict, List, Sequence, Tuple

from models import EvalPair, GeneratedRecord, MetricReport, QagExample
from tokenizer_vocab import tokenize

logger = logging.getLogger(__name__)

MAX_ORDER = 4
ROUGE_BETA = 1.2


class UnmatchedIdsError(ValueError):
    def __init__(self, ids: Sequence[str]):
        self.ids = list(ids)
        super().__init__(f"{len(self.ids)} generated records reference unknown passages: {', '.join(self.ids)}")


def make_pairs(candidates: Sequence[str], references: Sequence[Sequence[str]]) -> List[EvalPair]:
    return [EvalPair(candidate=tokenize(c), references=[tokenize(r) for r in refs])
            for c, refs in zip(candidates, references)]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(candidate: Sequence[str], references: Sequence[Sequence[str]], n: int) -> Tuple[int, int]:
    cand = _ngrams(candidate, n)
    best: Counter = Counter()
    for ref in references:
        for gram, count in _ngrams(ref, n).items():
            best[gram] = max(best[gram], count)
    return sum(min(count, best[gram]) for gram, count in cand.items()), sum(cand.values())


def _closest_ref_length(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> int:
    return min((len(ref) for ref in references), key=lambda length: (abs(length - len(candidate)), length))


def _brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)


def bleu4_corpus(pairs: Sequence[EvalPair]) -> float:
    """Unsmoothed corpus BLEU: counts are pooled over all pairs before the geometric mean."""
    if not pairs:
        raise ValueError("bleu4_corpus needs at least one pair")
    matched = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    cand_len = ref_len = 0
    for pair in pairs:
        for n in range(1, MAX_ORDER + 1):
            hit, total = _clipped_counts(pair.candidate, pair.references, n)
            matched[n - 1] += hit
            totals[n - 1] += total
        cand_len += len(pair.candidate)
        ref_len += _closest_ref_length(pair.candidate, pair.references)
    if min(matched) == 0:
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, totals)) / MAX_ORDER
    return _brevity_penalty(cand_len, ref_len) * math.exp(log_precision)


def sentence_bleu(candidate: Sequence[str], references: Sequence[Sequence[str]], smooth: bool = True) -> float:
    """Single-pair BLEU-4; ``smooth`` adds one to the counts of orders 2-4."""
    log_precision = 0.0
    for n in range(1, MAX_ORDER + 1):
        hit, total = _clipped_counts(candidate, references, n)
        if smooth and n > 1:
            hit, total = hit + 1, total + 1
        if hit == 0 or total == 0:
            return 0.0
        log_precision += math.log(hit / total) / MAX_ORDER
    return _brevity_penalty(len(candidate), _closest_ref_length(candidate, references)) * math.exp(log_precision)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b):
            row.append(prev[j] + 1 if x == y else max(prev[j + 1], row[j]))
        prev = row
    return prev[-1]


def rouge_l_pair(candidate: Sequence[str], reference: Sequence[str], beta: float = ROUGE_BETA) -> float:
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    recall, precision = lcs / len(reference), lcs / len(candidate)
    return (1 + beta ** 2) * recall * precision / (recall + beta ** 2 * precision)


def rouge_l(pairs: Sequence[EvalPair]) -> float:
    if not pairs:
        raise ValueError("rouge_l needs at least one pair")
    return sum(max(rouge_l_pair(p.candidate, ref) for ref in p.references) for p in pairs) / len(pairs)


def _align(candidate: Sequence[str], reference: Sequence[str]) -> List[Tuple[int, int]]:
    """Greedy exact-match alignment; each candidate token prefers the reference slot after the previous match.

    The match count is always the maximum, but the chunk count is not always the
    fewest an exhaustive search over alignments would find, so with repeated
    tokens a pair can score slightly below full METEOR alignment.
    """
    used = set()
    pairs: List[Tuple[int, int]] = []
    for i, tok in enumerate(candidate):
        follow = pairs[-1][1] + 1 if pairs else None
        if follow is not None and follow < len(reference) and follow not in used and reference[follow] == tok:
            j = follow
        else:
            j = next((r for r, ref_tok in enumerate(reference) if ref_tok == tok and r not in used), None)
        if j is not None:
            used.add(j)
            pairs.append((i, j))
    return pairs


def meteor_lite_pair(candidate: Sequence[str], reference: Sequence[str]) -> float:
    alignment = _align(candidate, reference)
    matches = len(alignment)
    if matches == 0:
        return 0.0
    chunks = 1
    for (ci, ri), (pi, pr) in zip(alignment[1:], alignment):
        if ci != pi + 1 or ri != pr + 1:
            chunks += 1
    precision, recall = matches / len(candidate), matches / len(reference)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1 - penalty)


def meteor_lite(pairs: Sequence[EvalPair]) -> float:
    if not pairs:
        raise ValueError("meteor_lite needs at least one pair")
    return sum(max(meteor_lite_pair(p.candidate, ref) for ref in p.references) for p in pairs) / len(pairs)


def score(pairs: Sequence[EvalPair]) -> MetricReport:
    if not pairs:
        return MetricReport(bleu4=0.0, rouge_l=0.0, meteor=0.0, n=0)
    return MetricReport(bleu4=bleu4_corpus(pairs), rouge_l=rouge_l(pairs), meteor=meteor_lite(pairs), n=len(pairs))


def evaluate(generated: Sequence[GeneratedRecord],
             references: Sequence[QagExample]) -> Tuple[MetricReport, MetricReport]:
    """Scores generated questions and answers against every gold pair of the same passage."""
    gold_q: Dict[str, List[List[str]]] = {}
    gold_a: Dict[str, List[List[str]]] = {}
    for ex in references:
        if ex.question.strip():
            gold_q.setdefault(ex.pid, []).append(tokenize(ex.question))
        if ex.answer.strip():
            gold_a.setdefault(ex.pid, []).append(tokenize(ex.answer))

    unmatched = [rec.id for rec in generated if rec.passage_id not in gold_q or rec.passage_id not in gold_a]
    if unmatched:
        raise UnmatchedIdsError(unmatched)

    q_pairs = [EvalPair(candidate=tokenize(rec.question), references=gold_q[rec.passage_id]) for rec in generated]
    a_pairs = [EvalPair(candidate=tokenize(rec.answer), references=gold_a[rec.passage_id]) for rec in generated]
    q_report, a_report = score(q_pairs), score(a_pairs)
    logger.info(f"📊 Scored {len(generated)} generated pairs")
    return q_report, a_report


def format_report(question: MetricReport, answer: MetricReport) -> str:
    rows = [
        f"{'':10}{'BLEU-4':>10}{'ROUGE-L':>10}{'METEOR-lite':>13}{'n':>7}",
    ]
    for label, report in (("question", question), ("answer", answer)):
        rows.append(f"{label:10}{report.bleu4 * 100:10.2f}{report.rouge_l * 100:10.2f}"
                    f"{report.meteor * 100:13.2f}{report.n:7d}")
    rows.append(" ".join(question.key_values("question") + answer.key_values("answer")))
    return "\n".join(rows) + "\n"
