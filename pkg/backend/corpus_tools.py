"""Dataset ingestion, corpus diagnostics and the synthetic toy corpora."""
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from config import ConfigError
from models import DatasetStats, QagExample, Split
from tokenizer_vocab import tokenize

logger = logging.getLogger(__name__)

_SENTENCE_RE = re.compile(r"[^.!?]*[.!?]+|[^.!?]+$")

M = TypeVar("M", bound=BaseModel)


class DatasetError(ValueError):
    pass


@dataclass
class RecordError:
    line: int
    message: str


def read_records(path: str, model: Type[M]) -> Tuple[List[M], List[RecordError]]:
    """Parses a JSON-lines file one record at a time; bad records are collected, not raised."""
    records: List[M] = []
    errors: List[RecordError] = []
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                errors.append(RecordError(line_no, f"not valid UTF-8 ({exc.reason} at byte {exc.start})"))
                continue
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError as exc:
                problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'record'}: {err['msg']}"
                                     for err in exc.errors())
                errors.append(RecordError(line_no, problems))
    return records, errors


def read_dataset(path: str) -> Tuple[List[QagExample], List[RecordError]]:
    return read_records(path, QagExample)


def load_dataset(path: str, strict: bool = False) -> List[QagExample]:
    """Valid records of ``path``; with ``strict`` any rejected record raises DatasetError."""
    examples, errors = read_dataset(path)
    for err in errors[:10]:
        logger.warning(f"⚠️ {path}:{err.line}: {err.message}")
    if errors:
        logger.warning(f"⚠️ {path}: {len(errors)} records rejected, {len(examples)} accepted")
    if not examples and not errors:
        logger.warning(f"⚠️ {path} holds no records")
    if strict and errors:
        raise DatasetError(f"{path}: {len(errors)} invalid records (first at line {errors[0].line}: "
                           f"{errors[0].message})")
    logger.info(f"✅ Loaded {len(examples)} records from {path}")
    return examples


def write_dataset(path: str, records: Iterable[BaseModel]) -> int:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json(exclude_none=True) + "\n")
            count += 1
    logger.info(f"💾 Wrote {count} records to {path}")
    return count


def _normalized(counter: Counter) -> Dict[str, float]:
    total = sum(counter.values())
    return {key: count / total for key, count in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))}


def question_type_distribution(examples: Sequence[QagExample]) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Shares of the leading unigram and leading bigram over all non-empty questions."""
    unigrams: Counter = Counter()
    bigrams: Counter = Counter()
    for ex in examples:
        tokens = tokenize(ex.question)
        if not tokens:
            continue
        unigrams[tokens[0]] += 1
        if len(tokens) > 1:
            bigrams[f"{tokens[0]} {tokens[1]}"] += 1
    return (_normalized(unigrams) if unigrams else {}), (_normalized(bigrams) if bigrams else {})


def _ngram_list(tokens: Sequence[str], n: int) -> List[Tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def ngram_match_ratio(examples: Sequence[QagExample], n: int, average: str = "macro") -> float:
    """Share of answer n-grams that also occur contiguously in the passage.

    ``macro`` (default) averages the per-answer share over all answers. An answer
    shorter than ``n`` has no new n-grams and keeps its share at its own length,
    so the ratio never grows with ``n``. ``micro`` pools n-gram occurrences over
    the corpus; short answers drop out of it, so it can grow with ``n`` on
    corpora of mixed answer lengths.
    """
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    if average not in ("micro", "macro"):
        raise ConfigError(f"average must be 'micro' or 'macro', got {average!r}")
    matched = total = 0
    shares: List[float] = []
    for ex in examples:
        answer = tokenize(ex.answer)
        if not answer:
            continue
        size = min(n, len(answer))
        grams = _ngram_list(answer, size)
        passage = set(_ngram_list(tokenize(ex.passage), size))
        hits = sum(1 for gram in grams if gram in passage)
        shares.append(hits / len(grams))
        if size == n:
            matched += hits
            total += len(grams)
    if average == "macro":
        return sum(shares) / len(shares) if shares else 0.0
    return matched / total if total else 0.0


def split_sentences(p: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_RE.findall(p) if s.strip()]


def most_similar_sentence(p: str, phrases: Sequence[str]) -> str:
    """Sentence of ``p`` covering the largest share of the phrase tokens; ties go to the earliest."""
    sentences = split_sentences(p)
    if not sentences:
        raise DatasetError("cannot pick a sentence from an empty passage")
    wanted = {tok for phrase in phrases for tok in tokenize(phrase)}
    if not wanted:
        return sentences[0]
    best, best_score = sentences[0], -1.0
    for sentence in sentences:
        overlap = len(wanted & set(tokenize(sentence))) / len(wanted)
        if overlap > best_score:
            best, best_score = sentence, overlap
    return best


def analyze(examples: Sequence[QagExample], average: str = "macro") -> DatasetStats:
    unigram, bigram = question_type_distribution(examples)
    counts = {split.value: 0 for split in Split}
    for ex in examples:
        counts[ex.split.value] += 1
    counts["total"] = len(examples)
    counts["passages"] = len({ex.pid for ex in examples})
    return DatasetStats(
        leading_unigram_dist=unigram,
        leading_bigram_dist=bigram,
        ngram_match={n: ngram_match_ratio(examples, n, average) for n in (1, 2, 3)},
        counts=counts,
    )


def format_stats(stats: DatasetStats, average: str = "macro", top: int = 10) -> str:
    lines = ["Dataset statistics", f"{'split':<12}{'records':>8}"]
    for key in ("train", "dev", "test", "total", "passages"):
        lines.append(f"{key:<12}{stats.counts.get(key, 0):>8}")
    lines.append("Leading unigrams")
    for key, share in list(stats.leading_unigram_dist.items())[:top]:
        lines.append(f"  {key:<20}{share * 100:7.2f}%")
    lines.append("Leading bigrams")
    for key, share in list(stats.leading_bigram_dist.items())[:top]:
        lines.append(f"  {key:<20}{share * 100:7.2f}%")
    lines.append(f"Answer n-gram match ratio (token-level, {average})")
    for n, ratio in sorted(stats.ngram_match.items()):
        lines.append(f"  n={n:<18}{ratio * 100:7.2f}%")
    lines.append("")
    lines += [f"count.{key}={value}" for key, value in stats.counts.items()]
    lines += [f"lead1.{key}={share:.4f}" for key, share in stats.leading_unigram_dist.items()]
    lines += [f"lead2.{key.replace(' ', '+')}={share:.4f}" for key, share in stats.leading_bigram_dist.items()]
    lines += [f"match.{average}.n{n}={ratio * 100:.2f}" for n, ratio in sorted(stats.ngram_match.items())]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Synthetic corpora

_NAMES = ["alice", "bruno", "chen", "dara", "emil", "farah", "goran", "hana", "ivan", "jun", "kofi", "lena"]
_JOBS = ["baker", "nurse", "teacher", "pilot", "farmer", "painter", "doctor", "driver"]
_PLACES = ["paris", "lagos", "lima", "oslo", "cairo", "hanoi", "quito", "dublin"]
_DAYS = ["monday", "tuesday", "friday", "sunday"]
_FOODS = ["bread", "rice", "eggs", "porridge", "pancakes", "noodles"]
_TOPPINGS = ["butter", "honey", "jam", "cheese", "milk", "beans"]
_PETS = ["dog", "cat", "parrot", "rabbit"]
_PET_NAMES = ["rex", "milo", "kiwi", "luna", "bean", "pip"]
_HOBBIES = ["chess", "football", "tennis", "cards", "basketball"]

_PASSAGE = ("{name} is a {job} who lives in {place} . every {day} {name} eats {food} with {topping} for breakfast . "
            "{name} has a {pet} called {petname} . after work {name} likes playing {hobby} with friends .")

_EXTRACTIVE_QA = [
    ("what does {name} eat for breakfast ?", "{food} with {topping}"),
    ("where does {name} live ?", "{place}"),
    ("what is the name of {name} 's {pet} ?", "{petname}"),
    ("what does {name} like playing after work ?", "{hobby}"),
    ("what is {name} 's job ?", "a {job}"),
]
_ABSTRACTIVE_QA = [
    ("why does {name} eat {food} every {day} ?", "because {name} thinks {food} is healthy"),
    ("why does {name} like playing {hobby} ?", "{name} really enjoys it"),
    ("how would you describe {name} ?", "a very hardworking {job}"),
    ("why does {name} have a {pet} ?", "to have company at home"),
]


def _split_for(index: int) -> Split:
    return {8: Split.dev, 9: Split.test}.get(index % 10, Split.train)


def make_synthetic_corpus(seed: int, size: int, profile: str = "abstractive") -> List[QagExample]:
    """``size`` templated records, two per passage.

    Extractive answers are passage spans, and every extractive passage asks the
    breakfast question so trigram ratios are defined. Abstractive answers keep at
    least half of their words out of the passage.
    """
    if size < 1:
        raise ConfigError(f"size must be at least 1, got {size}")
    if profile not in ("extractive", "abstractive"):
        raise ConfigError(f"unknown profile {profile!r}")
    rng = np.random.default_rng(seed)
    templates = _EXTRACTIVE_QA if profile == "extractive" else _ABSTRACTIVE_QA
    tag = profile[:3]

    def pick(options):
        return options[int(rng.integers(len(options)))]

    examples: List[QagExample] = []
    index = 0
    while len(examples) < size:
        slots = dict(name=pick(_NAMES), job=pick(_JOBS), place=pick(_PLACES), day=pick(_DAYS), food=pick(_FOODS),
                     topping=pick(_TOPPINGS), pet=pick(_PETS), petname=pick(_PET_NAMES), hobby=pick(_HOBBIES))
        passage = _PASSAGE.format(**slots)
        if profile == "extractive":
            chosen = [0, 1 + int(rng.integers(len(templates) - 1))]
        else:
            chosen = [int(i) for i in rng.choice(len(templates), size=2, replace=False)]
        for j, t in enumerate(chosen):
            if len(examples) == size:
                break
            question, answer = templates[t]
            examples.append(QagExample(
                id=f"{tag}-{seed}-{index:04d}-{j}",
                passage=passage,
                question=question.format(**slots),
                answer=answer.format(**slots),
                split=_split_for(index),
                passage_id=f"{tag}-{seed}-p{index:04d}",
            ))
        index += 1
    return examples
