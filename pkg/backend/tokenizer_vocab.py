"""Word-level tokenizer and corpus-built vocabulary."""
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK, CLS, KPSEP = "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[CLS]", "[KPSEP]"
SPECIALS: Tuple[str, ...] = (PAD, BOS, EOS, UNK, CLS, KPSEP)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, CLS_ID, KPSEP_ID = range(len(SPECIALS))

_TOKEN_RE = re.compile(r"\[(?:PAD|BOS|EOS|UNK|CLS|KPSEP)\]|\w+|[^\w\s]")


class VocabError(ValueError):
    pass


def tokenize(text: str) -> List[str]:
    """Lowercased words and standalone punctuation; bracketed special tokens pass through."""
    return [tok if tok in SPECIALS else tok.lower() for tok in _TOKEN_RE.findall(text)]


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise VocabError(f"vocabulary must start with the reserved tokens {SPECIALS}")
        self._itos: List[str] = list(tokens)
        self._stoi: Dict[str, int] = {}
        for i, tok in enumerate(self._itos):
            if tok in self._stoi:
                raise VocabError(f"duplicate vocabulary entry {tok!r} at id {i}")
            self._stoi[tok] = i

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos

    @property
    def tokens(self) -> List[str]:
        return list(self._itos)

    def id_of(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._itos[idx]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self._itos:
                f.write(tok + "\n")
        logger.info(f"💾 Saved vocabulary ({len(self)} tokens) to {path}")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(corpus: Iterable[str], min_freq: int = 1, max_size: int = 30000) -> Vocab:
    """Frequency-sorted vocabulary, ties broken lexicographically.

    ``max_size`` counts the reserved tokens too.
    """
    counts: Counter = Counter()
    docs = 0
    for text in corpus:
        docs += 1
        counts.update(tok for tok in tokenize(text) if tok not in SPECIALS)
    if docs == 0:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda tok: (-counts[tok], tok))
    room = max(0, max_size - len(SPECIALS))
    if len(kept) > room:
        logger.warning(f"⚠️ Vocabulary capped at {max_size}; dropping {len(kept) - room} rare tokens")
        kept = kept[:room]
    return Vocab(list(SPECIALS) + kept)


@dataclass(frozen=True)
class TokenSeq:
    ids: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)

    def __getitem__(self, item):
        return self.ids[item]


def encode(text: str, vocab: Vocab, add_bos_eos: bool = False) -> TokenSeq:
    ids = [vocab.id_of(tok) for tok in tokenize(text)]
    if add_bos_eos:
        ids = [BOS_ID] + ids + [EOS_ID]
    return TokenSeq(tuple(ids))


def decode(seq: Iterable[int], vocab: Vocab) -> str:
    """Detokenize content ids: PAD/BOS are skipped and output stops at the first EOS."""
    words = []
    for idx in seq:
        if idx == EOS_ID:
            break
        if idx in (PAD_ID, BOS_ID):
            continue
        words.append(vocab.token_of(idx))
    return " ".join(words)


def render(seq: Iterable[int], vocab: Vocab) -> str:
    """Every token verbatim, specials included."""
    return " ".join(vocab.token_of(idx) for idx in seq)
