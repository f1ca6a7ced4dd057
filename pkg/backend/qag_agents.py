"""Keyphrase, question and answer agents and the iterative QAG pipeline.

Stage 1 generates rough keyphrases from the passage. Stage 2 alternates
question generation and keyphrase refinement for ``m`` rounds, feeding the
question agent's final decoder states back into the keyphrase encoder.
Stage 3 generates the answer from ``[BOS] k [CLS] q [CLS] p [EOS]``.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import Config, ConfigError
from corpus_tools import most_similar_sentence
from models import (
    DecodeConfig, GeneratedRecord, GuidanceMode, KeyphraseTarget, ModelConfig, PipelineMode,
    QagExample, StrategyKind, TrainConfig, TrainStrategy,
)
from ngram_transformer import (
    ModelParams, decode_train, encode, generate, loss as stream_loss, sequence_loss, forced_states,
)
from tensor_autodiff import AdamState, Tensor, adam_step, add, backward, cross_entropy, no_grad, scale
from tokenizer_vocab import BOS_ID, CLS_ID, EOS_ID, KPSEP, Vocab, decode, encode as encode_text, normalize, tokenize

logger = logging.getLogger(__name__)

# Fixed English function-word list (127 entries).
STOPWORDS = frozenset("""
i me my myself we our ours ourselves you your yours yourself yourselves he him his himself she her hers
herself it its itself they them their theirs themselves what which who whom this that these those am is
are was were be been being have has had having do does did doing a an the and but if or because as until
while of at by for with about against between into through during before after above below to from up down
in out on off over under again further then once here there when where why how all any both each few more
most other some such no nor not only own same so than too very s t can will just don should now
""".split())

SHARED_DECODERS = ("qdec", "adec")
KPSEP_JOIN = f" {KPSEP} "


# ---------------------------------------------------------------------------
# Encoder input layouts

def _layout(before: List[int], passage: List[int], after: List[int], max_len: int, reserved: int = 0) -> List[int]:
    fixed = 2 + len(before) + len(after) + reserved
    if fixed > max_len:
        raise ConfigError(f"guidance of {fixed} positions leaves no room for the passage (max_len={max_len})")
    room = max_len - fixed
    if len(passage) > room:
        logger.debug(f"Passage truncated from {len(passage)} to {room} tokens")
        passage = passage[:room]
    return [BOS_ID] + before + passage + after + [EOS_ID]


def keyphrase_input(p: str, vocab: Vocab, max_len: int, reserved: int = 0) -> List[int]:
    """``[BOS] p [EOS]``; ``reserved`` positions are held back for prefix states."""
    return _layout([], list(encode_text(p, vocab)), [], max_len, reserved)


def qg_input(p: str, k: str, vocab: Vocab, max_len: int) -> List[int]:
    """``[BOS] p [CLS] k [EOS]``, or ``[BOS] p [EOS]`` when ``k`` is empty."""
    k_ids = list(encode_text(k, vocab))
    after = [CLS_ID] + k_ids if k_ids else []
    return _layout([], list(encode_text(p, vocab)), after, max_len)


def answer_input(k: str, q: str, p: str, vocab: Vocab, max_len: int) -> List[int]:
    """``[BOS] k [CLS] q [CLS] p [EOS]``; only the passage is ever truncated."""
    before = list(encode_text(k, vocab)) + [CLS_ID] + list(encode_text(q, vocab)) + [CLS_ID]
    return _layout(before, list(encode_text(p, vocab)), [], max_len)


def target_ids(text: str, vocab: Vocab) -> List[int]:
    return list(encode_text(text, vocab)) + [EOS_ID]


def split_keyphrases(text: str) -> List[str]:
    return [part.strip() for part in text.split(KPSEP) if part.strip()]


# ---------------------------------------------------------------------------
# Keyphrase targets

def answer_keyphrases(answer: str, stopwords=STOPWORDS) -> List[str]:
    """Runs of consecutive non-stop words; stop words and punctuation end a phrase."""
    phrases, run = [], []
    for tok in tokenize(answer):
        if tok in stopwords or not (tok[0].isalnum() or tok[0] == "_"):
            if run:
                phrases.append(" ".join(run))
            run = []
        else:
            run.append(tok)
    if run:
        phrases.append(" ".join(run))
    if not phrases and answer.strip():
        logger.warning(f"⚠️ Answer {answer!r} has only stop words; using it verbatim as a keyphrase")
        phrases = [normalize(answer)]
    return phrases


def build_keyphrase_targets(examples: Sequence[QagExample], stopwords=STOPWORDS,
                            extractive: bool = False) -> List[KeyphraseTarget]:
    """One target per passage. Extractive corpora keep their raw answers."""
    grouped: Dict[str, List[str]] = {}
    for ex in examples:
        if not ex.answer.strip():
            continue
        phrases = [normalize(ex.answer)] if extractive else answer_keyphrases(ex.answer, stopwords)
        bucket = grouped.setdefault(ex.pid, [])
        bucket.extend(ph for ph in phrases if ph not in bucket)
    return [KeyphraseTarget(passage_id=pid, phrases=phrases) for pid, phrases in grouped.items() if phrases]


def guidance_variants(example: QagExample, guidance: GuidanceMode, stopwords=STOPWORDS) -> List[str]:
    """Keyphrase strings a question or answer agent is trained to be guided by."""
    if guidance == GuidanceMode.none:
        return [""]
    if guidance == GuidanceMode.answer:
        return [normalize(example.answer)]
    phrases = answer_keyphrases(example.answer, stopwords)
    if guidance == GuidanceMode.sentence:
        return [most_similar_sentence(example.passage, phrases)]
    variants = list(phrases)
    if len(phrases) > 1:
        variants.append(KPSEP_JOIN.join(phrases))
    return variants


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class AgentSample:
    src: Tuple[int, ...]
    tgt: Tuple[int, ...]
    prefix: Optional[np.ndarray] = None
    dec: str = "dec"


@dataclass(frozen=True)
class JointSample:
    src: Tuple[int, ...]
    q_tgt: Tuple[int, ...]
    a_tgt: Tuple[int, ...]


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    loss: float

    def line(self) -> str:
        return f"stage={self.stage} epoch={self.epoch} loss={self.loss:.6f}"


def sample_loss(params: ModelParams, sample: AgentSample) -> Tensor:
    return sequence_loss(params, sample.src, sample.tgt, sample.prefix, sample.dec)


def joint_loss(params: ModelParams, sample: JointSample) -> Tensor:
    """Sum of the question-head and answer-head losses over one shared encoding."""
    enc = encode(sample.src, params)
    weights = params.config.stream_loss_weights
    q1, q2, _ = decode_train(sample.q_tgt, enc, params, SHARED_DECODERS[0])
    a1, a2, _ = decode_train(sample.a_tgt, enc, params, SHARED_DECODERS[1])
    return add(stream_loss(q1, q2, sample.q_tgt, weights), stream_loss(a1, a2, sample.a_tgt, weights))


def fit(params: ModelParams, samples: Sequence, train_cfg: TrainConfig, label: str,
        history: Optional[List[EpochRecord]] = None,
        loss_fn: Callable[[ModelParams, object], Tensor] = sample_loss) -> ModelParams:
    """Mini-batch Adam over ``samples`` for ``train_cfg.epochs`` epochs, in place."""
    if train_cfg.epochs == 0:
        return params
    if not samples:
        raise ConfigError(f"no training samples for {label}")
    state = AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    rng = np.random.default_rng(train_cfg.seed)
    batch_size = train_cfg.batch_size
    logger.info(f"🔄 Training {label}: {len(samples)} samples, {train_cfg.epochs} epochs, batch {batch_size}")
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(samples))
        batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        total = 0.0
        for batch in tqdm(batches, desc=f"{label} {epoch}/{train_cfg.epochs}", disable=not Config.PROGRESS,
                          leave=False):
            params.zero_grad()
            for idx in batch:
                value = loss_fn(params, samples[idx])
                total += value.item()
                backward(scale(value, 1.0 / len(batch)))
            adam_step(params.tensors, params.grads(), state)
        record = EpochRecord(label, epoch, total / len(samples))
        if history is not None:
            history.append(record)
        logger.info(f"📊 {record.line()}")
    params.zero_grad()
    return params


def corpus_nll(params: ModelParams, samples: Sequence[AgentSample]) -> float:
    """Per-token stream-1 negative log-likelihood."""
    total, tokens = 0.0, 0
    with no_grad():
        for sample in samples:
            enc = encode(sample.src, params, sample.prefix)
            logits1, _, _ = decode_train(sample.tgt, enc, params, sample.dec)
            count = logits1.shape[0]
            total += cross_entropy(logits1, list(sample.tgt)[:count]).item() * count
            tokens += count
    return total / tokens if tokens else 0.0


def _with_epochs(train_cfg: TrainConfig, epochs: int) -> TrainConfig:
    return train_cfg.model_copy(update={"epochs": epochs})


def keyphrase_samples(examples: Sequence[QagExample], vocab: Vocab, max_len: int, extractive: bool = False,
                      stopwords=STOPWORDS) -> List[AgentSample]:
    passages = {ex.pid: ex.passage for ex in examples}
    return [
        AgentSample(tuple(keyphrase_input(passages[t.passage_id], vocab, max_len)), tuple(target_ids(t.serialized, vocab)))
        for t in build_keyphrase_targets(examples, stopwords, extractive)
    ]


def question_samples(examples: Sequence[QagExample], vocab: Vocab, max_len: int,
                     guidance: GuidanceMode = GuidanceMode.generated, mode: PipelineMode = PipelineMode.fanout,
                     stopwords=STOPWORDS) -> List[AgentSample]:
    joint_keys = {t.passage_id: t.serialized for t in build_keyphrase_targets(examples, stopwords)}
    samples = []
    for ex in examples:
        if mode == PipelineMode.joint and guidance in (GuidanceMode.generated, GuidanceMode.golden):
            variants = [joint_keys.get(ex.pid, "")]
        else:
            variants = guidance_variants(ex, guidance, stopwords)
        tgt = tuple(target_ids(ex.question, vocab))
        samples.extend(AgentSample(tuple(qg_input(ex.passage, k, vocab, max_len)), tgt) for k in variants)
    return samples


def answer_samples(examples: Sequence[QagExample], vocab: Vocab, max_len: int,
                   guidance: GuidanceMode = GuidanceMode.generated, stopwords=STOPWORDS) -> List[AgentSample]:
    samples = []
    for ex in examples:
        tgt = tuple(target_ids(ex.answer, vocab))
        for k in guidance_variants(ex, guidance, stopwords):
            samples.append(AgentSample(tuple(answer_input(k, ex.question, ex.passage, vocab, max_len)), tgt))
    return samples


def cap_question_states(h_q: np.ndarray, max_len: int) -> np.ndarray:
    """At most ``max_len // 2`` question-state rows go ahead of the passage."""
    return h_q[:max_len // 2]


def refinement_samples(examples: Sequence[QagExample], vocab: Vocab, qg_params: ModelParams,
                       use_generated: bool = False, decode_cfg: Optional[DecodeConfig] = None,
                       stopwords=STOPWORDS, kg_max_len: Optional[int] = None) -> List[AgentSample]:
    """Prefix = QG final decoder states for a question; target = that answer's keyphrases."""
    max_len = qg_params.config.max_len
    kg_max_len = kg_max_len or max_len
    decode_cfg = decode_cfg or DecodeConfig()
    samples = []
    for ex in examples:
        phrases = answer_keyphrases(ex.answer, stopwords)
        if not phrases:
            continue
        tgt = tuple(target_ids(KPSEP_JOIN.join(phrases), vocab))
        for k in guidance_variants(ex, GuidanceMode.generated, stopwords):
            src = qg_input(ex.passage, k, vocab, max_len)
            if use_generated:
                _, h_q = qg_step(ex.passage, k, qg_params, vocab, decode_cfg)
            else:
                with no_grad():
                    enc = encode(src, qg_params)
                h_q = forced_states(target_ids(ex.question, vocab), enc, qg_params).h[1:]
            h_q = cap_question_states(h_q, kg_max_len)
            kg_src = keyphrase_input(ex.passage, vocab, kg_max_len, reserved=h_q.shape[0])
            samples.append(AgentSample(tuple(kg_src), tgt, prefix=h_q))
    return samples


def train_keyphrase_agent(corpus_a: Sequence[QagExample], corpus_b: Sequence[QagExample], strategy: TrainStrategy,
                          vocab: Vocab, model_cfg: ModelConfig, train_cfg: TrainConfig,
                          history: Optional[List[EpochRecord]] = None, stopwords=STOPWORDS) -> ModelParams:
    """Rough keyphrase agent.

    ``corpus_a`` is the extractive augmentation corpus (raw answers as targets),
    ``corpus_b`` the generative target corpus (stop-word-stripped answers).
    """
    samples_a = keyphrase_samples(corpus_a, vocab, model_cfg.max_len, extractive=True, stopwords=stopwords)
    samples_b = keyphrase_samples(corpus_b, vocab, model_cfg.max_len, extractive=False, stopwords=stopwords)
    kind = strategy.kind
    needed = {
        StrategyKind.two_stage: (samples_a, samples_b),
        StrategyKind.mixed: (samples_a + samples_b,),
        StrategyKind.squad_only: (samples_a,),
        StrategyKind.race_only: (samples_b,),
    }[kind]
    if any(not selected for selected in needed):
        raise ConfigError(f"strategy {kind.value} selects an empty corpus "
                          f"(extractive={len(samples_a)}, generative={len(samples_b)} passages)")

    params = ModelParams.init(model_cfg, train_cfg.seed)
    if kind == StrategyKind.two_stage:
        fit(params, samples_a, _with_epochs(train_cfg, strategy.epochs_stage1), "keyphrase.stage1", history)
        fit(params, samples_b, _with_epochs(train_cfg, strategy.epochs_stage2), "keyphrase.stage2", history)
    else:
        fit(params, needed[0], _with_epochs(train_cfg, strategy.epochs_stage1), f"keyphrase.{kind.value}", history)
    return params


def train_question_agent(examples: Sequence[QagExample], vocab: Vocab, model_cfg: ModelConfig,
                         train_cfg: TrainConfig, guidance: GuidanceMode = GuidanceMode.generated,
                         mode: PipelineMode = PipelineMode.fanout,
                         history: Optional[List[EpochRecord]] = None) -> ModelParams:
    samples = question_samples(examples, vocab, model_cfg.max_len, guidance, mode)
    return fit(ModelParams.init(model_cfg, train_cfg.seed), samples, train_cfg, "qg", history)


def train_refinement_agent(kp_params: ModelParams, qg_params: ModelParams, examples: Sequence[QagExample],
                           vocab: Vocab, train_cfg: TrainConfig, use_generated: bool = False,
                           history: Optional[List[EpochRecord]] = None) -> ModelParams:
    """Keyphrase agent fine-tuned to read QG decoder states ahead of the passage."""
    samples = refinement_samples(examples, vocab, qg_params, use_generated, kg_max_len=kp_params.config.max_len)
    return fit(kp_params.copy(), samples, train_cfg, "kg", history)


def train_answer_agent(examples: Sequence[QagExample], vocab: Vocab, model_cfg: ModelConfig,
                       train_cfg: TrainConfig, guidance: GuidanceMode = GuidanceMode.generated,
                       history: Optional[List[EpochRecord]] = None) -> ModelParams:
    samples = answer_samples(examples, vocab, model_cfg.max_len, guidance)
    return fit(ModelParams.init(model_cfg, train_cfg.seed), samples, train_cfg, "answer", history)


def shared_samples(examples: Sequence[QagExample], vocab: Vocab, max_len: int) -> List[JointSample]:
    return [
        JointSample(tuple(keyphrase_input(ex.passage, vocab, max_len)), tuple(target_ids(ex.question, vocab)),
                    tuple(target_ids(ex.answer, vocab)))
        for ex in examples
    ]


def train_shared_encoder(examples: Sequence[QagExample], vocab: Vocab, model_cfg: ModelConfig,
                         train_cfg: TrainConfig, history: Optional[List[EpochRecord]] = None) -> ModelParams:
    params = ModelParams.init(model_cfg, train_cfg.seed, decoders=SHARED_DECODERS)
    return fit(params, shared_samples(examples, vocab, model_cfg.max_len), train_cfg, "shared_encoder", history,
               loss_fn=joint_loss)


# ---------------------------------------------------------------------------
# Inference

def generate_rough_keyphrases(p: str, kp_params: ModelParams, vocab: Vocab,
                              decode_cfg: Optional[DecodeConfig] = None) -> List[str]:
    src = keyphrase_input(p, vocab, kp_params.config.max_len)
    ids = generate(src, kp_params, decode_cfg or DecodeConfig())
    return split_keyphrases(decode(ids, vocab))


def qg_step(p: str, k: str, qg_params: ModelParams, vocab: Vocab,
            decode_cfg: Optional[DecodeConfig] = None) -> Tuple[str, np.ndarray]:
    """Generates a question and returns it with its final decoder states ``[len(q) x d_model]``."""
    src = qg_input(p, k, vocab, qg_params.config.max_len)
    q_ids = list(generate(src, qg_params, decode_cfg or DecodeConfig()))
    with no_grad():
        enc = encode(src, qg_params)
    states = forced_states(q_ids + [EOS_ID], enc, qg_params)
    return decode(q_ids, vocab), states.h[1:]


def kg_refine_step(p: str, h_q: np.ndarray, kg_params: ModelParams, vocab: Vocab,
                   decode_cfg: Optional[DecodeConfig] = None) -> str:
    h_q = cap_question_states(h_q, kg_params.config.max_len)
    src = keyphrase_input(p, vocab, kg_params.config.max_len, reserved=h_q.shape[0])
    ids = generate(src, kg_params, decode_cfg or DecodeConfig(), prefix=h_q)
    return KPSEP_JOIN.join(split_keyphrases(decode(ids, vocab)))


@dataclass
class PipelineState:
    iteration: int
    keyphrase: str
    question: str = ""
    h_q: Optional[np.ndarray] = None
    history: List[Tuple[str, str]] = field(default_factory=list)


def iterate(p: str, k_1: str, qg_params: ModelParams, kg_params: ModelParams, m: int, vocab: Vocab,
            decode_cfg: Optional[DecodeConfig] = None, state: Optional[PipelineState] = None) -> PipelineState:
    """Runs question/keyphrase rounds until iteration ``m``.

    Passing a ``state`` from an earlier call continues from it; the rounds
    already run are not recomputed.
    """
    if m < 1:
        raise ConfigError(f"m must be at least 1, got {m}")
    if state is None:
        q, h_q = qg_step(p, k_1, qg_params, vocab, decode_cfg)
        state = PipelineState(iteration=1, keyphrase=k_1, question=q, h_q=h_q, history=[(k_1, q)])
    while state.iteration < m:
        refined = kg_refine_step(p, state.h_q, kg_params, vocab, decode_cfg)
        keyphrase = refined or state.keyphrase
        if not refined:
            logger.warning(f"⚠️ Refinement round {state.iteration + 1} produced no keyphrase; keeping {keyphrase!r}")
        q, h_q = qg_step(p, keyphrase, qg_params, vocab, decode_cfg)
        state = PipelineState(iteration=state.iteration + 1, keyphrase=keyphrase, question=q, h_q=h_q,
                              history=state.history + [(keyphrase, q)])
    return state


def answer_step(p: str, k: str, q: str, ans_params: ModelParams, vocab: Vocab,
                decode_cfg: Optional[DecodeConfig] = None) -> str:
    src = answer_input(k, q, p, vocab, ans_params.config.max_len)
    return decode(generate(src, ans_params, decode_cfg or DecodeConfig()), vocab)


def shared_encoder_baseline(p: str, params: ModelParams, vocab: Vocab,
                            decode_cfg: Optional[DecodeConfig] = None) -> Tuple[str, str]:
    """Question and answer decoded from one encoding of the passage alone."""
    decode_cfg = decode_cfg or DecodeConfig()
    src = keyphrase_input(p, vocab, params.config.max_len)
    q_ids = generate(src, params, decode_cfg, dec=SHARED_DECODERS[0])
    a_ids = generate(src, params, decode_cfg, dec=SHARED_DECODERS[1])
    return decode(q_ids, vocab), decode(a_ids, vocab)


class Triplet(NamedTuple):
    question: str
    answer: str
    keyphrase: str
    iteration: int


@dataclass
class AgentBundle:
    vocab: Vocab
    keyphrase: Optional[ModelParams] = None
    question: Optional[ModelParams] = None
    answer: Optional[ModelParams] = None
    refine: Optional[ModelParams] = None
    shared: Optional[ModelParams] = None
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    @property
    def refiner(self) -> ModelParams:
        return self.refine if self.refine is not None else self.keyphrase

    def require(self, *names: str) -> None:
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise ConfigError(f"missing trained agents: {', '.join(missing)}")


def _dedupe(items: Sequence[str]) -> List[str]:
    seen, out = set(), []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def run_pipeline(p: str, bundle: AgentBundle, m: int = Config.ITERATIONS, mode: PipelineMode = PipelineMode.fanout,
                 guidance: GuidanceMode = GuidanceMode.generated) -> List[Triplet]:
    """Passage to (question, answer, keyphrase) triplets."""
    if m < 1:
        raise ConfigError(f"m must be at least 1, got {m}")
    if guidance in (GuidanceMode.golden, GuidanceMode.answer):
        raise ConfigError(f"guidance {guidance.value} needs gold answers; use run_gold_guided")
    bundle.require("question", "answer")
    vocab, cfg = bundle.vocab, bundle.decode

    if guidance == GuidanceMode.none:
        inputs, m = [""], 1
    else:
        bundle.require("keyphrase")
        phrases = _dedupe(generate_rough_keyphrases(p, bundle.keyphrase, vocab, cfg))
        if guidance == GuidanceMode.sentence:
            inputs, m = [most_similar_sentence(p, phrases)], 1
        elif not phrases:
            logger.warning("⚠️ No rough keyphrases generated; guiding with the passage's first sentence")
            inputs = [most_similar_sentence(p, [])]
        elif mode == PipelineMode.joint:
            inputs = [KPSEP_JOIN.join(phrases)]
        else:
            inputs = phrases

    triplets: List[Triplet] = []
    seen = set()
    for k_1 in inputs:
        if k_1:
            state = iterate(p, k_1, bundle.question, bundle.refiner, m, vocab, cfg)
            keyphrase, question = state.keyphrase, state.question
        else:
            question, _ = qg_step(p, "", bundle.question, vocab, cfg)
            keyphrase = ""
        if not question:
            logger.warning(f"⚠️ Empty question for keyphrase {k_1!r}; triplet dropped")
            continue
        answer = answer_step(p, keyphrase, question, bundle.answer, vocab, cfg)
        if not answer:
            logger.warning(f"⚠️ Empty answer for question {question!r}; triplet dropped")
            continue
        if (question, answer) in seen:
            continue
        seen.add((question, answer))
        triplets.append(Triplet(question, answer, keyphrase, m))
    return triplets


def run_gold_guided(example: QagExample, bundle: AgentBundle,
                    guidance: GuidanceMode = GuidanceMode.golden) -> List[Triplet]:
    """Question generation guided by the gold answer (phrases or verbatim), then the answer agent."""
    if guidance not in (GuidanceMode.golden, GuidanceMode.answer):
        raise ConfigError(f"run_gold_guided supports golden/answer guidance, not {guidance.value}")
    bundle.require("question", "answer")
    if guidance == GuidanceMode.answer:
        k = normalize(example.answer)
    else:
        k = KPSEP_JOIN.join(answer_keyphrases(example.answer))
    question, _ = qg_step(example.passage, k, bundle.question, bundle.vocab, bundle.decode)
    if not question:
        logger.warning(f"⚠️ Empty question for {example.id}; dropped")
        return []
    answer = answer_step(example.passage, k, question, bundle.answer, bundle.vocab, bundle.decode)
    if not answer:
        logger.warning(f"⚠️ Empty answer for {example.id}; dropped")
        return []
    return [Triplet(question, answer, k, 1)]


def _passages(examples: Sequence[QagExample]) -> List[Tuple[str, str]]:
    unique: Dict[str, str] = {}
    for ex in examples:
        unique.setdefault(ex.pid, ex.passage)
    return list(unique.items())


def run_corpus(examples: Sequence[QagExample], bundle: AgentBundle, m: int = Config.ITERATIONS,
               mode: PipelineMode = PipelineMode.fanout, guidance: GuidanceMode = GuidanceMode.generated,
               system: str = "pipeline", workers: int = 1) -> List[GeneratedRecord]:
    """Generates records for every passage (or every example, for gold guidance), in input order."""
    if system == "shared_encoder":
        bundle.require("shared")
        units = _passages(examples)

        def work(unit):
            question, answer = shared_encoder_baseline(unit[1], bundle.shared, bundle.vocab, bundle.decode)
            return unit[0], [Triplet(question, answer, "", 1)] if question and answer else []
    elif guidance in (GuidanceMode.golden, GuidanceMode.answer):
        units = list(examples)

        def work(unit):
            return unit.pid, run_gold_guided(unit, bundle, guidance)
    else:
        units = _passages(examples)

        def work(unit):
            return unit[0], run_pipeline(unit[1], bundle, m, mode, guidance)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, units))
    else:
        results = [work(unit) for unit in tqdm(units, desc="generate", disable=not Config.PROGRESS, leave=False)]

    records: List[GeneratedRecord] = []
    counters: Dict[str, int] = {}
    for pid, triplets in results:
        for t in triplets:
            j = counters.get(pid, 0)
            counters[pid] = j + 1
            records.append(GeneratedRecord(id=f"{pid}-q{j}", passage_id=pid, keyphrases=split_keyphrases(t.keyphrase),
                                           question=t.question, answer=t.answer, iteration=t.iteration))
    logger.info(f"✅ Generated {len(records)} question-answer pairs from {len(units)} inputs")
    return records
