import hashlib
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import Config


class Split(str, Enum):
    train = "train"
    dev = "dev"
    test = "test"


class QagExample(BaseModel):
    """One (passage, question, answer) record; the unit of ingestion, training and evaluation."""
    model_config = ConfigDict(frozen=True)

    id: str
    passage: str
    question: str
    answer: str
    split: Split
    passage_id: Optional[str] = None

    @model_validator(mode="after")
    def check_content(self) -> "QagExample":
        if not self.passage.strip():
            raise ValueError("passage must be non-empty")
        if self.split == Split.train and (not self.question.strip() or not self.answer.strip()):
            raise ValueError("train records need a non-empty question and answer")
        return self

    @property
    def pid(self) -> str:
        if self.passage_id:
            return self.passage_id
        return "p-" + hashlib.sha1(self.passage.encode("utf-8")).hexdigest()[:10]


class KeyphraseTarget(BaseModel):
    model_config = ConfigDict(frozen=True)

    passage_id: str
    phrases: List[str]

    @field_validator("phrases")
    @classmethod
    def no_empty_phrase(cls, phrases: List[str]) -> List[str]:
        if any(not phrase.strip() for phrase in phrases):
            raise ValueError("keyphrases must be non-empty")
        return phrases

    @property
    def serialized(self) -> str:
        return " [KPSEP] ".join(self.phrases)


class GeneratedRecord(BaseModel):
    id: str
    passage_id: str
    keyphrases: List[str]
    question: str
    answer: str
    iteration: int = Field(ge=1)


class StrategyKind(str, Enum):
    race_only = "race_only"
    squad_only = "squad_only"
    mixed = "mixed"
    two_stage = "two_stage"


class TrainStrategy(BaseModel):
    kind: StrategyKind = StrategyKind.two_stage
    epochs_stage1: int = Field(default=Config.EPOCHS_STAGE1, ge=0)
    epochs_stage2: int = Field(default=Config.EPOCHS_STAGE2, ge=0)


class GuidanceMode(str, Enum):
    generated = "generated"
    none = "none"
    golden = "golden"
    answer = "answer"
    sentence = "sentence"


class PipelineMode(str, Enum):
    fanout = "fanout"
    joint = "joint"


class RefineInputs(str, Enum):
    gold = "gold"
    generated = "generated"


class DecodeStrategy(str, Enum):
    greedy = "greedy"
    beam = "beam"


class ModelShape(BaseModel):
    d_model: int = Field(default=Config.D_MODEL, gt=0)
    n_heads: int = Field(default=Config.N_HEADS, gt=0)
    n_enc_layers: int = Field(default=Config.N_ENC_LAYERS, ge=1)
    n_dec_layers: int = Field(default=Config.N_DEC_LAYERS, ge=1)
    d_ff: int = Field(default=Config.D_FF, gt=0)
    max_len: int = Field(default=Config.MAX_LEN, gt=1)


class ModelConfig(ModelShape):
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(gt=0)
    n_streams: Literal[2] = 2
    stream_loss_weights: Tuple[float, float] = Config.STREAM_LOSS_WEIGHTS

    @model_validator(mode="after")
    def check_shapes(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if any(w < 0 for w in self.stream_loss_weights):
            raise ValueError("stream loss weights must be non-negative")
        if abs(sum(self.stream_loss_weights) - 1.0) > 1e-9:
            raise ValueError(f"stream loss weights {self.stream_loss_weights} must sum to 1")
        return self

    @classmethod
    def full_scale_profile(cls, vocab_size: int) -> "ModelConfig":
        """Full-scale shape (12+12 layers, 1024 hidden, 4096 filter); documentation only."""
        return cls(d_model=1024, n_heads=16, n_enc_layers=12, n_dec_layers=12,
                   d_ff=4096, max_len=512, vocab_size=vocab_size)

    def to_header(self) -> Dict[str, str]:
        header = {key: str(value) for key, value in self.model_dump().items() if key != "stream_loss_weights"}
        header["stream_loss_weights"] = ",".join(repr(float(w)) for w in self.stream_loss_weights)
        return header

    @classmethod
    def from_header(cls, header: Dict[str, str]) -> "ModelConfig":
        fields = {key: int(header[key]) for key in
                  ("d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff", "max_len", "vocab_size", "n_streams")}
        w1, w2 = (float(w) for w in header["stream_loss_weights"].split(","))
        return cls(stream_loss_weights=(w1, w2), **fields)


class TrainConfig(BaseModel):
    epochs: int = Field(default=Config.EPOCHS_STAGE1, ge=0)
    batch_size: int = Field(default=Config.BATCH_SIZE, ge=1)
    lr: float = Field(default=Config.LEARNING_RATE, gt=0)
    beta1: float = Config.BETA1
    beta2: float = Config.BETA2
    eps: float = Config.ADAM_EPS
    seed: int = Config.SEED


class DecodeConfig(BaseModel):
    strategy: DecodeStrategy = DecodeStrategy.greedy
    beam: int = Config.BEAM_SIZE
    max_new: int = Field(default=Config.MAX_NEW_TOKENS, ge=1)
    length_penalty: float = Config.LENGTH_PENALTY


class JobConfig(BaseModel):
    """Resolved configuration of one CLI run; persisted next to its outputs."""
    command: Literal["synth", "analyze", "train", "generate", "evaluate"]
    seed: int
    stage: Optional[Literal["keyphrase", "qg", "kg", "answer", "shared_encoder"]] = None
    data: Optional[str] = None
    data_aux: Optional[str] = None
    out: Optional[str] = None
    checkpoints: Optional[str] = None
    generated: Optional[str] = None
    vocab: Optional[str] = None
    m: int = Field(default=Config.ITERATIONS, ge=1)
    strategy: StrategyKind = StrategyKind.two_stage
    epochs_stage1: int = Field(default=Config.EPOCHS_STAGE1, ge=0)
    epochs_stage2: int = Field(default=Config.EPOCHS_STAGE2, ge=0)
    batch_size: int = Field(default=Config.BATCH_SIZE, ge=1)
    lr: float = Field(default=Config.LEARNING_RATE, gt=0)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    mode: PipelineMode = PipelineMode.fanout
    guidance: GuidanceMode = GuidanceMode.generated
    refine_inputs: RefineInputs = RefineInputs.gold
    system: Literal["pipeline", "shared_encoder"] = "pipeline"
    split: Literal["train", "dev", "test", "all"] = "test"
    workers: int = Field(default=1, ge=1)
    model: ModelShape = Field(default_factory=ModelShape)
    min_freq: int = Field(default=Config.MIN_FREQ, ge=1)
    size: int = Field(default=50, ge=1)
    profile: Literal["extractive", "abstractive"] = "abstractive"
    average: Literal["micro", "macro"] = "macro"
    precision: Literal["f32", "f64"] = "f32"


class EvalPair(BaseModel):
    candidate: List[str]
    references: List[List[str]] = Field(min_length=1)


class MetricReport(BaseModel):
    bleu4: float = Field(ge=0.0, le=1.0)
    rouge_l: float = Field(ge=0.0, le=1.0)
    meteor: float = Field(ge=0.0, le=1.0)
    n: int = Field(ge=0)

    def key_values(self, prefix: str = "") -> List[str]:
        lead = f"{prefix}." if prefix else ""
        return [
            f"{lead}bleu4={self.bleu4 * 100:.2f}",
            f"{lead}rouge_l={self.rouge_l * 100:.2f}",
            f"{lead}meteor_lite={self.meteor * 100:.2f}",
            f"{lead}n={self.n}",
        ]


class DatasetStats(BaseModel):
    leading_unigram_dist: Dict[str, float]
    leading_bigram_dist: Dict[str, float]
    ngram_match: Dict[int, float]
    counts: Dict[str, int]
