"""Encoder-decoder transformer with a main stream and two predicting streams.

The decoder runs the main stream H together with predicting streams g and s
as one masked self-attention over the stacked rows ``[H; g; s]``:

* main row t attends to main rows 0..t;
* g row t attends to main rows 0..t and to itself, and scores the token after t;
* s row t attends to main rows 0..t and to itself, and scores the token two after t.

Main rows never attend to stream rows, so the predicting streams cannot leak
into H. At inference only the main stream and g are run.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config import ConfigError
from models import DecodeConfig, DecodeStrategy, ModelConfig
from tensor_autodiff import (
    IGNORE_ID, NEG_INF, ContractError, Tensor, add, add_mask, checksum, concat, cross_entropy,
    embed_lookup, gelu, get_dtype, layer_norm, load_checkpoint, matmul, no_grad, reshape,
    save_checkpoint, scale, slice_rows, softmax, transpose,
)
from tokenizer_vocab import BOS_ID, EOS_ID, PAD_ID, TokenSeq

logger = logging.getLogger(__name__)

ATTN_WEIGHTS = ("wq", "wk", "wv", "wo")
ATTN_BIASES = ("bq", "bk", "bv", "bo")


class ModelParams:
    """All weights of one encoder with one or more decoders, keyed by dotted name."""

    def __init__(self, config: ModelConfig, tensors: Dict[str, Tensor], decoders: Sequence[str] = ("dec",)):
        self.config = config
        self.tensors = tensors
        self.decoders = tuple(decoders)

    @classmethod
    def init(cls, config: ModelConfig, seed: int, decoders: Sequence[str] = ("dec",)) -> "ModelParams":
        rng = np.random.default_rng(seed)
        dtype = get_dtype()
        d, ff, vocab = config.d_model, config.d_ff, config.vocab_size
        arrays: Dict[str, np.ndarray] = {}

        def xavier(shape):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            return rng.uniform(-limit, limit, size=shape)

        def attention(prefix):
            for w in ATTN_WEIGHTS:
                arrays[f"{prefix}.{w}"] = xavier((d, d))
            for b in ATTN_BIASES:
                arrays[f"{prefix}.{b}"] = np.zeros(d)

        def norm(prefix):
            arrays[f"{prefix}.gamma"] = np.ones(d)
            arrays[f"{prefix}.beta"] = np.zeros(d)

        def ffn(prefix):
            arrays[f"{prefix}.w1"] = xavier((d, ff))
            arrays[f"{prefix}.b1"] = np.zeros(ff)
            arrays[f"{prefix}.w2"] = xavier((ff, d))
            arrays[f"{prefix}.b2"] = np.zeros(d)

        arrays["embed.tokens"] = rng.normal(0.0, 0.02, size=(vocab, d))
        arrays["embed.positions"] = rng.normal(0.0, 0.02, size=(config.max_len, d))
        for i in range(config.n_enc_layers):
            attention(f"enc.{i}.attn")
            norm(f"enc.{i}.ln_attn")
            ffn(f"enc.{i}.ffn")
            norm(f"enc.{i}.ln_ffn")
        for dec in decoders:
            arrays[f"{dec}.streams"] = rng.normal(0.0, 0.02, size=(config.n_streams, d))
            for i in range(config.n_dec_layers):
                attention(f"{dec}.{i}.self")
                norm(f"{dec}.{i}.ln_self")
                attention(f"{dec}.{i}.cross")
                norm(f"{dec}.{i}.ln_cross")
                ffn(f"{dec}.{i}.ffn")
                norm(f"{dec}.{i}.ln_ffn")
            arrays[f"{dec}.out.W"] = xavier((d, vocab))
            arrays[f"{dec}.out.V"] = np.zeros(vocab)

        tensors = {name: Tensor(a.astype(dtype), requires_grad=True, name=name) for name, a in arrays.items()}
        return cls(config, tensors, decoders)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self) -> Dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.tensors.items() if t.grad is not None}

    def checksum(self) -> str:
        return checksum(self.arrays())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        tensors = {name: Tensor(t.data.copy(), requires_grad=True, name=name) for name, t in self.tensors.items()}
        return ModelParams(self.config, tensors, self.decoders)

    def save(self, prefix: str) -> None:
        header = self.config.to_header()
        header["decoders"] = ",".join(self.decoders)
        manifest, _ = save_checkpoint(prefix, self.arrays(), header)
        logger.info(f"💾 Saved {len(self)} tensors ({self.num_parameters()} values) to {manifest}")

    @classmethod
    def load(cls, prefix: str) -> "ModelParams":
        arrays, header = load_checkpoint(prefix)
        config = ModelConfig.from_header(header)
        decoders = tuple(header.get("decoders", "dec").split(","))
        tensors = {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}
        return cls(config, tensors, decoders)


@dataclass
class EncOut:
    states: Tensor
    key_mask: np.ndarray


@dataclass
class DecoderStates:
    H: List[np.ndarray] = field(default_factory=list)
    g: List[np.ndarray] = field(default_factory=list)
    s: List[np.ndarray] = field(default_factory=list)
    h: Optional[np.ndarray] = None


def _dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _norm(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    rows, d = x.shape
    return transpose(reshape(x, (rows, n_heads, d // n_heads)), (1, 0, 2))


def _attention(x_q: Tensor, x_kv: Tensor, params: ModelParams, name: str, mask_bias: np.ndarray) -> Tensor:
    n_heads = params.config.n_heads
    d = params.config.d_model
    q = _split_heads(_dense(x_q, params[f"{name}.wq"], params[f"{name}.bq"]), n_heads)
    k = _split_heads(_dense(x_kv, params[f"{name}.wk"], params[f"{name}.bk"]), n_heads)
    v = _split_heads(_dense(x_kv, params[f"{name}.wv"], params[f"{name}.bv"]), n_heads)
    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d // n_heads))
    weights = softmax(add_mask(scores, mask_bias), axis=-1)
    context = reshape(transpose(matmul(weights, v), (1, 0, 2)), (x_q.shape[0], d))
    return _dense(context, params[f"{name}.wo"], params[f"{name}.bo"])


def _ffn(x: Tensor, params: ModelParams, name: str) -> Tensor:
    hidden = gelu(_dense(x, params[f"{name}.w1"], params[f"{name}.b1"]))
    return _dense(hidden, params[f"{name}.w2"], params[f"{name}.b2"])


def _key_bias(key_mask: np.ndarray, rows: int) -> np.ndarray:
    return np.broadcast_to(np.where(key_mask, 0.0, NEG_INF), (rows, key_mask.shape[0]))


def stream_mask(length: int, n_pred: int) -> np.ndarray:
    """Additive self-attention mask over ``(1 + n_pred) * length`` stacked rows."""
    size = (1 + n_pred) * length
    mask = np.full((size, size), NEG_INF)
    causal = np.tril(np.ones((length, length), dtype=bool))
    for block in range(1 + n_pred):
        rows = slice(block * length, (block + 1) * length)
        mask[rows, :length][causal] = 0.0
        if block:
            own = np.arange(block * length, (block + 1) * length)
            mask[own, own] = 0.0
    return mask


def encode(src: Sequence[int], params: ModelParams, prefix: Optional[np.ndarray] = None) -> EncOut:
    """Encodes ``src``, optionally prepending ``prefix`` rows (already in model space).

    Prefix rows take positions 0..P-1 and source tokens continue from P.
    Inputs longer than ``max_len`` are cut from the right.
    """
    cfg = params.config
    ids = list(src)
    if prefix is not None and prefix.shape[0] == 0:
        prefix = None
    if prefix is not None and (prefix.ndim != 2 or prefix.shape[1] != cfg.d_model):
        raise ContractError(f"prefix states of shape {prefix.shape} do not match d_model={cfg.d_model}")
    n_prefix = 0 if prefix is None else prefix.shape[0]
    if n_prefix + len(ids) > cfg.max_len:
        logger.warning(f"⚠️ Encoder input of {n_prefix + len(ids)} positions truncated to {cfg.max_len}")
        if n_prefix > cfg.max_len:
            prefix, n_prefix = prefix[:cfg.max_len], cfg.max_len
        ids = ids[:cfg.max_len - n_prefix]
    length = n_prefix + len(ids)
    if length == 0:
        raise ContractError("encoder input is empty")

    parts = []
    if prefix is not None:
        parts.append(Tensor(prefix))
    if ids:
        parts.append(embed_lookup(params["embed.tokens"], ids))
    x = concat(parts) if len(parts) > 1 else parts[0]
    x = add(x, slice_rows(params["embed.positions"], 0, length))

    key_mask = np.concatenate([np.ones(n_prefix, dtype=bool), np.asarray(ids, dtype=np.int64) != PAD_ID])
    bias = _key_bias(key_mask, length)
    for i in range(cfg.n_enc_layers):
        x = _norm(add(x, _attention(x, x, params, f"enc.{i}.attn", bias)), params, f"enc.{i}.ln_attn")
        x = _norm(add(x, _ffn(x, params, f"enc.{i}.ffn")), params, f"enc.{i}.ln_ffn")
    return EncOut(states=x, key_mask=key_mask)


def _stream_input(params: ModelParams, dec: str, positions: Tensor, k: int) -> Tensor:
    vec = reshape(slice_rows(params[f"{dec}.streams"], k, k + 1), (params.config.d_model,))
    return add(positions, vec)


def n_stream_decoder(input_ids: Sequence[int], enc: EncOut, params: ModelParams, dec: str,
                     n_pred: int) -> Tuple[Tensor, DecoderStates]:
    if dec not in params.decoders:
        raise ContractError(f"unknown decoder {dec!r}; model has {params.decoders}")
    cfg = params.config
    length = len(input_ids)
    positions = slice_rows(params["embed.positions"], 0, length)
    main = add(embed_lookup(params["embed.tokens"], input_ids), positions)
    z = concat([main] + [_stream_input(params, dec, positions, k) for k in range(n_pred)])

    rows = (1 + n_pred) * length
    self_bias = stream_mask(length, n_pred)
    cross_bias = _key_bias(enc.key_mask, rows)
    states = DecoderStates()
    for i in range(cfg.n_dec_layers):
        z = _norm(add(z, _attention(z, z, params, f"{dec}.{i}.self", self_bias)), params, f"{dec}.{i}.ln_self")
        z = _norm(add(z, _attention(z, enc.states, params, f"{dec}.{i}.cross", cross_bias)),
                  params, f"{dec}.{i}.ln_cross")
        z = _norm(add(z, _ffn(z, params, f"{dec}.{i}.ffn")), params, f"{dec}.{i}.ln_ffn")
        states.H.append(z.data[:length].copy())
        if n_pred >= 1:
            states.g.append(z.data[length:2 * length].copy())
        if n_pred >= 2:
            states.s.append(z.data[2 * length:3 * length].copy())
    states.h = z.data[:length].copy()
    return z, states


def decode_train(tgt: Sequence[int], enc: EncOut, params: ModelParams,
                 dec: str = "dec") -> Tuple[Tensor, Tensor, DecoderStates]:
    """Forced-decoding pass over ``tgt`` (ending in EOS).

    Position t reads ``[BOS] + tgt[:t]``; stream-1 logits at t score ``tgt[t]``
    and stream-2 logits at t score ``tgt[t + 1]``.
    """
    ids = list(tgt)
    max_len = params.config.max_len
    if len(ids) > max_len:
        logger.warning(f"⚠️ Decoder target of {len(ids)} tokens truncated to {max_len}")
        ids = ids[:max_len]
    if not ids:
        raise ContractError("decoder target is empty")
    length = len(ids)
    z, states = n_stream_decoder([BOS_ID] + ids[:-1], enc, params, dec, 2)
    w, v = params[f"{dec}.out.W"], params[f"{dec}.out.V"]
    logits1 = _dense(slice_rows(z, length, 2 * length), w, v)
    logits2 = _dense(slice_rows(z, 2 * length, 3 * length), w, v)
    return logits1, logits2, states


def loss(logits1: Tensor, logits2: Tensor, tgt: Sequence[int], weights: Sequence[float]) -> Tensor:
    """``w1 * NLL(stream 1) + w2 * NLL(stream 2)``, each averaged over its own valid positions."""
    w1, w2 = weights
    if abs(w1 + w2 - 1.0) > 1e-9:
        raise ConfigError(f"stream loss weights {tuple(weights)} must sum to 1")
    ids = list(tgt)[:logits1.shape[0]]
    next_two = ids[1:] + [IGNORE_ID]
    return add(scale(cross_entropy(logits1, ids), w1), scale(cross_entropy(logits2, next_two), w2))


def sequence_loss(params: ModelParams, src: Sequence[int], tgt: Sequence[int],
                  prefix: Optional[np.ndarray] = None, dec: str = "dec") -> Tensor:
    enc = encode(src, params, prefix)
    logits1, logits2, _ = decode_train(tgt, enc, params, dec)
    return loss(logits1, logits2, tgt, params.config.stream_loss_weights)


def forced_states(tgt: Sequence[int], enc: EncOut, params: ModelParams, dec: str = "dec") -> DecoderStates:
    with no_grad():
        _, _, states = decode_train(tgt, enc, params, dec)
    return states


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def next_token_scorer(enc: EncOut, params: ModelParams, dec: str = "dec") -> Callable[[Tuple[int, ...]], np.ndarray]:
    """Stream-1 log-probabilities of the token following a generated prefix."""
    w, v = params[f"{dec}.out.W"].data, params[f"{dec}.out.V"].data

    def score(tokens: Tuple[int, ...]) -> np.ndarray:
        length = len(tokens) + 1
        with no_grad():
            z, _ = n_stream_decoder([BOS_ID] + list(tokens), enc, params, dec, 1)
        return _log_softmax(z.data[2 * length - 1] @ w + v)

    return score


def _budget(params: ModelParams, max_new: int) -> int:
    return max(0, min(max_new, params.config.max_len - 1))


def greedy_search(next_log_probs: Callable[[Tuple[int, ...]], np.ndarray], max_new: int,
                  eos_id: int = EOS_ID) -> Tuple[int, ...]:
    tokens: Tuple[int, ...] = ()
    for _ in range(max_new):
        tok = int(np.argmax(next_log_probs(tokens)))
        if tok == eos_id:
            break
        tokens += (tok,)
    return tokens


def beam_search(next_log_probs: Callable[[Tuple[int, ...]], np.ndarray], beam: int, max_new: int,
                length_penalty: float = 1.0, eos_id: int = EOS_ID) -> Tuple[int, ...]:
    """Best finished hypothesis by ``logp / len ** length_penalty`` (len counts EOS).

    Ties go to the hypothesis that finished first, then to the smaller token
    sequence. Hypotheses still open when ``max_new`` runs out compete as if finished.
    """
    if beam < 1:
        raise ConfigError(f"beam must be at least 1, got {beam}")
    live: List[Tuple[float, Tuple[int, ...]]] = [(0.0, ())]
    finished: List[Tuple[float, int, Tuple[int, ...]]] = []

    def normalized(score: float, length: int) -> float:
        return score / (length ** length_penalty) if length else score

    for step in range(max_new):
        candidates = []
        for score, tokens in live:
            log_probs = next_log_probs(tokens)
            for tok in np.argsort(-log_probs, kind="stable")[:beam]:
                candidates.append((score + float(log_probs[tok]), tokens + (int(tok),)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for score, tokens in candidates[:beam]:
            if tokens[-1] == eos_id:
                finished.append((normalized(score, len(tokens)), step, tokens[:-1]))
            else:
                live.append((score, tokens))
        if not live or len(finished) >= beam:
            break
    for score, tokens in live:
        finished.append((normalized(score, len(tokens)), max_new, tokens))
    best = min(finished, key=lambda f: (-f[0], f[1], f[2]))
    return best[2]


def generate_greedy(src: Sequence[int], params: ModelParams, max_new: int, dec: str = "dec",
                    prefix: Optional[np.ndarray] = None) -> TokenSeq:
    with no_grad():
        enc = encode(src, params, prefix)
    return TokenSeq(greedy_search(next_token_scorer(enc, params, dec), _budget(params, max_new)))


def generate_beam(src: Sequence[int], params: ModelParams, beam: int, max_new: int, length_penalty: float = 1.0,
                  dec: str = "dec", prefix: Optional[np.ndarray] = None) -> TokenSeq:
    if beam < 1:
        raise ConfigError(f"beam must be at least 1, got {beam}")
    with no_grad():
        enc = encode(src, params, prefix)
    scorer = next_token_scorer(enc, params, dec)
    return TokenSeq(beam_search(scorer, beam, _budget(params, max_new), length_penalty))


def generate(src: Sequence[int], params: ModelParams, decode_cfg: DecodeConfig, dec: str = "dec",
             prefix: Optional[np.ndarray] = None) -> TokenSeq:
    if decode_cfg.strategy == DecodeStrategy.beam:
        return generate_beam(src, params, decode_cfg.beam, decode_cfg.max_new, decode_cfg.length_penalty, dec, prefix)
    return generate_greedy(src, params, decode_cfg.max_new, dec, prefix)
