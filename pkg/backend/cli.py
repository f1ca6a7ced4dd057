"""Command line entry point: synth, analyze, train, generate, evaluate and replay.

Every run writes its resolved JobConfig as ``<command>[.<stage>].config.json``
next to its outputs; ``replay <config.json>`` reruns it.

Exit codes: 0 success, 1 internal error, 2 input or validation error.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from pydantic import ValidationError

from config import Config, ConfigError, setup_logging
from corpus_tools import (
    DatasetError, analyze, format_stats, load_dataset, make_synthetic_corpus, read_records, write_dataset,
)
from metrics import UnmatchedIdsError, evaluate, format_report
from models import (
    DecodeConfig, DecodeStrategy, GeneratedRecord, GuidanceMode, JobConfig, ModelConfig, ModelShape,
    PipelineMode, QagExample, RefineInputs, Split, StrategyKind, TrainConfig, TrainStrategy,
)
from ngram_transformer import ModelParams
from qag_agents import (
    AgentBundle, EpochRecord, run_corpus, train_answer_agent, train_keyphrase_agent, train_question_agent,
    train_refinement_agent, train_shared_encoder,
)
from tensor_autodiff import set_precision
from tokenizer_vocab import Vocab, VocabError, build_vocab

logger = logging.getLogger(__name__)

INPUT_ERRORS = (FileNotFoundError, UnicodeDecodeError, ConfigError, DatasetError, VocabError, UnmatchedIdsError,
                ValidationError)
STAGES = ("keyphrase", "qg", "kg", "answer", "shared_encoder")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qag", description="Keyphrase-guided question-answer pair generation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--seed", type=int, default=Config.SEED)
        p.add_argument("--out", type=str, default=None, help="Output directory")
        p.add_argument("--log-level", type=str, default=Config.LOG_LEVEL)
        p.add_argument("--precision", choices=["f32", "f64"], default=Config.PRECISION)
        return p

    synth = common(sub.add_parser("synth", help="Write a synthetic toy corpus"))
    synth.add_argument("--size", type=int, default=50)
    synth.add_argument("--profile", choices=["extractive", "abstractive"], default="abstractive")

    an = common(sub.add_parser("analyze", help="Question-type and answer n-gram statistics"))
    an.add_argument("--data", required=True)
    an.add_argument("--average", choices=["macro", "micro"], default="macro")

    train = common(sub.add_parser("train", help="Train one agent"))
    train.add_argument("--stage", choices=STAGES, required=True)
    train.add_argument("--data", required=True, help="Target (generative-style) corpus")
    train.add_argument("--data-aux", default=None, help="Extractive augmentation corpus for the keyphrase stage")
    train.add_argument("--vocab", default=None)
    train.add_argument("--strategy", choices=[k.value for k in StrategyKind], default=StrategyKind.two_stage.value)
    train.add_argument("--batch-size", type=int, default=Config.BATCH_SIZE)
    train.add_argument("--epochs-stage1", type=int, default=Config.EPOCHS_STAGE1)
    train.add_argument("--epochs-stage2", type=int, default=Config.EPOCHS_STAGE2)
    train.add_argument("--lr", type=float, default=Config.LEARNING_RATE)
    train.add_argument("--guidance", choices=[g.value for g in GuidanceMode], default=GuidanceMode.generated.value)
    train.add_argument("--mode", choices=[m.value for m in PipelineMode], default=PipelineMode.fanout.value)
    train.add_argument("--refine-inputs", choices=[r.value for r in RefineInputs], default=RefineInputs.gold.value)
    train.add_argument("--min-freq", type=int, default=Config.MIN_FREQ)
    train.add_argument("--d-model", type=int, default=Config.D_MODEL)
    train.add_argument("--n-heads", type=int, default=Config.N_HEADS)
    train.add_argument("--n-enc-layers", type=int, default=Config.N_ENC_LAYERS)
    train.add_argument("--n-dec-layers", type=int, default=Config.N_DEC_LAYERS)
    train.add_argument("--d-ff", type=int, default=Config.D_FF)
    train.add_argument("--max-len", type=int, default=Config.MAX_LEN)

    gen = common(sub.add_parser("generate", help="Generate question-answer pairs"))
    gen.add_argument("--data", required=True)
    gen.add_argument("--checkpoints", required=True)
    gen.add_argument("--m", type=int, default=Config.ITERATIONS)
    gen.add_argument("--beam", type=int, default=1, help="Beam size; 1 decodes greedily")
    gen.add_argument("--max-new", type=int, default=Config.MAX_NEW_TOKENS)
    gen.add_argument("--length-penalty", type=float, default=Config.LENGTH_PENALTY)
    gen.add_argument("--mode", choices=[m.value for m in PipelineMode], default=PipelineMode.fanout.value)
    gen.add_argument("--guidance", choices=[g.value for g in GuidanceMode], default=GuidanceMode.generated.value)
    gen.add_argument("--system", choices=["pipeline", "shared_encoder"], default="pipeline")
    gen.add_argument("--split", choices=["train", "dev", "test", "all"], default="test")
    gen.add_argument("--workers", type=int, default=1)

    ev = common(sub.add_parser("evaluate", help="Score generated pairs against the references"))
    ev.add_argument("--generated", required=True)
    ev.add_argument("--data", required=True)

    replay = sub.add_parser("replay", help="Rerun a persisted config")
    replay.add_argument("config")
    replay.add_argument("--log-level", type=str, default=Config.LOG_LEVEL)
    return parser


def job_from_args(args: argparse.Namespace) -> JobConfig:
    fields = dict(command=args.command, seed=args.seed, out=args.out, precision=args.precision)
    if args.command == "synth":
        fields.update(size=args.size, profile=args.profile)
    elif args.command == "analyze":
        fields.update(data=args.data, average=args.average)
    elif args.command == "train":
        fields.update(
            stage=args.stage, data=args.data, data_aux=args.data_aux, vocab=args.vocab, strategy=args.strategy,
            batch_size=args.batch_size, epochs_stage1=args.epochs_stage1, epochs_stage2=args.epochs_stage2,
            lr=args.lr, guidance=args.guidance, mode=args.mode, refine_inputs=args.refine_inputs,
            min_freq=args.min_freq,
            model=ModelShape(d_model=args.d_model, n_heads=args.n_heads, n_enc_layers=args.n_enc_layers,
                             n_dec_layers=args.n_dec_layers, d_ff=args.d_ff, max_len=args.max_len),
        )
    elif args.command == "generate":
        if args.beam < 1:
            raise ConfigError(f"--beam must be at least 1, got {args.beam}")
        strategy = DecodeStrategy.beam if args.beam > 1 else DecodeStrategy.greedy
        fields.update(
            data=args.data, checkpoints=args.checkpoints, m=args.m, mode=args.mode, guidance=args.guidance,
            system=args.system, split=args.split, workers=args.workers,
            decode=DecodeConfig(strategy=strategy, beam=args.beam, max_new=args.max_new,
                                length_penalty=args.length_penalty),
        )
    elif args.command == "evaluate":
        fields.update(generated=args.generated, data=args.data)
    return JobConfig(**fields)


def _out_dir(job: JobConfig) -> Optional[str]:
    out = job.out
    if out is None and job.command == "evaluate":
        out = os.path.dirname(job.generated) or "."
    if out is None and job.command in ("train", "generate"):
        raise ConfigError(f"{job.command} needs --out")
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def persist_config(job: JobConfig, out: Optional[str]) -> Optional[str]:
    if not out:
        return None
    name = f"{job.command}.{job.stage}" if job.stage else job.command
    path = os.path.join(out, f"{name}.config.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(job.model_dump_json(indent=2) + "\n")
    return path


def _select(examples: Sequence[QagExample], split: str) -> List[QagExample]:
    return list(examples) if split == "all" else [ex for ex in examples if ex.split.value == split]


def _train_split(examples: Sequence[QagExample]) -> List[QagExample]:
    return [ex for ex in examples if ex.split == Split.train and ex.question.strip() and ex.answer.strip()]


def cmd_synth(job: JobConfig, out: Optional[str]) -> None:
    examples = make_synthetic_corpus(job.seed, job.size, job.profile)
    path = os.path.join(out or ".", f"{job.profile}.jsonl")
    write_dataset(path, examples)
    print(path)


def cmd_analyze(job: JobConfig, out: Optional[str]) -> None:
    examples = load_dataset(job.data, strict=True)
    report = format_stats(analyze(examples, job.average), job.average)
    sys.stdout.write(report)
    if out:
        with open(os.path.join(out, "analysis.txt"), "w", encoding="utf-8") as f:
            f.write(report)


def _vocab_for(job: JobConfig, out: str, examples: Sequence[QagExample]) -> Vocab:
    path = job.vocab or os.path.join(out, "vocab.txt")
    if os.path.exists(path):
        return Vocab.load(path)
    texts = [text for ex in examples for text in (ex.passage, ex.question, ex.answer)]
    vocab = build_vocab(texts, job.min_freq, Config.MAX_VOCAB)
    vocab.save(path)
    return vocab


def _write_loss_log(path: str, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in history:
            f.write(record.line() + "\n")


def cmd_train(job: JobConfig, out: str) -> None:
    data = load_dataset(job.data)
    aux = load_dataset(job.data_aux) if job.data_aux else []
    vocab = _vocab_for(job, out, list(data) + list(aux))
    model_cfg = ModelConfig(vocab_size=len(vocab), **job.model.model_dump())
    train_cfg = TrainConfig(epochs=job.epochs_stage1, batch_size=job.batch_size, lr=job.lr, seed=job.seed)
    train_data = _train_split(data)
    history: List[EpochRecord] = []

    if job.stage == "keyphrase":
        strategy = TrainStrategy(kind=job.strategy, epochs_stage1=job.epochs_stage1, epochs_stage2=job.epochs_stage2)
        params = train_keyphrase_agent(_train_split(aux), train_data, strategy, vocab, model_cfg, train_cfg, history)
    elif job.stage == "qg":
        params = train_question_agent(train_data, vocab, model_cfg, train_cfg, job.guidance, job.mode, history)
    elif job.stage == "kg":
        kp_params = ModelParams.load(os.path.join(out, "keyphrase"))
        qg_params = ModelParams.load(os.path.join(out, "qg"))
        kg_cfg = train_cfg.model_copy(update={"epochs": job.epochs_stage2})
        params = train_refinement_agent(kp_params, qg_params, train_data, vocab, kg_cfg,
                                        job.refine_inputs == RefineInputs.generated, history)
    elif job.stage == "answer":
        params = train_answer_agent(train_data, vocab, model_cfg, train_cfg, job.guidance, history)
    else:
        params = train_shared_encoder(train_data, vocab, model_cfg, train_cfg, history)

    params.save(os.path.join(out, job.stage))
    _write_loss_log(os.path.join(out, f"{job.stage}.loss.log"), history)
    logger.info(f"✅ Stage {job.stage} trained; checkpoint {params.checksum()[:12]}")


def generated_name(job: JobConfig) -> str:
    if job.system == "shared_encoder":
        return "generated.shared_encoder.jsonl"
    suffix = "" if job.guidance == GuidanceMode.generated else f".{job.guidance.value}"
    if job.mode == PipelineMode.joint:
        suffix += ".joint"
    return f"generated.m{job.m}{suffix}.jsonl"


def _load_optional(prefix: str) -> Optional[ModelParams]:
    return ModelParams.load(prefix) if os.path.exists(f"{prefix}.manifest") else None


def cmd_generate(job: JobConfig, out: str) -> None:
    examples = _select(load_dataset(job.data), job.split)
    path = os.path.join(out, generated_name(job))
    if not examples:
        logger.warning(f"⚠️ No {job.split} records in {job.data}; writing an empty file")
        write_dataset(path, [])
        return

    ckpt = job.checkpoints
    vocab = Vocab.load(os.path.join(ckpt, "vocab.txt"))
    bundle = AgentBundle(vocab=vocab, decode=job.decode)
    if job.system == "shared_encoder":
        bundle.shared = ModelParams.load(os.path.join(ckpt, "shared_encoder"))
    else:
        bundle.question = ModelParams.load(os.path.join(ckpt, "qg"))
        bundle.answer = ModelParams.load(os.path.join(ckpt, "answer"))
        if job.guidance not in (GuidanceMode.none, GuidanceMode.golden, GuidanceMode.answer):
            bundle.keyphrase = ModelParams.load(os.path.join(ckpt, "keyphrase"))
            bundle.refine = _load_optional(os.path.join(ckpt, "kg"))
            if bundle.refine is None and job.m > 1:
                logger.warning("⚠️ No kg checkpoint; refinement uses the rough keyphrase agent")

    records = run_corpus(examples, bundle, job.m, job.mode, job.guidance, job.system, job.workers)
    write_dataset(path, records)
    print(path)


def cmd_evaluate(job: JobConfig, out: str) -> None:
    generated, errors = read_records(job.generated, GeneratedRecord)
    if errors:
        raise DatasetError(f"{job.generated}: {len(errors)} invalid records (first at line {errors[0].line})")
    references = load_dataset(job.data, strict=True)
    question, answer = evaluate(generated, references)
    report = format_report(question, answer)
    sys.stdout.write(report)
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report)


COMMANDS = {
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def run_job(job: JobConfig) -> None:
    set_precision(job.precision)
    out = _out_dir(job)
    COMMANDS[job.command](job, out)
    saved = persist_config(job, out)
    if saved:
        logger.info(f"💾 Resolved config written to {saved}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    if not Config.validate():
        logger.warning("⚠️ Config defaults are inconsistent; command-line values still apply")
    try:
        if args.command == "replay":
            with open(args.config, "r", encoding="utf-8") as f:
                job = JobConfig.model_validate_json(f.read())
        else:
            job = job_from_args(args)
        run_job(job)
    except INPUT_ERRORS as exc:
        logger.error(f"❌ {exc}")
        return 2
    except Exception as exc:
        logger.exception(f"❌ {args.command} failed: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
