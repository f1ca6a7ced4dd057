import json
import os

import pytest

from cli import build_parser, generated_name, job_from_args, main
from corpus_tools import load_dataset, write_dataset
from models import GeneratedRecord, GuidanceMode, JobConfig, ModelConfig, PipelineMode, QagExample, Split
from ngram_transformer import ModelParams
from tokenizer_vocab import Vocab

TINY = ["--d-model", "8", "--n-heads", "2", "--n-enc-layers", "1", "--n-dec-layers", "1", "--d-ff", "16",
        "--max-len", "64"]


def synth(tmp_path, profile="abstractive", size=8, seed=3):
    out = str(tmp_path / "data")
    assert main(["synth", "--out", out, "--profile", profile, "--size", str(size), "--seed", str(seed)]) == 0
    return os.path.join(out, f"{profile}.jsonl")


def train(data, out, stage, *extra):
    return main(["train", "--stage", stage, "--data", data, "--out", out, "--batch-size", "4", *TINY, *extra])


def test_analyze_golden_output(fixtures_dir, capsys):
    assert main(["analyze", "--data", os.path.join(fixtures_dir, "golden.jsonl")]) == 0
    with open(os.path.join(fixtures_dir, "golden_analyze.txt"), encoding="utf-8") as f:
        assert capsys.readouterr().out == f.read()


def test_analyze_missing_file(tmp_path, caplog):
    missing = str(tmp_path / "absent.jsonl")
    assert main(["analyze", "--data", missing]) == 2
    assert missing in caplog.text


def test_analyze_rejects_invalid_records(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "passage": "", "question": "Q?", "answer": "A", "split": "train"}\n')
    assert main(["analyze", "--data", str(path)]) == 2


def test_analyze_rejects_undecodable_bytes(tmp_path, caplog):
    path = tmp_path / "bytes.jsonl"
    path.write_bytes(b'{"id": "a", "passage": "P\xff.", "question": "Q?", "answer": "A", "split": "train"}\n')
    assert main(["analyze", "--data", str(path)]) == 2
    assert "line 1" in caplog.text


def test_analyze_extractive_corpus(tmp_path, capsys):
    data = synth(tmp_path, profile="extractive", size=10)
    capsys.readouterr()
    assert main(["analyze", "--data", data, "--out", str(tmp_path / "stats")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert {"match.macro.n1=100.00", "match.macro.n2=100.00", "match.macro.n3=100.00"} <= set(lines)
    assert os.path.exists(tmp_path / "stats" / "analysis.txt")


def test_synth_is_deterministic(tmp_path):
    first = synth(tmp_path / "a")
    second = synth(tmp_path / "b")
    with open(first, encoding="utf-8") as f1, open(second, encoding="utf-8") as f2:
        assert f1.read() == f2.read()


def test_replay_reproduces_a_run(tmp_path):
    data = synth(tmp_path, size=6)
    with open(data, encoding="utf-8") as f:
        before = f.read()
    config = os.path.join(os.path.dirname(data), "synth.config.json")
    assert JobConfig.model_validate_json(open(config, encoding="utf-8").read()).size == 6
    os.remove(data)
    assert main(["replay", config]) == 0
    with open(data, encoding="utf-8") as f:
        assert f.read() == before


def test_invalid_options_exit_with_input_error(tmp_path):
    data = synth(tmp_path)
    out = str(tmp_path / "gen")
    assert main(["generate", "--data", data, "--checkpoints", out, "--out", out, "--m", "0"]) == 2
    assert main(["generate", "--data", data, "--checkpoints", out, "--out", out, "--beam", "0"]) == 2
    assert main(["train", "--stage", "qg", "--data", data]) == 2


def test_beam_option_selects_strategy():
    parser = build_parser()
    greedy = job_from_args(parser.parse_args(["generate", "--data", "d", "--checkpoints", "c", "--beam", "1"]))
    beam = job_from_args(parser.parse_args(["generate", "--data", "d", "--checkpoints", "c", "--beam", "3"]))
    assert greedy.decode.strategy.value == "greedy"
    assert (beam.decode.strategy.value, beam.decode.beam) == ("beam", 3)


def test_generated_file_names():
    job = JobConfig(command="generate", seed=0, m=2)
    assert generated_name(job) == "generated.m2.jsonl"
    assert generated_name(job.model_copy(update={"guidance": GuidanceMode.none, "m": 1})) == "generated.m1.none.jsonl"
    assert generated_name(job.model_copy(update={"mode": PipelineMode.joint})) == "generated.m2.joint.jsonl"
    assert generated_name(job.model_copy(update={"system": "shared_encoder"})) == "generated.shared_encoder.jsonl"


def test_zero_epoch_training_saves_initial_weights(tmp_path):
    data = synth(tmp_path)
    out = str(tmp_path / "ckpt")
    assert train(data, out, "qg", "--epochs-stage1", "0", "--seed", "5") == 0
    vocab = Vocab.load(os.path.join(out, "vocab.txt"))
    cfg = ModelConfig(vocab_size=len(vocab), d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=16,
                      max_len=64)
    assert ModelParams.load(os.path.join(out, "qg")).checksum() == ModelParams.init(cfg, seed=5).checksum()
    assert os.path.exists(os.path.join(out, "train.qg.config.json"))
    assert open(os.path.join(out, "qg.loss.log"), encoding="utf-8").read() == ""


def test_training_logs_are_reproducible(tmp_path):
    data = synth(tmp_path)
    logs = []
    for run in ("one", "two"):
        out = str(tmp_path / run)
        assert train(data, out, "answer", "--epochs-stage1", "2") == 0
        with open(os.path.join(out, "answer.loss.log"), encoding="utf-8") as f:
            logs.append(f.read())
    assert logs[0] == logs[1]
    assert logs[0].splitlines()[0].startswith("stage=answer epoch=1 loss=")


def test_generate_with_no_selected_records(tmp_path):
    data = synth(tmp_path, size=2)
    out = str(tmp_path / "gen")
    assert main(["generate", "--data", data, "--checkpoints", str(tmp_path / "none"), "--out", out]) == 0
    assert load_dataset(os.path.join(out, "generated.m2.jsonl")) == []


def test_generate_writes_one_file_per_iteration_count(tmp_path):
    data = synth(tmp_path, size=4)
    ckpt = str(tmp_path / "ckpt")
    for stage in ("keyphrase", "qg", "answer"):
        assert train(data, ckpt, stage, "--strategy", "race_only", "--epochs-stage1", "0") == 0
    for m in ("1", "2"):
        assert main(["generate", "--data", data, "--checkpoints", ckpt, "--out", ckpt, "--split", "all",
                     "--m", m, "--max-new", "4"]) == 0
        assert os.path.exists(os.path.join(ckpt, f"generated.m{m}.jsonl"))
        assert os.path.exists(os.path.join(ckpt, "generate.config.json"))


def test_evaluate_gold_against_itself(tmp_path, fixtures_dir):
    golden = os.path.join(fixtures_dir, "golden.jsonl")
    records = [GeneratedRecord(id=ex.id, passage_id=ex.pid, keyphrases=[], question=ex.question, answer=ex.answer,
                               iteration=1) for ex in load_dataset(golden)]
    generated = str(tmp_path / "generated.m1.jsonl")
    write_dataset(generated, records)
    assert main(["evaluate", "--generated", generated, "--data", golden]) == 0
    report = open(tmp_path / "report.txt", encoding="utf-8").read()
    assert "question.bleu4=100.00" in report.split() and "answer.bleu4=100.00" in report.split()


def test_evaluate_unmatched_ids(tmp_path, fixtures_dir):
    generated = str(tmp_path / "generated.m1.jsonl")
    write_dataset(generated, [GeneratedRecord(id="zz-q0", passage_id="zz", keyphrases=[], question="q",
                                              answer="a", iteration=1)])
    assert main(["evaluate", "--generated", generated, "--data", os.path.join(fixtures_dir, "golden.jsonl")]) == 2


@pytest.mark.slow
def test_memorized_corpus_round_trip(tmp_path):
    ex = QagExample(id="m1", passage="Mia plays chess on Sundays.", question="What does Mia play?", answer="chess",
                    split=Split.train, passage_id="p2")
    data = str(tmp_path / "one.jsonl")
    write_dataset(data, [ex])
    ckpt = str(tmp_path / "ckpt")
    shape = ["--d-model", "32", "--n-heads", "4", "--n-enc-layers", "1", "--n-dec-layers", "1", "--d-ff", "64",
             "--max-len", "32", "--lr", "5e-3", "--batch-size", "1", "--epochs-stage1", "300"]
    for stage in ("keyphrase", "qg", "answer"):
        assert main(["train", "--stage", stage, "--data", data, "--out", ckpt, "--strategy", "race_only",
                     *shape]) == 0
    assert main(["generate", "--data", data, "--checkpoints", ckpt, "--out", ckpt, "--split", "all", "--m", "1"]) == 0
    generated = os.path.join(ckpt, "generated.m1.jsonl")
    with open(generated, encoding="utf-8") as f:
        rows = [json.loads(line) for line in f]
    assert [(r["question"], r["answer"]) for r in rows] == [("what does mia play ?", "chess")]
    assert main(["evaluate", "--generated", generated, "--data", data]) == 0
    assert "question.bleu4=100.00" in open(os.path.join(ckpt, "report.txt"), encoding="utf-8").read().split()
