import json

import numpy as np
import pytest

from mvcssl.checkpoint import Checkpoint
from mvcssl.cli import build_parser, dispatch


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("clicorpus")
    rc = dispatch([
        "gen-corpus", "--out", str(out), "--seed", "1",
        "--num-utterances", "3", "--min-tokens", "3", "--max-tokens", "4",
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def noisy_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("clinoisy")
    rc = dispatch([
        "gen-corpus", "--out", str(out), "--seed", "2", "--condition", "noisy",
        "--num-utterances", "2", "--min-tokens", "3", "--max-tokens", "4",
    ])
    assert rc == 0
    return out


def _tiny_config(tmp_path, corpus, extra=""):
    path = tmp_path / "config.toml"
    path.write_text(
        f"""
[pipeline]
steps = 2
warmup_steps = 1
batch_size = 2
seed = 0
mvc_modes = {{ clean = "da" }}

[encoder]
conv_channels = 12
ctx_layers = 1
ctx_dim = 12
ctx_heads = 2
ffn_dim = 24
pos_conv_kernel = 5
pos_conv_groups = 2

[quantizer]
num_codebooks = 2
entries_per_codebook = 8
entry_dim = 6

[corpora]
clean = "{corpus}/manifest.jsonl"
{extra}
"""
    )
    return path


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory, corpus):
    tmp = tmp_path_factory.mktemp("cliout")
    config = _tiny_config(tmp, corpus)
    out = tmp / "run"
    rc = dispatch([
        "pretrain", "--config", str(config), "--out", str(out),
        "--metrics", str(tmp / "metrics.jsonl"),
    ])
    assert rc == 0
    return out / "checkpoint.ckpt", tmp, config


def test_no_arguments_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        dispatch([])
    assert exc.value.code == 2


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        dispatch(["frobnicate"])
    assert exc.value.code == 2


def test_workers_must_be_positive(corpus, tmp_path):
    with pytest.raises(SystemExit) as exc:
        dispatch(["gen-corpus", "--out", str(tmp_path), "--workers", "0"])
    assert exc.value.code == 2


def test_gen_corpus_writes_manifest(corpus):
    manifest = corpus / "manifest.jsonl"
    assert manifest.exists()
    records = [json.loads(l) for l in manifest.read_text().splitlines()]
    assert len(records) == 3
    assert all(record["channels"] == 1 for record in records)


def test_gen_corpus_noisy(noisy_corpus):
    records = [
        json.loads(l) for l in (noisy_corpus / "manifest.jsonl").read_text().splitlines()
    ]
    assert all(record["channels"] == 4 for record in records)
    assert all("delays" in record["ground_truth"] for record in records)


def test_augment_writes_output_and_provenance(corpus, tmp_path):
    records = [json.loads(l) for l in (corpus / "manifest.jsonl").read_text().splitlines()]
    out = tmp_path / "aug.wav"
    rc = dispatch(["augment", "--seed", "3", records[0]["audio_path"], str(out)])
    assert rc == 0
    assert out.exists()
    sidecar = tmp_path / "aug.provenance.jsonl"
    prov = json.loads(sidecar.read_text())
    assert prov["kind"] in ("original", "augmented")


def test_beamform(noisy_corpus, tmp_path):
    records = [
        json.loads(l) for l in (noisy_corpus / "manifest.jsonl").read_text().splitlines()
    ]
    out = tmp_path / "beam.wav"
    rc = dispatch(["beamform", records[0]["audio_path"], str(out)])
    assert rc == 0
    from mvcssl.audio import read_wav

    assert read_wav(out).num_channels == 1


def test_beamform_mono_input_fails_cleanly(corpus, tmp_path, capsys):
    records = [json.loads(l) for l in (corpus / "manifest.jsonl").read_text().splitlines()]
    rc = dispatch(["beamform", records[0]["audio_path"], str(tmp_path / "b.wav")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error_class"] == "ArgumentError"


def test_pretrain_writes_checkpoint_and_metrics(pretrained):
    ckpt_path, tmp, _ = pretrained
    assert ckpt_path.exists()
    ckpt = Checkpoint.load(ckpt_path)
    assert ckpt.meta["steps_trained"] == 2
    metrics = [json.loads(l) for l in (tmp / "metrics.jsonl").read_text().splitlines()]
    assert [m["step"] for m in metrics] == [0, 1]


def test_steps_flag_overrides_config(pretrained, tmp_path):
    _, _, config = pretrained
    out = tmp_path / "short"
    rc = dispatch([
        "pretrain", "--config", str(config), "--out", str(out), "--steps", "1",
        "--metrics", str(tmp_path / "m.jsonl"),
    ])
    assert rc == 0
    assert Checkpoint.load(out / "checkpoint.ckpt").meta["steps_trained"] == 1


def test_continue_requires_named_corpora(pretrained, tmp_path, capsys):
    ckpt_path, _, config = pretrained
    rc = dispatch([
        "continue", "--config", str(config), "--ckpt", str(ckpt_path),
        "--out", str(tmp_path / "cont"),
    ])
    assert rc == 1
    assert json.loads(capsys.readouterr().err)["error_class"] == "ArgumentError"


def test_continue_pipeline(pretrained, corpus, noisy_corpus, tmp_path):
    ckpt_path, _, _ = pretrained
    config = _tiny_config(
        tmp_path, corpus,
        extra=(
            f'target = "{noisy_corpus}/manifest.jsonl"\n'
            f'source = "{corpus}/manifest.jsonl"\n'
        ),
    )
    out = tmp_path / "cont"
    rc = dispatch([
        "continue", "--config", str(config), "--ckpt", str(ckpt_path),
        "--out", str(out), "--steps", "1", "--replay-rate", "1:1",
        "--metrics", str(tmp_path / "m.jsonl"),
    ])
    assert rc == 0
    ckpt = Checkpoint.load(out / "checkpoint.ckpt")
    assert ckpt.meta["pipeline"] == "continual_pretrain"
    assert ckpt.meta["replay_rate"] == [1, 1]


def test_finetune_and_evaluate(pretrained, corpus, tmp_path, capsys):
    ckpt_path, _, _ = pretrained
    config = _tiny_config(tmp_path, corpus,
                          extra=f'labeled = "{corpus}/manifest.jsonl"\n')
    out = tmp_path / "ft"
    rc = dispatch([
        "finetune", "--config", str(config), "--ckpt", str(ckpt_path),
        "--out", str(out), "--steps", "1", "--metrics", str(tmp_path / "m.jsonl"),
    ])
    assert rc == 0
    capsys.readouterr()
    rc = dispatch([
        "evaluate", "--ckpt", str(out / "checkpoint.ckpt"),
        "--manifest", f"{corpus}/manifest.jsonl", "--seed", "0",
    ])
    assert rc == 0
    result = json.loads(capsys.readouterr().out)
    assert "token_error_rate" in result and "contrastive_accuracy" in result


def test_transfer_pipeline(pretrained, corpus, tmp_path):
    ckpt_path, _, _ = pretrained
    config = _tiny_config(
        tmp_path, corpus,
        extra=(
            f'labeled_source = "{corpus}/manifest.jsonl"\n'
            f'labeled_target = "{corpus}/manifest.jsonl"\n'
        ),
    )
    out = tmp_path / "tr"
    rc = dispatch([
        "transfer", "--config", str(config), "--ckpt", str(ckpt_path),
        "--out", str(out), "--steps", "1", "--metrics", str(tmp_path / "m.jsonl"),
    ])
    assert rc == 0
    assert Checkpoint.load(out / "checkpoint.ckpt").config["has_head"]


def test_consistency_command(pretrained, corpus, capsys):
    ckpt_path, _, _ = pretrained
    rc = dispatch([
        "consistency", "--ckpt", str(ckpt_path),
        "--manifest", f"{corpus}/manifest.jsonl", "--mvc-mode", "da", "--seed", "0",
    ])
    assert rc == 0
    result = json.loads(capsys.readouterr().out)
    assert -1.0 <= result["representation_consistency"] <= 1.0


def test_missing_manifest_fails_cleanly(pretrained, tmp_path, capsys):
    ckpt_path, _, _ = pretrained
    with pytest.raises(FileNotFoundError):
        dispatch([
            "evaluate", "--ckpt", str(ckpt_path),
            "--manifest", str(tmp_path / "missing.jsonl"),
        ])


def test_gradcheck_command(capsys):
    rc = dispatch(["gradcheck"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "overall max rel. error" in out


def test_gradcheck_impossible_tolerance_fails(capsys):
    rc = dispatch(["gradcheck", "--tol", "0"])
    assert rc == 1


def test_parser_lists_all_subcommands():
    parser = build_parser()
    text = parser.format_help()
    for name in ("gen-corpus", "augment", "beamform", "pretrain", "continue",
                 "finetune", "transfer", "evaluate", "consistency", "gradcheck"):
        assert name in text
