"""Command-line entry point.

Subcommands: gen-corpus, augment, beamform, pretrain, continue, finetune,
transfer, evaluate, consistency, gradcheck. Configuration comes from a
TOML file (--config); command-line flags win over config values. All
randomness is controlled by --seed. Exit codes: 0 success, 1 operation
failure (a JSON error record goes to stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .audio import read_wav, write_wav
from .checkpoint import Checkpoint
from .errors import ArgumentError, MvcsslError
from .model import EncoderConfig, MaskConfig, QuantizerConfig
from .objectives import LossConfig
from .pipelines import (
    PipelineConfig,
    build_replay_mixture,
    continual_pretrain,
    evaluate,
    finetune_ctc,
    pretrain,
    representation_consistency,
    supervised_transfer,
)
from .synthcorpus import (
    CorpusSpec,
    Manifest,
    NoisyMultichannel,
    generate_clean_corpus,
    generate_multichannel_corpus,
)
from .variants import AugmentPolicy, augment, build_variant_set, delay_and_sum

from . import gradcheck as gradcheck_mod


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _parse_rate(text: str) -> tuple[int, int]:
    try:
        r, c = text.split(":")
        return int(r), int(c)
    except ValueError as exc:
        raise ArgumentError(f"replay rate must look like 1:3, got {text!r}") from exc


def _pipeline_config(raw: dict, args) -> PipelineConfig:
    pipe = dict(raw.get("pipeline", {}))
    if "replay_rate" in pipe and isinstance(pipe["replay_rate"], str):
        pipe["replay_rate"] = _parse_rate(pipe["replay_rate"])
    for key, flag in (
        ("steps", "steps"),
        ("seed", "seed"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            pipe[key] = val
    if getattr(args, "replay_rate", None):
        pipe["replay_rate"] = _parse_rate(args.replay_rate)
    if getattr(args, "mvc_mode", None):
        modes = dict(pipe.get("mvc_modes", {}))
        for name in raw.get("corpora", {"default": None}):
            modes[name] = args.mvc_mode
        modes["target"] = modes.get("target", args.mvc_mode)
        modes["replay"] = modes.get("replay", args.mvc_mode)
        pipe["mvc_modes"] = modes
    sub = {
        "encoder": EncoderConfig,
        "quantizer": QuantizerConfig,
        "loss": LossConfig,
        "mask": MaskConfig,
    }
    kwargs = dict(pipe)
    for name, cls in sub.items():
        if name in raw:
            kwargs[name] = cls(**raw[name])
    if "replay_rate" in kwargs and isinstance(kwargs["replay_rate"], list):
        kwargs["replay_rate"] = tuple(kwargs["replay_rate"])
    return PipelineConfig(**kwargs)


def _corpora(raw: dict) -> dict[str, Manifest]:
    paths = raw.get("corpora", {})
    if not paths:
        raise ArgumentError("config has no [corpora] table")
    return {name: Manifest.load(path) for name, path in paths.items()}


def _augment_policy(raw: dict) -> AugmentPolicy:
    cfg = dict(raw.get("augment", {}))
    rir_pool = tuple(read_wav(p).channels[0] for p in cfg.pop("rir_paths", []))
    noise_pool = tuple(read_wav(p).channels[0] for p in cfg.pop("noise_paths", []))
    # stages without a configured pool are disabled rather than rejected
    if not rir_pool:
        cfg.setdefault("rir_prob", 0.0)
    if not noise_pool:
        cfg.setdefault("noise_prob", 0.0)
    if "pitch_semitone_range" in cfg:
        cfg["pitch_semitone_range"] = tuple(cfg["pitch_semitone_range"])
    if "snr_range_db" in cfg:
        cfg["snr_range_db"] = tuple(cfg["snr_range_db"])
    return AugmentPolicy(rir_pool=rir_pool, noise_pool=noise_pool, **cfg)


def _emit_metrics(metrics: list[dict], args) -> None:
    out = getattr(args, "metrics", None)
    stream = open(out, "w") if out else sys.stdout
    try:
        for m in metrics:
            stream.write(json.dumps(m, sort_keys=True) + "\n")
    finally:
        if out:
            stream.close()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen_corpus(args) -> int:
    out = _out_dir(args)
    cond = None
    if args.condition == "noisy":
        cond = NoisyMultichannel(num_channels=args.channels)
    spec = CorpusSpec(
        num_utterances=args.num_utterances,
        tokens_per_utt=(args.min_tokens, args.max_tokens),
        condition=cond,
        seed=args.seed or 0,
    )
    gen = generate_clean_corpus if cond is None else generate_multichannel_corpus
    manifest = gen(spec, out / "audio")
    manifest.save(out / "manifest.jsonl")
    print(str(out / "manifest.jsonl"))
    return 0


def _cmd_augment(args) -> int:
    raw = _load_config(args.config)
    policy = _augment_policy(raw)
    rng = np.random.default_rng(args.seed or 0)
    rec = read_wav(args.input)
    out_wav, prov = augment(rec.channels[0], policy, rng)
    write_wav(out_wav, args.output)
    sidecar = Path(args.output).with_suffix(".provenance.jsonl")
    with open(sidecar, "w") as fh:
        fh.write(json.dumps({"input": str(args.input), **prov.to_json()}, sort_keys=True) + "\n")
    return 0


def _cmd_beamform(args) -> int:
    rec = read_wav(args.input)
    out = delay_and_sum(rec, ref_channel=args.ref_channel, max_lag=args.max_lag)
    write_wav(out, args.output)
    return 0


def _cmd_pretrain(args) -> int:
    raw = _load_config(args.config)
    cfg = _pipeline_config(raw, args)
    corpora = _corpora(raw)
    ckpt, metrics = pretrain(cfg, corpora)
    out = _out_dir(args)
    ckpt.save(out / "checkpoint.ckpt")
    _emit_metrics(metrics, args)
    print(str(out / "checkpoint.ckpt"))
    return 0


def _cmd_continue(args) -> int:
    raw = _load_config(args.config)
    cfg = _pipeline_config(raw, args)
    corpora = _corpora(raw)
    if "target" not in corpora or "source" not in corpora:
        raise ArgumentError("continue needs [corpora] entries named 'target' and 'source'")
    seed_ckpt = Checkpoint.load(args.ckpt)
    rng = np.random.default_rng(cfg.seed + 41)
    mixture = build_replay_mixture(corpora["target"], corpora["source"], cfg.replay_rate, rng)
    ckpt, metrics = continual_pretrain(seed_ckpt, mixture, cfg)
    out = _out_dir(args)
    ckpt.save(out / "checkpoint.ckpt")
    _emit_metrics(metrics, args)
    print(str(out / "checkpoint.ckpt"))
    return 0


def _cmd_finetune(args) -> int:
    raw = _load_config(args.config)
    cfg = _pipeline_config(raw, args)
    corpora = _corpora(raw)
    if "labeled" not in corpora:
        raise ArgumentError("finetune needs a [corpora] entry named 'labeled'")
    ckpt, metrics = finetune_ctc(Checkpoint.load(args.ckpt), corpora["labeled"], cfg)
    out = _out_dir(args)
    ckpt.save(out / "checkpoint.ckpt")
    _emit_metrics(metrics, args)
    print(str(out / "checkpoint.ckpt"))
    return 0


def _cmd_transfer(args) -> int:
    raw = _load_config(args.config)
    cfg = _pipeline_config(raw, args)
    corpora = _corpora(raw)
    for name in ("labeled_source", "labeled_target"):
        if name not in corpora:
            raise ArgumentError(f"transfer needs a [corpora] entry named {name!r}")
    ckpt, metrics = supervised_transfer(
        Checkpoint.load(args.ckpt),
        corpora["labeled_source"],
        corpora["labeled_target"],
        cfg,
        cfg,
    )
    out = _out_dir(args)
    ckpt.save(out / "checkpoint.ckpt")
    _emit_metrics(metrics, args)
    print(str(out / "checkpoint.ckpt"))
    return 0


def _cmd_evaluate(args) -> int:
    manifest = Manifest.load(args.manifest)
    result = evaluate(Checkpoint.load(args.ckpt), manifest, seed=args.seed or 0)
    print(json.dumps(result, sort_keys=True))
    return 0


def _cmd_consistency(args) -> int:
    raw = _load_config(args.config)
    manifest = Manifest.load(args.manifest)
    policy = _augment_policy(raw) if args.config else _default_consistency_policy(args.seed or 0)
    rng = np.random.default_rng(args.seed or 0)
    pairs = []
    for rec in manifest.records:
        audio = read_wav(rec["audio_path"])
        pairs.append(
            build_variant_set(audio, args.mvc_mode, 2, policy, rng, rec["utterance_id"])
        )
    value = representation_consistency(Checkpoint.load(args.ckpt), pairs)
    print(json.dumps({"representation_consistency": value}))
    return 0


def _default_consistency_policy(seed: int) -> AugmentPolicy:
    from .pipelines import _default_policy

    return _default_policy(seed)


def _cmd_gradcheck(args) -> int:
    results = gradcheck_mod.run_all(eps=args.eps)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        print(f"{name}: max rel. error {err:.3e}")
    print(f"overall max rel. error {worst:.3e}")
    return 0 if worst <= args.tol else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvcssl",
        description="Multi-variant consistency speech pre-training tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=1,
                       help="worker degree (execution is serial; kept for interface stability)")
        if out:
            p.add_argument("--out", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--num-utterances", type=int, default=50)
    p.add_argument("--condition", choices=("clean", "noisy"), default="clean")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--min-tokens", type=int, default=8)
    p.add_argument("--max-tokens", type=int, default=16)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("augment", help="augment a WAV file")
    common(p, out=False)
    p.add_argument("--config", default=None)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("beamform", help="delay-and-sum beamform a multichannel WAV")
    common(p, out=False)
    p.add_argument("--ref-channel", type=int, default=0)
    p.add_argument("--max-lag", type=int, default=160)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_beamform)

    for name, handler in (
        ("pretrain", _cmd_pretrain),
        ("continue", _cmd_continue),
        ("finetune", _cmd_finetune),
        ("transfer", _cmd_transfer),
    ):
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        common(p)
        p.add_argument("--config", required=True)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--metrics", default=None)
        p.add_argument("--replay-rate", default=None)
        p.add_argument(
            "--mvc-mode",
            choices=("da", "mc", "eh", "da+mc", "da+mc+eh", "none"),
            default=None,
        )
        if name != "pretrain":
            p.add_argument("--ckpt", required=True)
        p.set_defaults(func=handler)

    p = sub.add_parser("evaluate", help="token error rate and masked accuracy")
    common(p, out=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("consistency", help="representation consistency over variant pairs")
    common(p, out=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument(
        "--mvc-mode",
        choices=("da", "mc", "eh", "da+mc", "da+mc+eh"),
        default="da",
    )
    p.set_defaults(func=_cmd_consistency)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    common(p, out=False)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except MvcsslError as exc:
        sys.stderr.write(
            json.dumps({"error_class": exc.error_class, "message": str(exc)}) + "\n"
        )
        return 1


def main() -> None:
    sys.exit(dispatch())
