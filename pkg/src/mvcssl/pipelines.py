"""Training pipelines: pre-training (source-data / data-mixing), continual
pre-training with source-data replay, CTC fine-tuning, supervised transfer,
and evaluation.

Every pipeline is a deterministic function of (config, corpora, seed):
batch order, mask plans, augmentation draws, Gumbel noise, and parameter
initialization all derive from the config seed, and training is strictly
serial, so reruns produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .audio import MultiChannelRecording, Waveform, read_wav
from .checkpoint import Checkpoint
from .errors import (
    ArgumentError,
    CheckpointVersionError,
    ContractViolationError,
    DataError,
    DivergenceError,
)
from .model import (
    EncoderConfig,
    MaskConfig,
    QuantizerConfig,
    SpeechEncoder,
    frame_count,
    make_model,
    sample_mask,
)
from .objectives import (
    LossConfig,
    Vocabulary,
    consistency_contrastive_loss,
    cosine_sim,
    ctc_loss,
    diversity_loss,
    greedy_ctc_decode,
)
from .synthcorpus import Manifest, make_rir_pool
from .variants import AugmentPolicy, VariantSet, build_variant_set

CHECKPOINT_CONFIG_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "source_data"  # source_data | data_mixing | continual | supervised_transfer
    mvc_modes: dict = field(default_factory=dict)  # corpus name -> mode string
    replay_rate: tuple[int, int] = (1, 1)  # (r, c): target r per replayed c
    steps: int = 2000
    warmup_steps: int = 200
    peak_lr: float = 5e-4
    fixed_lr: float = 5e-5
    batch_size: int = 4
    num_variants: int = 2
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    finetune_lr: float = 1e-3
    freeze_encoder_steps: int = 0

    def __post_init__(self):
        r, c = self.replay_rate
        if r <= 0 or c < 0:
            raise ArgumentError("replay rate needs r > 0 and c >= 0")


def full_scale_config(**overrides) -> PipelineConfig:
    """The full-scale hyperparameters, kept as a preset only."""
    defaults = dict(
        steps=400_000,
        warmup_steps=32_000,
        peak_lr=5e-3,
        fixed_lr=5e-5,
        encoder=EncoderConfig.full_scale(),
        quantizer=QuantizerConfig(num_codebooks=2, entries_per_codebook=320, entry_dim=128),
        loss=LossConfig(num_negatives=100),
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


@dataclass(frozen=True)
class ReplayMixture:
    """Target corpus plus a replayed subset of the source corpus."""

    records: tuple  # of (corpus_name, record)
    rate: tuple[int, int]

    def target_fraction(self) -> float:
        n_target = sum(1 for name, _ in self.records if name == "target")
        return n_target / len(self.records)


def build_replay_mixture(
    d_r: Manifest, d_c: Manifest, rate: tuple[int, int], rng: np.random.Generator
) -> ReplayMixture:
    """Sample |D_r| * c / r source records without replacement and pool them
    with the target records; a uniform sampler over the pool then yields
    target batches at fraction r / (r + c)."""
    if not d_r.records or not d_c.records:
        raise ArgumentError("both manifests must be nonempty")
    r, c = rate
    if r <= 0 or c < 0:
        raise ArgumentError("replay rate needs r > 0 and c >= 0")
    n_replay = round(len(d_r) * c / r)
    if n_replay > len(d_c):
        raise ArgumentError(
            f"source corpus has {len(d_c)} records, rate {r}:{c} needs {n_replay}"
        )
    picks = rng.choice(len(d_c), size=n_replay, replace=False) if n_replay else []
    records = [("target", rec) for rec in d_r.records]
    records += [("replay", d_c.records[int(i)]) for i in sorted(int(i) for i in picks)]
    return ReplayMixture(tuple(records), rate)


# ---------------------------------------------------------------------------
# data handling


def _load_audio(records: list[tuple[str, dict]]) -> list[tuple[str, dict, MultiChannelRecording]]:
    cache: dict[str, MultiChannelRecording] = {}
    out = []
    for name, rec in records:
        path = rec["audio_path"]
        if path not in cache:
            cache[path] = read_wav(path)
        out.append((name, rec, cache[path]))
    return out


def _default_policy(seed: int) -> AugmentPolicy:
    """Augmentation pools derived deterministically from the seed."""
    rng = np.random.default_rng(seed + 7_777_777)
    rirs = make_rir_pool(rng, 8, 160)
    noises = tuple(
        Waveform(0.1 * rng.standard_normal(32000)) for _ in range(4)
    )
    return AugmentPolicy(rir_pool=tuple(rirs), noise_pool=noises)


def _model_config_dict(cfg: PipelineConfig, head: bool) -> dict:
    return {
        "version": CHECKPOINT_CONFIG_VERSION,
        "encoder": asdict(cfg.encoder),
        "quantizer": asdict(cfg.quantizer),
        "mask": asdict(cfg.mask),
        "loss": asdict(cfg.loss),
        "has_head": head,
    }


def _model_from_checkpoint(ckpt: Checkpoint) -> tuple[SpeechEncoder, torch.nn.Linear | None]:
    cfg = ckpt.config
    if cfg.get("version") != CHECKPOINT_CONFIG_VERSION:
        raise CheckpointVersionError(f"unknown checkpoint config version {cfg.get('version')}")
    enc = EncoderConfig(**cfg["encoder"])
    qcfg_raw = dict(cfg["quantizer"])
    qcfg = QuantizerConfig(**qcfg_raw)
    model = make_model(enc, qcfg, seed=0)
    state = {
        k.removeprefix("model."): v for k, v in ckpt.tensors.items() if k.startswith("model.")
    }
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointVersionError(f"checkpoint incompatible with config: {exc}") from exc
    head = None
    if cfg.get("has_head"):
        head = torch.nn.Linear(enc.ctx_dim, Vocabulary().size)
        head.load_state_dict(
            {
                k.removeprefix("head."): v
                for k, v in ckpt.tensors.items()
                if k.startswith("head.")
            }
        )
    return model, head


def _checkpoint_from(model: SpeechEncoder, cfg: PipelineConfig, meta: dict,
                     head: torch.nn.Linear | None = None) -> Checkpoint:
    tensors = {f"model.{k}": v.clone() for k, v in model.state_dict().items()}
    if head is not None:
        tensors.update({f"head.{k}": v.clone() for k, v in head.state_dict().items()})
    return Checkpoint(_model_config_dict(cfg, head is not None), tensors, meta)


def _lr_at(step: int, cfg: PipelineConfig) -> float:
    if step < cfg.warmup_steps:
        return cfg.peak_lr * (step + 1) / max(cfg.warmup_steps, 1)
    remaining = max(cfg.steps - cfg.warmup_steps, 1)
    return cfg.peak_lr * max(cfg.steps - step, 0) / remaining


# ---------------------------------------------------------------------------
# pre-training


def _variant_tensors(vset: VariantSet) -> list[torch.Tensor]:
    return [torch.tensor(m.samples, dtype=torch.float32) for m in vset.members]


def _pretrain_steps(
    model: SpeechEncoder,
    entries: list[tuple[str, dict, MultiChannelRecording]],
    cfg: PipelineConfig,
    lr_fn,
    metrics: list[dict],
) -> None:
    if not entries:
        raise ArgumentError("no training data")
    opt = torch.optim.AdamW(model.parameters(), lr=1.0, weight_decay=0.01)
    data_rng = np.random.default_rng(cfg.seed + 1)
    mask_rng = np.random.default_rng(cfg.seed + 2)
    neg_rng = np.random.default_rng(cfg.seed + 3)
    gumbel = torch.Generator().manual_seed(cfg.seed + 4)
    policy = _default_policy(cfg.seed)

    for step in range(cfg.steps):
        lr = lr_fn(step)
        for group in opt.param_groups:
            group["lr"] = lr
        temperature = cfg.quantizer.temperature_at(step)

        batch_losses, self_losses, cross_losses = [], [], []
        probs_acc, hit_acc = [], []
        picks = data_rng.integers(len(entries), size=cfg.batch_size)
        for idx in picks:
            name, rec, audio = entries[int(idx)]
            mode = cfg.mvc_modes.get(name, "da" if audio.num_channels == 1 else "mc")
            vset = build_variant_set(
                audio, mode, cfg.num_variants, policy, data_rng, rec["utterance_id"]
            )
            wavs = _variant_tensors(vset)
            T = frame_count(wavs[0].shape[0])
            plan = sample_mask(T, cfg.mask, mask_rng)
            while len(plan.masked_indices) * len(wavs) < 2:
                # a 1-frame plan on a single variant leaves no negative pool
                plan = sample_mask(T, cfg.mask, mask_rng)
            contexts, quantized, probs = [], [], []
            for w in wavs:
                out = model(w, plan=plan, temperature=temperature, generator=gumbel)
                contexts.append(out["c"])
                quantized.append(out["q"])
                probs.append(out["probs"])
            l_ccl, l_self, l_cross, acc = consistency_contrastive_loss(
                contexts, quantized, plan, cfg.loss, neg_rng, return_accuracy=True
            )
            batch_losses.append(l_ccl)
            self_losses.append(float(l_self.detach()))
            cross_losses.append(float(l_cross.detach()))
            probs_acc.append(torch.cat([p.reshape(-1, *p.shape[-2:]) for p in probs]))
            hit_acc.append(acc)

        div = diversity_loss(torch.cat(probs_acc))
        total = torch.stack(batch_losses).mean() + cfg.loss.diversity_weight * div
        if not torch.isfinite(total):
            raise DivergenceError(f"non-finite loss at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()

        with torch.no_grad():
            mean_probs = torch.cat(probs_acc).mean(dim=0)
            usage_entropy = float(
                -(mean_probs * torch.log(mean_probs.clamp_min(1e-12))).sum(dim=-1).mean()
            )
        metrics.append(
            {
                "step": step,
                "loss": float(total.detach()),
                "l_ccl": float(torch.stack(batch_losses).mean().detach()),
                "l_self": float(np.mean(self_losses)),
                "l_cross": float(np.mean(cross_losses)),
                "diversity": float(div.detach()),
                "contrastive_accuracy": float(np.mean(hit_acc)),
                "codebook_entropy": usage_entropy,
                "lr": lr,
                "gumbel_temperature": temperature,
            }
        )


def pretrain(cfg: PipelineConfig, corpora: dict[str, Manifest]) -> tuple[Checkpoint, list[dict]]:
    """Pre-train from scratch on one corpus (source-data) or several pooled
    corpora (data-mixing), with linear warmup and linear decay."""
    records = [(name, rec) for name, man in corpora.items() for rec in man.records]
    entries = _load_audio(records)
    model = make_model(cfg.encoder, cfg.quantizer, cfg.seed)
    metrics: list[dict] = []
    _pretrain_steps(model, entries, cfg, lambda s: _lr_at(s, cfg), metrics)
    meta = {"mode": cfg.mode, "steps_trained": cfg.steps, "seed": cfg.seed,
            "pipeline": "pretrain"}
    return _checkpoint_from(model, cfg, meta), metrics


def continual_pretrain(
    seed_ckpt: Checkpoint, mixture: ReplayMixture, cfg: PipelineConfig
) -> tuple[Checkpoint, list[dict]]:
    """Resume a checkpoint and keep pre-training at a fixed learning rate
    on the target corpus plus the replayed source subset."""
    model, _ = _model_from_checkpoint(seed_ckpt)
    if asdict(cfg.encoder) != seed_ckpt.config["encoder"]:
        raise CheckpointVersionError("encoder config mismatch with seed checkpoint")
    entries = _load_audio(list(mixture.records))
    metrics: list[dict] = []
    _pretrain_steps(model, entries, cfg, lambda s: cfg.fixed_lr, metrics)
    meta = {"mode": "continual", "steps_trained": cfg.steps, "seed": cfg.seed,
            "pipeline": "continual_pretrain", "replay_rate": list(mixture.rate)}
    return _checkpoint_from(model, cfg, meta), metrics


# ---------------------------------------------------------------------------
# fine-tuning


def _context_for(model: SpeechEncoder, wav: torch.Tensor) -> torch.Tensor:
    return model.context(model.post_proj(model.latents(wav)))


def finetune_ctc(
    ckpt: Checkpoint, labeled: Manifest, cfg: PipelineConfig
) -> tuple[Checkpoint, list[dict]]:
    """Add a fresh linear output layer and optimize CTC on the transcripts.

    The encoder can be frozen for the first ``freeze_encoder_steps`` steps.
    """
    vocab = Vocabulary()
    model, _ = _model_from_checkpoint(ckpt)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed + 11)
        head = torch.nn.Linear(model.cfg.ctx_dim, vocab.size)
    entries = _load_audio([("labeled", rec) for rec in labeled.records])
    targets = []
    for _, rec, _ in entries:
        try:
            targets.append(vocab.encode(rec["transcript"]))
        except ArgumentError as exc:
            raise DataError(str(exc)) from exc

    opt = torch.optim.AdamW(
        list(model.parameters()) + list(head.parameters()),
        lr=cfg.finetune_lr, weight_decay=0.01,
    )
    data_rng = np.random.default_rng(cfg.seed + 21)
    metrics: list[dict] = []
    for step in range(cfg.steps):
        frozen = step < cfg.freeze_encoder_steps
        for p in model.parameters():
            p.requires_grad_(not frozen)
        picks = data_rng.integers(len(entries), size=cfg.batch_size)
        losses = []
        for idx in picks:
            _, rec, audio = entries[int(idx)]
            wav = torch.tensor(audio.channels[0].samples, dtype=torch.float32)
            logits = head(_context_for(model, wav))
            losses.append(ctc_loss(logits, targets[int(idx)], blank=vocab.blank_id))
        total = torch.stack(losses).mean()
        if not torch.isfinite(total):
            raise DivergenceError(f"non-finite CTC loss at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()
        metrics.append({"step": step, "ctc_loss": float(total.detach()),
                        "encoder_frozen": frozen, "lr": cfg.finetune_lr})
    for p in model.parameters():
        p.requires_grad_(True)
    meta = {"mode": "finetune", "steps_trained": cfg.steps, "seed": cfg.seed,
            "pipeline": "finetune_ctc"}
    return _checkpoint_from(model, cfg, meta, head=head), metrics


def supervised_transfer(
    ckpt: Checkpoint,
    labeled_source: Manifest,
    labeled_target: Manifest,
    cfg_source: PipelineConfig,
    cfg_target: PipelineConfig,
) -> tuple[Checkpoint, list[dict]]:
    """Fine-tune on the source corpus, then continue fine-tuning on the
    target corpus; stage boundaries are tagged in the metrics stream."""
    stage1, metrics1 = finetune_ctc(ckpt, labeled_source, cfg_source)
    if cfg_target.steps == 0:
        for m in metrics1:
            m["stage"] = 1
        return stage1, metrics1
    stage2, metrics2 = finetune_ctc(stage1, labeled_target, cfg_target)
    for m in metrics1:
        m["stage"] = 1
    for m in metrics2:
        m["stage"] = 2
    return stage2, metrics1 + metrics2


# ---------------------------------------------------------------------------
# evaluation


def edit_distance(ref: list, hyp: list) -> int:
    """Levenshtein distance (unit costs)."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def token_error_rate(reference: str, hypothesis: str) -> float:
    ref = list(reference)
    if not ref:
        raise ArgumentError("empty reference")
    return edit_distance(ref, list(hypothesis)) / len(ref)


def evaluate(ckpt: Checkpoint, test: Manifest, seed: int = 0) -> dict:
    """Greedy-decode token error rate (when the checkpoint has an output
    layer) and masked contrastive accuracy; deterministic given the seed."""
    vocab = Vocabulary()
    model, head = _model_from_checkpoint(ckpt)
    model.eval()
    mask_cfg = MaskConfig(**ckpt.config["mask"])
    loss_cfg = LossConfig(**ckpt.config["loss"])
    mask_rng = np.random.default_rng(seed + 31)
    neg_rng = np.random.default_rng(seed + 32)
    entries = _load_audio([("test", rec) for rec in test.records])

    ters, accs = [], []
    with torch.no_grad():
        for _, rec, audio in entries:
            wav = torch.tensor(audio.channels[0].samples, dtype=torch.float32)
            if head is not None:
                logits = head(_context_for(model, wav))
                hyp = greedy_ctc_decode(logits, vocab)
                ters.append(token_error_rate(rec["transcript"], hyp))
            T = frame_count(wav.shape[0])
            plan = sample_mask(T, mask_cfg, mask_rng)
            out = model(wav, plan=plan, quantize_noise=False)
            _, _, _, acc = consistency_contrastive_loss(
                [out["c"]], [out["q"]], plan, loss_cfg, neg_rng, return_accuracy=True
            )
            accs.append(acc)
    result = {"contrastive_accuracy": float(np.mean(accs))}
    result["token_error_rate"] = float(np.mean(ters)) if ters else None
    return result


def representation_consistency(ckpt: Checkpoint, pairs: list[VariantSet]) -> float:
    """Mean frame-wise cosine similarity between the context vectors of the
    two members of each variant pair; no masking, eval mode."""
    model, _ = _model_from_checkpoint(ckpt)
    model.eval()
    sims = []
    with torch.no_grad():
        for vset in pairs:
            if vset.size != 2:
                raise ArgumentError("representation_consistency expects K = 2 pairs")
            c = [
                _context_for(model, torch.tensor(m.samples, dtype=torch.float32))
                for m in vset.members
            ]
            sims.append(float(cosine_sim(c[0], c[1]).mean()))
    return float(np.mean(sims))
