"""Miniature contrastive speech encoder.

Convolutional feature extractor (fixed strides 5,2,2,2,2,2,2 and kernels
10,3,3,3,3,2,2 for a total stride of 320 samples = 20 ms at 16 kHz),
span masking with a learned mask embedding, a pre-norm transformer
context network with convolutional positional encoding, and a
Gumbel-Softmax product quantizer with straight-through gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .errors import ArgumentError, ContractViolationError, TooShortError

CONV_STRIDES = (5, 2, 2, 2, 2, 2, 2)
CONV_KERNELS = (10, 3, 3, 3, 3, 2, 2)
TOTAL_STRIDE = int(np.prod(CONV_STRIDES))  # 320 samples = 20 ms
MIN_INPUT_SAMPLES = 400


@dataclass(frozen=True)
class EncoderConfig:
    conv_channels: int = 64
    ctx_layers: int = 2
    ctx_dim: int = 64
    ctx_heads: int = 4
    ffn_dim: int = 128
    pos_conv_kernel: int = 9
    pos_conv_groups: int = 4

    def __post_init__(self):
        if self.ctx_dim % self.ctx_heads != 0:
            raise ArgumentError("ctx_dim must be divisible by ctx_heads")

    @staticmethod
    def full_scale() -> "EncoderConfig":
        return EncoderConfig(conv_channels=512, ctx_layers=12, ctx_dim=768,
                             ctx_heads=8, ffn_dim=3072, pos_conv_kernel=129,
                             pos_conv_groups=16)


@dataclass(frozen=True)
class MaskConfig:
    start_prob: float = 0.065
    span: int = 10

    def __post_init__(self):
        if not 0.0 < self.start_prob < 1.0:
            raise ArgumentError("start_prob must be in (0, 1)")
        if self.span < 1:
            raise ArgumentError("span must be >= 1")


@dataclass(frozen=True)
class MaskPlan:
    """Masked frame indices for one utterance, shared by all its variants."""

    masked_indices: tuple[int, ...]
    total_frames: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.masked_indices)))
        if idx and (idx[0] < 0 or idx[-1] >= self.total_frames):
            raise ArgumentError("masked indices out of range")
        object.__setattr__(self, "masked_indices", idx)

    def as_bool(self) -> torch.Tensor:
        mask = torch.zeros(self.total_frames, dtype=torch.bool)
        if self.masked_indices:
            mask[list(self.masked_indices)] = True
        return mask


@dataclass(frozen=True)
class QuantizerConfig:
    num_codebooks: int = 2
    entries_per_codebook: int = 32
    entry_dim: int = 32
    temperature_start: float = 2.0
    temperature_floor: float = 0.5
    temperature_decay: float = 0.999

    def __post_init__(self):
        if self.num_codebooks < 1 or self.entries_per_codebook < 1:
            raise ArgumentError("codebook counts must be >= 1")
        if self.temperature_start <= 0 or self.temperature_floor <= 0:
            raise ArgumentError("temperatures must be positive")

    def temperature_at(self, step: int) -> float:
        return max(self.temperature_floor,
                   self.temperature_start * self.temperature_decay**step)


def frame_count(num_samples: int, strides=CONV_STRIDES, kernels=CONV_KERNELS) -> int:
    """Output frames after the unpadded conv stack; errors below 400 samples."""
    n = num_samples
    for k, s in zip(kernels, strides):
        n = (n - k) // s + 1
        if n < 1:
            raise TooShortError(
                f"{num_samples} samples is below the {MIN_INPUT_SAMPLES}-sample receptive field"
            )
    return n


def sample_mask(T: int, cfg: MaskConfig, rng: np.random.Generator) -> MaskPlan:
    """Independent start draws with probability ``start_prob``; each start
    masks the next ``span`` frames. At least one frame is always masked."""
    if T < 1:
        raise ArgumentError("T must be >= 1")
    starts = np.flatnonzero(rng.random(T) < cfg.start_prob)
    masked = set()
    for s in starts:
        masked.update(range(s, min(s + cfg.span, T)))
    if not masked:
        s = int(rng.integers(T))
        masked.update(range(s, min(s + cfg.span, T)))
    return MaskPlan(tuple(sorted(masked)), T)


def apply_mask(z: torch.Tensor, plan: MaskPlan, mask_vector: torch.Tensor) -> torch.Tensor:
    """Replace masked frames of (T, D) features with the shared mask vector."""
    if z.shape[0] != plan.total_frames:
        raise ContractViolationError(
            f"mask plan covers {plan.total_frames} frames, features have {z.shape[0]}"
        )
    if mask_vector.shape[-1] != z.shape[-1]:
        raise ArgumentError("mask vector dimension mismatch")
    if not plan.masked_indices:
        return z
    mask = plan.as_bool().to(z.device).unsqueeze(-1)
    return torch.where(mask, mask_vector.to(z.dtype), z)


class FeatureExtractor(nn.Module):
    """Seven strided conv layers with GELU; layer norm on the raw input
    and on the output frames."""

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.ModuleList()
        in_ch = 1
        for k, s in zip(CONV_KERNELS, CONV_STRIDES):
            conv = nn.Conv1d(in_ch, channels, k, stride=s)
            # default fan-in init lets the frame-invariant bias component
            # dominate by layer 7; kaiming keeps frames distinguishable
            nn.init.kaiming_normal_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.convs.append(conv)
            in_ch = channels
        self.out_norm = nn.LayerNorm(channels)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        if wav.shape[-1] < MIN_INPUT_SAMPLES:
            raise TooShortError(f"need >= {MIN_INPUT_SAMPLES} samples, got {wav.shape[-1]}")
        x = wav
        x = (x - x.mean(dim=-1, keepdim=True)) / torch.sqrt(x.var(dim=-1, keepdim=True) + 1e-7)
        x = x.unsqueeze(-2)  # (..., 1, L)
        for conv in self.convs:
            x = torch.nn.functional.gelu(conv(x))
        x = x.transpose(-1, -2)  # (..., T, C)
        return self.out_norm(x)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + attn_out
        return x + self.ffn(self.norm2(x))


class ContextNetwork(nn.Module):
    """Grouped-conv positional encoding followed by pre-norm transformer blocks."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        pad = cfg.pos_conv_kernel // 2
        self.pos_conv = nn.Conv1d(
            cfg.ctx_dim, cfg.ctx_dim, cfg.pos_conv_kernel,
            padding=pad, groups=cfg.pos_conv_groups,
        )
        self.trim_last = cfg.pos_conv_kernel % 2 == 0
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.ctx_dim, cfg.ctx_heads, cfg.ffn_dim)
            for _ in range(cfg.ctx_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.ctx_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        pos = self.pos_conv(x.transpose(1, 2))
        if self.trim_last:
            pos = pos[..., :-1]
        x = x + torch.nn.functional.gelu(pos).transpose(1, 2)
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        return x.squeeze(0) if squeeze else x


def gumbel_softmax_select(
    logits: torch.Tensor,
    temperature: float,
    generator: torch.Generator | None = None,
    hard: bool = True,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Per-codebook Gumbel-Softmax over (..., G, V) logits.

    ``noise`` overrides the sampled Gumbel noise (pass zeros for a pure
    tempered softmax). With ``hard`` the forward value is one-hot at the
    argmax and the backward pass follows the soft distribution.
    """
    if temperature <= 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    if noise is None:
        u = torch.empty_like(logits).uniform_(
            torch.finfo(logits.dtype).tiny, 1.0, generator=generator
        )
        noise = -torch.log(-torch.log(u))
    soft = torch.softmax((logits + noise) / temperature, dim=-1)
    if not hard:
        return soft
    index = soft.argmax(dim=-1, keepdim=True)
    one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
    return one_hot + soft - soft.detach()


class Quantizer(nn.Module):
    """Product quantizer: logits over G codebooks of V entries each,
    Gumbel-Softmax entry selection, concatenation, and a final linear map."""

    def __init__(self, input_dim: int, output_dim: int, cfg: QuantizerConfig):
        super().__init__()
        self.cfg = cfg
        G, V = cfg.num_codebooks, cfg.entries_per_codebook
        self.logit_proj = nn.Linear(input_dim, G * V)
        self.codebooks = nn.Parameter(torch.empty(G, V, cfg.entry_dim))
        nn.init.uniform_(self.codebooks, -1.0, 1.0)
        self.out_proj = nn.Linear(G * cfg.entry_dim, output_dim)

    def forward(
        self,
        z: torch.Tensor,
        temperature: float,
        generator: torch.Generator | None = None,
        hard: bool = True,
        noise: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (quantized (..., T, output_dim), selection probs (..., T, G, V)).

        Selection probs are the pre-noise softmax used by the diversity
        penalty.
        """
        G, V = self.cfg.num_codebooks, self.cfg.entries_per_codebook
        logits = self.logit_proj(z).reshape(*z.shape[:-1], G, V)
        probs = torch.softmax(logits, dim=-1)
        weights = gumbel_softmax_select(logits, temperature, generator, hard, noise)
        entries = torch.einsum("...gv,gvd->...gd", weights, self.codebooks.to(z.dtype))
        q = self.out_proj(entries.reshape(*z.shape[:-1], G * self.cfg.entry_dim))
        return q, probs


class SpeechEncoder(nn.Module):
    """Full pre-training network: extractor -> (mask) -> context; quantizer
    targets branch off the unmasked latents."""

    def __init__(self, cfg: EncoderConfig, qcfg: QuantizerConfig):
        super().__init__()
        self.cfg = cfg
        self.qcfg = qcfg
        self.feature_extractor = FeatureExtractor(cfg.conv_channels)
        self.post_proj = nn.Linear(cfg.conv_channels, cfg.ctx_dim)
        self.mask_vector = nn.Parameter(torch.empty(cfg.ctx_dim).uniform_(-0.1, 0.1))
        self.context = ContextNetwork(cfg)
        self.quantizer = Quantizer(cfg.conv_channels, cfg.ctx_dim, qcfg)

    def latents(self, wav: torch.Tensor) -> torch.Tensor:
        return self.feature_extractor(wav)

    def forward(
        self,
        wav: torch.Tensor,
        plan: MaskPlan | None = None,
        temperature: float | None = None,
        generator: torch.Generator | None = None,
        quantize_noise: bool = True,
    ) -> dict:
        """Run one utterance (1-D tensor). Returns latents ``z``, contexts
        ``c``, quantized targets ``q``, and quantizer selection probs."""
        z = self.latents(wav)
        proj = self.post_proj(z)
        masked = apply_mask(proj, plan, self.mask_vector) if plan is not None else proj
        c = self.context(masked)
        if temperature is None:
            temperature = self.qcfg.temperature_floor
        noise = None if quantize_noise else torch.zeros(1, dtype=z.dtype)
        q, probs = self.quantizer(z, temperature, generator, hard=True, noise=noise)
        return {"z": z, "c": c, "q": q, "probs": probs}


def make_model(cfg: EncoderConfig, qcfg: QuantizerConfig, seed: int,
               dtype: torch.dtype = torch.float32) -> SpeechEncoder:
    """Deterministic construction: parameters initialized from ``seed``."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SpeechEncoder(cfg, qcfg)
    return model.to(dtype)
