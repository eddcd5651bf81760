"""Finite-difference verification of every differentiable path.

The oracle is a plain central difference computed parameter by parameter
at float64; it never calls autograd, so it stays independent of the
backward implementations it checks.
"""

from __future__ import annotations

import numpy as np
import torch

from .model import (
    EncoderConfig,
    FeatureExtractor,
    MaskPlan,
    Quantizer,
    QuantizerConfig,
    TransformerBlock,
)
from .objectives import LossConfig, consistency_contrastive_loss, ctc_loss, diversity_loss

DEFAULT_EPS = 1e-5


def central_difference(f, param: torch.Tensor, eps: float) -> torch.Tensor:
    """d f / d param by central differences, elementwise."""
    grad = torch.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = f()
            flat[i] = orig - eps
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return grad


def _rel_err(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    denom = max(float(torch.linalg.vector_norm(numeric)), 1e-12)
    return float(torch.linalg.vector_norm(analytic - numeric)) / denom


def _check_params(loss_fn, params: dict[str, torch.Tensor], eps: float) -> float:
    """Max relative error over the given leaf parameters."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    worst = 0.0
    for (name, p), g in zip(params.items(), grads):
        analytic = torch.zeros_like(p) if g is None else g
        numeric = central_difference(lambda: loss_fn().item(), p, eps)
        worst = max(worst, _rel_err(analytic, numeric))
    return worst


def check_encoder(eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    torch.manual_seed(seed)
    fx = FeatureExtractor(6).to(torch.float64)
    wav = torch.randn(460, dtype=torch.float64)
    probe = torch.randn(frameless := fx(wav).shape[0], 6, dtype=torch.float64)

    def loss_fn():
        return (fx(wav) * probe).sum()

    params = {n: p for n, p in fx.named_parameters()}
    return _check_params(loss_fn, params, eps)


def check_context(eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    torch.manual_seed(seed)
    block = TransformerBlock(8, 2, 16).to(torch.float64)
    x = torch.randn(5, 8, dtype=torch.float64)
    probe = torch.randn(5, 8, dtype=torch.float64)

    def loss_fn():
        return (block(x.unsqueeze(0)).squeeze(0) * probe).sum()

    params = {n: p for n, p in block.named_parameters()}
    return _check_params(loss_fn, params, eps)


def check_consistency_loss(eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    torch.manual_seed(seed)
    K, T, D = 2, 6, 5
    plan = MaskPlan((1, 3, 4), T)
    cfg = LossConfig(num_negatives=4)
    contexts = [torch.randn(T, D, dtype=torch.float64, requires_grad=True) for _ in range(K)]
    quantized = [torch.randn(T, D, dtype=torch.float64, requires_grad=True) for _ in range(K)]

    def loss_fn():
        rng = np.random.default_rng(seed)  # same negatives every call
        l_ccl, _, _ = consistency_contrastive_loss(contexts, quantized, plan, cfg, rng)
        return l_ccl

    params = {f"c{i}": c for i, c in enumerate(contexts)}
    params.update({f"q{i}": q for i, q in enumerate(quantized)})
    return _check_params(loss_fn, params, eps)


def check_diversity(eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    torch.manual_seed(seed)
    logits = torch.randn(7, 2, 5, dtype=torch.float64, requires_grad=True)

    def loss_fn():
        return diversity_loss(torch.softmax(logits, dim=-1))

    return _check_params(loss_fn, {"logits": logits}, eps)


def check_ctc(eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    torch.manual_seed(seed)
    logits = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)

    def loss_fn():
        return ctc_loss(logits, [1, 2], blank=0)

    return _check_params(loss_fn, {"logits": logits}, eps)


def check_quantizer_soft(eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    torch.manual_seed(seed)
    qcfg = QuantizerConfig(num_codebooks=2, entries_per_codebook=3, entry_dim=4)
    quant = Quantizer(5, 6, qcfg).to(torch.float64)
    z = torch.randn(4, 5, dtype=torch.float64)
    probe = torch.randn(4, 6, dtype=torch.float64)
    noise = torch.zeros(4, 2, 3, dtype=torch.float64)

    def loss_fn():
        q, _ = quant(z, temperature=0.7, hard=False, noise=noise)
        return (q * probe).sum()

    params = {n: p for n, p in quant.named_parameters()}
    return _check_params(loss_fn, params, eps)


ALL_CHECKS = {
    "encoder": check_encoder,
    "context": check_context,
    "consistency_loss": check_consistency_loss,
    "diversity": check_diversity,
    "ctc": check_ctc,
    "quantizer_soft": check_quantizer_soft,
}


def run_all(eps: float = DEFAULT_EPS) -> dict[str, float]:
    return {name: fn(eps) for name, fn in ALL_CHECKS.items()}
