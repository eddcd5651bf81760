"""Loss functions: InfoNCE over quantized targets, the multi-variant
consistency loss with its self/cross decomposition, the codebook
diversity penalty, and CTC with a greedy decoder for fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ArgumentError, ContractViolationError, DegenerateInputError
from .model import MaskPlan


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    num_negatives: int = 10
    diversity_weight: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ArgumentError("temperature must be positive")
        if self.num_negatives < 1:
            raise ArgumentError("num_negatives must be >= 1")
        if self.diversity_weight < 0:
            raise ArgumentError("diversity_weight must be nonnegative")


# ---------------------------------------------------------------------------
# vocabulary

_CHARS = "abcdefghijklmnopqrstuvwxyz'.-"  # 29 characters
WORD_BOUNDARY = "|"
BLANK = "<blank>"


@dataclass(frozen=True)
class Vocabulary:
    """CTC blank (index 0) + 29 characters + a word-boundary token."""

    tokens: tuple[str, ...] = (BLANK,) + tuple(_CHARS) + (WORD_BOUNDARY,)

    def __post_init__(self):
        if self.tokens[0] != BLANK or len(self.tokens) != 31:
            raise ArgumentError("vocabulary must be blank + 29 chars + boundary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return 0

    def encode(self, text: str) -> list[int]:
        out = []
        for ch in text:
            ch = WORD_BOUNDARY if ch == " " else ch
            if ch not in self.tokens:
                raise ArgumentError(f"character {ch!r} outside vocabulary")
            out.append(self.tokens.index(ch))
        return out

    def decode_ids(self, ids) -> str:
        return "".join(
            " " if self.tokens[i] == WORD_BOUNDARY else self.tokens[i]
            for i in ids
            if i != self.blank_id
        )


# ---------------------------------------------------------------------------
# contrastive losses


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine of the angle between the last-axis vectors of a and b."""
    na = torch.linalg.vector_norm(a, dim=-1)
    nb = torch.linalg.vector_norm(b, dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise DegenerateInputError("cosine similarity of a zero vector")
    return (a * b).sum(dim=-1) / (na * nb)


def contrastive_loss(
    anchor: torch.Tensor, positive: torch.Tensor, negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """InfoNCE: -log softmax of the positive among {positive} + negatives.

    ``negatives`` has shape (n, D); the positive is included in the
    denominator so the loss is nonnegative.
    """
    cands = torch.cat([positive.unsqueeze(0), negatives], dim=0)
    sims = cosine_sim(anchor.unsqueeze(0).expand_as(cands), cands) / temperature
    return -torch.log_softmax(sims, dim=0)[0]


def sample_negatives(
    pool: list[tuple[int, int]],
    exclude: tuple[int, int],
    n: int,
    rng,
) -> list[tuple[int, int]]:
    """Uniform draw of n (variant, time) pairs from masked steps, excluding
    the positive's own pair. Without replacement; with replacement only
    when the pool is smaller than n."""
    avail = [p for p in pool if p != exclude]
    if not avail:
        raise DegenerateInputError("no candidates to sample negatives from")
    if len(avail) <= n:
        picks = list(avail)
        while len(picks) < n:
            picks.append(avail[int(rng.integers(len(avail)))])
        return picks
    order = rng.permutation(len(avail))[:n]
    return [avail[int(i)] for i in order]


def consistency_contrastive_loss(
    contexts: list[torch.Tensor],
    quantized: list[torch.Tensor],
    plan: MaskPlan,
    cfg: LossConfig,
    rng,
    return_accuracy: bool = False,
    shared_negatives: bool = False,
):
    """Consistency loss over all ordered variant pairs at masked steps.

    For every masked step t and ordered pair (i, j) of the K variants the
    anchor c_i[t] must identify q_j[t] among sampled negatives. Terms
    with i == j form the self loss, i != j the cross loss; the total is
    exactly their sum. All three are normalized by the term count.
    """
    K = len(contexts)
    if K != len(quantized) or K < 1:
        raise ArgumentError("need matching context/quantized sequences")
    T = plan.total_frames
    for seq in (*contexts, *quantized):
        if seq.shape[0] != T:
            raise ContractViolationError("sequence length does not match mask plan")
    masked = list(plan.masked_indices)
    if not masked:
        raise ContractViolationError("mask plan has no masked steps")
    pool = [(i, t) for i in range(K) for t in masked]

    # one term per (masked t, anchor variant i, positive variant j);
    # negatives drawn per term (or per step when shared), then everything
    # is scored in one batched cosine/log-softmax pass
    anchor_idx, cand_idx, is_self = [], [], []
    for t in masked:
        if shared_negatives:
            # one draw per time step, valid for every (i, j) pair: exclude
            # every variant's step-t vector so no positive leaks in
            step_pool = [p for p in pool if p[1] != t]
            if not step_pool:
                raise DegenerateInputError("no negatives outside the current step")
            shared = sample_negatives(step_pool, (-1, -1), cfg.num_negatives, rng)
        for i in range(K):
            for j in range(K):
                negs = (
                    shared
                    if shared_negatives
                    else sample_negatives(pool, (j, t), cfg.num_negatives, rng)
                )
                anchor_idx.append((i, t))
                cand_idx.append([(j, t)] + negs)
                is_self.append(i == j)

    C = torch.stack(contexts)  # (K, T, D)
    Q = torch.stack(quantized)
    a_var = torch.tensor([v for v, _ in anchor_idx])
    a_time = torch.tensor([t for _, t in anchor_idx])
    c_var = torch.tensor([[v for v, _ in row] for row in cand_idx])
    c_time = torch.tensor([[t for _, t in row] for row in cand_idx])
    anchors = C[a_var, a_time].unsqueeze(1)  # (N, 1, D)
    cands = Q[c_var, c_time]  # (N, 1+n, D)
    sims = cosine_sim(anchors.expand_as(cands), cands)  # (N, 1+n)
    term_losses = -torch.log_softmax(sims / cfg.temperature, dim=1)[:, 0]

    self_mask = torch.tensor(is_self)
    n_terms = len(is_self)
    l_self = term_losses[self_mask].sum() / n_terms
    l_cross = term_losses[~self_mask].sum() / n_terms
    l_ccl = l_self + l_cross
    if return_accuracy:
        with torch.no_grad():
            accuracy = float((sims.argmax(dim=1) == 0).float().mean())
        return l_ccl, l_self, l_cross, accuracy
    return l_ccl, l_self, l_cross


def diversity_loss(selection_probs: torch.Tensor) -> torch.Tensor:
    """Penalize low-entropy codebook usage.

    ``selection_probs`` is (..., G, V); leading axes are averaged first.
    Value is (G*V - sum_g exp(entropy_g)) / (G*V): 0 at uniform usage,
    (G*V - G)/(G*V) at fully collapsed codebooks.
    """
    probs = selection_probs.reshape(-1, *selection_probs.shape[-2:]).mean(dim=0)
    G, V = probs.shape
    entropy = -(probs * torch.log(probs.clamp_min(1e-12))).sum(dim=-1)
    return (G * V - torch.exp(entropy).sum()) / (G * V)


# ---------------------------------------------------------------------------
# CTC


def ctc_loss(log_or_logits: torch.Tensor, target: list[int], blank: int = 0,
             logits: bool = True) -> torch.Tensor:
    """Negative log marginal probability of all blank-augmented alignments.

    Standard forward algorithm in log space over a (T, vocab) score
    matrix; differentiable. Returns +inf (as a tensor) when the target
    cannot fit in T frames.
    """
    log_probs = torch.log_softmax(log_or_logits, dim=-1) if logits else log_or_logits
    T = log_probs.shape[0]
    ext = [blank]
    for tok in target:
        ext.extend((tok, blank))
    S = len(ext)
    min_frames = len(target) + sum(
        1 for a, b in zip(target, target[1:]) if a == b
    )
    if T < min_frames or T < 1:
        return torch.tensor(float("inf"), dtype=log_probs.dtype)

    ext_t = torch.tensor(ext, dtype=torch.long)
    # states reachable by a skip: non-blank and different from two back
    can_skip = torch.zeros(S, dtype=torch.bool)
    for s in range(2, S):
        can_skip[s] = ext[s] != blank and ext[s] != ext[s - 2]

    NEG = -1e30  # finite stand-in for -inf keeps logaddexp gradients clean
    neg_inf = torch.full((1,), NEG, dtype=log_probs.dtype)
    alpha = torch.full((S,), NEG, dtype=log_probs.dtype)
    alpha = torch.cat([log_probs[0, blank].reshape(1), alpha[1:]])
    if S > 1:
        alpha = torch.cat([alpha[:1], log_probs[0, ext[1]].reshape(1), alpha[2:]])
    for t in range(1, T):
        stay = alpha
        step1 = torch.cat([neg_inf, alpha[:-1]])
        step2 = torch.cat([neg_inf, neg_inf, alpha[:-2]]) if S > 2 else torch.full_like(alpha, NEG)
        step2 = torch.where(can_skip, step2, torch.full_like(step2, NEG))
        alpha = torch.logaddexp(torch.logaddexp(stay, step1), step2) + log_probs[t, ext_t]
    total = alpha[S - 1] if S == 1 else torch.logaddexp(alpha[S - 1], alpha[S - 2])
    return -total


def greedy_ctc_decode(logits: torch.Tensor, vocab: Vocabulary) -> str:
    """Argmax per frame, collapse repeats, drop blanks, boundary -> space."""
    ids = logits.argmax(dim=-1).tolist()
    collapsed, prev = [], None
    for i in ids:
        if i != prev:
            collapsed.append(i)
        prev = i
    return vocab.decode_ids(collapsed)
