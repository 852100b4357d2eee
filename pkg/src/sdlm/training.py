"""Diffusion training: the weighted cross-entropy objective, the L2
ablation objective, and the optimization loop.

The per-step objective is ``gamma_t * CE(logits, d) + CE(logits, d_hat)``
where d_hat is the masked sentence at step t-1 and gamma_t = (T - t) / T,
so late steps lean almost entirely on reproducing the masked view while
early steps weight the clean reconstruction.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .corpus import Corpus, TokenSequence
from .denoiser import Denoiser, ModelConfig, save_checkpoint
from .importance import NoiseStrategy, assign_buckets
from .schedule import MaskState, NoiseSchedule, make_schedule, masked_sentence, q_sample, q_sample_batch

OBJECTIVE_CE = "ce"
OBJECTIVE_L2 = "l2"


@dataclass
class TrainConfig:
    steps: int = 20000
    lr: float = 3e-4
    batch_size: int = 32
    warmup: int = 1000
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0
    buckets: int = 3
    checkpoint_every: int = 1000
    restrict_masked_ce: bool = False
    windowed: bool = False

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.buckets) < 1:
            raise ValueError("steps, batch_size and buckets must be positive")
        if self.lr < 0 or self.warmup < 0:
            raise ValueError("lr and warmup must be nonnegative")
        if self.warmup > self.steps:
            raise ValueError("warmup must not exceed steps")


@dataclass
class LossBreakdown:
    """CE objective pieces for one (sentence, step) draw.

    total = gamma * ce_clean + ce_masked holds by construction.
    """

    total: torch.Tensor
    ce_clean: torch.Tensor
    ce_masked: torch.Tensor
    gamma: float
    t: int


def gamma(t: int, T: int) -> float:
    """Clean-reconstruction weight (T - t) / T; zero at the terminal step."""
    if not 1 <= t <= T:
        raise ValueError(f"step {t} outside [1, {T}]")
    return (T - t) / T


def token_cross_entropy(
    logits: torch.Tensor, targets: torch.Tensor, pad_id: int | None = None
) -> torch.Tensor:
    """Token-mean cross entropy over non-PAD positions.

    logits (L, V) or (B, L, V); targets the matching id tensor.
    """
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_targets = targets.reshape(-1)
    per_token = F.cross_entropy(flat_logits, flat_targets, reduction="none")
    if pad_id is None:
        return per_token.mean()
    keep = flat_targets != pad_id
    count = keep.sum()
    if count == 0:
        return per_token.sum() * 0.0
    return (per_token * keep).sum() / count


def diffusion_ce_loss(
    d: TokenSequence,
    t: int,
    model: Denoiser,
    schedule: NoiseSchedule,
    mask_state: MaskState,
    generator: torch.Generator | None = None,
    pad_id: int | None = None,
    mask_id: int = 1,
    restrict_masked: bool = False,
) -> LossBreakdown:
    """Weighted CE objective for one sentence at one diffusion step.

    With restrict_masked=True the second term is computed only over the
    positions that are masked in d_hat at step t-1, instead of the whole
    sequence.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
    ids = torch.tensor(d.ids, dtype=torch.long)
    x_0 = model.embed(ids)
    x_t = q_sample(x_0, t, mask_state, schedule, generator)
    x_prev = model.transition(x_t, t)
    logits = model.logits(x_prev)
    d_hat = masked_sentence(d, t - 1, mask_state, mask_id)
    masked_ids = torch.tensor(d_hat.ids, dtype=torch.long)
    ce_clean = token_cross_entropy(logits, ids, pad_id)
    if restrict_masked:
        restricted = masked_ids != ids
        if pad_id is not None:
            restricted &= ids != pad_id
        if restricted.any():
            per_token = F.cross_entropy(logits, masked_ids, reduction="none")
            ce_masked = (per_token * restricted).sum() / restricted.sum()
        else:
            ce_masked = logits.sum() * 0.0
    else:
        ce_masked = token_cross_entropy(logits, masked_ids, pad_id)
    g = gamma(t, schedule.T)
    total = g * ce_clean + ce_masked
    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite loss at t={t}")
    return LossBreakdown(total=total, ce_clean=ce_clean, ce_masked=ce_masked, gamma=g, t=t)


def l2_loss(
    d: TokenSequence,
    t: int,
    model: Denoiser,
    schedule: NoiseSchedule,
    mask_state: MaskState,
    generator: torch.Generator | None = None,
    pad_id: int | None = None,
) -> torch.Tensor:
    """Ablation objective: MSE between the predicted latent and X_0."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
    ids = torch.tensor(d.ids, dtype=torch.long)
    x_0 = model.embed(ids)
    x_t = q_sample(x_0, t, mask_state, schedule, generator)
    x_prev = model.transition(x_t, t)
    sq = (x_prev - x_0).pow(2)
    if pad_id is not None:
        keep = (ids != pad_id).unsqueeze(-1)
        count = keep.sum() * sq.shape[-1]
        if count == 0:
            return sq.sum() * 0.0
        return (sq * keep).sum() / count
    loss = sq.mean()
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite loss at t={t}")
    return loss


@dataclass
class TrainResult:
    model: Denoiser
    schedule: NoiseSchedule
    metrics: list[dict] = field(default_factory=list)
    length_histogram: dict[int, int] = field(default_factory=dict)


def _sentence_activations(
    corpus: Corpus,
    strategy: NoiseStrategy,
    m: int,
    T: int,
    tagger,
    windowed: bool,
) -> list[MaskState] | None:
    """Precompute per-sentence mask states for deterministic strategies."""
    if strategy is NoiseStrategy.RANDOM_MASK:
        return None
    states = []
    for sent in corpus.sentences:
        assignment = assign_buckets(strategy, sent, corpus, m, tagger=tagger)
        states.append(MaskState.from_buckets(assignment, T, windowed=windowed))
    return states


def _batch_tensors(
    corpus: Corpus,
    indices: list[int],
    states: list[MaskState] | None,
    strategy: NoiseStrategy,
    m: int,
    T: int,
    tagger,
    order_rng: random.Random,
    windowed: bool,
    pad_id: int,
):
    """Right-pad a batch; padding rows get activation T so they stay clean."""
    chosen = [corpus.sentences[i] for i in indices]
    if states is None:
        batch_states = [
            MaskState.from_buckets(
                assign_buckets(strategy, s, corpus, m, rng=order_rng, tagger=tagger),
                T,
                windowed=windowed,
            )
            for s in chosen
        ]
    else:
        batch_states = [states[i] for i in indices]
    max_len = max(len(s) for s in chosen)
    B = len(chosen)
    ids = torch.full((B, max_len), pad_id, dtype=torch.long)
    activation = torch.full((B, max_len), T, dtype=torch.long)
    deactivation = torch.full((B, max_len), T, dtype=torch.long)
    for row, (sent, state) in enumerate(zip(chosen, batch_states)):
        L = len(sent)
        ids[row, :L] = torch.tensor(sent.ids, dtype=torch.long)
        activation[row, :L] = torch.tensor(state.activation, dtype=torch.long)
        if state.deactivation is not None:
            deactivation[row, :L] = torch.tensor(state.deactivation, dtype=torch.long)
    pad_mask = ids != pad_id
    return ids, activation, deactivation if windowed else None, pad_mask


def _per_sequence_ce(logits, targets, pad_mask):
    """(B,) token-mean CE per sequence over non-PAD positions."""
    B, L, V = logits.shape
    per_token = F.cross_entropy(
        logits.reshape(-1, V), targets.reshape(-1), reduction="none"
    ).view(B, L)
    counts = pad_mask.sum(dim=1).clamp(min=1)
    return (per_token * pad_mask).sum(dim=1) / counts


def train(
    corpus: Corpus,
    config: TrainConfig,
    objective: str = OBJECTIVE_CE,
    strategy: NoiseStrategy = NoiseStrategy.MASK_ENTROPY_REL,
    *,
    model: Denoiser | None = None,
    model_config: ModelConfig | None = None,
    schedule: NoiseSchedule | None = None,
    tagger=None,
    metrics_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Run the optimization loop and return the trained model plus metrics.

    Deterministic given config.seed: batch indices, step sampling, noise
    draws and dropout all derive from it. Non-finite losses abort with a
    RuntimeError carrying the step number.
    """
    if objective not in (OBJECTIVE_CE, OBJECTIVE_L2):
        raise ValueError(f"unknown objective {objective!r}")
    if corpus.n_sentences == 0:
        raise ValueError("empty corpus")
    # Seed before any model construction so initialization is part of the
    # deterministic contract.
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    order_rng = random.Random(config.seed)
    if model is None:
        if model_config is None:
            model_config = ModelConfig(vocab_size=corpus.vocab.size)
        model = Denoiser(model_config)
    if schedule is None:
        schedule = make_schedule(model.config.T)
    if schedule.T != model.config.T:
        raise ValueError("schedule T and model T differ")

    T = schedule.T
    pad_id = corpus.vocab.pad_id
    mask_id = corpus.vocab.mask_id
    states = _sentence_activations(
        corpus, strategy, config.buckets, T, tagger, config.windowed
    )
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    metrics: list[dict] = []
    metrics_fh = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(metrics_path, "w", encoding="utf-8")

    lengths: dict[int, int] = {}
    for sent in corpus.sentences:
        lengths[len(sent)] = lengths.get(len(sent), 0) + 1

    model.train()
    try:
        for step in range(1, config.steps + 1):
            lr = config.lr * min(1.0, step / config.warmup) if config.warmup else config.lr
            for group in optimizer.param_groups:
                group["lr"] = lr

            idx = torch.randint(corpus.n_sentences, (config.batch_size,), generator=gen)
            t = torch.randint(1, T + 1, (config.batch_size,), generator=gen)
            ids, activation, deactivation, pad_mask = _batch_tensors(
                corpus, idx.tolist(), states, strategy, config.buckets, T,
                tagger, order_rng, config.windowed, pad_id,
            )
            x_0 = model.embed(ids)
            if objective == OBJECTIVE_L2:
                # Pure MSE training would collapse a trainable embedding
                # space; the ablation freezes it and decodes by rounding.
                x_0 = x_0.detach()
            x_t = q_sample_batch(x_0, t, activation, schedule, gen, deactivation)
            try:
                x_prev = model.transition(x_t, t, pad_mask)
                logits = model.logits(x_prev) if objective == OBJECTIVE_CE else None
            except ValueError as err:
                # Blown-up parameters surface as non-finite latents.
                raise RuntimeError(
                    f"training diverged at step {step}: {err}"
                ) from err

            row: dict[str, float | int] = {"step": step, "lr": lr}
            if objective == OBJECTIVE_CE:
                gamma_vec = (T - t).to(x_0.dtype) / T
                masked_targets = torch.where(
                    activation < (t - 1).view(-1, 1), mask_id, ids
                )
                masked_targets = torch.where(pad_mask, masked_targets, ids)
                ce_clean = _per_sequence_ce(logits, ids, pad_mask)
                if config.restrict_masked_ce:
                    restricted = (masked_targets != ids) & pad_mask
                    per_token = F.cross_entropy(
                        logits.reshape(-1, logits.shape[-1]),
                        masked_targets.reshape(-1),
                        reduction="none",
                    ).view_as(ids)
                    counts = restricted.sum(dim=1).clamp(min=1)
                    ce_masked = (per_token * restricted).sum(dim=1) / counts
                else:
                    ce_masked = _per_sequence_ce(logits, masked_targets, pad_mask)
                loss = (gamma_vec * ce_clean + ce_masked).mean()
                clean_vec = ce_clean.detach()
                clean_mean = float(clean_vec.mean())
                weighted = float((gamma_vec * clean_vec).mean())
                # Effective clean-CE weight for this batch: the CE-weighted
                # mean of per-sequence gammas, so that
                # loss == gamma * ce_clean + ce_masked holds per logged step
                # even though each sequence draws its own t.
                row["gamma"] = weighted / clean_mean if clean_mean > 0 else float(gamma_vec.mean())
                row["ce_clean"] = clean_mean
                row["ce_masked"] = float(ce_masked.detach().mean())
            else:
                sq = (x_prev - x_0).pow(2)
                keep = pad_mask.unsqueeze(-1)
                counts = (pad_mask.sum(dim=1) * sq.shape[-1]).clamp(min=1)
                per_seq = (sq * keep).sum(dim=(1, 2)) / counts
                loss = per_seq.mean()

            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at step {step} "
                    f"(objective={objective}, strategy={strategy.value})"
                )
            optimizer.zero_grad()
            loss.backward()
            if config.clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            optimizer.step()

            row["loss"] = float(loss.detach())
            metrics.append(row)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(row) + "\n")

            if checkpoint_dir is not None and step % config.checkpoint_every == 0:
                save_checkpoint(
                    Path(checkpoint_dir) / f"step_{step:06d}.pt",
                    model, corpus.vocab, schedule, config.buckets,
                    meta={"step": step, "objective": objective, "strategy": strategy.value},
                )
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    model.eval()
    return TrainResult(model=model, schedule=schedule, metrics=metrics, length_histogram=lengths)
