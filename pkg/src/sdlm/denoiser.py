"""Learnable pieces: token embedding, transformer transition, logit head.

The transition model maps a noisy latent block (l, h) at step t to the
predicted latent at step t-1, conditioning on t through a learned timestep
embedding added to every position. A linear head maps latents straight to
vocabulary logits; there is no separate rounding step.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import TokenSequence, Vocabulary, detokenize
from .schedule import NoiseSchedule, make_schedule

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 128
    layers: int = 4
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    max_len: int = 64
    T: int = 500

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")


class EmbeddingProvider(Protocol):
    """Seam for plugging a frozen pre-trained encoder in place of the
    learned table: anything that can embed ids and project latents back
    to vocabulary logits."""

    def embed(self, ids: torch.Tensor) -> torch.Tensor: ...

    def logits(self, x: torch.Tensor) -> torch.Tensor: ...


class SelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float, causal: bool = False):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.causal = causal
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, pad_mask=None):
        # x: (B, L, h); pad_mask: (B, L) bool, True where the token is real.
        B, L, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(B, L, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(B, L, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(B, L, self.heads, self.head_dim).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if pad_mask is not None:
            blocked = ~pad_mask.view(B, 1, 1, L)
            att = att.masked_fill(blocked, float("-inf"))
        if self.causal:
            future = torch.triu(torch.ones(L, L, dtype=torch.bool), diagonal=1)
            att = att.masked_fill(future.view(1, 1, L, L), float("-inf"))
        att = F.softmax(att, dim=-1)
        att = self.dropout(att)
        y = (att @ v).transpose(1, 2).reshape(B, L, -1)
        return self.proj(y)


class Block(nn.Module):
    def __init__(
        self, hidden: int, heads: int, ffn_mult: int, dropout: float, causal: bool = False
    ):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden)
        self.attn = SelfAttention(hidden, heads, dropout, causal=causal)
        self.norm2 = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, ffn_mult * hidden),
            nn.GELU(),
            nn.Linear(ffn_mult * hidden, hidden),
            nn.Dropout(dropout),
        )

    def forward(self, x, pad_mask=None):
        x = x + self.attn(self.norm1(x), pad_mask)
        x = x + self.mlp(self.norm2(x))
        return x


class Denoiser(nn.Module):
    """Bidirectional transformer predicting the previous-step latent."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h = config.hidden
        self.token_emb = nn.Embedding(config.vocab_size, h)
        self.pos_emb = nn.Embedding(config.max_len, h)
        self.time_emb = nn.Embedding(config.T + 1, h)
        self.blocks = nn.ModuleList(
            Block(h, config.heads, config.ffn_mult, config.dropout)
            for _ in range(config.layers)
        )
        self.final_norm = nn.LayerNorm(h)
        self.out_latent = nn.Linear(h, h)
        self.lm_head = nn.Linear(h, config.vocab_size)
        # Tie the logit head to the embedding table so predicted latents are
        # grounded in embedding space; without this the iterated reverse
        # chain drifts off-manifold (the head alone would fix only the
        # logits, not the latents the next step consumes).
        self.lm_head.weight = self.token_emb.weight

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """Latent X_0 for token ids of shape (L,) or (B, L)."""
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError("token id out of vocabulary range")
        return self.token_emb(ids)

    def transition(
        self,
        x_t: torch.Tensor,
        t: int | torch.Tensor,
        pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Predicted previous-step latent, same shape as the input."""
        squeeze = x_t.dim() == 2
        if squeeze:
            x_t = x_t.unsqueeze(0)
        if not torch.isfinite(x_t).all():
            raise ValueError("non-finite latent input")
        B, L, _ = x_t.shape
        if isinstance(t, int):
            t = torch.full((B,), t, dtype=torch.long)
        if bool((t < 1).any()) or bool((t > self.config.T).any()):
            raise ValueError(f"step outside [1, {self.config.T}]")
        positions = torch.arange(L)
        x = x_t + self.pos_emb(positions).unsqueeze(0) + self.time_emb(t).unsqueeze(1)
        for block in self.blocks:
            x = block(x, pad_mask)
        x = self.out_latent(self.final_norm(x))
        return x.squeeze(0) if squeeze else x

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        """Unnormalized vocabulary logits per position."""
        if not torch.isfinite(x).all():
            raise ValueError("non-finite latent input")
        return self.lm_head(x)

    def decode_ids(self, x: torch.Tensor) -> torch.Tensor:
        """Per-position argmax over logits; ties resolve to the lowest id."""
        return self.logits(x).argmax(dim=-1)

    def nearest_embedding_ids(self, x: torch.Tensor) -> torch.Tensor:
        """Rounding readout: nearest embedding row per position (squared L2).

        Used for models trained with the L2 objective, whose logit head is
        never updated; ties resolve to the lowest id.
        """
        emb = self.token_emb.weight
        dist = (
            x.pow(2).sum(-1, keepdim=True)
            - 2.0 * x @ emb.t()
            + emb.pow(2).sum(-1)
        )
        return dist.argmin(dim=-1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def decode(x: torch.Tensor, model: Denoiser, vocab: Vocabulary) -> TokenSequence:
    """Greedy readout of a latent block into a TokenSequence."""
    ids = tuple(int(i) for i in model.decode_ids(x))
    return TokenSequence(ids=ids, source=detokenize(ids, vocab))


def save_checkpoint(
    path: str | Path,
    model: Denoiser,
    vocab: Vocabulary,
    schedule: NoiseSchedule,
    buckets: int,
    meta: dict | None = None,
) -> None:
    """Write a self-contained checkpoint: config, schedule, vocab, weights."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "schedule": {
            "T": schedule.T,
            "s": schedule.s,
            "eps": schedule.eps,
            "m": buckets,
        },
        "vocab": vocab.token_to_id,
        "vocab_hash": vocab.content_hash(),
        "meta": dict(meta or {}),
        "state_dict": model.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


@dataclass
class Checkpoint:
    model: Denoiser
    vocab: Vocabulary
    schedule: NoiseSchedule
    buckets: int
    meta: dict


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    vocab = Vocabulary.from_mapping(payload["vocab"])
    if vocab.content_hash() != payload["vocab_hash"]:
        raise ValueError("checkpoint vocabulary hash mismatch")
    config = ModelConfig(**payload["model_config"])
    model = Denoiser(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    sched_cfg = payload["schedule"]
    schedule = make_schedule(sched_cfg["T"], sched_cfg["s"], sched_cfg["eps"])
    return Checkpoint(
        model=model,
        vocab=vocab,
        schedule=schedule,
        buckets=sched_cfg["m"],
        meta=payload.get("meta", {}),
    )


def state_hash(model: nn.Module) -> str:
    """Hash of all parameter bytes, for reproducibility checks."""
    buf = io.BytesIO()
    for name, tensor in sorted(model.state_dict().items()):
        buf.write(name.encode("utf-8"))
        buf.write(tensor.detach().cpu().numpy().tobytes())
    return hashlib.sha256(buf.getvalue()).hexdigest()
