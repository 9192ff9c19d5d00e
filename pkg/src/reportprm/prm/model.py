"""Causal decoder scoring each sentence with a two-way constrained head.

The backbone is a from-scratch attention decoder (learned positions,
pre-norm blocks of multi-head self-attention plus a two-layer feed-forward,
residual connections). At every label slot the head produces exactly two
logits, for the '0' and '1' label tokens; the probability of '1' is the
sentence-correctness score. Logits for the token at position t are read
from the hidden state at t-1, matching how a decoder would emit the label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError
from .encoding import SequenceEncoding


@dataclass(frozen=True)
class ModelArch:
    embed_dim: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 1024
    vocab_size: int = 4096

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        if min(self.embed_dim, self.layers, self.heads, self.max_len) < 1:
            raise ConfigError("architecture dimensions must be positive")
        if self.vocab_size < 16:
            raise ConfigError("vocab_size must be >= 16")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "heads": self.heads,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
        }


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=2)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        out = F.softmax(scores, dim=-1) @ v
        out = out.transpose(1, 2).contiguous().view(b, t, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim),
            nn.GELU(),
            nn.Linear(4 * dim, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class SentenceVerifier(nn.Module):
    FORMAT_VERSION = 1

    def __init__(self, arch: ModelArch, seed: int = 0):
        super().__init__()
        self.arch = arch
        self.seed = seed
        self.tok_emb = nn.Embedding(arch.vocab_size, arch.embed_dim)
        self.pos_emb = nn.Embedding(arch.max_len, arch.embed_dim)
        self.blocks = nn.ModuleList(Block(arch.embed_dim, arch.heads) for _ in range(arch.layers))
        self.ln_f = nn.LayerNorm(arch.embed_dim)
        self.head = nn.Linear(arch.embed_dim, 2)
        self._init_weights(seed)

    def _init_weights(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            with torch.no_grad():
                if p.dim() >= 2:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
                elif "ln" in name and name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()

    def hidden_states(self, token_ids: torch.Tensor) -> torch.Tensor:
        b, t = token_ids.shape
        if t > self.arch.max_len:
            raise ConfigError(f"sequence length {t} exceeds max_len {self.arch.max_len}")
        positions = torch.arange(t, device=token_ids.device)
        x = self.tok_emb(token_ids) + self.pos_emb(positions)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """Two-way logits at every position, shape (batch, seq, 2)."""
        return self.head(self.hidden_states(token_ids))


def forward(model: SentenceVerifier, encoding: SequenceEncoding) -> torch.Tensor:
    """Two-way logits at each label position of one encoding, shape (m, 2).

    Label positions may point one past the sequence end (inference step
    encodings); logits always come from the hidden state just before the
    label slot.
    """
    if not encoding.label_positions:
        raise ConfigError("encoding has no label positions")
    if encoding.label_positions[-1] > len(encoding.token_ids):
        raise ConfigError("label position past the encoded sequence")
    ids = torch.tensor([encoding.token_ids], dtype=torch.long)
    logits = model(ids)[0]
    read_at = torch.tensor([p - 1 for p in encoding.label_positions], dtype=torch.long)
    return logits[read_at]


def label_probabilities(model: SentenceVerifier, encoding: SequenceEncoding) -> torch.Tensor:
    """P(label '1') at each label position, shape (m,)."""
    with torch.no_grad():
        logits = forward(model, encoding)
        return F.softmax(logits, dim=-1)[:, 1]
