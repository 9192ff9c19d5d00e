"""Comparison verifiers: grey-box feature MLP and attention-pooled classifier.

The grey-box model sees 13 sentence-level token statistics (count, then
mean/std/min/max of logits, probabilities, and entropies; population std so
single-token sentences are well-defined). The attention classifier projects
token embeddings, applies one multi-head self-attention block, mean-pools,
and classifies; it trains with cosine-annealed AdamW and early stopping on
validation loss.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .container import read_container, write_container
from .corpus import GeneratedSentence
from .errors import (
    CheckpointShapeError,
    ConfigError,
    DataError,
    FeatureError,
    TrainingDivergedError,
)

FEATURE_NAMES = (
    "token_count",
    "logit_mean", "logit_std", "logit_min", "logit_max",
    "prob_mean", "prob_std", "prob_min", "prob_max",
    "entropy_mean", "entropy_std", "entropy_min", "entropy_max",
)


@dataclass(frozen=True)
class FeatureVector13:
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != 13:
            raise DataError(f"expected 13 features, got {len(self.values)}")
        v = dict(zip(FEATURE_NAMES, self.values))
        if v["token_count"] < 1:
            raise DataError("token_count must be >= 1")
        for group in ("logit", "prob", "entropy"):
            if v[f"{group}_std"] < 0:
                raise DataError(f"{group}_std negative")
            if not v[f"{group}_min"] <= v[f"{group}_mean"] <= v[f"{group}_max"]:
                raise DataError(f"{group} min/mean/max out of order")
        if not (0.0 <= v["prob_min"] and v["prob_max"] <= 1.0):
            raise DataError("prob stats outside [0,1]")
        if v["entropy_min"] < 0:
            raise DataError("entropy stats negative")

    def to_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def _stats(values: Sequence[float]) -> tuple[float, float, float, float]:
    # Sorting first makes every reduction exactly permutation-invariant.
    arr = np.sort(np.asarray(values, dtype=np.float64))
    return float(arr.mean()), float(arr.std()), float(arr[0]), float(arr[-1])


def extract_features(sentence: GeneratedSentence) -> FeatureVector13:
    if sentence.token_stats is None:
        raise FeatureError(f"sentence {sentence.text[:40]!r} has no token_stats")
    logits, probs, entropies = zip(*sentence.token_stats)
    return FeatureVector13(
        (float(len(sentence.token_stats)),)
        + _stats(logits)
        + _stats(probs)
        + _stats(entropies)
    )


# -- grey-box MLP ---------------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 50
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if min(self.hidden, self.batch_size) < 1 or self.lr <= 0 or self.epochs < 0:
            raise ConfigError("invalid MLP config")


class FeatureMlp(nn.Module):
    def __init__(self, config: MlpConfig):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        self.net = nn.Sequential(
            nn.Linear(13, config.hidden),
            nn.ReLU(),
            nn.Linear(config.hidden, 1),
        )
        for p in self.parameters():
            with torch.no_grad():
                if p.dim() >= 2:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.1)
                else:
                    p.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


def train_mlp(
    features: Sequence[FeatureVector13] | np.ndarray,
    labels: Sequence[int],
    config: MlpConfig = MlpConfig(),
) -> FeatureMlp:
    x = _feature_matrix(features)
    y = np.asarray(labels, dtype=np.float32)
    if len(x) != len(y):
        raise DataError("features and labels must align")
    if set(np.unique(y)) != {0.0, 1.0}:
        raise DataError("both classes required to train")

    model = FeatureMlp(config)
    if config.epochs == 0:
        model.eval()
        return model
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    loss_fn = nn.BCEWithLogitsLoss()
    xt = torch.from_numpy(x.astype(np.float32))
    yt = torch.from_numpy(y)
    model.train()
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = torch.from_numpy(order[start: start + config.batch_size].copy())
            loss = loss_fn(model(xt[idx]), yt[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step += 1
    model.eval()
    return model


def predict_mlp(model: FeatureMlp, features: Sequence[FeatureVector13] | np.ndarray) -> np.ndarray:
    x = torch.from_numpy(_feature_matrix(features).astype(np.float32))
    model.eval()
    with torch.no_grad():
        return torch.sigmoid(model(x)).numpy().astype(np.float64)


def _feature_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        if features.ndim != 2 or features.shape[1] != 13:
            raise DataError(f"feature matrix must be (n, 13), got {features.shape}")
        return features
    return np.stack([f.to_array() for f in features])


# -- attention-pooled classifier --------------------------------------------------

@dataclass(frozen=True)
class AttnConfig:
    input_dim: int = 32
    proj_dim: int = 1024
    heads: int = 8
    dropout: float = 0.1
    lr: float = 1e-4
    weight_decay: float = 0.01
    cosine_period: int = 10
    batch_size: int = 128
    max_epochs: int = 40
    patience: int = 3
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.proj_dim % self.heads:
            raise ConfigError("proj_dim must be divisible by heads")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0,1)")


class AttnClassifier(nn.Module):
    def __init__(self, config: AttnConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        self.proj = nn.Linear(config.input_dim, config.proj_dim)
        self.attn = nn.MultiheadAttention(
            config.proj_dim, config.heads, dropout=config.dropout, batch_first=True
        )
        self.dropout = nn.Dropout(config.dropout)
        self.classifier = nn.Linear(config.proj_dim, 1)

    def forward(self, tokens: torch.Tensor, padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.proj(tokens)
        attended, _ = self.attn(x, x, x, key_padding_mask=padding_mask, need_weights=False)
        if padding_mask is not None:
            keep = (~padding_mask).unsqueeze(-1).to(attended.dtype)
            pooled = (attended * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        else:
            pooled = attended.mean(dim=1)
        return self.classifier(self.dropout(pooled)).squeeze(-1)


def _collate_embeddings(seqs: Sequence[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(s.shape[0] for s in seqs)
    dim = seqs[0].shape[1]
    batch = torch.zeros(len(seqs), width, dim, dtype=torch.float32)
    mask = torch.ones(len(seqs), width, dtype=torch.bool)
    for i, seq in enumerate(seqs):
        batch[i, : seq.shape[0]] = torch.from_numpy(seq.astype(np.float32))
        mask[i, : seq.shape[0]] = False
    return batch, mask


def train_attn(
    embeddings: Sequence[np.ndarray],
    labels: Sequence[int],
    config: AttnConfig = AttnConfig(),
    val_embeddings: Sequence[np.ndarray] | None = None,
    val_labels: Sequence[int] | None = None,
) -> AttnClassifier:
    """Train with early stopping; returns the best-validation snapshot."""
    if len(embeddings) != len(labels):
        raise DataError("embeddings and labels must align")
    dims = {e.shape[1] for e in embeddings}
    if len(dims) != 1 or dims != {config.input_dim}:
        raise DataError(f"embedding dims {dims} disagree with config input_dim {config.input_dim}")
    labels = list(labels)
    if set(labels) != {0, 1}:
        raise DataError("both classes required to train")

    if val_embeddings is None:
        rng = np.random.default_rng(config.seed)
        order = rng.permutation(len(labels))
        n_val = max(1, int(config.val_fraction * len(labels)))
        val_idx, train_idx = order[:n_val], order[n_val:]
        val_embeddings = [embeddings[i] for i in val_idx]
        val_labels = [labels[i] for i in val_idx]
        embeddings = [embeddings[i] for i in train_idx]
        labels = [labels[i] for i in train_idx]

    torch.manual_seed(config.seed)
    model = AttnClassifier(config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=config.cosine_period)
    loss_fn = nn.BCEWithLogitsLoss()
    y = torch.tensor(labels, dtype=torch.float32)

    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    stagnant = 0
    step = 0
    for epoch in range(config.max_epochs):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(labels))
        for start in range(0, len(labels), config.batch_size):
            idx = order[start: start + config.batch_size]
            batch, mask = _collate_embeddings([embeddings[i] for i in idx])
            loss = loss_fn(model(batch, mask), y[torch.from_numpy(idx.copy())])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step += 1
        scheduler.step()

        val_probs = predict_attn(model, val_embeddings)
        val_probs = np.clip(val_probs, 1e-7, 1.0 - 1e-7)
        yv = np.asarray(val_labels, dtype=np.float64)
        val_loss = float(-(yv * np.log(val_probs) + (1 - yv) * np.log(1 - val_probs)).mean())
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= config.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return model


def predict_attn(model: AttnClassifier, embeddings: Sequence[np.ndarray]) -> np.ndarray:
    model.eval()
    probs = np.empty(len(embeddings), dtype=np.float64)
    with torch.no_grad():
        for start in range(0, len(embeddings), 256):
            chunk = embeddings[start: start + 256]
            batch, mask = _collate_embeddings(list(chunk))
            probs[start: start + len(chunk)] = torch.sigmoid(model(batch, mask)).numpy()
    return probs


# -- model and embedding containers ------------------------------------------------

def save_baseline(model: FeatureMlp | AttnClassifier, path) -> None:
    if isinstance(model, FeatureMlp):
        header = {"kind": "mlp", "config": model.config.__dict__}
    else:
        header = {"kind": "attn", "config": model.config.__dict__}
    tensors = {name: t.detach().numpy() for name, t in model.state_dict().items()}
    write_container(path, header, tensors)


def load_baseline(path) -> FeatureMlp | AttnClassifier:
    header, tensors = read_container(path)
    kind = header.get("kind")
    if kind == "mlp":
        model = FeatureMlp(MlpConfig(**header["config"]))
    elif kind == "attn":
        model = AttnClassifier(AttnConfig(**header["config"]))
    else:
        raise CheckpointShapeError(f"container holds {kind!r}, not a baseline model")
    state = model.state_dict()
    for name, array in tensors.items():
        if name not in state or tuple(state[name].shape) != array.shape:
            raise CheckpointShapeError(f"tensor {name!r} mismatched")
    model.load_state_dict({n: torch.from_numpy(a.copy()) for n, a in tensors.items()})
    model.eval()
    return model


def save_embeddings(records: Sequence[tuple[str, int, np.ndarray]], path) -> None:
    """Write (study_id, sentence_index, token-embedding matrix) records."""
    dims = {matrix.shape[1] for _, _, matrix in records}
    if len(dims) != 1:
        raise DataError(f"embedding dims differ across records: {sorted(dims)}")
    header = {
        "kind": "embeddings",
        "dim": int(next(iter(dims))),
        "items": [
            {"study_id": sid, "sentence_index": idx} for sid, idx, _ in records
        ],
    }
    tensors = {f"emb_{i}": matrix for i, (_, _, matrix) in enumerate(records)}
    write_container(path, header, tensors)


def load_embeddings(path) -> list[tuple[str, int, np.ndarray]]:
    header, tensors = read_container(path)
    if header.get("kind") != "embeddings":
        raise CheckpointShapeError(f"container holds {header.get('kind')!r}, not embeddings")
    return [
        (item["study_id"], int(item["sentence_index"]), tensors[f"emb_{i}"])
        for i, item in enumerate(header["items"])
    ]
