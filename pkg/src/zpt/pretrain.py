"""Contrastive alignment of node, text, and neighbor-summary embeddings.

The total objective is ``L1 + alpha * (L2 + L3)`` where L1 aligns nodes with
their own texts, L2 aligns neighbor summaries with texts, and L3 aligns nodes
with neighbor summaries. Each term is a symmetric cross-entropy over a scaled
cosine-similarity matrix whose diagonal holds the matched pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import (GraphEncoderConfig, PretrainedModel, TextEncoderConfig,
                       build_vocabulary, cosine_similarity_matrix, l2_normalize,
                       normalized_adjacency)
from .errors import ConfigError, TrainingError
from .tag import TextAttributedGraph, neighbor_sets

TEMPERATURE_CAP = 100.0  # exp(tau) is clamped below this to keep logits finite


@dataclass(frozen=True)
class PretrainConfig:
    alpha: float = 0.1
    learning_rate: float = 2e-5
    epochs: int = 200
    batch_size: int = 500
    seed: int = 0
    tau_init: float = math.log(1.0 / 0.07)

    def validate(self) -> None:
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (contrastive loss needs negatives)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def summary_mixing_matrix(graph: TextAttributedGraph, dtype=torch.float32) -> torch.Tensor:
    """Row v averages v's neighbors; isolated nodes fall back to themselves."""
    n = graph.num_nodes
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    mix = torch.zeros(n, n, dtype=dtype)
    adj = neighbor_sets(graph)
    for node_id, neighbors in adj.items():
        row = pos[node_id]
        if neighbors:
            w = 1.0 / len(neighbors)
            for other in neighbors:
                mix[row, pos[other]] = w
        else:
            mix[row, row] = 1.0
    return mix


def summary_embeddings(graph: TextAttributedGraph, text_embeddings: torch.Tensor) -> torch.Tensor:
    """Mean of each node's neighbors' text embeddings (own text if isolated)."""
    mix = summary_mixing_matrix(graph, dtype=text_embeddings.dtype)
    return mix @ text_embeddings


def symmetric_contrastive_loss(logits: torch.Tensor) -> torch.Tensor:
    """0.5 * (row-wise CE + column-wise CE) against diagonal targets."""
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ValueError(f"similarity logits must be square, got {tuple(logits.shape)}")
    targets = torch.arange(logits.shape[0], device=logits.device)
    return 0.5 * (F.cross_entropy(logits, targets) + F.cross_entropy(logits.T, targets))


def alignment_loss(node_emb: torch.Tensor, text_emb: torch.Tensor, summary_emb: torch.Tensor,
                   log_temperature: torch.Tensor, alpha: float):
    """Total contrastive loss and its per-term breakdown.

    All three matrices are L2-normalized row-wise; similarity logits are
    scaled by exp(tau) with tau clamped so exp(tau) <= 100.
    """
    tau = torch.clamp(log_temperature, max=math.log(TEMPERATURE_CAP))
    scale = torch.exp(tau)
    v = l2_normalize(node_emb)
    t = l2_normalize(text_emb)
    s = l2_normalize(summary_emb)
    loss_node_text = symmetric_contrastive_loss((v @ t.T) * scale)
    loss_summary_text = symmetric_contrastive_loss((s @ t.T) * scale)
    loss_node_summary = symmetric_contrastive_loss((v @ s.T) * scale)
    total = loss_node_text + alpha * (loss_summary_text + loss_node_summary)
    breakdown = {
        "l1": loss_node_text,
        "l2": loss_summary_text,
        "l3": loss_node_summary,
        "exp_tau": scale,
    }
    return total, breakdown


def pretrain(graph: TextAttributedGraph, config: PretrainConfig = PretrainConfig(),
             text_config: TextEncoderConfig = TextEncoderConfig(),
             graph_config: GraphEncoderConfig = GraphEncoderConfig(),
             vocab_size: int = 5000):
    """Jointly train the two encoders on an unlabeled graph.

    Every step runs the GCN over the whole graph and the text encoder over the
    whole corpus (exact at this scale), then evaluates the contrastive loss on
    a batch of node rows sampled without replacement per epoch.

    Returns ``(model, log)`` where ``log`` has one dict per step with keys
    epoch, step, l1, l2, l3, total, exp_tau.
    """
    config.validate()
    vocab = build_vocabulary(graph.texts, max_size=vocab_size)

    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        model = PretrainedModel(vocab, text_config, graph_config,
                                feature_dim=graph.feature_dim, tau_init=config.tau_init)
        tokens = model.tokenize_batch(graph.texts)
        adj_norm = normalized_adjacency(graph)
        mix = summary_mixing_matrix(graph)
        features = torch.tensor(np.asarray(graph.features), dtype=torch.float32)

        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        sampler = torch.Generator().manual_seed(config.seed)
        n = graph.num_nodes
        batch = min(config.batch_size, n)
        log: list[dict] = []
        for epoch in range(config.epochs):
            order = torch.randperm(n, generator=sampler)
            for step, start in enumerate(range(0, n, batch)):
                idx = order[start:start + batch]
                if len(idx) < 2:
                    continue  # a 1-row tail batch has no negatives
                node_emb = model.graph_encoder(features, adj_norm)
                text_emb = model.text_encoder(tokens)
                summary_emb = mix @ text_emb
                total, parts = alignment_loss(node_emb[idx], text_emb[idx], summary_emb[idx],
                                              model.log_temperature, config.alpha)
                if not torch.isfinite(total):
                    raise TrainingError(
                        f"non-finite alignment loss at epoch {epoch}, step {step}")
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                log.append({
                    "epoch": epoch, "step": step,
                    "l1": parts["l1"].item(), "l2": parts["l2"].item(),
                    "l3": parts["l3"].item(), "total": total.item(),
                    "exp_tau": parts["exp_tau"].item(),
                })
    model.eval()
    return model, log
