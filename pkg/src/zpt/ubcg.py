"""Bimodal conditional generator: one shared CVAE trained in both directions.

The same encoder/decoder pair models nodes conditioned on text and text
conditioned on nodes. After training, class-specific samples are drawn by
decoding a standard-normal latent conditioned on a class-name embedding to
get a synthetic node embedding, then decoding the *same* latent conditioned
on that synthetic node embedding to get the paired text embedding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, TrainingError


@dataclass(frozen=True)
class UbcgConfig:
    input_dim: int = 128
    cond_dim: int = 128
    enc_hidden: tuple[int, ...] = (128, 128)
    dec_hidden: tuple[int, ...] = (64,)
    latent_dim: int = 8
    learning_rate: float = 1e-3
    epochs: int = 400
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1 or self.cond_dim < 1 or self.latent_dim < 1:
            raise ConfigError("input_dim, cond_dim and latent_dim must be >= 1")
        if not self.enc_hidden or not self.dec_hidden:
            raise ConfigError("encoder and decoder need at least one hidden layer")
        if any(h < 1 for h in self.enc_hidden) or any(h < 1 for h in self.dec_hidden):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class LatentGaussian:
    """Diagonal Gaussian over the latent space; tensors share a trailing
    latent dimension and may carry a leading batch dimension."""

    mu: torch.Tensor
    logvar: torch.Tensor


def _mlp(dims: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class UbcgModel(nn.Module):
    """Shared CVAE encoder/decoder; modality is conveyed only by which vector
    plays the input role and which the condition role."""

    def __init__(self, config: UbcgConfig = UbcgConfig()):
        super().__init__()
        config.validate()
        self.config = config
        enc_dims = [config.input_dim + config.cond_dim, *config.enc_hidden, 2 * config.latent_dim]
        dec_dims = [config.latent_dim + config.cond_dim, *config.dec_hidden, config.input_dim]
        self.encoder = _mlp(enc_dims)
        self.decoder = _mlp(dec_dims)

    def encode(self, x: torch.Tensor, cond: torch.Tensor) -> LatentGaussian:
        """Posterior parameters for input ``x`` under condition ``cond``."""
        if x.shape[-1] != self.config.input_dim or cond.shape[-1] != self.config.cond_dim:
            raise ValueError(
                f"expected input dim {self.config.input_dim} and cond dim "
                f"{self.config.cond_dim}, got {x.shape[-1]} and {cond.shape[-1]}")
        out = self.encoder(torch.cat([x, cond], dim=-1))
        lat = self.config.latent_dim
        return LatentGaussian(mu=out[..., :lat], logvar=out[..., lat:])

    def decode(self, z: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Reconstruction from latent ``z`` under condition ``cond``."""
        if z.shape[-1] != self.config.latent_dim or cond.shape[-1] != self.config.cond_dim:
            raise ValueError(
                f"expected latent dim {self.config.latent_dim} and cond dim "
                f"{self.config.cond_dim}, got {z.shape[-1]} and {cond.shape[-1]}")
        return self.decoder(torch.cat([z, cond], dim=-1))


def parameter_count(model: UbcgModel) -> int:
    """Total scalar parameters of encoder and decoder, biases included."""
    return sum(p.numel() for p in model.parameters())


def reparameterize(gaussian: LatentGaussian, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + exp(logvar / 2) * eps."""
    return gaussian.mu + torch.exp(gaussian.logvar / 2) * eps


def kl_standard_normal(gaussian: LatentGaussian) -> torch.Tensor:
    """Closed-form KL(N(mu, diag exp(logvar)) || N(0, I)).

    Sums over the latent dimension; a leading batch dimension is preserved.
    """
    g = gaussian
    return 0.5 * (g.mu ** 2 + torch.exp(g.logvar) - 1.0 - g.logvar).sum(dim=-1)


def ubcg_loss(node_emb: torch.Tensor, text_emb: torch.Tensor, model: UbcgModel,
              eps_node: torch.Tensor, eps_text: torch.Tensor):
    """Two-direction ELBO loss for one pair or a batch of pairs.

    Each direction contributes a squared-error reconstruction plus the KL of
    its posterior to the standard-normal prior. Batched inputs are averaged.
    Returns ``(total, breakdown)``.
    """
    post_node = model.encode(node_emb, text_emb)
    recon_node = model.decode(reparameterize(post_node, eps_node), text_emb)
    node_recon = ((node_emb - recon_node) ** 2).sum(dim=-1)
    node_kl = kl_standard_normal(post_node)

    post_text = model.encode(text_emb, node_emb)
    recon_text = model.decode(reparameterize(post_text, eps_text), node_emb)
    text_recon = ((text_emb - recon_text) ** 2).sum(dim=-1)
    text_kl = kl_standard_normal(post_text)

    total = (node_recon + node_kl + text_recon + text_kl).mean()
    breakdown = {
        "node_recon": node_recon.mean(),
        "node_kl": node_kl.mean(),
        "text_recon": text_recon.mean(),
        "text_kl": text_kl.mean(),
    }
    return total, breakdown


def train_ubcg(node_embeddings, text_embeddings, config: UbcgConfig = UbcgConfig(),
               text_direction: bool = True):
    """Fit the generator on detached (node, text) embedding pairs.

    ``text_direction=False`` trains only the node-given-text direction (the
    generation ablation). Returns ``(model, log)`` with per-epoch means.
    """
    config.validate()
    node_embs = torch.as_tensor(np.asarray(node_embeddings), dtype=torch.float32).detach()
    text_embs = torch.as_tensor(np.asarray(text_embeddings), dtype=torch.float32).detach()
    if node_embs.shape != text_embs.shape or node_embs.ndim != 2:
        raise ValueError(
            f"paired embeddings must share shape (n, dim), got "
            f"{tuple(node_embs.shape)} and {tuple(text_embs.shape)}")
    n = node_embs.shape[0]

    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        model = UbcgModel(config)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        sampler = torch.Generator().manual_seed(config.seed)
        log: list[dict] = []
        for epoch in range(config.epochs):
            order = torch.randperm(n, generator=sampler)
            epoch_total, num_batches = 0.0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                v, t = node_embs[idx], text_embs[idx]
                eps_v = torch.randn(len(idx), config.latent_dim, generator=sampler)
                eps_t = torch.randn(len(idx), config.latent_dim, generator=sampler)
                if text_direction:
                    total, _ = ubcg_loss(v, t, model, eps_v, eps_t)
                else:
                    post = model.encode(v, t)
                    recon = model.decode(reparameterize(post, eps_v), t)
                    total = (((v - recon) ** 2).sum(dim=-1) + kl_standard_normal(post)).mean()
                if not torch.isfinite(total):
                    raise TrainingError(f"non-finite generator loss at epoch {epoch}")
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                epoch_total += total.item()
                num_batches += 1
            log.append({"epoch": epoch, "loss": epoch_total / max(num_batches, 1)})
    model.eval()
    return model, log


def generate_class_samples(class_condition: torch.Tensor, count: int, model: UbcgModel,
                           seed: int):
    """Draw ``count`` paired synthetic (node, text) embeddings for one class.

    For each draw: z ~ N(0, I); the node embedding is decoded from z under
    the class-name condition, and the text embedding is decoded from the
    *same* z under the freshly generated node embedding.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    cond = torch.as_tensor(class_condition, dtype=torch.float32).detach().reshape(-1)
    if cond.shape[0] != model.config.cond_dim:
        raise ValueError(
            f"condition has dim {cond.shape[0]}, model expects {model.config.cond_dim}")
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(count, model.config.latent_dim, generator=gen)
    with torch.no_grad():
        node_samples = model.decode(z, cond.expand(count, -1))
        text_samples = model.decode(z, node_samples)
    return node_samples, text_samples


def export_samples_jsonl(path, class_names, samples_by_class) -> None:
    """Write {class, node_embedding, text_embedding} records, one per line."""
    out = Path(path)
    with out.open("w", encoding="utf-8") as fh:
        for name in class_names:
            node_samples, text_samples = samples_by_class[name]
            for v, t in zip(node_samples, text_samples):
                rec = {"class": name,
                       "node_embedding": [float(x) for x in v],
                       "text_embedding": [float(x) for x in t]}
                fh.write(json.dumps(rec) + "\n")
