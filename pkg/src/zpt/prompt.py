"""Continuous and discrete prompts, hybrid class probabilities, and tuning.

A continuous prompt is a shared block of learnable context vectors followed
by a class's frozen name-token embeddings; encoding that sequence with the
(frozen) text encoder yields the classification weight for the class. Tuning
updates only the context vectors, using generated samples as supervision.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import BOS_ID, EOS_ID, PretrainedModel, l2_normalize
from .errors import ConfigError, TrainingError

CLASS_NAME_SLOT = "{class name}"


@dataclass(frozen=True)
class HybridConfig:
    """Modality balance and the prompt-tuning regimen.

    ``lam`` weights the graph-modality softmax; ``1 - lam`` the text side.
    """

    lam: float = 0.5
    learning_rate: float = 2e-5
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class ContinuousPrompt:
    """Shared trainable context plus per-class frozen name-token id sequences."""

    context: torch.Tensor
    class_token_ids: tuple[tuple[int, ...], ...]
    class_names: tuple[str, ...]

    @property
    def num_context(self) -> int:
        return self.context.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_token_ids)


def _name_tokens(text: str, model: PretrainedModel) -> tuple[int, ...]:
    return tuple(model.vocab.id_of(tok) for tok in text.lower().split())


def init_prompt(class_names, num_context: int, model: PretrainedModel, seed: int = 0,
                context_template: str | None = None) -> ContinuousPrompt:
    """Fresh prompt: context ~ N(0, 0.02^2), class tokens from the vocab table.

    ``context_template`` optionally wraps each class name in contextual words
    (e.g. ``"a paper of {class name}"``) before token lookup.
    """
    if num_context < 0:
        raise ConfigError("num_context must be >= 0")
    names = tuple(str(n) for n in class_names)
    if context_template is not None:
        if context_template.count(CLASS_NAME_SLOT) != 1:
            raise ConfigError(
                f"context template must contain {CLASS_NAME_SLOT!r} exactly once")
        rendered = tuple(context_template.replace(CLASS_NAME_SLOT, n) for n in names)
    else:
        rendered = names
    token_ids = tuple(_name_tokens(text, model) for text in rendered)
    budget = model.text_encoder.config.max_seq_len - 2
    for name, ids in zip(names, token_ids):
        if num_context + len(ids) > budget:
            raise ConfigError(
                f"prompt for class {name!r} needs {num_context + len(ids)} slots, "
                f"budget is {budget}")
        if not ids:
            raise ConfigError(f"class name {name!r} tokenizes to nothing")
    gen = torch.Generator().manual_seed(seed)
    width = model.text_encoder.config.width
    context = torch.randn(num_context, width, generator=gen) * 0.02
    return ContinuousPrompt(context=context, class_token_ids=token_ids, class_names=names)


def class_weights(prompt: ContinuousPrompt, model: PretrainedModel) -> torch.Tensor:
    """Encode [BOS, context..., name tokens, EOS] per class; returns (N, 128).

    Continuous context slots bypass the token table; everything else uses the
    frozen embeddings. Gradients flow only into ``prompt.context``.
    """
    table = model.text_encoder.token_embedding
    dtype = table.weight.dtype
    bos = table(torch.tensor([BOS_ID]))
    eos = table(torch.tensor([EOS_ID]))
    rows = []
    for ids in prompt.class_token_ids:
        name_emb = table(torch.tensor(list(ids), dtype=torch.long))
        seq = torch.cat([bos, prompt.context.to(dtype), name_emb, eos], dim=0)
        pooled = model.text_encoder.forward_embedded(
            seq.unsqueeze(0), torch.tensor([seq.shape[0] - 1]))
        rows.append(pooled[0])
    return torch.stack(rows)


def discrete_class_weights(template: str, class_names, model: PretrainedModel) -> torch.Tensor:
    """Encode a handcrafted template instantiated with each class name."""
    if template.count(CLASS_NAME_SLOT) != 1:
        raise ConfigError(f"template must contain {CLASS_NAME_SLOT!r} exactly once")
    texts = [template.replace(CLASS_NAME_SLOT, str(n)) for n in class_names]
    return model.encode_texts(texts)


def hybrid_probability(weights: torch.Tensor, node_emb: torch.Tensor, text_emb: torch.Tensor,
                       lam: float) -> torch.Tensor:
    """lam * softmax(cos(w, v)) + (1 - lam) * softmax(cos(w, t)).

    Accepts single vectors or batches; rows sum to 1.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    squeeze = node_emb.ndim == 1
    # float64 keeps the rows summing to 1 within 1e-9 regardless of input dtype
    v = (node_emb.reshape(1, -1) if squeeze else node_emb).double()
    t = (text_emb.reshape(1, -1) if squeeze else text_emb).double()
    w = l2_normalize(weights.double())
    probs_node = F.softmax(l2_normalize(v) @ w.T, dim=-1)
    probs_text = F.softmax(l2_normalize(t) @ w.T, dim=-1)
    probs = lam * probs_node + (1.0 - lam) * probs_text
    return probs[0] if squeeze else probs


def classify(weights: torch.Tensor, node_emb: torch.Tensor, text_emb: torch.Tensor, lam: float):
    """Most probable class index; ties break toward the lower index."""
    probs = hybrid_probability(weights, node_emb, text_emb, lam)
    pred = np.argmax(probs.detach().numpy(), axis=-1)  # np.argmax takes the first maximum
    return int(pred) if probs.ndim == 1 else pred.astype(int)


def tune_prompt(prompt: ContinuousPrompt, node_samples, text_samples, sample_labels,
                model: PretrainedModel, config: HybridConfig = HybridConfig()):
    """Minimize cross-entropy of the hybrid probability over the samples.

    Only the context vectors receive gradients; the text encoder and class
    token ids stay frozen. Returns ``(tuned_prompt, log)``.
    """
    config.validate()
    node_samples = torch.as_tensor(np.asarray(node_samples), dtype=torch.float32).detach()
    text_samples = torch.as_tensor(np.asarray(text_samples), dtype=torch.float32).detach()
    labels = torch.as_tensor(np.asarray(sample_labels), dtype=torch.long)
    if not (len(node_samples) == len(text_samples) == len(labels)):
        raise ValueError("samples and labels must have equal lengths")
    present = set(labels.tolist())
    for class_index in range(prompt.num_classes):
        if class_index not in present:
            raise ConfigError(f"class index {class_index} has zero samples")

    context = prompt.context.clone().requires_grad_(True)
    working = replace(prompt, context=context)
    was_training = model.training
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    try:
        optimizer = torch.optim.Adam([context], lr=config.learning_rate)
        sampler = torch.Generator().manual_seed(config.seed)
        n = len(labels)
        log: list[dict] = []
        for epoch in range(config.epochs):
            order = torch.randperm(n, generator=sampler)
            epoch_total, num_batches = 0.0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                weights = class_weights(working, model)
                probs = hybrid_probability(weights, node_samples[idx], text_samples[idx],
                                           config.lam)
                picked = probs[torch.arange(len(idx)), labels[idx]]
                loss = -torch.log(picked.clamp_min(1e-12)).mean()
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite tuning loss at epoch {epoch}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_total += loss.item()
                num_batches += 1
            log.append({"epoch": epoch, "loss": epoch_total / max(num_batches, 1)})
    finally:
        for p in model.parameters():
            p.requires_grad_(True)
        model.train(was_training)
    return replace(prompt, context=context.detach()), log
