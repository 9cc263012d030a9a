"""Tokenizer, Transformer text encoder, GCN graph encoder, and the shared
128-dim embedding space.

Both encoders emit 128-dim vectors so nodes and texts can be compared with
cosine similarity. The text encoder is bidirectional, pools the hidden state
at the EOS position, and projects to the shared space; the graph encoder is a
two-layer GCN with symmetric normalization over the self-looped adjacency.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .tag import TextAttributedGraph, neighbor_sets

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
NUM_RESERVED = 4


@dataclass(frozen=True)
class Vocabulary:
    """Token -> id map with fixed reserved ids (PAD=0, UNK=1, BOS=2, EOS=3)."""

    token_to_id: dict[str, int]

    def __post_init__(self):
        ids = sorted(self.token_to_id.values())
        if ids != list(range(NUM_RESERVED, NUM_RESERVED + len(ids))):
            raise ConfigError("vocabulary ids must be contiguous from 4 upward")

    @property
    def size(self) -> int:
        return NUM_RESERVED + len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls({str(k): int(v) for k, v in json.loads(text).items()})


def build_vocabulary(texts, max_size: int = 5000) -> Vocabulary:
    """Frequency-capped word vocabulary over whitespace-split lowercase tokens.

    Ties in frequency break lexicographically so the result is deterministic.
    """
    counts: dict[str, int] = {}
    for text in texts:
        for tok in text.lower().split():
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return Vocabulary({tok: NUM_RESERVED + i for i, (tok, _) in enumerate(ranked)})


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """[BOS] + token ids + [EOS], truncated to ``max_len`` and right-padded.

    Truncation preserves BOS and keeps EOS as the final non-pad token, so the
    pooling position is always an EOS.
    """
    if max_len < 3:
        raise ConfigError(f"max_len must be >= 3, got {max_len}")
    ids = [vocab.id_of(tok) for tok in text.lower().split()]
    seq = [BOS_ID] + ids + [EOS_ID]
    if len(seq) > max_len:
        seq = seq[:max_len - 1] + [EOS_ID]
    return seq + [PAD_ID] * (max_len - len(seq))


@dataclass(frozen=True)
class TextEncoderConfig:
    layers: int = 2
    width: int = 64
    heads: int = 4
    max_seq_len: int = 32
    output_dim: int = 128

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("text encoder needs at least one layer")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.max_seq_len < 3:
            raise ConfigError("max_seq_len must be >= 3")


@dataclass(frozen=True)
class GraphEncoderConfig:
    layers: int = 2
    hidden_dim: int = 128
    output_dim: int = 128
    leaky_relu_slope: float = 0.01

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("graph encoder needs at least one layer")


def l2_normalize(matrix: torch.Tensor) -> torch.Tensor:
    """Rescale every row to unit Euclidean norm; rejects zero-norm rows."""
    norms = matrix.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("cannot normalize a zero-norm row")
    return matrix / norms


def cosine_similarity_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities: entry (i, j) = cos(a_i, b_j)."""
    return l2_normalize(a) @ l2_normalize(b).T


class TextEncoder(nn.Module):
    """Bidirectional Transformer over token + learned position embeddings.

    The sequence is pooled at the EOS position and linearly projected to the
    shared output dimension. ``forward_embedded`` accepts pre-built embedding
    sequences so continuous prompt vectors can bypass the token table.
    """

    def __init__(self, vocab_size: int, config: TextEncoderConfig = TextEncoderConfig()):
        super().__init__()
        config.validate()
        self.config = config
        self.token_embedding = nn.Embedding(vocab_size, config.width)
        self.position_embedding = nn.Embedding(config.max_seq_len, config.width)
        layer = nn.TransformerEncoderLayer(
            d_model=config.width,
            nhead=config.heads,
            dim_feedforward=4 * config.width,
            dropout=0.0,
            batch_first=True,
        )
        self.body = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.projection = nn.Linear(config.width, config.output_dim)

    def forward_embedded(self, seq_embeddings: torch.Tensor, pool_positions: torch.Tensor,
                         key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Run the Transformer body over embedding sequences (B, L, width)."""
        batch, length, _ = seq_embeddings.shape
        if length > self.config.max_seq_len:
            raise ValueError(
                f"sequence length {length} exceeds max_seq_len {self.config.max_seq_len}")
        positions = torch.arange(length, device=seq_embeddings.device)
        hidden = seq_embeddings + self.position_embedding(positions)
        if key_padding_mask is None:
            key_padding_mask = torch.zeros(batch, length, dtype=torch.bool,
                                           device=seq_embeddings.device)
        hidden = self.body(hidden, src_key_padding_mask=key_padding_mask)
        pooled = hidden[torch.arange(batch, device=hidden.device), pool_positions]
        return self.projection(pooled)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """Encode a batch of equal-length token id sequences to (B, 128)."""
        if token_ids.ndim != 2:
            raise ValueError(f"expected (batch, seq_len) token ids, got {tuple(token_ids.shape)}")
        embeddings = self.token_embedding(token_ids)
        pad_mask = token_ids == PAD_ID
        eos_positions = (token_ids == EOS_ID).int().argmax(dim=1)
        return self.forward_embedded(embeddings, eos_positions, pad_mask)


class GraphEncoder(nn.Module):
    """GCN: hidden = leaky_relu(A_hat X W1), output = A_hat hidden W2, ...

    No biases, matching plain symmetric-propagation layers. The final layer
    always emits the shared output dimension.
    """

    def __init__(self, in_dim: int, config: GraphEncoderConfig = GraphEncoderConfig()):
        super().__init__()
        config.validate()
        self.config = config
        dims = [in_dim] + [config.hidden_dim] * (config.layers - 1) + [config.output_dim]
        self.weights = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1], bias=False) for i in range(config.layers))

    def forward(self, features: torch.Tensor, adj_norm: torch.Tensor) -> torch.Tensor:
        hidden = features
        for i, linear in enumerate(self.weights):
            hidden = adj_norm @ linear(hidden)
            if i < len(self.weights) - 1:
                hidden = F.leaky_relu(hidden, self.config.leaky_relu_slope)
        return hidden


def normalized_adjacency(graph: TextAttributedGraph, dtype=torch.float32) -> torch.Tensor:
    """Dense D^{-1/2} (A + I) D^{-1/2} over the graph's node ordering."""
    n = graph.num_nodes
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    adj = torch.eye(n, dtype=dtype)
    for a, b in graph.edges:
        adj[pos[a], pos[b]] = 1.0
        adj[pos[b], pos[a]] = 1.0
    deg = adj.sum(dim=1)
    inv_sqrt = deg.rsqrt()
    return adj * inv_sqrt[:, None] * inv_sqrt[None, :]


def fitted_token_length(texts, vocab: Vocabulary, max_seq_len: int) -> int:
    """Smallest padding length covering every text, capped at ``max_seq_len``."""
    longest = max((len(t.lower().split()) for t in texts), default=1)
    return min(max_seq_len, longest + 2)


class PretrainedModel(nn.Module):
    """Jointly trained text/graph encoder pair with a learned temperature."""

    def __init__(self, vocab: Vocabulary,
                 text_config: TextEncoderConfig = TextEncoderConfig(),
                 graph_config: GraphEncoderConfig = GraphEncoderConfig(),
                 feature_dim: int = 1,
                 tau_init: float = float(np.log(1.0 / 0.07))):
        super().__init__()
        if text_config.output_dim != graph_config.output_dim:
            raise ConfigError("text and graph encoders must share the output dimension")
        self.vocab = vocab
        self.text_encoder = TextEncoder(vocab.size, text_config)
        self.graph_encoder = GraphEncoder(feature_dim, graph_config)
        self.log_temperature = nn.Parameter(torch.tensor(float(tau_init)))

    @property
    def output_dim(self) -> int:
        return self.text_encoder.config.output_dim

    def tokenize_batch(self, texts, max_len: int | None = None) -> torch.Tensor:
        if max_len is None:
            max_len = fitted_token_length(texts, self.vocab, self.text_encoder.config.max_seq_len)
        return torch.tensor([tokenize(t, self.vocab, max_len) for t in texts], dtype=torch.long)

    def encode_texts(self, texts, max_len: int | None = None) -> torch.Tensor:
        """Tokenize and encode raw strings; rows align with the input order."""
        return self.text_encoder(self.tokenize_batch(texts, max_len))

    def encode_nodes(self, graph: TextAttributedGraph) -> torch.Tensor:
        """GCN embeddings for every node, rows in ``graph.node_ids`` order."""
        dtype = next(self.graph_encoder.parameters()).dtype
        features = torch.tensor(np.asarray(graph.features), dtype=dtype)
        return self.graph_encoder(features, normalized_adjacency(graph, dtype=dtype))
