"""Text-attributed graph data model, on-disk format, and planted synthetic corpus.

A graph directory holds ``nodes.jsonl`` (one object per line with ``id``,
``text``, optional ``label`` and ``features``), ``edges.tsv`` (two
tab-separated node ids per line) and ``meta.json`` (``num_nodes``,
``feature_dim``). Everything is UTF-8.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError


@dataclass(frozen=True, eq=False)
class TextAttributedGraph:
    """An undirected, unweighted graph whose nodes carry raw text and features.

    Edges are canonicalized on construction: each unordered pair is stored
    once as ``(min, max)``, sorted. ``labels`` is ground truth held out for
    evaluation only; classifiers never see it.
    """

    node_ids: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    features: np.ndarray
    texts: tuple[str, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))
        object.__setattr__(self, "texts", tuple(self.texts))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        features = np.asarray(self.features, dtype=np.float32)
        if features.ndim != 2:
            raise DataFormatError(f"features must be 2-D, got shape {features.shape}")
        features = features.copy()
        features.flags.writeable = False
        object.__setattr__(self, "features", features)

        ids = set(self.node_ids)
        if len(ids) != len(self.node_ids):
            raise DataFormatError("duplicate node ids")
        canonical = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise DataFormatError(f"self-loop on node {a}")
            for end in (a, b):
                if end not in ids:
                    raise DataFormatError(f"edge ({a}, {b}) references unknown node id {end}")
            canonical.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(sorted(canonical)))

        if len(self.texts) != len(self.node_ids):
            raise DataFormatError(
                f"{len(self.texts)} texts for {len(self.node_ids)} nodes")
        if features.shape[0] != len(self.node_ids):
            raise DataFormatError(
                f"{features.shape[0]} feature rows for {len(self.node_ids)} nodes")
        if self.labels is not None:
            if len(self.labels) != len(self.node_ids):
                raise DataFormatError(
                    f"{len(self.labels)} labels for {len(self.node_ids)} nodes")
            for i, lab in enumerate(self.labels):
                if not isinstance(lab, str) or not lab:
                    raise DataFormatError(f"empty label for node at position {i}")

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TextAttributedGraph):
            return NotImplemented
        return (self.node_ids == other.node_ids
                and self.edges == other.edges
                and self.texts == other.texts
                and self.labels == other.labels
                and self.features.shape == other.features.shape
                and bool(np.array_equal(self.features, other.features)))


def neighbor_sets(graph: TextAttributedGraph) -> dict[int, set[int]]:
    """Adjacency map: node id -> set of neighbor ids (symmetric, no self)."""
    adj: dict[int, set[int]] = {i: set() for i in graph.node_ids}
    for a, b in graph.edges:
        adj[a].add(b)
        adj[b].add(a)
    return adj


def save_tag(graph: TextAttributedGraph, path) -> None:
    """Write ``graph`` into directory ``path`` in the documented format."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "nodes.jsonl").open("w", encoding="utf-8") as fh:
            for pos, node_id in enumerate(graph.node_ids):
                rec = {"id": node_id, "text": graph.texts[pos]}
                if graph.labels is not None:
                    rec["label"] = graph.labels[pos]
                rec["features"] = [float(x) for x in graph.features[pos]]
                fh.write(json.dumps(rec) + "\n")
        with (out / "edges.tsv").open("w", encoding="utf-8") as fh:
            for a, b in graph.edges:
                fh.write(f"{a}\t{b}\n")
        meta = {"num_nodes": graph.num_nodes, "feature_dim": graph.feature_dim}
        (out / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write graph to {out}: {exc}") from exc


def _bag_of_words(texts, feature_dim: int) -> np.ndarray:
    # Fallback features when nodes.jsonl carries none: token counts over the
    # corpus vocabulary in lexicographic order, truncated/zero-padded.
    tokens = sorted({w for t in texts for w in t.lower().split()})
    index = {w: i for i, w in enumerate(tokens)}
    counts = np.zeros((len(texts), len(tokens)), dtype=np.float32)
    for row, text in enumerate(texts):
        for w in text.lower().split():
            counts[row, index[w]] += 1.0
    if counts.shape[1] >= feature_dim:
        return counts[:, :feature_dim]
    out = np.zeros((len(texts), feature_dim), dtype=np.float32)
    out[:, :counts.shape[1]] = counts
    return out


def load_tag(path) -> TextAttributedGraph:
    """Read a graph directory written by :func:`save_tag`.

    Raises DataFormatError naming the offending file and line for malformed
    records, dangling edge endpoints, or count mismatches.
    """
    root = Path(path)
    meta_path = root / "meta.json"
    nodes_path = root / "nodes.jsonl"
    edges_path = root / "edges.tsv"
    for p in (meta_path, nodes_path, edges_path):
        if not p.exists():
            raise DataFormatError(f"missing {p.name} in {root}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{meta_path}: invalid JSON ({exc})") from exc

    node_ids, texts, labels, feats = [], [], [], []
    with nodes_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{nodes_path}:{lineno}: invalid JSON ({exc})") from exc
            if "id" not in rec or "text" not in rec:
                raise DataFormatError(f"{nodes_path}:{lineno}: record needs 'id' and 'text'")
            node_ids.append(int(rec["id"]))
            texts.append(str(rec["text"]))
            labels.append(rec.get("label"))
            feats.append(rec.get("features"))

    have_labels = [lab is not None for lab in labels]
    if any(have_labels) and not all(have_labels):
        missing = have_labels.index(False) + 1
        raise DataFormatError(f"{nodes_path}:{missing}: label present on some nodes but not all")
    have_feats = [f is not None for f in feats]
    if any(have_feats) and not all(have_feats):
        missing = have_feats.index(False) + 1
        raise DataFormatError(f"{nodes_path}:{missing}: features present on some nodes but not all")

    if all(have_feats) and feats:
        dims = {len(f) for f in feats}
        if len(dims) != 1:
            raise DataFormatError(f"{nodes_path}: inconsistent feature lengths {sorted(dims)}")
        features = np.asarray(feats, dtype=np.float32)
    else:
        features = _bag_of_words(texts, int(meta.get("feature_dim", 0)) or 1)

    if meta.get("num_nodes") is not None and int(meta["num_nodes"]) != len(node_ids):
        raise DataFormatError(
            f"{meta_path}: num_nodes={meta['num_nodes']} but {nodes_path.name} has {len(node_ids)} records")

    known = set(node_ids)
    edges = []
    with edges_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{edges_path}:{lineno}: expected two tab-separated ids")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DataFormatError(f"{edges_path}:{lineno}: non-integer id ({exc})") from exc
            for end in (a, b):
                if end not in known:
                    raise DataFormatError(f"{edges_path}:{lineno}: dangling endpoint {end}")
            edges.append((a, b))

    try:
        return TextAttributedGraph(
            node_ids=tuple(node_ids),
            edges=tuple(edges),
            features=features,
            texts=tuple(texts),
            labels=tuple(labels) if all(have_labels) and labels else None,
        )
    except DataFormatError as exc:
        raise DataFormatError(f"{root}: {exc}") from exc


@dataclass(frozen=True)
class SyntheticTagSpec:
    """Parameters of the planted-partition synthetic corpus.

    Each class owns ``tokens_per_class`` exclusive topic tokens taken from the
    front of ``vocab``; the rest of ``vocab`` serves as filler. A node's text
    has ``text_len`` tokens, each drawn from its class topics with probability
    ``topic_prob`` and from filler otherwise. The class label (and class name)
    is the class's first topic token, so class names are real vocabulary words.
    """

    num_classes: int
    nodes_per_class: int
    vocab: tuple[str, ...]
    tokens_per_class: int
    text_len: int
    intra_edge_prob: float
    inter_edge_prob: float
    feature_dim: int
    feature_noise: float
    seed: int
    topic_prob: float = 0.5

    def validate(self) -> None:
        if self.num_classes < 1 or self.nodes_per_class < 1:
            raise ConfigError("num_classes and nodes_per_class must be >= 1")
        if self.num_classes * self.tokens_per_class > len(self.vocab):
            raise ConfigError(
                f"num_classes*tokens_per_class = {self.num_classes * self.tokens_per_class} "
                f"exceeds vocab size {len(self.vocab)}")
        if len(set(self.vocab)) != len(self.vocab):
            raise ConfigError("vocab contains duplicate tokens")
        if not (0.0 <= self.inter_edge_prob <= 1.0 and 0.0 <= self.intra_edge_prob <= 1.0):
            raise ConfigError("edge probabilities must lie in [0, 1]")
        if self.intra_edge_prob <= self.inter_edge_prob:
            raise ConfigError(
                f"intra_edge_prob ({self.intra_edge_prob}) must exceed "
                f"inter_edge_prob ({self.inter_edge_prob})")
        if self.text_len < 1:
            raise ConfigError("text_len must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be >= 0")
        if not (0.0 <= self.topic_prob <= 1.0):
            raise ConfigError("topic_prob must lie in [0, 1]")
        if self.tokens_per_class < 1:
            raise ConfigError("tokens_per_class must be >= 1")


def generate_synthetic_tag(spec: SyntheticTagSpec) -> TextAttributedGraph:
    """Generate a labeled corpus with planted block structure; pure in ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    num_nodes = spec.num_classes * spec.nodes_per_class
    labels_idx = np.repeat(np.arange(spec.num_classes), spec.nodes_per_class)

    topic = [list(spec.vocab[c * spec.tokens_per_class:(c + 1) * spec.tokens_per_class])
             for c in range(spec.num_classes)]
    filler = list(spec.vocab[spec.num_classes * spec.tokens_per_class:])
    if not filler:
        filler = list(spec.vocab)  # degenerate spec: everything is a topic token

    texts = []
    for i in range(num_nodes):
        words = topic[labels_idx[i]]
        toks = []
        for _ in range(spec.text_len):
            if rng.random() < spec.topic_prob:
                toks.append(words[rng.integers(len(words))])
            else:
                toks.append(filler[rng.integers(len(filler))])
        texts.append(" ".join(toks))

    iu, ju = np.triu_indices(num_nodes, k=1)
    prob = np.where(labels_idx[iu] == labels_idx[ju], spec.intra_edge_prob, spec.inter_edge_prob)
    keep = rng.random(len(iu)) < prob
    edges = tuple((int(a), int(b)) for a, b in zip(iu[keep], ju[keep]))

    index = {w: k for k, w in enumerate(spec.vocab)}
    counts = np.zeros((num_nodes, len(spec.vocab)), dtype=np.float32)
    for row, text in enumerate(texts):
        for w in text.split():
            counts[row, index[w]] += 1.0
    if spec.feature_dim <= counts.shape[1]:
        features = counts[:, :spec.feature_dim].copy()
    else:
        features = np.zeros((num_nodes, spec.feature_dim), dtype=np.float32)
        features[:, :counts.shape[1]] = counts
    if spec.feature_noise > 0:
        features = features + rng.normal(0.0, spec.feature_noise, features.shape).astype(np.float32)

    labels = tuple(topic[c][0] for c in labels_idx)
    return TextAttributedGraph(
        node_ids=tuple(range(num_nodes)),
        edges=edges,
        features=features,
        texts=tuple(texts),
        labels=labels,
    )


def intra_edge_fraction(graph: TextAttributedGraph) -> float:
    """Fraction of edges joining same-label endpoints (labels required)."""
    if graph.labels is None:
        raise ValueError("graph has no labels")
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    if not graph.edges:
        return 0.0
    same = sum(1 for a, b in graph.edges if graph.labels[pos[a]] == graph.labels[pos[b]])
    return same / len(graph.edges)
