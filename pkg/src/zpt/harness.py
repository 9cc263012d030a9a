"""Task sampling, metrics, end-to-end runners for every mode, and projection
export for inspecting real vs. generated samples.

Runners are pure functions of (trained models, task list, seed bundle):
rerunning with identical inputs reproduces metrics exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import prompt as promptkit
from .encoders import PretrainedModel, l2_normalize
from .errors import ConfigError
from .prompt import (ContinuousPrompt, HybridConfig, class_weights, classify,
                     discrete_class_weights, hybrid_probability, init_prompt, tune_prompt)
from .seeding import derive_seed
from .tag import TextAttributedGraph
from .ubcg import UbcgConfig, UbcgModel, generate_class_samples, train_ubcg

DEFAULT_TEMPLATES = (
    "{class name}",
    "a {class name}",
    "an {class name}",
    "a paper of {class name}",
    "a research of {class name}",
    "a research paper of {class name}",
)


@dataclass(frozen=True)
class ZeroShotTask:
    """N class names, query node ids, and hidden ground-truth class indices."""

    class_names: tuple[str, ...]
    query_ids: tuple[int, ...]
    truth: tuple[int, ...]

    def __post_init__(self):
        n = len(self.class_names)
        if len(self.query_ids) != len(self.truth):
            raise ConfigError("query_ids and truth must have equal lengths")
        if any(not (0 <= t < n) for t in self.truth):
            raise ConfigError("truth indices must be < number of classes")


@dataclass(frozen=True)
class Metrics:
    """Per-task accuracy/macro-F1 plus their mean and std across tasks."""

    per_task: tuple[dict, ...]
    accuracy: float
    macro_f1: float
    accuracy_std: float
    macro_f1_std: float
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_task": list(self.per_task),
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "accuracy_std": self.accuracy_std,
            "macro_f1_std": self.macro_f1_std,
            "notes": list(self.notes),
        }


def accuracy_score(preds, truth) -> float:
    preds, truth = np.asarray(preds), np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError("predictions and truth must have equal lengths")
    return float((preds == truth).mean())


def macro_f1(preds, truth, num_classes: int) -> float:
    """Unweighted mean of per-class F1; a class absent from both predictions
    and truth contributes F1 = 0."""
    preds, truth = np.asarray(preds), np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError("predictions and truth must have equal lengths")
    scores = []
    for c in range(num_classes):
        tp = int(((preds == c) & (truth == c)).sum())
        fp = int(((preds == c) & (truth != c)).sum())
        fn = int(((preds != c) & (truth == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(scores))


def _label_positions(graph: TextAttributedGraph) -> dict[str, list[int]]:
    if graph.labels is None:
        raise ConfigError("task sampling requires a labeled graph")
    by_label: dict[str, list[int]] = {}
    for position, label in enumerate(graph.labels):
        by_label.setdefault(label, []).append(position)
    return by_label


def sample_tasks(graph: TextAttributedGraph, n_way: int, num_tasks: int,
                 queries_per_class: int, seed: int) -> list[ZeroShotTask]:
    """Stratified N-way tasks covering every label across the emitted list.

    Classes are dealt from reshuffled cycles of the full label set, so the
    union over tasks covers all labels whenever num_tasks * n_way allows it;
    query nodes are drawn per class without replacement within a task.
    """
    by_label = _label_positions(graph)
    labels = sorted(by_label)
    if len(labels) < n_way:
        raise ConfigError(f"graph has {len(labels)} labels, need at least {n_way}")
    rng = np.random.default_rng(seed)
    pool: list[str] = []
    tasks = []
    for index in range(num_tasks):
        picked: list[str] = []
        while len(picked) < n_way:
            if not pool:
                pool = list(rng.permutation(labels))
            candidate = pool.pop(0)
            if candidate in picked:
                # keep it for a later task so coverage is not lost
                pool.append(candidate)
                if all(p in picked for p in pool):
                    pool = [p for p in rng.permutation(labels) if p not in picked]
            else:
                picked.append(candidate)
        query_ids, truth = [], []
        for class_index, name in enumerate(picked):
            positions = by_label[name]
            if len(positions) < queries_per_class:
                raise ConfigError(
                    f"class {name!r} has {len(positions)} nodes, "
                    f"need {queries_per_class} queries")
            chosen = rng.choice(len(positions), size=queries_per_class, replace=False)
            for k in sorted(int(x) for x in chosen):
                query_ids.append(graph.node_ids[positions[k]])
                truth.append(class_index)
        tasks.append(ZeroShotTask(tuple(picked), tuple(query_ids), tuple(truth)))
    covered = {name for task in tasks for name in task.class_names}
    if num_tasks * n_way >= len(labels) and covered != set(labels):
        raise ConfigError("task sampler failed to cover every class")  # pragma: no cover
    return tasks


def embed_graph(model: PretrainedModel, graph: TextAttributedGraph):
    """Frozen (node, text) embeddings for the whole graph, rows in node order."""
    model.eval()
    with torch.no_grad():
        node_embs = model.encode_nodes(graph)
        text_embs = model.encode_texts(graph.texts)
    return node_embs, text_embs


def _aggregate(per_task: list[dict], notes=()) -> Metrics:
    acc = np.array([row["accuracy"] for row in per_task])
    f1 = np.array([row["macro_f1"] for row in per_task])
    return Metrics(
        per_task=tuple(per_task),
        accuracy=float(acc.mean()),
        macro_f1=float(f1.mean()),
        accuracy_std=float(acc.std()),
        macro_f1_std=float(f1.std()),
        notes=tuple(notes),
    )


def evaluate(classifier, tasks, graph: TextAttributedGraph, model: PretrainedModel) -> Metrics:
    """Score a classifier callback ``(class_names, node_embs, text_embs) -> preds``."""
    node_embs, text_embs = embed_graph(model, graph)
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    per_task = []
    for task in tasks:
        rows = [pos[q] for q in task.query_ids]
        preds = np.asarray(classifier(task.class_names, node_embs[rows], text_embs[rows]))
        per_task.append({
            "accuracy": accuracy_score(preds, task.truth),
            "macro_f1": macro_f1(preds, task.truth, len(task.class_names)),
        })
    return _aggregate(per_task)


def _condition_texts(class_names, condition_template: str | None) -> list[str]:
    if condition_template is None:
        return [str(n) for n in class_names]
    if condition_template.count(promptkit.CLASS_NAME_SLOT) != 1:
        raise ConfigError(
            f"condition template must contain {promptkit.CLASS_NAME_SLOT!r} exactly once")
    return [condition_template.replace(promptkit.CLASS_NAME_SLOT, str(n)) for n in class_names]


def generate_task_samples(task: ZeroShotTask, model: PretrainedModel, generator: UbcgModel,
                          samples_per_class: int, seed: int,
                          condition_template: str | None = None):
    """Synthetic (node, text, label) sample bank for one task's classes."""
    with torch.no_grad():
        conditions = model.encode_texts(_condition_texts(task.class_names, condition_template))
    node_parts, text_parts, label_parts = [], [], []
    for class_index in range(len(task.class_names)):
        v, t = generate_class_samples(conditions[class_index], samples_per_class, generator,
                                      derive_seed(seed, "generate", class_index))
        node_parts.append(v)
        text_parts.append(t)
        label_parts.append(torch.full((samples_per_class,), class_index, dtype=torch.long))
    return torch.cat(node_parts), torch.cat(text_parts), torch.cat(label_parts)


def run_zpt(graph: TextAttributedGraph, model: PretrainedModel, generator: UbcgModel,
            tasks, hybrid: HybridConfig = HybridConfig(), samples_per_class: int = 200,
            num_context: int = 4, condition_template: str | None = None):
    """Full zero-shot prompt tuning: generate per class, tune, classify.

    ``condition_template`` switches on the contextual-words variant; it feeds
    both the generator conditioning and the prompt's class-token block.
    Returns ``(Metrics, tuned prompts per task)``.
    """
    hybrid.validate()
    node_embs, text_embs = embed_graph(model, graph)
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    per_task, prompts = [], []
    for task_index, task in enumerate(tasks):
        bank_v, bank_t, bank_y = generate_task_samples(
            task, model, generator, samples_per_class,
            derive_seed(hybrid.seed, "samples", task_index), condition_template)
        fresh = init_prompt(task.class_names, num_context, model,
                            seed=derive_seed(hybrid.seed, "prompt", task_index),
                            context_template=condition_template)
        tuned, _ = tune_prompt(
            fresh, bank_v, bank_t, bank_y, model,
            replace(hybrid, seed=derive_seed(hybrid.seed, "tune", task_index)))
        prompts.append(tuned)
        with torch.no_grad():
            weights = class_weights(tuned, model)
        rows = [pos[q] for q in task.query_ids]
        preds = classify(weights, node_embs[rows], text_embs[rows], hybrid.lam)
        per_task.append({
            "accuracy": accuracy_score(preds, task.truth),
            "macro_f1": macro_f1(preds, task.truth, len(task.class_names)),
        })
    return _aggregate(per_task), prompts


def run_discrete(graph: TextAttributedGraph, model: PretrainedModel, tasks,
                 template: str, lam: float) -> Metrics:
    """Zero-shot classification from a handcrafted template; no tuning."""

    def classifier(class_names, v, t):
        with torch.no_grad():
            weights = discrete_class_weights(template, class_names, model)
        return classify(weights, v, t, lam)

    return evaluate(classifier, tasks, graph, model)


def run_template_sweep(graph: TextAttributedGraph, model: PretrainedModel, tasks,
                       templates=DEFAULT_TEMPLATES, lam: float = 0.5) -> dict:
    """Discrete-prompt comparison across templates; returns template -> metrics."""
    return {tpl: run_discrete(graph, model, tasks, tpl, lam).to_dict() for tpl in templates}


def run_node_only(graph: TextAttributedGraph, model: PretrainedModel,
                  node_only_generator: UbcgModel, tasks,
                  hybrid: HybridConfig = HybridConfig(), samples_per_class: int = 200,
                  num_context: int = 4, condition_template: str | None = None):
    """Generation ablation: node embeddings only, graph-modality scoring only."""
    # lam = 1 makes the text inputs inert, so the node samples stand in for them.
    return run_zpt(graph, model, node_only_generator, tasks,
                   replace(hybrid, lam=1.0), samples_per_class, num_context,
                   condition_template)


def fit_linear_classifier(inputs: torch.Tensor, labels: torch.Tensor, num_classes: int,
                          seed: int, epochs: int = 200, learning_rate: float = 1e-2):
    """Plain softmax regression head used by the simple-classifier baseline."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        head = torch.nn.Linear(inputs.shape[1], num_classes)
        optimizer = torch.optim.Adam(head.parameters(), lr=learning_rate)
        criterion = torch.nn.CrossEntropyLoss()
        for _ in range(epochs):
            optimizer.zero_grad()
            loss = criterion(head(inputs), labels)
            loss.backward()
            optimizer.step()
    head.eval()
    return head


def run_simple_classifier(graph: TextAttributedGraph, model: PretrainedModel,
                          generator: UbcgModel, tasks,
                          samples_per_class: int = 200, seed: int = 0,
                          condition_template: str | None = None,
                          epochs: int = 200) -> Metrics:
    """Train a linear softmax on concat(generated node, text) embeddings and
    score real queries on concat(real node, text)."""
    node_embs, text_embs = embed_graph(model, graph)
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    per_task = []
    for task_index, task in enumerate(tasks):
        bank_v, bank_t, bank_y = generate_task_samples(
            task, model, generator, samples_per_class,
            derive_seed(seed, "samples", task_index), condition_template)
        head = fit_linear_classifier(torch.cat([bank_v, bank_t], dim=1), bank_y,
                                     len(task.class_names),
                                     derive_seed(seed, "classifier", task_index),
                                     epochs=epochs)
        rows = [pos[q] for q in task.query_ids]
        with torch.no_grad():
            logits = head(torch.cat([node_embs[rows], text_embs[rows]], dim=1))
        preds = logits.argmax(dim=1).numpy()
        per_task.append({
            "accuracy": accuracy_score(preds, task.truth),
            "macro_f1": macro_f1(preds, task.truth, len(task.class_names)),
        })
    return _aggregate(per_task)


def run_pseudo_label(graph: TextAttributedGraph, model: PretrainedModel, tasks,
                     template: str, hybrid: HybridConfig = HybridConfig(),
                     max_per_class: int = 200, num_context: int = 4) -> Metrics:
    """Tune prompts on nodes labeled by the discrete zero-shot classifier.

    Per task: every graph node gets a pseudo-label over the task's classes,
    up to ``max_per_class`` nodes per pseudo-class feed one epoch of tuning
    (all of them if fewer). A class with zero pseudo-labeled nodes makes the
    task fall back to untuned discrete weights, recorded in the notes.
    """
    node_embs, text_embs = embed_graph(model, graph)
    pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
    per_task, notes = [], []
    for task_index, task in enumerate(tasks):
        with torch.no_grad():
            weights = discrete_class_weights(template, task.class_names, model)
        pseudo = classify(weights, node_embs, text_embs, hybrid.lam)
        rng = np.random.default_rng(derive_seed(hybrid.seed, "pseudo", task_index))
        chosen_rows, chosen_labels = [], []
        empty_class = None
        for class_index in range(len(task.class_names)):
            candidates = np.flatnonzero(pseudo == class_index)
            if len(candidates) == 0:
                empty_class = task.class_names[class_index]
                break
            if len(candidates) > max_per_class:
                candidates = rng.choice(candidates, size=max_per_class, replace=False)
            chosen_rows.extend(int(r) for r in candidates)
            chosen_labels.extend([class_index] * len(candidates))
        if empty_class is not None:
            notes.append(f"task {task_index}: class {empty_class!r} got no pseudo-labels; "
                         "fell back to untuned discrete weights")
            task_weights = weights
        else:
            fresh = init_prompt(task.class_names, num_context, model,
                                seed=derive_seed(hybrid.seed, "prompt", task_index))
            tuned, _ = tune_prompt(
                fresh, node_embs[chosen_rows], text_embs[chosen_rows],
                np.asarray(chosen_labels), model,
                replace(hybrid, seed=derive_seed(hybrid.seed, "tune", task_index)))
            with torch.no_grad():
                task_weights = class_weights(tuned, model)
        rows = [pos[q] for q in task.query_ids]
        preds = classify(task_weights, node_embs[rows], text_embs[rows], hybrid.lam)
        per_task.append({
            "accuracy": accuracy_score(preds, task.truth),
            "macro_f1": macro_f1(preds, task.truth, len(task.class_names)),
        })
    return _aggregate(per_task, notes)


def centroid_report(real_embs: torch.Tensor, real_labels, synth_embs: torch.Tensor,
                    synth_labels, class_names) -> dict:
    """Cosine diagnostics in the original embedding space, per class: distance
    between the real and synthetic centroids plus the synthetic centroid's
    nearest real class."""
    real_labels = np.asarray(real_labels)
    synth_labels = np.asarray(synth_labels)
    real_centroids = torch.stack([
        real_embs[torch.as_tensor(real_labels == c)].mean(dim=0)
        for c in range(len(class_names))])
    rows = {}
    matches = 0
    for c, name in enumerate(class_names):
        synth_centroid = synth_embs[torch.as_tensor(synth_labels == c)].mean(dim=0)
        sims = (l2_normalize(synth_centroid.reshape(1, -1))
                @ l2_normalize(real_centroids).T)[0]
        nearest = int(sims.argmax())
        matches += int(nearest == c)
        rows[str(name)] = {
            "cosine_distance": float(1.0 - sims[c]),
            "nearest_real_class": str(class_names[nearest]),
            "match": bool(nearest == c),
        }
    return {"per_class": rows, "matches": matches, "num_classes": len(class_names)}


def export_projection(real_node, real_text, real_labels, synth_node, synth_text,
                      synth_labels, class_names, csv_path, report_path=None,
                      seed: int = 0) -> dict:
    """Write 2-D projected coordinates and the centroid report.

    Rows carry {modality, class, real_or_synth, x, y}; each modality (node /
    text space) is projected separately with seeded t-SNE. Centroid
    diagnostics are computed in the original space, never the projection.
    """
    from sklearn.manifold import TSNE

    if len(set(np.asarray(real_labels).tolist())) < 2:
        raise ConfigError("projection export needs at least 2 classes")
    real_labels = np.asarray(real_labels)
    synth_labels = np.asarray(synth_labels)
    report = {
        "node": centroid_report(real_node, real_labels, synth_node, synth_labels, class_names),
        "text": centroid_report(real_text, real_labels, synth_text, synth_labels, class_names),
    }
    rows = []
    for modality, real_embs, synth_embs in (("node", real_node, synth_node),
                                            ("text", real_text, synth_text)):
        stacked = torch.cat([real_embs, synth_embs]).detach().numpy().astype(np.float64)
        perplexity = min(30.0, (len(stacked) - 1) / 3.0)
        coords = TSNE(n_components=2, random_state=seed, init="pca",
                      perplexity=perplexity).fit_transform(stacked)
        origins = ["real"] * len(real_embs) + ["synth"] * len(synth_embs)
        labels = list(real_labels) + list(synth_labels)
        for (x, y), origin, label in zip(coords, origins, labels):
            rows.append((modality, str(class_names[int(label)]), origin,
                         f"{x:.6f}", f"{y:.6f}"))
    with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["modality", "class", "real_or_synth", "x", "y"])
        writer.writerows(rows)
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True),
                                     encoding="utf-8")
    return report


def sensitivity_sweep(graph: TextAttributedGraph, model: PretrainedModel, tasks,
                      node_embs: torch.Tensor, text_embs: torch.Tensor,
                      ubcg_config: UbcgConfig = UbcgConfig(),
                      hybrid: HybridConfig = HybridConfig(),
                      latent_grid=(4, 8, 16, 32, 64),
                      samples_grid=(100, 200, 400, 800),
                      lam_grid=(0.1, 0.3, 0.5, 0.7, 0.9),
                      samples_per_class: int = 200,
                      num_context: int = 4,
                      condition_template: str | None = None) -> dict:
    """Hyperparameter sweeps over latent size, sample count, and lam.

    Retrains the generator per latent size; the sample-count and lam sweeps
    reuse the generator trained at the base configuration. Returns a report
    of mean accuracies per setting.
    """
    report: dict = {"latent_dim": {}, "samples_per_class": {}, "lam": {}}
    base_generator = None
    for latent in latent_grid:
        generator, _ = train_ubcg(node_embs, text_embs,
                                  replace(ubcg_config, latent_dim=int(latent)))
        if latent == ubcg_config.latent_dim:
            base_generator = generator
        metrics, _ = run_zpt(graph, model, generator, tasks, hybrid,
                             samples_per_class, num_context, condition_template)
        report["latent_dim"][str(latent)] = metrics.accuracy
    if base_generator is None:
        base_generator, _ = train_ubcg(node_embs, text_embs, ubcg_config)
    for count in samples_grid:
        metrics, _ = run_zpt(graph, model, base_generator, tasks, hybrid,
                             int(count), num_context, condition_template)
        report["samples_per_class"][str(count)] = metrics.accuracy
    for lam in lam_grid:
        metrics, _ = run_zpt(graph, model, base_generator, tasks,
                             replace(hybrid, lam=float(lam)),
                             samples_per_class, num_context, condition_template)
        report["lam"][f"{lam:.1f}"] = metrics.accuracy
    return report
