import numpy as np
import pytest
import torch

from zpt.encoders import GraphEncoderConfig, TextEncoderConfig
from zpt.pretrain import PretrainConfig, pretrain
from zpt.tag import SyntheticTagSpec, generate_synthetic_tag

torch.set_num_threads(2)

TINY_VOCAB = (
    "theory", "proof",
    "systems", "kernel",
    "vision", "image",
    "a", "an", "the", "of", "paper", "research", "study", "about",
    "method", "results",
)


def tiny_spec(seed=7, **overrides):
    base = dict(
        num_classes=3,
        nodes_per_class=20,
        vocab=TINY_VOCAB,
        tokens_per_class=2,
        text_len=4,
        intra_edge_prob=0.2,
        inter_edge_prob=0.01,
        feature_dim=len(TINY_VOCAB),
        feature_noise=0.01,
        seed=seed,
        topic_prob=0.5,
    )
    base.update(overrides)
    return SyntheticTagSpec(**base)


@pytest.fixture(scope="session")
def tiny_graph():
    return generate_synthetic_tag(tiny_spec())


@pytest.fixture(scope="session")
def tiny_model(tiny_graph):
    """A quickly pretrained model for tests that need sane embeddings."""
    config = PretrainConfig(learning_rate=2e-4, epochs=40, batch_size=60, seed=0)
    model, log = pretrain(tiny_graph, config,
                          TextEncoderConfig(layers=1, width=32, heads=2, max_seq_len=16),
                          GraphEncoderConfig(hidden_dim=32))
    return model, log


@pytest.fixture(scope="session")
def tiny_embeddings(tiny_graph, tiny_model):
    model, _ = tiny_model
    with torch.no_grad():
        node_embs = model.encode_nodes(tiny_graph)
        text_embs = model.encode_texts(tiny_graph.texts)
    return node_embs, text_embs


def rel_error(a, b, eps=1e-12):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), eps)
    return float(np.linalg.norm(a - b) / denom)


def finite_difference_check(loss_fn, params, step=1e-5, max_coords=64, seed=0,
                            tol=1e-4):
    """Compare autograd gradients of ``loss_fn()`` against central differences.

    ``params`` maps names to float64 leaf tensors that ``loss_fn`` closes
    over. Tensors larger than ``max_coords`` entries are checked on a seeded
    random coordinate subset. Returns {name: relative error}.
    """
    for p in params.values():
        p.requires_grad_(True)
        p.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        grad = p.grad.detach().clone().reshape(-1)
        flat = p.detach().reshape(-1)
        n = flat.numel()
        coords = (np.arange(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        fd, an = [], []
        for c in coords:
            c = int(c)
            original = float(flat[c])
            with torch.no_grad():
                flat[c] = original + step
            up = float(loss_fn().detach())
            with torch.no_grad():
                flat[c] = original - step
            down = float(loss_fn().detach())
            with torch.no_grad():
                flat[c] = original
            fd.append((up - down) / (2 * step))
            an.append(float(grad[c]))
        errors[name] = rel_error(np.array(fd), np.array(an))
        assert errors[name] <= tol, f"{name}: FD mismatch {errors[name]:.3e} > {tol}"
    return errors
