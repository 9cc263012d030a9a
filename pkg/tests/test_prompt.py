import math

import numpy as np
import pytest
import torch

from zpt.errors import ConfigError
from zpt.prompt import (HybridConfig, class_weights, classify, discrete_class_weights,
                        hybrid_probability, init_prompt, tune_prompt)

from conftest import finite_difference_check


@pytest.fixture(scope="module")
def model(tiny_model):
    return tiny_model[0]


CLASS_NAMES = ("theory", "systems", "vision")


class TestInitPrompt:
    def test_seeded_init(self, model):
        a = init_prompt(CLASS_NAMES, 4, model, seed=3)
        b = init_prompt(CLASS_NAMES, 4, model, seed=3)
        assert torch.equal(a.context, b.context)
        assert init_prompt(CLASS_NAMES, 4, model, seed=4).context.ne(a.context).any()

    def test_class_token_count(self, model):
        prompt = init_prompt(CLASS_NAMES + ("language", "robotics"), 2, model)
        assert prompt.num_classes == 5
        assert all(len(ids) == 1 for ids in prompt.class_token_ids)

    def test_context_scale(self, model):
        prompt = init_prompt(CLASS_NAMES, 12, model, seed=0)
        std = float(prompt.context.std())
        assert 0.01 < std < 0.03

    def test_length_budget_enforced(self, model):
        budget = model.text_encoder.config.max_seq_len - 2
        with pytest.raises(ConfigError, match="budget"):
            init_prompt(CLASS_NAMES, budget, model)

    def test_context_template_applied(self, model):
        bare = init_prompt(CLASS_NAMES, 0, model)
        wrapped = init_prompt(CLASS_NAMES, 0, model,
                              context_template="a paper of {class name}")
        assert all(len(w) == len(b) + 3
                   for w, b in zip(wrapped.class_token_ids, bare.class_token_ids))


class TestClassWeights:
    def test_shape_and_determinism(self, model):
        prompt = init_prompt(CLASS_NAMES, 4, model, seed=0)
        with torch.no_grad():
            w1 = class_weights(prompt, model)
            w2 = class_weights(prompt, model)
        assert w1.shape == (3, 128)
        assert torch.equal(w1, w2)

    def test_zero_context_matches_encode_text(self, model):
        # equivalence oracle: with no context vectors the continuous path must
        # reproduce the ordinary tokenize-and-encode path
        prompt = init_prompt(CLASS_NAMES, 0, model)
        with torch.no_grad():
            w = class_weights(prompt, model)
            reference = model.encode_texts(list(CLASS_NAMES))
        assert float((w - reference).abs().max()) < 1e-6

    def test_discrete_template_slot_required(self, model):
        with pytest.raises(ConfigError, match="exactly once"):
            discrete_class_weights("no slot here", CLASS_NAMES, model)

    def test_discrete_bare_template_is_encode_text(self, model):
        with torch.no_grad():
            w = discrete_class_weights("{class name}", CLASS_NAMES, model)
            reference = model.encode_texts(list(CLASS_NAMES))
        assert torch.allclose(w, reference, atol=1e-6)

    def test_distinct_templates_distinct_weights(self, model):
        with torch.no_grad():
            a = discrete_class_weights("a {class name}", CLASS_NAMES, model)
            b = discrete_class_weights("a paper of {class name}", CLASS_NAMES, model)
        assert float((a - b).abs().max()) > 1e-4


def unit_rows(*rows):
    m = torch.tensor(rows, dtype=torch.float32)
    return m / m.norm(dim=1, keepdim=True)


class TestHybridProbability:
    def worked_example(self):
        # cosines against w1 = e1, w2 = e2 are just the first two coordinates
        weights = torch.eye(2, 4)
        v = torch.tensor([0.8, 0.2, math.sqrt(1 - 0.68), 0.0])
        t = torch.tensor([0.1, 0.9, 0.0, math.sqrt(1 - 0.82)])
        return weights, v, t

    def test_worked_example_frozen_values(self):
        weights, v, t = self.worked_example()
        probs = hybrid_probability(weights, v, t, lam=0.5)
        assert probs.shape == (2,)
        assert abs(float(probs[0]) - 0.47784) < 1e-4
        assert abs(float(probs[1]) - 0.52216) < 1e-4

    def test_worked_example_against_numpy_oracle(self):
        weights, v, t = self.worked_example()
        node_cos = np.array([0.8, 0.2])
        text_cos = np.array([0.1, 0.9])
        soft = lambda x: np.exp(x) / np.exp(x).sum()
        expected = 0.5 * soft(node_cos) + 0.5 * soft(text_cos)
        probs = hybrid_probability(weights, v, t, lam=0.5).numpy()
        assert np.allclose(probs, expected, atol=1e-6)

    def test_endpoints_match_single_modality(self):
        gen = torch.Generator().manual_seed(0)
        weights = torch.randn(4, 8, generator=gen)
        v = torch.randn(8, generator=gen)
        t = torch.randn(8, generator=gen)
        node_only = hybrid_probability(weights, v, t, lam=1.0)
        text_only = hybrid_probability(weights, v, t, lam=0.0)
        assert not torch.allclose(node_only, text_only)
        # swapping v and t swaps the endpoints exactly
        assert torch.allclose(node_only, hybrid_probability(weights, t, v, lam=0.0))

    def test_symmetric_cosines_give_uniform(self):
        weights = unit_rows([1.0, 0.0], [0.0, 1.0])
        v = torch.tensor([1.0, 1.0])
        t = torch.tensor([1.0, 1.0])
        probs = hybrid_probability(weights, v, t, lam=0.5)
        assert torch.allclose(probs, torch.tensor([0.5, 0.5], dtype=probs.dtype), atol=1e-7)

    def test_sums_to_one_random(self):
        gen = torch.Generator().manual_seed(1)
        for _ in range(50):
            weights = torch.randn(5, 16, generator=gen)
            v = torch.randn(16, generator=gen)
            t = torch.randn(16, generator=gen)
            lam = float(torch.rand(1, generator=gen))
            probs = hybrid_probability(weights, v, t, lam)
            assert abs(float(probs.sum()) - 1.0) < 1e-9
            assert float(probs.min()) >= 0.0

    def test_linear_in_lam(self):
        gen = torch.Generator().manual_seed(2)
        weights = torch.randn(3, 6, generator=gen)
        v = torch.randn(6, generator=gen)
        t = torch.randn(6, generator=gen)
        p0 = hybrid_probability(weights, v, t, 0.0)
        p1 = hybrid_probability(weights, v, t, 1.0)
        for lam in (0.25, 0.5, 0.75):
            expected = lam * p1 + (1 - lam) * p0
            assert torch.allclose(hybrid_probability(weights, v, t, lam), expected,
                                  atol=1e-7)

    def test_zero_vector_rejected(self):
        weights = torch.eye(2)
        with pytest.raises(ValueError, match="zero-norm"):
            hybrid_probability(weights, torch.zeros(2), torch.ones(2), 0.5)


class TestClassify:
    def test_argmax(self):
        weights = torch.eye(3, 4)
        v = torch.tensor([0.1, 0.9, 0.2, 0.0])
        assert classify(weights, v, v, lam=0.5) == 1

    def test_tie_breaks_low_index(self):
        weights = unit_rows([1.0, 0.0], [1.0, 0.0])  # identical classes
        v = torch.tensor([1.0, 0.5])
        assert classify(weights, v, v, lam=0.5) == 0

    def test_scale_invariance(self):
        gen = torch.Generator().manual_seed(3)
        weights = torch.randn(4, 8, generator=gen)
        v = torch.randn(8, generator=gen)
        t = torch.randn(8, generator=gen)
        base = classify(weights, v, t, 0.5)
        assert classify(weights, 3 * v, t, 0.5) == base
        assert classify(weights, v, 5 * t, 0.5) == base
        scaled = weights.clone()
        scaled[base] *= 7.0
        assert classify(scaled, v, t, 0.5) == base


class TestTunePrompt:
    def make_samples(self, model, per_class=8, seed=0):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            anchors = model.encode_texts(list(CLASS_NAMES))
        v, t, y = [], [], []
        for c in range(len(CLASS_NAMES)):
            v.append(anchors[c] + 0.05 * torch.randn(per_class, 128, generator=gen))
            t.append(anchors[c] + 0.05 * torch.randn(per_class, 128, generator=gen))
            y.extend([c] * per_class)
        return torch.cat(v), torch.cat(t), np.array(y)

    def test_loss_decreases(self, model):
        v, t, y = self.make_samples(model)
        prompt = init_prompt(CLASS_NAMES, 4, model, seed=0)
        _, log = tune_prompt(prompt, v, t, y, model,
                             HybridConfig(learning_rate=5e-2, epochs=8, batch_size=12))
        assert log[-1]["loss"] < log[0]["loss"]

    def test_only_context_changes(self, model):
        v, t, y = self.make_samples(model)
        prompt = init_prompt(CLASS_NAMES, 4, model, seed=0)
        before = {name: p.detach().clone() for name, p in model.named_parameters()}
        tuned, _ = tune_prompt(prompt, v, t, y, model,
                               HybridConfig(learning_rate=1e-2, epochs=2, batch_size=12))
        assert tuned.class_token_ids == prompt.class_token_ids
        assert float((tuned.context - prompt.context).abs().max()) > 0
        for name, p in model.named_parameters():
            assert torch.equal(before[name], p), f"{name} changed during tuning"

    def test_seeded_determinism(self, model):
        v, t, y = self.make_samples(model)
        prompt = init_prompt(CLASS_NAMES, 4, model, seed=0)
        cfg = HybridConfig(learning_rate=1e-2, epochs=2, batch_size=12, seed=5)
        a, _ = tune_prompt(prompt, v, t, y, model, cfg)
        b, _ = tune_prompt(prompt, v, t, y, model, cfg)
        assert torch.equal(a.context, b.context)

    def test_missing_class_rejected(self, model):
        v, t, y = self.make_samples(model)
        keep = y != 2
        prompt = init_prompt(CLASS_NAMES, 4, model, seed=0)
        with pytest.raises(ConfigError, match="zero samples"):
            tune_prompt(prompt, v[keep], t[keep], y[keep], model, HybridConfig())

    def test_gradient_matches_finite_differences(self, model):
        # micro-task: 2 classes, tiny sample bank, float64 throughout
        names = CLASS_NAMES[:2]
        double_model = type(model)(model.vocab, model.text_encoder.config,
                                   model.graph_encoder.config,
                                   model.graph_encoder.weights[0].in_features)
        double_model.load_state_dict(model.state_dict())
        double_model = double_model.double().eval()
        gen = torch.Generator().manual_seed(7)
        v = torch.randn(6, 128, generator=gen, dtype=torch.float64)
        t = torch.randn(6, 128, generator=gen, dtype=torch.float64)
        y = torch.tensor([0, 0, 0, 1, 1, 1])
        prompt = init_prompt(names, 3, double_model, seed=1)
        context = prompt.context.double()

        def loss_fn():
            from dataclasses import replace
            weights = class_weights(replace(prompt, context=context), double_model)
            probs = hybrid_probability(weights, v, t, lam=0.5)
            return -torch.log(probs[torch.arange(6), y]).mean()

        for p in double_model.parameters():
            p.requires_grad_(False)
        finite_difference_check(loss_fn, {"context": context}, max_coords=48)
