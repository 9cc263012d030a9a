import numpy as np
import pytest
import torch

from zpt.checkpoint import (Checkpoint, load_checkpoint, load_pretrained, load_prompt,
                            load_ubcg, save_checkpoint, save_pretrained, save_prompt,
                            save_ubcg)
from zpt.errors import CheckpointError
from zpt.prompt import init_prompt
from zpt.ubcg import UbcgConfig, UbcgModel


class TestRawFormat:
    def arrays(self):
        rng = np.random.default_rng(0)
        return {"w": rng.normal(size=(3, 4)).astype(np.float32),
                "b": rng.normal(size=(4,)).astype(np.float32),
                "scalar": np.float32(2.5)}

    def test_round_trip_bit_exact(self, tmp_path):
        path = tmp_path / "ck.bin"
        tensors = self.arrays()
        digest = save_checkpoint(path, "pretrained", tensors, {"k": 1}, {"note": "x"})
        loaded = load_checkpoint(path)
        assert loaded.digest == digest
        assert loaded.stage == "pretrained"
        assert loaded.config == {"k": 1}
        assert loaded.extra == {"note": "x"}
        for name, arr in tensors.items():
            assert np.array_equal(loaded.tensors[name], np.asarray(arr, dtype=np.float32))

    def test_digest_detects_corruption(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_checkpoint(path, "ubcg", self.arrays(), {})
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="digest"):
            load_checkpoint(path)

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_checkpoint(path, "ubcg", self.arrays(), {})
        raw = path.read_bytes()
        header_len = int.from_bytes(raw[:8], "little")
        header = raw[8:8 + header_len].replace(b'"schema_version": 1',
                                               b'"schema_version": 9')
        path.write_bytes(len(header).to_bytes(8, "little") + header + raw[8 + header_len:])
        with pytest.raises(CheckpointError, match="schema version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.bin")

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_checkpoint(path, "ubcg", self.arrays(), {})
        path.write_bytes(path.read_bytes()[:4])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_identical_saves_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(a, "ubcg", self.arrays(), {"c": [1, 2]})
        save_checkpoint(b, "ubcg", self.arrays(), {"c": [1, 2]})
        assert a.read_bytes() == b.read_bytes()


class TestModelCheckpoints:
    def test_pretrained_round_trip(self, tmp_path, tiny_model):
        model, _ = tiny_model
        path = tmp_path / "pre.bin"
        save_pretrained(path, model)
        again = load_pretrained(path)
        for (name_a, pa), (name_b, pb) in zip(model.state_dict().items(),
                                              again.state_dict().items()):
            assert name_a == name_b
            assert torch.equal(pa, pb), name_a
        assert again.vocab.token_to_id == model.vocab.token_to_id

    def test_ubcg_round_trip(self, tmp_path):
        torch.manual_seed(0)
        model = UbcgModel(UbcgConfig(latent_dim=4))
        path = tmp_path / "gen.bin"
        save_ubcg(path, model)
        again = load_ubcg(path)
        assert again.config == model.config
        for pa, pb in zip(model.parameters(), again.parameters()):
            assert torch.equal(pa, pb)

    def test_stage_mismatch_rejected(self, tmp_path, tiny_model):
        model, _ = tiny_model
        path = tmp_path / "pre.bin"
        save_pretrained(path, model)
        with pytest.raises(CheckpointError, match="stage"):
            load_ubcg(path)

    def test_prompt_round_trip(self, tmp_path, tiny_model):
        model, _ = tiny_model
        prompt = init_prompt(("theory", "systems"), 3, model, seed=1)
        path = tmp_path / "prompt.bin"
        save_prompt(path, prompt)
        again = load_prompt(path)
        assert torch.equal(again.context, prompt.context)
        assert again.class_token_ids == prompt.class_token_ids
        assert again.class_names == prompt.class_names
