"""Checkpoint container: JSON header plus a raw little-endian float32 blob.

Layout: 8-byte little-endian header length, UTF-8 JSON header, tensor blob.
The header carries the schema version, training-stage tag, a config echo,
named tensor records (name, shape, offset, size), and the SHA-256 digest of
the blob. Loading verifies the digest and refuses unknown schema versions.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .encoders import GraphEncoderConfig, PretrainedModel, TextEncoderConfig, Vocabulary
from .errors import CheckpointError
from .prompt import ContinuousPrompt
from .ubcg import UbcgConfig, UbcgModel

SCHEMA_VERSION = 1
STAGES = ("pretrained", "ubcg", "tuned")


@dataclass(frozen=True)
class Checkpoint:
    schema_version: int
    stage: str
    config: dict
    tensors: dict[str, np.ndarray]
    extra: dict
    digest: str


def save_checkpoint(path, stage: str, tensors: dict, config: dict,
                    extra: dict | None = None) -> str:
    """Write named float32 arrays; returns the blob digest."""
    if stage not in STAGES:
        raise CheckpointError(f"unknown stage {stage!r}, expected one of {STAGES}")
    arrays = {}
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        arrays[name] = np.asarray(arr, dtype="<f4", order="C")  # keeps 0-d shapes intact

    blob = b""
    records = []
    for name in sorted(arrays):
        raw = arrays[name].tobytes()
        records.append({"name": name, "shape": list(arrays[name].shape),
                        "offset": len(blob), "size": len(raw)})
        blob += raw
    digest = hashlib.sha256(blob).hexdigest()
    header = json.dumps({
        "schema_version": SCHEMA_VERSION,
        "stage": stage,
        "config": config,
        "extra": extra or {},
        "digest": digest,
        "tensors": records,
    }, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(blob)
    return digest


def load_checkpoint(path) -> Checkpoint:
    """Read and verify a checkpoint written by :func:`save_checkpoint`."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if len(data) < 8:
        raise CheckpointError(f"{p}: truncated checkpoint")
    header_len = int.from_bytes(data[:8], "little")
    if len(data) < 8 + header_len:
        raise CheckpointError(f"{p}: truncated header")
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{p}: unreadable header ({exc})") from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(
            f"{p}: schema version {header.get('schema_version')} unsupported "
            f"(this build reads version {SCHEMA_VERSION})")
    blob = data[8 + header_len:]
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header["digest"]:
        raise CheckpointError(f"{p}: digest mismatch, checkpoint is corrupt")
    tensors = {}
    for rec in header["tensors"]:
        raw = blob[rec["offset"]:rec["offset"] + rec["size"]]
        if len(raw) != rec["size"]:
            raise CheckpointError(f"{p}: tensor {rec['name']!r} extends past blob end")
        tensors[rec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(rec["shape"]).copy()
    return Checkpoint(
        schema_version=header["schema_version"],
        stage=header["stage"],
        config=header["config"],
        tensors=tensors,
        extra=header.get("extra", {}),
        digest=header["digest"],
    )


def _load_state(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    module.load_state_dict(state)


def save_pretrained(path, model: PretrainedModel) -> str:
    config = {
        "text_encoder": asdict(model.text_encoder.config),
        "graph_encoder": asdict(model.graph_encoder.config),
        "feature_dim": model.graph_encoder.weights[0].in_features,
    }
    tensors = {name: param for name, param in model.state_dict().items()}
    return save_checkpoint(path, "pretrained", tensors, config,
                           extra={"vocab": model.vocab.token_to_id})


def load_pretrained(path) -> PretrainedModel:
    ckpt = load_checkpoint(path)
    if ckpt.stage != "pretrained":
        raise CheckpointError(f"{path}: stage {ckpt.stage!r}, expected 'pretrained'")
    vocab = Vocabulary({str(k): int(v) for k, v in ckpt.extra["vocab"].items()})
    model = PretrainedModel(
        vocab,
        TextEncoderConfig(**ckpt.config["text_encoder"]),
        GraphEncoderConfig(**ckpt.config["graph_encoder"]),
        feature_dim=int(ckpt.config["feature_dim"]),
    )
    _load_state(model, ckpt.tensors)
    model.eval()
    return model


def save_ubcg(path, model: UbcgModel) -> str:
    config = asdict(model.config)
    config["enc_hidden"] = list(config["enc_hidden"])
    config["dec_hidden"] = list(config["dec_hidden"])
    tensors = {name: param for name, param in model.state_dict().items()}
    return save_checkpoint(path, "ubcg", tensors, config)


def load_ubcg(path) -> UbcgModel:
    ckpt = load_checkpoint(path)
    if ckpt.stage != "ubcg":
        raise CheckpointError(f"{path}: stage {ckpt.stage!r}, expected 'ubcg'")
    cfg = dict(ckpt.config)
    cfg["enc_hidden"] = tuple(cfg["enc_hidden"])
    cfg["dec_hidden"] = tuple(cfg["dec_hidden"])
    model = UbcgModel(UbcgConfig(**cfg))
    _load_state(model, ckpt.tensors)
    model.eval()
    return model


def save_prompt(path, prompt: ContinuousPrompt) -> str:
    return save_checkpoint(
        path, "tuned", {"context": prompt.context},
        config={"num_context": prompt.num_context},
        extra={"class_names": list(prompt.class_names),
               "class_token_ids": [list(ids) for ids in prompt.class_token_ids]})


def load_prompt(path) -> ContinuousPrompt:
    ckpt = load_checkpoint(path)
    if ckpt.stage != "tuned":
        raise CheckpointError(f"{path}: stage {ckpt.stage!r}, expected 'tuned'")
    return ContinuousPrompt(
        context=torch.from_numpy(ckpt.tensors["context"]),
        class_token_ids=tuple(tuple(int(i) for i in ids)
                              for ids in ckpt.extra["class_token_ids"]),
        class_names=tuple(str(n) for n in ckpt.extra["class_names"]),
    )
