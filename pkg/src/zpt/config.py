"""Run configuration: defaults, TOML loading, and dict echoes for reports."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .encoders import GraphEncoderConfig, TextEncoderConfig
from .errors import ConfigError
from .pretrain import PretrainConfig
from .prompt import HybridConfig
from .tag import SyntheticTagSpec
from .ubcg import UbcgConfig

# Class topic tokens sit at the front of the vocabulary; the synthetic
# generator assigns them to classes in order and uses the remainder as filler.
DEFAULT_CLASS_TOKENS = (
    "theory", "proof",
    "systems", "kernel",
    "vision", "image",
    "language", "grammar",
    "robotics", "motion",
)
DEFAULT_FILLER_TOKENS = (
    "a", "an", "the", "of", "paper", "research", "study", "about", "method",
    "results", "we", "show", "new", "analysis", "data", "model", "approach",
    "based", "using", "with",
)
DEFAULT_VOCAB = DEFAULT_CLASS_TOKENS + DEFAULT_FILLER_TOKENS


@dataclass(frozen=True)
class HarnessConfig:
    n_way: int = 5
    num_tasks: int = 10
    queries_per_class: int = 20
    samples_per_class: int = 200
    num_context: int = 4
    template: str = "a paper of {class name}"
    seed: int = 0

    def validate(self) -> None:
        if self.n_way < 2:
            raise ConfigError("n_way must be >= 2")
        if min(self.num_tasks, self.queries_per_class, self.samples_per_class) < 1:
            raise ConfigError("num_tasks, queries_per_class, samples_per_class must be >= 1")
        if self.num_context < 0:
            raise ConfigError("num_context must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    data: SyntheticTagSpec
    pretrain: PretrainConfig
    ubcg: UbcgConfig
    hybrid: HybridConfig
    harness: HarnessConfig
    text_encoder: TextEncoderConfig
    graph_encoder: GraphEncoderConfig

    def to_dict(self) -> dict:
        echo = asdict(self)
        echo["data"]["vocab"] = list(echo["data"]["vocab"])
        echo["ubcg"]["enc_hidden"] = list(echo["ubcg"]["enc_hidden"])
        echo["ubcg"]["dec_hidden"] = list(echo["ubcg"]["dec_hidden"])
        return echo


def default_run_config(seed: int = 7) -> RunConfig:
    return RunConfig(
        seed=seed,
        data=SyntheticTagSpec(
            num_classes=5,
            nodes_per_class=100,
            vocab=DEFAULT_VOCAB,
            tokens_per_class=2,
            text_len=4,
            intra_edge_prob=0.05,
            inter_edge_prob=0.002,
            feature_dim=len(DEFAULT_VOCAB),
            feature_noise=0.01,
            seed=seed,
            topic_prob=0.5,
        ),
        pretrain=PretrainConfig(seed=seed),
        ubcg=UbcgConfig(seed=seed),
        hybrid=HybridConfig(seed=seed),
        harness=HarnessConfig(seed=seed),
        text_encoder=TextEncoderConfig(),
        graph_encoder=GraphEncoderConfig(),
    )


_SECTIONS = {
    "data": SyntheticTagSpec,
    "pretrain": PretrainConfig,
    "ubcg": UbcgConfig,
    "hybrid": HybridConfig,
    "harness": HarnessConfig,
    "text_encoder": TextEncoderConfig,
    "graph_encoder": GraphEncoderConfig,
}
_TUPLE_FIELDS = {("data", "vocab"), ("ubcg", "enc_hidden"), ("ubcg", "dec_hidden")}


def _apply_section(base, section: str, values: dict):
    known = {f.name for f in fields(base)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(unknown)}")
    coerced = {}
    for key, value in values.items():
        if (section, key) in _TUPLE_FIELDS:
            value = tuple(value)
        coerced[key] = value
    return replace(base, **coerced)


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    """Parse a TOML run config over the defaults; unknown keys are rejected.

    ``seed_override`` (the CLI ``--seed`` flag) replaces the global seed and
    every per-section seed.
    """
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    unknown = set(raw) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    config = default_run_config(seed=int(raw.get("seed", 7)))
    for section, values in raw.items():
        if section == "seed":
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        config = replace(config, **{section: _apply_section(
            getattr(config, section), section, values)})
    if seed_override is not None:
        config = override_seed(config, seed_override)
    validate_run_config(config)
    return config


def override_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(
        config,
        seed=seed,
        data=replace(config.data, seed=seed),
        pretrain=replace(config.pretrain, seed=seed),
        ubcg=replace(config.ubcg, seed=seed),
        hybrid=replace(config.hybrid, seed=seed),
        harness=replace(config.harness, seed=seed),
    )


def validate_run_config(config: RunConfig) -> None:
    config.data.validate()
    config.pretrain.validate()
    config.ubcg.validate()
    config.hybrid.validate()
    config.harness.validate()
    config.text_encoder.validate()
    config.graph_encoder.validate()
