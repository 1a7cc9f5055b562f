"""Single-file JSON configuration with documented defaults.

Every field is optional in the file; command-line flags override file
values. Secrets never live in the file: the model auth token is read from
the environment variable named by ``model.auth_env``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .answers import EqConfig
from .dataset import DEFAULT_CONTEXT_LENGTH, DEFAULT_SAMPLES
from .executor import DEFAULT_MAX_CHARS, DEFAULT_TIMEOUT_MS, HANDSHAKE_TIMEOUT_S
from .format import DEFAULT_TOKENS, SpecialTokenSet
from .orchestrator import GenerationConfig


@dataclass
class ModelEndpointConfig:
    base_url: str = "http://127.0.0.1:8000/v1/completions"
    model_name: str | None = None
    auth_env: str | None = None
    temperature: float = 0.0

    def auth_token(self) -> str | None:
        return os.environ.get(self.auth_env) if self.auth_env else None


@dataclass
class ExecutorConfig:
    kernel_command: list[str] = field(
        default_factory=lambda: ["node", "kernel/dist/kernel.js"]
    )
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_chars: int = DEFAULT_MAX_CHARS
    handshake_timeout_s: float = HANDSHAKE_TIMEOUT_S


@dataclass
class DatasetConfig:
    n_samples: int = DEFAULT_SAMPLES
    context_length: int = DEFAULT_CONTEXT_LENGTH


@dataclass
class AppConfig:
    model: ModelEndpointConfig = field(default_factory=ModelEndpointConfig)
    tokens: SpecialTokenSet = DEFAULT_TOKENS
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    equivalence: EqConfig = field(default_factory=EqConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)


class ConfigError(Exception):
    pass


def load_config(path: str | Path | None) -> AppConfig:
    """Defaults when ``path`` is None, otherwise defaults overlaid with the
    JSON object found at ``path``."""
    cfg = AppConfig()
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")

    model = raw.get("model", {})
    cfg.model = ModelEndpointConfig(
        base_url=model.get("base_url", cfg.model.base_url),
        model_name=model.get("name", cfg.model.model_name),
        auth_env=model.get("auth_env", cfg.model.auth_env),
        temperature=model.get("temperature", cfg.model.temperature),
    )
    if "tokens" in raw:
        cfg.tokens = SpecialTokenSet.from_dict(raw["tokens"])
    gen = raw.get("generation", {})
    cfg.generation = GenerationConfig(
        max_blocks=gen.get("max_blocks", cfg.generation.max_blocks),
        max_new_tokens_per_block=gen.get(
            "max_new_tokens_per_block", cfg.generation.max_new_tokens_per_block
        ),
    )
    ex = raw.get("executor", {})
    cfg.executor = ExecutorConfig(
        kernel_command=list(ex.get("kernel_command", cfg.executor.kernel_command)),
        timeout_ms=ex.get("timeout_ms", cfg.executor.timeout_ms),
        max_chars=ex.get("max_chars", cfg.executor.max_chars),
        handshake_timeout_s=ex.get("handshake_timeout_s", cfg.executor.handshake_timeout_s),
    )
    eq = raw.get("equivalence", {})
    cfg.equivalence = EqConfig(
        rel_tol=eq.get("rel_tol", cfg.equivalence.rel_tol),
        abs_tol=eq.get("abs_tol", cfg.equivalence.abs_tol),
    )
    ds = raw.get("dataset", {})
    cfg.dataset = DatasetConfig(
        n_samples=ds.get("n_samples", cfg.dataset.n_samples),
        context_length=ds.get("context_length", cfg.dataset.context_length),
    )
    return cfg
