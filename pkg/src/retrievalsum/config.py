"""Run configuration: every tunable of the pipeline in one flat dataclass."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0

    # corpus
    vocab_cap: int = 8000
    doc_len: int = 1024
    exemplar_budget: int = 768
    exemplar_len: int = 64
    max_target: int = 128

    # retriever
    tau: float = 0.1
    heads: int = 16
    e: int = 5
    pool_cap: int = 100
    n_pos: int = 8
    n_neg: int = 16
    salient_sentences: int = 3
    retriever_d: int = 64
    retriever_layers: int = 2
    retriever_attn_heads: int = 4
    retriever_dropout: float = 0.1
    retriever_epochs: int = 2
    retriever_batch: int = 16
    retriever_lr: float = 1e-4
    retriever_warmup: int = 100
    retriever_fraction: float = 1.0

    # summarizer
    n_tags: int = 32
    summarizer_d: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    summarizer_attn_heads: int = 4
    summarizer_dropout: float = 0.1
    summarizer_epochs: int = 5
    summarizer_batch: int = 4
    summarizer_lr: float = 1e-4
    summarizer_warmup: int = 100
    tag_position: str = "output"
    use_tags: bool = True

    # decoding
    beam: int = 4
    l_s: int = 4
    interval: int = 6
    lam: float = 1.0
    credit_variant: str = "r1"
    credit_attention: str = "current"
    decode_max_len: int = 128

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.vocab_cap <= 6:
            problems.append("vocab_cap must exceed the 6 reserved ids")
        for name in ("doc_len", "exemplar_len", "max_target", "e", "pool_cap", "n_pos", "salient_sentences",
                     "heads", "interval", "beam", "n_tags", "retriever_batch", "summarizer_batch"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("exemplar_budget", "n_neg", "l_s", "retriever_epochs", "summarizer_epochs"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.tau <= 0:
            problems.append("tau must be > 0")
        if self.lam < 0:
            problems.append("lam must be >= 0")
        if self.retriever_d % self.heads:
            problems.append(f"retriever_d={self.retriever_d} not divisible by heads={self.heads}")
        if self.retriever_d % self.retriever_attn_heads:
            problems.append("retriever_d not divisible by retriever_attn_heads")
        if self.summarizer_d % self.summarizer_attn_heads:
            problems.append("summarizer_d not divisible by summarizer_attn_heads")
        if not 0 < self.retriever_fraction <= 1:
            problems.append("retriever_fraction must be in (0, 1]")
        if self.tag_position not in ("output", "input"):
            problems.append("tag_position must be 'output' or 'input'")
        if self.credit_variant not in ("r1", "avg"):
            problems.append("credit_variant must be 'r1' or 'avg'")
        if self.credit_attention not in ("current", "all"):
            problems.append("credit_attention must be 'current' or 'all'")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def update(self, **overrides) -> "RunConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)

    @classmethod
    def from_file(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        """Read ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
        base = base or cls()
        types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (s.strip() for s in line.partition("="))
            if not sep or key not in types:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value' with a known key, got {raw!r}")
            values[key] = _coerce(val, types[key], f"{path}:{lineno}")
        return base.update(**values)


def _coerce(val: str, typ: type, where: str):
    try:
        if typ is bool:
            if val.lower() in ("1", "true", "yes", "on"):
                return True
            if val.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
        return typ(val)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {val!r} as {typ.__name__}") from None
