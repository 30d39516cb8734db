"""Run configuration: defaults, validation, the `key = value` config file
format, and the fingerprint string stamped into evaluation reports.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .scoring import SCORING_MODES

CONTRASTIVE_VARIANTS = ("cluster", "supervised-class")
GATE_MODES = ("expected", "hard")


@dataclass
class TrainConfig:
    seed: int
    max_statements: int = 100
    embed_dim: int = 150
    vocab_max: int = 10000
    kernel_size: int = 3
    selector_hidden: tuple = (100, 100, 100)
    classifier_hidden: tuple = (300, 100)
    dropout_retain: float = 0.8
    relax_temp: float = 0.5
    contrastive_temp: float = 0.5
    contrastive_weight: float = 0.1
    clusters: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 10
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    stmt_token_cap: int = 64
    kmeans_iters: int = 10
    scoring_mode: str = "pooled-d"
    contrastive_variant: str = "cluster"
    gate_mode: str = "expected"
    ablate_cd: bool = False

    def __post_init__(self):
        self.selector_hidden = tuple(int(w) for w in self.selector_hidden)
        self.classifier_hidden = tuple(int(w) for w in self.classifier_hidden)
        self.validate()

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        positive_ints = ("max_statements", "embed_dim", "vocab_max",
                         "kernel_size", "clusters", "batch_size", "epochs",
                         "stmt_token_cap", "kmeans_iters")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("relax_temp", "contrastive_temp", "learning_rate",
                     "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.contrastive_weight < 0:
            raise ValueError("contrastive_weight cannot be negative")
        if not 0.0 < self.dropout_retain <= 1.0:
            raise ValueError("dropout_retain must lie in (0, 1]")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly inside (0, 1)")
        if self.scoring_mode not in SCORING_MODES:
            raise ValueError(f"scoring_mode must be one of {SCORING_MODES}")
        if self.contrastive_variant not in CONTRASTIVE_VARIANTS:
            raise ValueError(
                f"contrastive_variant must be one of {CONTRASTIVE_VARIANTS}")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}")
        if any(w < 1 for w in self.selector_hidden + self.classifier_hidden):
            raise ValueError("hidden layer widths must be positive")

    def fingerprint(self) -> str:
        """Semicolon-joined key=value pairs in field order; commas are
        avoided so the string embeds cleanly into report tables."""
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = "x".join(str(w) for w in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            parts.append(f"{f.name}={v}")
        return ";".join(parts)

    def render(self) -> str:
        """The config file form: one key = value line per field."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(w) for w in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key not in _FIELD_TYPES:
        raise ValueError(f"unknown config key '{key}'")
    if key in ("selector_hidden", "classifier_hidden"):
        return tuple(int(part) for part in raw.split(",") if part.strip())
    if key == "ablate_cd":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot read boolean from '{raw}'")
    if key in ("scoring_mode", "contrastive_variant", "gate_mode"):
        return raw
    if key in ("seed", "max_statements", "embed_dim", "vocab_max",
               "kernel_size", "clusters", "batch_size", "epochs",
               "stmt_token_cap", "kmeans_iters"):
        return int(raw)
    return float(raw)


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines (blank lines and # comments ignored) into
    a keyword dict for TrainConfig."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    return values


def load_config(path: str | None = None, overrides: dict | None = None) -> TrainConfig:
    """Config file values, then explicit overrides on top. A seed must come
    from one of the two."""
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key '{key}'")
        values[key] = value
    if "seed" not in values:
        raise ValueError("a seed is required (config file or --seed)")
    return TrainConfig(**values)
