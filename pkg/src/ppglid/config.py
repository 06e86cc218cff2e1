"""Flat ``key = value`` run configuration.

Keys use dotted section prefixes (``encoder.hidden_dim = 256``); lines
starting with ``#`` are comments.  Command-line flags override config
keys.  Builders below turn a parsed config into the typed per-module
configs, naming the offending key on any bad value.
"""

from __future__ import annotations

import os

from .encoder import EncoderConfig
from .errors import ConfigError
from .heads import HeadConfig
from .synth import SynthConfig
from .training import TrainConfig

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


class Settings:
    def __init__(self, values: dict[str, str], base_dir: str = "."):
        self.values = values
        self.base_dir = base_dir
        self.used: set[str] = set()

    def _raw(self, key: str, default):
        self.used.add(key)
        if key in self.values:
            return self.values[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_str(self, key: str, default=None) -> str | None:
        v = self._raw(key, default)
        return v if v is None else str(v)

    def get_int(self, key: str, default=None) -> int | None:
        v = self._raw(key, default)
        if v is None or isinstance(v, int):
            return v
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be an integer, got {v!r}") from None

    def get_float(self, key: str, default=None) -> float | None:
        v = self._raw(key, default)
        if v is None or isinstance(v, float):
            return v
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be a number, got {v!r}") from None

    def get_bool(self, key: str, default=None) -> bool | None:
        v = self._raw(key, default)
        if v is None or isinstance(v, bool):
            return v
        if v.lower() not in _BOOL:
            raise ConfigError(f"config key {key!r} must be true/false, got {v!r}")
        return _BOOL[v.lower()]

    def get_choice(self, key: str, choices: tuple[str, ...], default=None) -> str:
        v = self.get_str(key, default)
        if v not in choices:
            raise ConfigError(f"config key {key!r} must be one of {choices}, got {v!r}")
        return v

    def get_path(self, key: str, default=None) -> str | None:
        v = self.get_str(key, default)
        if v is None:
            return None
        return v if os.path.isabs(v) else os.path.join(self.base_dir, v)


_REQUIRED = object()
REQUIRED = _REQUIRED


def parse_config(text: str, base_dir: str = ".") -> Settings:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value
    return Settings(values, base_dir)


def load_config(path: str | os.PathLike) -> Settings:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), base_dir=os.path.dirname(os.fspath(path)) or ".")


def synth_config(s: Settings, seed: int) -> SynthConfig:
    return SynthConfig(
        num_languages=s.get_int("synth.num_languages", 2),
        num_phones=s.get_int("synth.num_phones", 40),
        train_utterances=s.get_int("synth.train_utterances", 200),
        dev_utterances=s.get_int("synth.dev_utterances", 50),
        test_utterances=s.get_int("synth.test_utterances", 50),
        utterance_frames=s.get_int("synth.utterance_frames", 100),
        kappa=s.get_float("synth.kappa", 5.0),
        chop_seconds=s.get_float("synth.chop_seconds", 1.0),
        frame_shift_ms=s.get_float("synth.frame_shift_ms", 10.0),
        code_switch_prob=s.get_float("synth.code_switch_prob", 0.0),
        transition_concentration=s.get_float("synth.transition_concentration", 0.1),
        dur_min=s.get_int("synth.dur_min", 3),
        dur_max=s.get_int("synth.dur_max", 10),
        seed=seed,
    )


def encoder_config(s: Settings, seed: int, ppg_dim: int | None, phone_vocab_size: int | None) -> EncoderConfig:
    return EncoderConfig(
        hidden_dim=s.get_int("encoder.hidden_dim", 256),
        num_layers=s.get_int("encoder.num_layers", 4),
        num_heads=s.get_int("encoder.num_heads", 4),
        ffn_dim=s.get_int("encoder.ffn_dim", 1024),
        max_sequence_length=s.get_int("encoder.max_len", 256),
        dropout=s.get_float("encoder.dropout", 0.1),
        ppg_dim=ppg_dim,
        phone_vocab_size=phone_vocab_size,
        seed=seed,
    )


def head_config(s: Settings, num_classes: int, input_dim: int) -> HeadConfig:
    return HeadConfig(
        kind=s.get_choice("head.kind", ("cnn", "lstm", "dpcnn", "rcnn"), "rcnn"),
        num_classes=num_classes,
        input_dim=input_dim,
        cnn_filters=s.get_int("head.cnn_filters", 200),
        cnn_kernel_width=s.get_int("head.cnn_kernel_width", 3),
        lstm_hidden=s.get_int("head.lstm_hidden", 300),
        lstm_layers=s.get_int("head.lstm_layers", 2),
        dpcnn_channels=s.get_int("head.dpcnn_channels", 250),
        dpcnn_kernel_width=s.get_int("head.dpcnn_kernel_width", 3),
        dpcnn_blocks=s.get_int("head.dpcnn_blocks", 7),
        rcnn_hidden=s.get_int("head.rcnn_hidden", 300),
        rcnn_latent=s.get_int("head.rcnn_latent", 300),
    )


def train_config(s: Settings, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=s.get_float("train.learning_rate", 5e-5),
        beta1=s.get_float("train.beta1", 0.9),
        beta2=s.get_float("train.beta2", 0.99),
        weight_decay=s.get_float("train.weight_decay", 0.01),
        warmup_fraction=s.get_float("train.warmup_fraction", 0.1),
        epochs=s.get_int("train.epochs", 200),
        grad_accumulation_steps=s.get_int("train.grad_accumulation_steps", 1),
        patience=s.get_int("train.patience", 50),
        batch_size=s.get_int("train.batch_size", 32),
        seed=seed,
        eval_every=s.get_int("train.eval_every", 0),
    )
