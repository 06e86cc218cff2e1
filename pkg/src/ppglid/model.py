"""Model bundle: encoder + classifier head wired per run mode.

Modes:
  bert_lid  - encoder hidden states feed one of the four deep heads.
  bert_only - encoder CLS state feeds a single linear output layer.
  lid_only  - the encoder is bypassed; a learned P -> H projection of
              the raw vector tokens feeds the chosen head.

Bundles serialize to the named-tensor archive with ``encoder/`` and
``head/`` name prefixes plus a JSON meta block carrying the mode,
embedding, configs, inventory and training step.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch
from torch import nn

from . import archive, ppg
from .encoder import (
    ID_INPUT,
    LAYER_NORM_EPS,
    VECTOR_INPUT,
    EncoderConfig,
    PhoneticEncoder,
    apply_init_,
    load_module_tensors,
    pool_cls,
)
from .errors import ArchiveError, ConfigError, DataError
from .heads import HeadConfig, make_head

RUN_MODES = ("bert_lid", "lid_only", "bert_only")
ARCHIVE_FORMAT = 1


def input_kind_for(embedding: str) -> str:
    return ID_INPUT if embedding == ppg.PHONE_EMB else VECTOR_INPUT


class LidModel(nn.Module):
    def __init__(self, mode: str, embedding: str, enc_cfg: EncoderConfig, head_cfg: HeadConfig):
        super().__init__()
        if mode not in RUN_MODES:
            raise ConfigError(f"mode must be one of {RUN_MODES}, got {mode!r}")
        if embedding not in ppg.MODES:
            raise ConfigError(f"embedding must be one of {ppg.MODES}, got {embedding!r}")
        if mode == "lid_only" and embedding == ppg.PHONE_EMB:
            raise ConfigError("lid_only consumes raw PPG vectors; phone_emb ids have no encoder to read them")
        if head_cfg.input_dim != enc_cfg.hidden_dim:
            raise ConfigError("head.input_dim must equal encoder.hidden_dim")
        self.mode = mode
        self.embedding = embedding
        self.enc_cfg = enc_cfg
        self.head_cfg = head_cfg
        if mode == "lid_only":
            if enc_cfg.ppg_dim is None:
                raise ConfigError("lid_only needs encoder.ppg_dim for its input projection")
            # The projection is layer-normalized so the head sees inputs on
            # the same scale the encoder path would deliver.
            self.head = nn.ModuleDict(
                {
                    "input_proj": nn.Linear(enc_cfg.ppg_dim, enc_cfg.hidden_dim),
                    "input_norm": nn.LayerNorm(enc_cfg.hidden_dim, eps=LAYER_NORM_EPS),
                    "classifier": make_head(head_cfg),
                }
            )
        elif mode == "bert_only":
            self.encoder = PhoneticEncoder(enc_cfg, input_kind_for(embedding))
            self.head = nn.ModuleDict({"output": nn.Linear(enc_cfg.hidden_dim, head_cfg.num_classes)})
        else:
            self.encoder = PhoneticEncoder(enc_cfg, input_kind_for(embedding))
            self.head = nn.ModuleDict({"classifier": make_head(head_cfg)})

    @property
    def num_classes(self) -> int:
        return self.head_cfg.num_classes

    def reset_parameters_(self) -> None:
        apply_init_(self)
        if hasattr(self, "encoder"):
            self.encoder.reset_parameters_()

    def forward(self, content: torch.Tensor, mask: torch.Tensor, training: bool = False) -> torch.Tensor:
        if self.mode == "lid_only":
            if content.dim() != 3:
                raise DataError("lid_only expects vector-mode content")
            x = self.head["input_proj"](content.to(self.head["input_proj"].weight.dtype))
            x = self.head["input_norm"](x)
            return self.head["classifier"](x, mask)
        states, out_mask = self.encoder(content, mask, training=training)
        if self.mode == "bert_only":
            return self.head["output"](pool_cls(states))
        return self.head["classifier"](states, out_mask)


def build_model(
    mode: str,
    embedding: str,
    enc_cfg: EncoderConfig,
    head_cfg: HeadConfig,
    seed: int | None = None,
) -> LidModel:
    """Construct and deterministically initialize a bundle."""
    torch.manual_seed(enc_cfg.seed if seed is None else seed)
    model = LidModel(mode, embedding, enc_cfg, head_cfg)
    model.reset_parameters_()
    return model


def collate(batch: list[ppg.TokenizedInput]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack fixed-length tokenized inputs into (content, mask) tensors."""
    if not batch:
        raise DataError("empty batch")
    modes = {t.mode for t in batch}
    if len(modes) != 1:
        raise DataError(f"mixed token modes in one batch: {sorted(modes)}")
    if batch[0].mode == ppg.PHONE_EMB:
        content = torch.from_numpy(np.stack([t.content for t in batch])).long()
    else:
        content = torch.from_numpy(np.stack([t.content for t in batch])).float()
    mask = torch.from_numpy(np.stack([t.mask for t in batch]))
    return content, mask


def _archive_name(key: str) -> str:
    root, _, rest = key.partition(".")
    if root == "encoder":
        return f"encoder/{rest}"
    if root == "head":
        return f"head/{rest}"
    return f"head/{key}"


def model_tensors(model: LidModel) -> dict[str, np.ndarray]:
    return {_archive_name(k): v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def save_model(model: LidModel, path, inventory: ppg.PhoneInventory, step: int = 0, extra_meta: dict | None = None) -> None:
    meta = {
        "format": ARCHIVE_FORMAT,
        "mode": model.mode,
        "embedding": model.embedding,
        "encoder_config": asdict(model.enc_cfg),
        "head_config": asdict(model.head_cfg),
        "inventory": list(inventory.symbols),
        "step": step,
    }
    if extra_meta:
        meta.update(extra_meta)
    archive.save_tensors(path, model_tensors(model), meta)


def load_model(path) -> tuple[LidModel, ppg.PhoneInventory, dict]:
    tensors, meta = archive.load_tensors(path)
    try:
        enc_cfg = EncoderConfig(**meta["encoder_config"])
        head_cfg = HeadConfig(**meta["head_config"])
        inventory = ppg.PhoneInventory(tuple(meta["inventory"]))
        model = LidModel(meta["mode"], meta["embedding"], enc_cfg, head_cfg)
    except (KeyError, TypeError) as e:
        raise ArchiveError(f"model archive meta is incomplete: {e}") from None
    named = {}
    state_keys = {_archive_name(k): k for k in model.state_dict()}
    for name, arr in tensors.items():
        if name not in state_keys:
            raise ArchiveError(f"unknown tensor name {name!r}")
        named[state_keys[name]] = arr
    load_module_tensors(model, named)
    return model, inventory, meta
