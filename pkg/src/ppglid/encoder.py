"""Transformer encoder over phonetic tokens.

The encoder keeps the BERT triplet aggregation: content embedding plus
position embedding plus segment embedding, layer-normalized, then a
stack of post-norm self-attention/feed-forward layers with GELU.  The
content embedding is a learned P -> H projection for vector tokens
(ppg_frm / avppg) or a lookup table for phone ids (phone_emb).  A
learned CLS vector is prepended and a SEP vector appended after the
last real token; the two padding slots that build_tokens reserves are
consumed by these specials.

Padding positions are excluded from attention with additive -inf
logits, so outputs at real positions are exactly independent of padded
content.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import archive
from .errors import ArchiveError, ConfigError, DataError
from .ppg import CLS_ID, PAD_ID, SEP_ID

VECTOR_INPUT = "vector"
ID_INPUT = "ids"
LAYER_NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 256
    num_layers: int = 4
    num_heads: int = 4
    ffn_dim: int = 1024
    max_sequence_length: int = 256
    dropout: float = 0.1
    ppg_dim: int | None = None
    phone_vocab_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1 or self.ffn_dim < 1:
            raise ConfigError("encoder sizes must be positive")
        if self.num_heads < 1 or self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must be divisible by num_heads {self.num_heads}"
            )
        if self.max_sequence_length < 3:
            raise ConfigError("max_sequence_length must be >= 3")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.ppg_dim is not None and self.ppg_dim < 2:
            raise ConfigError("ppg_dim must be >= 2")
        if self.phone_vocab_size is not None and self.phone_vocab_size < 4:
            raise ConfigError("phone_vocab_size must cover PAD/CLS/SEP plus phones")


def apply_init_(module: nn.Module) -> None:
    """Re-initialize weights in place using the global torch RNG.

    Linear/conv/embedding weights are truncated normal (std 0.02,
    clipped at two sigma), biases zero, layer norms scale 1 offset 0,
    LSTM recurrent matrices orthogonal per gate block.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d, nn.Embedding)):
            nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
            if getattr(m, "bias", None) is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LSTM):
            hidden = m.hidden_size
            for name, param in m.named_parameters():
                if name.startswith("weight_ih"):
                    nn.init.trunc_normal_(param, std=0.02, a=-0.04, b=0.04)
                elif name.startswith("weight_hh"):
                    for gate in range(4):
                        nn.init.orthogonal_(param[gate * hidden : (gate + 1) * hidden])
                else:
                    nn.init.zeros_(param)


class TransformerLayer(nn.Module):
    """Post-norm self-attention + feed-forward block (original BERT order)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        H = cfg.hidden_dim
        self.num_heads = cfg.num_heads
        self.head_dim = H // cfg.num_heads
        self.dropout = cfg.dropout
        self.query = nn.Linear(H, H)
        self.key = nn.Linear(H, H)
        self.value = nn.Linear(H, H)
        self.attn_out = nn.Linear(H, H)
        self.attn_norm = nn.LayerNorm(H, eps=LAYER_NORM_EPS)
        self.ffn_in = nn.Linear(H, cfg.ffn_dim)
        self.ffn_out = nn.Linear(cfg.ffn_dim, H)
        self.ffn_norm = nn.LayerNorm(H, eps=LAYER_NORM_EPS)

    def forward(self, x, key_mask, training=False, need_weights=False):
        B, L, H = x.shape
        shape = (B, L, self.num_heads, self.head_dim)
        q = self.query(x).view(shape).transpose(1, 2)
        k = self.key(x).view(shape).transpose(1, 2)
        v = self.value(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        ctx = F.dropout(probs, self.dropout, training) @ v
        attn = self.attn_out(ctx.transpose(1, 2).reshape(B, L, H))
        x = self.attn_norm(x + F.dropout(attn, self.dropout, training))
        ff = self.ffn_out(F.gelu(self.ffn_in(x)))
        x = self.ffn_norm(x + F.dropout(ff, self.dropout, training))
        return (x, probs) if need_weights else (x, None)


class PhoneticEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, input_kind: str):
        super().__init__()
        if input_kind not in (VECTOR_INPUT, ID_INPUT):
            raise ConfigError(f"unknown encoder input kind {input_kind!r}")
        if input_kind == VECTOR_INPUT and cfg.ppg_dim is None:
            raise ConfigError("vector input needs cfg.ppg_dim")
        if input_kind == ID_INPUT and cfg.phone_vocab_size is None:
            raise ConfigError("id input needs cfg.phone_vocab_size")
        self.cfg = cfg
        self.input_kind = input_kind
        H = cfg.hidden_dim
        if input_kind == VECTOR_INPUT:
            self.input_proj = nn.Linear(cfg.ppg_dim, H)
            self.cls_vec = nn.Parameter(torch.empty(H))
            self.sep_vec = nn.Parameter(torch.empty(H))
        else:
            self.token_emb = nn.Embedding(cfg.phone_vocab_size, H)
        self.position_emb = nn.Embedding(cfg.max_sequence_length, H)
        self.segment_emb = nn.Embedding(2, H)
        self.emb_norm = nn.LayerNorm(H, eps=LAYER_NORM_EPS)
        self.layers = nn.ModuleList(TransformerLayer(cfg) for _ in range(cfg.num_layers))

    def reset_parameters_(self) -> None:
        apply_init_(self)
        if self.input_kind == VECTOR_INPUT:
            nn.init.trunc_normal_(self.cls_vec, std=0.02, a=-0.04, b=0.04)
            nn.init.trunc_normal_(self.sep_vec, std=0.02, a=-0.04, b=0.04)

    def embed(self, content, mask, training=False):
        """Insert CLS/SEP, aggregate triplet embeddings, norm and dropout.

        content is [B, L, P] floats (vector kinds) or [B, L] ids; mask
        is [B, L] with true on the real-token prefix.  Returns the
        [B, L, H] embedding and the mask extended over the specials.
        """
        B, L = mask.shape
        if L > self.cfg.max_sequence_length:
            raise DataError(
                f"sequence length {L} exceeds max_sequence_length {self.cfg.max_sequence_length}"
            )
        lengths = mask.long().sum(dim=1)
        if int(lengths.min()) < 1:
            raise DataError("empty utterance: no real tokens")
        if int(lengths.max()) > L - 2:
            raise DataError("no room for CLS/SEP specials; build tokens with two free slots")
        rows = torch.arange(L, device=mask.device)
        out_mask = rows[None, :] <= (lengths + 1)[:, None]

        if self.input_kind == VECTOR_INPUT:
            if content.dim() != 3:
                raise DataError("vector-mode encoder got id content")
            proj = self.input_proj(content.to(self.input_proj.weight.dtype))
            tok = proj.new_zeros(B, L, self.cfg.hidden_dim)
            tok[:, 1:] = proj[:, :-1]
            tok[:, 0] = self.cls_vec
            tok[torch.arange(B), lengths + 1] = self.sep_vec
            tok = tok * out_mask[..., None]
        else:
            if content.dim() != 2:
                raise DataError("id-mode encoder got vector content")
            ids = content.new_full((B, L), PAD_ID)
            ids[:, 1:] = content[:, :-1]
            ids[:, 0] = CLS_ID
            ids[torch.arange(B), lengths + 1] = SEP_ID
            tok = self.token_emb(ids)

        seg = self.segment_emb.weight[0]
        x = tok + self.position_emb.weight[:L][None, :, :] + seg[None, None, :]
        x = self.emb_norm(x)
        x = F.dropout(x, self.cfg.dropout, training)
        return x, out_mask

    def encode(self, x, mask, training=False, need_weights=False):
        """Run the layer stack; padding never attends into real positions."""
        attention = []
        for layer in self.layers:
            x, probs = layer(x, mask, training=training, need_weights=need_weights)
            if need_weights:
                attention.append(probs)
        return (x, attention) if need_weights else x

    def forward(self, content, mask, training=False):
        x, out_mask = self.embed(content, mask, training=training)
        return self.encode(x, out_mask, training=training), out_mask


def pool_cls(states: torch.Tensor) -> torch.Tensor:
    """The CLS position's hidden state: row 0 of each sequence."""
    return states[..., 0, :]


def init_encoder(cfg: EncoderConfig, input_kind: str) -> PhoneticEncoder:
    """Deterministically initialized encoder (seeded from cfg.seed)."""
    torch.manual_seed(cfg.seed)
    enc = PhoneticEncoder(cfg, input_kind)
    enc.reset_parameters_()
    return enc


def save_encoder(enc: PhoneticEncoder) -> bytes:
    tensors = {f"encoder/{k}": v.detach().cpu().numpy() for k, v in enc.state_dict().items()}
    meta = {"encoder_config": asdict(enc.cfg), "input_kind": enc.input_kind}
    return archive.dump_tensors(tensors, meta)


def load_encoder(data: bytes, cfg: EncoderConfig, input_kind: str) -> PhoneticEncoder:
    tensors, _ = archive.parse_tensors(data)
    enc = PhoneticEncoder(cfg, input_kind)
    load_module_tensors(enc, tensors, prefix="encoder/")
    return enc


def load_module_tensors(module: nn.Module, tensors: dict, prefix: str = "") -> None:
    """Copy archive tensors into a module, validating names and shapes."""
    state = module.state_dict()
    expected = {prefix + k: k for k in state}
    seen = set()
    for name, arr in tensors.items():
        if not name.startswith(prefix):
            continue
        if name not in expected:
            raise ArchiveError(f"unknown tensor name {name!r}")
        key = expected[name]
        if tuple(arr.shape) != tuple(state[key].shape):
            raise ArchiveError(
                f"shape mismatch for {name!r}: archive {tuple(arr.shape)}, model {tuple(state[key].shape)}"
            )
        state[key] = torch.from_numpy(arr).to(state[key].dtype)
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise ArchiveError(f"archive missing tensors: {sorted(missing)[:3]}")
    module.load_state_dict(state)
