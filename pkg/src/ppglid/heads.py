"""Deep classifier heads consuming a hidden-state sequence.

Four variants: a 1-D convolutional net, a two-layer bidirectional LSTM,
a deep pyramid CNN (stride-2 pooling blocks with residual equal-width
convolutions), and an RCNN that concatenates left context, input and
right context per position.  Every head ends in masked max-pooling
over time and a linear map to class logits; the softmax/cross-entropy
output is shared.

Max-pooling is always masked: a padded position can never win the max.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DataError

HEAD_KINDS = ("cnn", "lstm", "dpcnn", "rcnn")


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "rcnn"
    num_classes: int = 2
    input_dim: int = 256
    cnn_filters: int = 200
    cnn_kernel_width: int = 3
    lstm_hidden: int = 300
    lstm_layers: int = 2
    dpcnn_channels: int = 250
    dpcnn_kernel_width: int = 3
    dpcnn_blocks: int = 7
    rcnn_hidden: int = 300
    rcnn_latent: int = 300

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"head.kind must be one of {HEAD_KINDS}, got {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError("head.num_classes must be >= 2")
        sizes = (
            self.input_dim, self.cnn_filters, self.cnn_kernel_width, self.lstm_hidden,
            self.lstm_layers, self.dpcnn_channels, self.dpcnn_kernel_width,
            self.dpcnn_blocks, self.rcnn_hidden, self.rcnn_latent,
        )
        if min(sizes) < 1:
            raise ConfigError("all head sizes must be positive")


def masked_max(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Max over time of [B, L, C] features, restricted to mask-true steps."""
    if not bool(mask.any(dim=1).all()):
        raise DataError("masked max-pool needs at least one valid position per sequence")
    filler = torch.finfo(x.dtype).min
    return x.masked_fill(~mask[..., None], filler).amax(dim=1)


class CnnHead(nn.Module):
    """1-D convolution, masked global max-pool, linear classifier."""

    def __init__(self, cfg: HeadConfig):
        super().__init__()
        self.kernel_width = cfg.cnn_kernel_width
        self.conv = nn.Conv1d(cfg.input_dim, cfg.cnn_filters, cfg.cnn_kernel_width)
        self.out = nn.Linear(cfg.cnn_filters, cfg.num_classes)

    def forward(self, states, mask):
        lengths = mask.long().sum(dim=1)
        k = self.kernel_width
        if int(lengths.min()) < k:
            raise DataError(f"sequence of {int(lengths.min())} tokens shorter than kernel width {k}")
        x = states * mask[..., None].to(states.dtype)
        conv = F.relu(self.conv(x.transpose(1, 2)))  # [B, F, L-k+1]
        steps = torch.arange(conv.shape[2], device=states.device)
        window_ok = steps[None, :] < (lengths - k + 1)[:, None]
        return self.out(masked_max(conv.transpose(1, 2), window_ok))


class LstmHead(nn.Module):
    """Stacked biLSTM, masked max-pool over time, linear classifier."""

    def __init__(self, cfg: HeadConfig):
        super().__init__()
        self.lstm = nn.LSTM(
            cfg.input_dim,
            cfg.lstm_hidden,
            num_layers=cfg.lstm_layers,
            bidirectional=True,
            batch_first=True,
        )
        self.out = nn.Linear(2 * cfg.lstm_hidden, cfg.num_classes)

    def forward(self, states, mask):
        lengths = mask.long().sum(dim=1)
        if int(lengths.min()) < 1:
            raise DataError("empty sequence")
        packed = nn.utils.rnn.pack_padded_sequence(
            states, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=mask.shape[1])
        return self.out(masked_max(out, mask))


class DpcnnBlock(nn.Module):
    """Halve the time axis, then two pre-activation convs with a skip."""

    def __init__(self, channels: int, kernel_width: int):
        super().__init__()
        pad = kernel_width // 2
        self.pool = nn.MaxPool1d(kernel_size=2, stride=2)
        self.conv1 = nn.Conv1d(channels, channels, kernel_width, padding=pad)
        self.conv2 = nn.Conv1d(channels, channels, kernel_width, padding=pad)

    def forward(self, x):
        pooled = self.pool(x)
        h = self.conv1(F.relu(pooled))
        h = self.conv2(F.relu(h))
        return pooled + h


class DpcnnHead(nn.Module):
    """Region embedding plus a pyramid of halving residual conv blocks.

    Weight layers are counted over convolutions (the region embedding
    and two per block); the classification linear is the separate
    softmax output layer and is not counted.  The default 7 blocks give
    1 + 14 = 15 weight layers.
    """

    def __init__(self, cfg: HeadConfig):
        super().__init__()
        self.num_blocks = cfg.dpcnn_blocks
        pad = cfg.dpcnn_kernel_width // 2
        self.region = nn.Conv1d(cfg.input_dim, cfg.dpcnn_channels, cfg.dpcnn_kernel_width, padding=pad)
        self.blocks = nn.ModuleList(
            DpcnnBlock(cfg.dpcnn_channels, cfg.dpcnn_kernel_width) for _ in range(cfg.dpcnn_blocks)
        )
        self.out = nn.Linear(cfg.dpcnn_channels, cfg.num_classes)

    def weight_layer_count(self) -> int:
        return sum(1 for m in self.modules() if isinstance(m, nn.Conv1d))

    def forward(self, states, mask):
        L = mask.shape[1]
        if L >> self.num_blocks < 1:
            raise DataError(
                f"sequence length {L} too short for {self.num_blocks} stride-2 pooling blocks"
            )
        lengths = mask.long().sum(dim=1)
        x = (states * mask[..., None].to(states.dtype)).transpose(1, 2)
        x = self.region(x)
        valid = lengths
        for block in self.blocks:
            x = block(x)
            valid = torch.clamp((valid + 1) // 2, max=x.shape[2])
        steps = torch.arange(x.shape[2], device=states.device)
        return self.out(masked_max(x.transpose(1, 2), steps[None, :] < valid[:, None]))


class RcnnHead(nn.Module):
    """biLSTM context concatenation, tanh latent, masked max-pool."""

    def __init__(self, cfg: HeadConfig):
        super().__init__()
        self.lstm = nn.LSTM(cfg.input_dim, cfg.rcnn_hidden, bidirectional=True, batch_first=True)
        self.latent = nn.Linear(2 * cfg.rcnn_hidden + cfg.input_dim, cfg.rcnn_latent)
        self.out = nn.Linear(cfg.rcnn_latent, cfg.num_classes)

    def forward(self, states, mask):
        lengths = mask.long().sum(dim=1)
        if int(lengths.min()) < 1:
            raise DataError("empty sequence")
        packed = nn.utils.rnn.pack_padded_sequence(
            states, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=mask.shape[1])
        hidden = self.lstm.hidden_size
        left, right = out[..., :hidden], out[..., hidden:]
        z = torch.tanh(self.latent(torch.cat([left, states, right], dim=-1)))
        return self.out(masked_max(z, mask))


_HEAD_CLASSES = {"cnn": CnnHead, "lstm": LstmHead, "dpcnn": DpcnnHead, "rcnn": RcnnHead}


def make_head(cfg: HeadConfig) -> nn.Module:
    return _HEAD_CLASSES[cfg.kind](cfg)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy; labels must be valid class indices."""
    if logits.dim() == 1:
        logits, labels = logits[None, :], labels.reshape(1)
    C = logits.shape[-1]
    if int(labels.min()) < 0 or int(labels.max()) >= C:
        raise DataError(f"label outside [0, {C})")
    logp = F.log_softmax(logits, dim=-1)
    return -logp[torch.arange(logits.shape[0]), labels].mean()


def softmax_probs(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def loss_and_grad(logits: torch.Tensor, labels: torch.Tensor) -> tuple[float, torch.Tensor]:
    """Cross-entropy plus its closed-form gradient (softmax minus one-hot,
    scaled by 1/batch)."""
    with torch.no_grad():
        squeeze = logits.dim() == 1
        if squeeze:
            logits, labels = logits[None, :], labels.reshape(1)
        B, C = logits.shape
        if int(labels.min()) < 0 or int(labels.max()) >= C:
            raise DataError(f"label outside [0, {C})")
        probs = torch.softmax(logits, dim=-1)
        loss = float(-torch.log(probs[torch.arange(B), labels]).mean())
        grad = probs.clone()
        grad[torch.arange(B), labels] -= 1.0
        grad /= B
        return loss, (grad[0] if squeeze else grad)
