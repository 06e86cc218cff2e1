"""Optimization loop: BertAdam-style updates, warmup/decay, early stopping.

The optimizer is Adam with beta1=0.9, beta2=0.99 and no bias correction,
a linear warmup over a fraction of the total steps followed by linear
decay to zero, and decoupled weight decay applied to every tensor that
is not a bias or a layer-norm parameter.  Training evaluates on the
development set at a fixed cadence, stops after ``patience`` dev
evaluations that each come in strictly worse than the one before, and
returns the parameters from the best dev loss seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError
from .heads import cross_entropy, softmax_probs
from .model import LidModel, collate
from .ppg import TokenizedInput

ADAM_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    epochs: int = 200
    grad_accumulation_steps: int = 1
    patience: int = 50
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 0  # 0 = once per epoch

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train.beta1/beta2 must lie in [0, 1)")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("train.warmup_fraction must lie in [0, 1)")
        if self.epochs < 1 or self.grad_accumulation_steps < 1 or self.patience < 1:
            raise ConfigError("train.epochs, grad_accumulation_steps and patience must be >= 1")
        if self.batch_size < 1 or self.eval_every < 0:
            raise ConfigError("train.batch_size must be >= 1 and eval_every >= 0")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")


def schedule_scale(step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warmup to 1 then linear decay to 0 at total_steps (1-based)."""
    warmup = int(warmup_fraction * total_steps)
    if step <= warmup and warmup > 0:
        return step / warmup
    if total_steps <= warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


def _no_decay_names(model: nn.Module) -> set[str]:
    names = set()
    for mod_name, mod in model.named_modules():
        if isinstance(mod, nn.LayerNorm):
            for p_name, _ in mod.named_parameters(recurse=False):
                names.add(f"{mod_name}.{p_name}" if mod_name else p_name)
    for name, _ in model.named_parameters():
        if name.endswith(".bias") or name.startswith("bias"):
            names.add(name)
    return names


class BertAdam(torch.optim.Optimizer):
    """Adam without bias correction, scheduled lr, decoupled weight decay."""

    def __init__(self, model: nn.Module, cfg: TrainConfig, total_steps: int):
        if total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        skip = _no_decay_names(model)
        decay, decay_names, plain, plain_names = [], [], [], []
        for name, p in model.named_parameters():
            if name in skip:
                plain.append(p)
                plain_names.append(name)
            else:
                decay.append(p)
                decay_names.append(name)
        groups = [
            {"params": decay, "names": decay_names, "weight_decay": cfg.weight_decay},
            {"params": plain, "names": plain_names, "weight_decay": 0.0},
        ]
        super().__init__(groups, {})
        self.lr = cfg.learning_rate
        self.betas = (cfg.beta1, cfg.beta2)
        self.total_steps = total_steps
        self.warmup_fraction = cfg.warmup_fraction
        self.step_count = 0

    def current_lr(self) -> float:
        return self.lr * schedule_scale(self.step_count, self.total_steps, self.warmup_fraction)

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        self.step_count += 1
        lr_t = self.current_lr()
        beta1, beta2 = self.betas
        for group in self.param_groups:
            wd = group["weight_decay"]
            for name, p in zip(group["names"], group["params"]):
                if p.grad is None:
                    continue
                grad = p.grad
                if not bool(torch.isfinite(grad).all()):
                    raise DataError(f"non-finite gradient in tensor {name!r}")
                state = self.state[p]
                if not state:
                    state["m"] = torch.zeros_like(p)
                    state["v"] = torch.zeros_like(p)
                m, v = state["m"], state["v"]
                m.mul_(beta1).add_(grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                update = m / (v.sqrt() + ADAM_EPS)
                if wd:
                    update = update + wd * p
                p.add_(update, alpha=-lr_t)
        return loss


class EarlyStopping:
    """Count consecutive strict dev-loss increases; equal resets too."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.previous: float | None = None
        self.streak = 0

    def update(self, dev_loss: float) -> bool:
        if self.previous is not None and dev_loss > self.previous:
            self.streak += 1
        else:
            self.streak = 0
        self.previous = dev_loss
        return self.streak >= self.patience


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    train_loss: float
    dev_loss: float
    dev_accuracy: float


def write_history(entries: list[HistoryEntry]) -> bytes:
    lines = ["step\ttrain_loss\tdev_loss\tdev_accuracy"]
    for e in entries:
        lines.append(f"{e.step}\t{repr(e.train_loss)}\t{repr(e.dev_loss)}\t{repr(e.dev_accuracy)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


Dataset = tuple[torch.Tensor, torch.Tensor, torch.Tensor]  # content, mask, labels


def collate_dataset(pairs: list[tuple[TokenizedInput, int]]) -> Dataset:
    if not pairs:
        raise DataError("empty dataset")
    content, mask = collate([tok for tok, _ in pairs])
    labels = torch.tensor([label for _, label in pairs], dtype=torch.long)
    return content, mask, labels


def _batch_loss(model: LidModel, content, mask, labels, training: bool) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if content.is_floating_point():
        content = content.to(dtype)
    logits = model(content, mask, training=training)
    return cross_entropy(logits, labels)


def evaluate(model: LidModel, dataset: Dataset, batch_size: int = 64) -> tuple[float, float]:
    """Mean loss and accuracy with dropout off."""
    content, mask, labels = dataset
    dtype = next(model.parameters()).dtype
    n = len(labels)
    total_loss = 0.0
    correct = 0
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            piece = content[lo:hi].to(dtype) if content.is_floating_point() else content[lo:hi]
            logits = model(piece, mask[lo:hi], training=False)
            loss = cross_entropy(logits, labels[lo:hi])
            total_loss += float(loss) * (hi - lo)
            correct += int((logits.argmax(dim=1) == labels[lo:hi]).sum())
    return total_loss / n, correct / n


def fit(
    train_set: Dataset,
    dev_set: Dataset,
    model: LidModel,
    cfg: TrainConfig,
    step_offset: int = 0,
) -> list[HistoryEntry]:
    """Train in place; the model ends up at the best-dev-loss parameters.

    Gradients accumulate over ``grad_accumulation_steps`` micro-batches
    (each loss scaled by one over that count) before every optimizer
    step.  The returned history has one entry per dev evaluation.
    """
    torch.manual_seed(cfg.seed)
    order_rng = np.random.default_rng(cfg.seed)
    content, mask, labels = train_set
    n = len(labels)
    micro_per_epoch = math.ceil(n / cfg.batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / cfg.grad_accumulation_steps)
    total_steps = cfg.epochs * steps_per_epoch + step_offset
    optimizer = BertAdam(model, cfg, total_steps)
    optimizer.step_count = step_offset
    eval_every = cfg.eval_every if cfg.eval_every > 0 else steps_per_epoch

    history: list[HistoryEntry] = []
    stopper = EarlyStopping(cfg.patience)
    best_loss = math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    loss_sum, loss_count = 0.0, 0
    stop = False

    for _epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        micro = 0
        optimizer.zero_grad()
        for lo in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(perm[lo : lo + cfg.batch_size])
            loss = _batch_loss(model, content[idx], mask[idx], labels[idx], training=True)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise DataError(f"non-finite training loss {loss_value}")
            loss_sum += loss_value
            loss_count += 1
            (loss / cfg.grad_accumulation_steps).backward()
            micro += 1
            if micro % cfg.grad_accumulation_steps == 0 or lo + cfg.batch_size >= n:
                optimizer.step()
                optimizer.zero_grad()
                if (optimizer.step_count - step_offset) % eval_every == 0:
                    dev_loss, dev_acc = evaluate(model, dev_set, cfg.batch_size)
                    history.append(
                        HistoryEntry(optimizer.step_count, loss_sum / max(loss_count, 1), dev_loss, dev_acc)
                    )
                    loss_sum, loss_count = 0.0, 0
                    if dev_loss < best_loss:
                        best_loss = dev_loss
                        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                    if stopper.update(dev_loss):
                        stop = True
                        break
        if stop:
            break
    model.load_state_dict(best_state)
    return history


def predict(model: LidModel, tok: TokenizedInput) -> tuple[int, np.ndarray]:
    """Argmax of softmax probabilities; ties break toward class 0."""
    label, probs = predict_batch(model, [tok])
    return int(label[0]), probs[0]


def predict_batch(model: LidModel, toks: list[TokenizedInput]) -> tuple[np.ndarray, np.ndarray]:
    if toks and any(t.mode != model.embedding for t in toks):
        raise DataError(f"token mode does not match model embedding {model.embedding!r}")
    content, mask = collate(toks)
    if content.is_floating_point():
        content = content.to(next(model.parameters()).dtype)
    with torch.no_grad():
        logits = model(content, mask, training=False)
        probs = softmax_probs(logits.double()).cpu().numpy()
    return np.argmax(probs, axis=1), probs
