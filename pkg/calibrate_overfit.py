"""Scratch calibration for the overfit acceptance criterion (not shipped)."""
import time

import numpy as np
import torch

from ppglid.encoder import EncoderConfig
from ppglid.heads import HeadConfig
from ppglid.model import build_model
from ppglid.ppg import AVPPG, build_tokens
from ppglid.synth import emit_ppg, make_language_models, sample_utterance
from ppglid.training import TrainConfig, collate_dataset, evaluate, fit


def make_pairs(num_utts, num_phones, kappa, frames, max_len, seed):
    inv, lms = make_language_models(2, num_phones, seed=seed)
    pairs = []
    for u in range(num_utts):
        lang = u % 2
        rng = np.random.default_rng([seed, 7, u])
        segs = sample_utterance(lms[lang], frames, rng=rng)
        gram = emit_ppg(segs, inv, kappa, rng=rng)
        pairs.append((build_tokens(gram, segs, AVPPG, max_len=max_len), lang))
    return inv, pairs


def run(hidden=32, layers=2, heads=2, ffn=64, lr=1e-3, epochs=200, batch=8, seed=11, kappa=5.0):
    inv, pairs = make_pairs(32, 20, kappa, 100, 48, seed)
    train = collate_dataset(pairs)
    enc = EncoderConfig(hidden_dim=hidden, num_layers=layers, num_heads=heads, ffn_dim=ffn,
                        max_sequence_length=48, dropout=0.1, ppg_dim=20, seed=seed)
    head = HeadConfig(kind="rcnn", num_classes=2, input_dim=hidden, rcnn_hidden=hidden,
                      rcnn_latent=hidden)
    model = build_model("bert_lid", AVPPG, enc, head, seed=seed)
    cfg = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch, seed=seed, patience=1000)
    t0 = time.time()
    history = fit(train, train, model, cfg)
    _, acc = evaluate(model, train)
    print(f"hidden={hidden} lr={lr} epochs={epochs}: train acc {acc:.3f} "
          f"steps {history[-1].step} time {time.time()-t0:.1f}s final dev loss {history[-1].dev_loss:.4f}")
    return acc


if __name__ == "__main__":
    run(epochs=60)
    run(epochs=120)
    run(epochs=200)
