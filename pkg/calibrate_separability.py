"""Scratch calibration for the separability acceptance criterion (not shipped)."""
import tempfile
import time

import numpy as np

from ppglid.cli import load_records, phone_sequences, tokenize_records
from ppglid.encoder import EncoderConfig
from ppglid.heads import HeadConfig
from ppglid.metrics import make_report
from ppglid.model import build_model
from ppglid.ngram import build_ngram_vocab, featurize, predict_margin, train_margin_classifier
from ppglid.ppg import AVPPG, PPG_FRM, read_inventory
from ppglid.synth import SynthConfig, build_dataset
from ppglid.training import TrainConfig, collate_dataset, fit, predict_batch

SEED = 2027


def build(tmp):
    cfg = SynthConfig(num_languages=2, num_phones=40, train_utterances=200,
                      dev_utterances=50, test_utterances=50, utterance_frames=100,
                      kappa=5.0, chop_seconds=1.0, frame_shift_ms=10.0, seed=SEED)
    t0 = time.time()
    manifests = build_dataset(cfg, tmp)
    print(f"dataset {time.time()-t0:.1f}s")
    return manifests


def neural(tmp, manifests, mode, embedding, hidden, layers, lr, epochs, max_len, batch=16):
    inv = read_inventory(f"{tmp}/inventory.txt")
    sets = {}
    for split in ("train", "dev", "test"):
        records, base = load_records(manifests[split])
        sets[split] = (tokenize_records(records, base, inv, embedding, max_len), records)
    train = collate_dataset(sets["train"][0])
    dev = collate_dataset(sets["dev"][0])
    enc = EncoderConfig(hidden_dim=hidden, num_layers=layers, num_heads=4, ffn_dim=2 * hidden,
                        max_sequence_length=max_len, dropout=0.1, ppg_dim=40, seed=SEED)
    head = HeadConfig(kind="rcnn", num_classes=2, input_dim=hidden, rcnn_hidden=hidden, rcnn_latent=hidden)
    model = build_model(mode, embedding, enc, head, seed=SEED)
    cfg = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch, seed=SEED, patience=50)
    t0 = time.time()
    history = fit(train, dev, model, cfg)
    t1 = time.time()
    toks = [t for t, _ in sets["test"][0]]
    labels = np.array([r.label for r in sets["test"][1]])
    preds, probs = predict_batch(model, toks)
    report = make_report(preds, probs, labels)
    print(f"{mode}/{embedding} h={hidden} lr={lr} ep={epochs}: acc={report.accuracy:.3f} "
          f"f1={report.f1_macro:.3f} eer={report.eer:.3f} train={t1-t0:.0f}s evals={len(history)}")
    return report


def baseline(tmp, manifests):
    inv = read_inventory(f"{tmp}/inventory.txt")
    train_records, train_base = load_records(manifests["train"])
    test_records, test_base = load_records(manifests["test"])
    t0 = time.time()
    train_seqs = phone_sequences(train_records, train_base, inv)
    test_seqs = phone_sequences(test_records, test_base, inv)
    vocab = build_ngram_vocab(train_seqs, 3)
    feats = [featurize(s, vocab, "l2") for s in train_seqs]
    weights = train_margin_classifier(feats, [r.label for r in train_records],
                                      num_features=len(vocab), reg_lambda=1e-4, epochs=20, seed=SEED)
    preds, scores = [], []
    for seq in test_seqs:
        lab, sc = predict_margin(featurize(seq, vocab, "l2"), weights)
        preds.append(lab)
        scores.append(sc)
    report = make_report(np.array(preds), np.stack(scores), np.array([r.label for r in test_records]))
    print(f"ngram-svm: acc={report.accuracy:.3f} f1={report.f1_macro:.3f} eer={report.eer:.3f} "
          f"time={time.time()-t0:.0f}s vocab={len(vocab)}")
    return report


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        manifests = build(tmp)
        baseline(tmp, manifests)
        neural(tmp, manifests, "bert_lid", AVPPG, hidden=64, layers=2, lr=1e-3, epochs=40, max_len=32)
        neural(tmp, manifests, "lid_only", PPG_FRM, hidden=64, layers=1, lr=1e-3, epochs=25, max_len=128)
