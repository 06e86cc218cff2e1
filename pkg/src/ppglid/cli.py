"""Command-line entry point: synth | train | eval | predict | baseline.

Every command reads a flat key=value config (see config.py); the
``--seed`` and ``--out`` flags override the ``seed`` and ``out_dir``
keys.  All failures print one line ``ERROR <category>: <message>`` to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import metrics, ngram, ppg, synth
from .config import Settings, encoder_config, head_config, load_config, synth_config, train_config
from .errors import DataError, PpgLidError, UsageError
from .model import RUN_MODES, build_model, load_model, save_model
from .training import collate_dataset, fit, predict, predict_batch, write_history

MODEL_FILE = "model.ntar"
HISTORY_FILE = "history.tsv"
REPORT_FILE = "report.json"


def _resolve(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def load_records(manifest_path: str) -> tuple[list[ppg.UtteranceRecord], str]:
    records = ppg.read_manifest(manifest_path)
    return records, os.path.dirname(manifest_path) or "."


def record_segments(
    record: ppg.UtteranceRecord,
    gram: ppg.PosteriorGram,
    base: str,
    inventory: ppg.PhoneInventory,
    decode: bool,
    min_run: int,
) -> list[ppg.PhoneSegment]:
    align = _resolve(record.align_path, base) if record.align_path else None
    return ppg.segments_for(gram, align, inventory, decode=decode, min_run=min_run)


def tokenize_records(
    records: list[ppg.UtteranceRecord],
    base: str,
    inventory: ppg.PhoneInventory,
    embedding: str,
    max_len: int,
    decode: bool = False,
    min_run: int = 1,
) -> list[tuple[ppg.TokenizedInput, int]]:
    vocab_map = ppg.make_vocab_map(inventory) if embedding == ppg.PHONE_EMB else None
    pairs = []
    for record in records:
        gram = ppg.read_ppg(_resolve(record.ppg_path, base))
        if gram.num_phones != len(inventory):
            raise DataError(
                f"utterance {record.id!r}: PPG width {gram.num_phones} does not match inventory size {len(inventory)}"
            )
        segments = None
        if embedding != ppg.PPG_FRM:
            segments = record_segments(record, gram, base, inventory, decode, min_run)
        pairs.append((ppg.build_tokens(gram, segments, embedding, vocab_map, max_len), record.label))
    return pairs


def phone_sequences(
    records: list[ppg.UtteranceRecord],
    base: str,
    inventory: ppg.PhoneInventory,
    decode: bool = True,
    min_run: int = 1,
) -> list[list[int]]:
    seqs = []
    for record in records:
        gram = ppg.read_ppg(_resolve(record.ppg_path, base))
        segments = record_segments(record, gram, base, inventory, decode, min_run)
        seqs.append(ppg.phone_sequence(segments))
    return seqs


def _out_dir(settings: Settings, args) -> str:
    out = args.out or settings.get_path("out_dir")
    if not out:
        raise UsageError("no output directory: pass --out or set out_dir in the config")
    os.makedirs(out, exist_ok=True)
    return out


def _seed(settings: Settings, args) -> int:
    return args.seed if args.seed is not None else settings.get_int("seed", 0)


def _decode_opts(settings: Settings, args) -> tuple[bool, int]:
    decode = settings.get_bool("decode", False) or bool(getattr(args, "decode", False))
    return decode, settings.get_int("min_run", 1)


def cmd_synth(args) -> int:
    settings = load_config(args.config)
    out = _out_dir(settings, args)
    manifests = synth.build_dataset(synth_config(settings, _seed(settings, args)), out)
    for split, path in manifests.items():
        print(f"{split}\t{path}")
    return 0


def _data_paths(settings: Settings, *keys: str) -> list[str]:
    paths = []
    for key in keys:
        path = settings.get_path(f"data.{key}")
        if path is None:
            raise UsageError(f"config key data.{key} is required")
        paths.append(path)
    return paths


def cmd_train(args) -> int:
    settings = load_config(args.config)
    seed = _seed(settings, args)
    out = _out_dir(settings, args)
    decode, min_run = _decode_opts(settings, args)
    train_path, dev_path, inv_path = _data_paths(settings, "train_manifest", "dev_manifest", "inventory")
    inventory = ppg.read_inventory(inv_path)
    train_records, train_base = load_records(train_path)
    dev_records, dev_base = load_records(dev_path)

    step_offset = 0
    if args.resume:
        model, saved_inv, meta = load_model(args.resume)
        if saved_inv.symbols != inventory.symbols:
            raise DataError("resume archive was trained on a different phone inventory")
        mode, embedding = model.mode, model.embedding
        max_len = model.enc_cfg.max_sequence_length
        step_offset = int(meta.get("step", 0))
        tcfg = train_config(settings, seed)
    else:
        mode = settings.get_choice("mode", RUN_MODES, "bert_lid")
        embedding = settings.get_choice("embedding", ppg.MODES, ppg.AVPPG)
        num_classes = settings.get_int("head.num_classes", 0) or (
            max(r.label for r in train_records + dev_records) + 1
        )
        enc_cfg = encoder_config(
            settings,
            seed,
            ppg_dim=len(inventory) if embedding != ppg.PHONE_EMB else None,
            phone_vocab_size=ppg.vocab_size(inventory) if embedding == ppg.PHONE_EMB else None,
        )
        head_cfg = head_config(settings, num_classes, enc_cfg.hidden_dim)
        model = build_model(mode, embedding, enc_cfg, head_cfg, seed)
        max_len = enc_cfg.max_sequence_length
        tcfg = train_config(settings, seed)

    train_set = collate_dataset(
        tokenize_records(train_records, train_base, inventory, embedding, max_len, decode, min_run)
    )
    dev_set = collate_dataset(
        tokenize_records(dev_records, dev_base, inventory, embedding, max_len, decode, min_run)
    )
    history = fit(train_set, dev_set, model, tcfg, step_offset=step_offset)
    final_step = history[-1].step if history else step_offset

    model_path = os.path.join(out, MODEL_FILE)
    save_model(model, model_path, inventory, step=final_step)
    with open(os.path.join(out, HISTORY_FILE), "wb") as f:
        f.write(write_history(history))
    print(f"model\t{model_path}")
    print(f"history\t{os.path.join(out, HISTORY_FILE)}")
    return 0


def _write_report(report: metrics.MetricsReport, out: str) -> None:
    text = report.to_json()
    with open(os.path.join(out, REPORT_FILE), "w", encoding="utf-8") as f:
        f.write(text)
    print(text, end="")


def cmd_eval(args) -> int:
    settings = load_config(args.config)
    out = _out_dir(settings, args)
    decode, min_run = _decode_opts(settings, args)
    test_path, inv_path = _data_paths(settings, "test_manifest", "inventory")
    inventory = ppg.read_inventory(inv_path)
    model, saved_inv, _meta = load_model(args.model)
    if saved_inv.symbols != inventory.symbols:
        raise DataError("model archive inventory does not match data.inventory")
    records, base = load_records(test_path)
    pairs = tokenize_records(
        records, base, inventory, model.embedding, model.enc_cfg.max_sequence_length, decode, min_run
    )
    labels = np.array([label for _, label in pairs])
    preds, probs = predict_batch(model, [tok for tok, _ in pairs])
    _write_report(metrics.make_report(preds, probs, labels), out)
    return 0


def cmd_predict(args) -> int:
    model, inventory, _meta = load_model(args.model)
    gram = ppg.read_ppg(args.ppg)
    if gram.num_phones != len(inventory):
        raise DataError(
            f"PPG width {gram.num_phones} does not match the model inventory size {len(inventory)}"
        )
    segments = None
    if model.embedding != ppg.PPG_FRM:
        segments = ppg.segments_for(gram, args.align, inventory, decode=args.decode, min_run=args.min_run)
    vocab_map = ppg.make_vocab_map(inventory) if model.embedding == ppg.PHONE_EMB else None
    tok = ppg.build_tokens(gram, segments, model.embedding, vocab_map, model.enc_cfg.max_sequence_length)
    label, probs = predict(model, tok)
    utt_id = args.id or os.path.splitext(os.path.basename(args.ppg))[0]
    print(json.dumps({"id": utt_id, "label": int(label), "probs": [float(p) for p in probs]}))
    return 0


def cmd_baseline(args) -> int:
    settings = load_config(args.config)
    seed = _seed(settings, args)
    out = _out_dir(settings, args)
    decode, min_run = _decode_opts(settings, args)
    train_path, test_path, inv_path = _data_paths(settings, "train_manifest", "test_manifest", "inventory")
    inventory = ppg.read_inventory(inv_path)
    n_max = settings.get_int("baseline.n_max", 3)
    weighting = settings.get_choice("baseline.weighting", ngram.WEIGHTINGS, "l2")
    reg_lambda = settings.get_float("baseline.reg_lambda", 1e-4)
    epochs = settings.get_int("baseline.epochs", 20)

    train_records, train_base = load_records(train_path)
    test_records, test_base = load_records(test_path)
    train_seqs = phone_sequences(train_records, train_base, inventory, decode, min_run)
    test_seqs = phone_sequences(test_records, test_base, inventory, decode, min_run)

    vocab = ngram.build_ngram_vocab(train_seqs, n_max)
    train_feats = [ngram.featurize(seq, vocab, weighting) for seq in train_seqs]
    labels = [r.label for r in train_records]
    weights = ngram.train_margin_classifier(
        train_feats, labels, num_features=len(vocab), reg_lambda=reg_lambda, epochs=epochs, seed=seed
    )
    preds, scores = [], []
    for seq in test_seqs:
        label, margin = ngram.predict_margin(ngram.featurize(seq, vocab, weighting), weights)
        preds.append(label)
        scores.append(margin)
    with open(os.path.join(out, "vocab.txt"), "wb") as f:
        f.write(ngram.write_vocab(vocab, inventory))
    with open(os.path.join(out, "weights.txt"), "wb") as f:
        f.write(ngram.write_weights(weights))
    test_labels = np.array([r.label for r in test_records])
    _write_report(metrics.make_report(np.array(preds), np.stack(scores), test_labels), out)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppglid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config out_dir")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--decode", action="store_true", help="greedy-decode segments when alignments are missing")
    p.add_argument("--resume", default=None, help="model archive to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model archive on the test manifest")
    common(p)
    p.add_argument("--model", required=True, help="model archive path")
    p.add_argument("--decode", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one PPG file")
    p.add_argument("--model", required=True)
    p.add_argument("--ppg", required=True)
    p.add_argument("--align", default=None)
    p.add_argument("--decode", action="store_true")
    p.add_argument("--min-run", type=int, default=1, dest="min_run")
    p.add_argument("--id", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="run the n-gram margin-classifier baseline")
    common(p)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except PpgLidError as e:
        print(f"ERROR {e.category}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"ERROR io: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
