"""Synthetic bilingual/code-switching data generator.

Languages share one phone inventory but differ in their Markov phone
transition structure, so only phonotactics separates them.  Utterances
are sampled phone by phone with per-phone uniform durations, emitted as
noisy posteriorgrams (Dirichlet rows concentrated on the true phone),
chopped into fixed-duration fragments, and written out in the ppg-core
file formats together with train/dev/test manifests.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError
from .ppg import (
    PhoneInventory,
    PhoneSegment,
    PosteriorGram,
    UtteranceRecord,
    phone_sequence,
    validate_segments,
    write_alignment,
    write_inventory,
    write_manifest,
    write_ppg_file,
)


@dataclass(frozen=True)
class LanguageModelSpec:
    """Markov phonotactics of one synthetic language."""

    inventory: PhoneInventory
    transition: np.ndarray
    initial: np.ndarray
    dur_min: np.ndarray
    dur_max: np.ndarray
    seed: int = 0

    def __post_init__(self):
        P = len(self.inventory)
        transition = np.asarray(self.transition, dtype=np.float64)
        initial = np.asarray(self.initial, dtype=np.float64)
        dur_min = np.asarray(self.dur_min, dtype=np.int64)
        dur_max = np.asarray(self.dur_max, dtype=np.int64)
        if transition.shape != (P, P):
            raise DataError(f"transition matrix must be {P}x{P}")
        if initial.shape != (P,):
            raise DataError(f"initial distribution must have length {P}")
        if np.abs(transition.sum(axis=1) - 1.0).max() > 1e-9 or abs(initial.sum() - 1.0) > 1e-9:
            raise DataError("transition rows and initial distribution must sum to 1 within 1e-9")
        if transition.min() < 0 or initial.min() < 0:
            raise DataError("probabilities must be non-negative")
        if dur_min.shape != (P,) or dur_max.shape != (P,):
            raise DataError(f"duration bounds must have length {P}")
        if dur_min.min() < 1 or np.any(dur_max < dur_min):
            raise DataError("durations must satisfy 1 <= dur_min <= dur_max")
        for name, arr in [("transition", transition), ("initial", initial), ("dur_min", dur_min), ("dur_max", dur_max)]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class SynthConfig:
    num_languages: int = 2
    num_phones: int = 40
    train_utterances: int = 200
    dev_utterances: int = 50
    test_utterances: int = 50
    utterance_frames: int = 100
    kappa: float = 5.0
    chop_seconds: float = 1.0
    frame_shift_ms: float = 10.0
    code_switch_prob: float = 0.0
    dur_min: int = 3
    dur_max: int = 10
    transition_concentration: float = 0.1
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("num_languages", self.num_languages >= 2),
            ("num_phones", self.num_phones >= 2),
            ("train_utterances", self.train_utterances >= 1),
            ("dev_utterances", self.dev_utterances >= 1),
            ("test_utterances", self.test_utterances >= 1),
            ("utterance_frames", self.utterance_frames >= 1),
            ("kappa", self.kappa > 0),
            ("chop_seconds", self.chop_seconds > 0),
            ("frame_shift_ms", self.frame_shift_ms > 0),
            ("code_switch_prob", 0.0 <= self.code_switch_prob <= 1.0),
            ("dur_min", self.dur_min >= 1),
            ("dur_max", self.dur_max >= self.dur_min),
            ("transition_concentration", self.transition_concentration > 0),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"synth.{key} is out of range: {getattr(self, key)}")
        if chop_frames(self.chop_seconds, self.frame_shift_ms) < 1:
            raise ConfigError("synth.chop_seconds shorter than one frame")


def _sample_index(cdf: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, len(cdf) - 1)


def sample_utterance(
    lm: LanguageModelSpec, length: int, rng: np.random.Generator | None = None
) -> list[PhoneSegment]:
    """Markov-sample phones with durations until exactly ``length`` frames.

    The last phone is truncated at the boundary; the returned segments
    cover [0, length).  Without an explicit rng the language model's own
    seed is used, so repeated calls are identical.
    """
    if length < 1:
        raise DataError(f"utterance length must be >= 1, got {length}")
    if rng is None:
        rng = np.random.default_rng(lm.seed)
    trans_cdf = np.cumsum(lm.transition, axis=1)
    init_cdf = np.cumsum(lm.initial)
    segments = []
    phone = _sample_index(init_cdf, rng)
    t = 0
    while t < length:
        dur = int(rng.integers(lm.dur_min[phone], lm.dur_max[phone] + 1))
        end = min(t + dur, length)
        segments.append(PhoneSegment(phone, t, end))
        t = end
        phone = _sample_index(trans_cdf[phone], rng)
    return segments


def emit_ppg(
    segments: list[PhoneSegment],
    inventory: PhoneInventory,
    kappa: float,
    seed: int = 0,
    frame_shift_ms: float = 10.0,
    rng: np.random.Generator | None = None,
) -> PosteriorGram:
    """Emit a noisy PPG for a segment sequence.

    Each frame's row is Dirichlet with concentration 1 everywhere and
    1 + kappa on the true phone, so expected true-phone mass grows with
    kappa and every row sums to 1 exactly up to rounding.
    """
    if not kappa > 0:
        raise DataError(f"kappa must be positive, got {kappa}")
    num_frames = segments[-1].end if segments else 0
    validate_segments(segments, num_frames)
    if rng is None:
        rng = np.random.default_rng(seed)
    P = len(inventory)
    alpha = np.ones((num_frames, P), dtype=np.float64)
    for seg in segments:
        if seg.phone >= P:
            raise DataError(f"phone index {seg.phone} outside inventory of size {P}")
        alpha[seg.start : seg.end, seg.phone] += kappa
    gammas = rng.standard_gamma(alpha)
    values = gammas / gammas.sum(axis=1, keepdims=True)
    return PosteriorGram(values=values, frame_shift_ms=frame_shift_ms)


def chop_frames(chop_seconds: float, frame_shift_ms: float) -> int:
    return int(chop_seconds * 1000.0 / frame_shift_ms)


def chop_bounds(num_frames: int, fragment_frames: int) -> list[tuple[int, int]]:
    """Consecutive fragment spans; a trailing remainder shorter than half
    a fragment is discarded."""
    if fragment_frames < 1:
        raise DataError(f"fragment length must be >= 1 frame, got {fragment_frames}")
    bounds = []
    full = num_frames // fragment_frames
    for i in range(full):
        bounds.append((i * fragment_frames, (i + 1) * fragment_frames))
    rest = num_frames - full * fragment_frames
    if rest and rest >= fragment_frames / 2:
        bounds.append((full * fragment_frames, num_frames))
    return bounds


def clip_segments(segments: list[PhoneSegment], start: int, end: int) -> list[PhoneSegment]:
    """Segments intersected with [start, end), re-indexed to the fragment."""
    out = []
    for seg in segments:
        if seg.end > start and seg.start < end:
            out.append(PhoneSegment(seg.phone, max(seg.start, start) - start, min(seg.end, end) - start))
    return out


def chop(
    ppg: PosteriorGram, segments: list[PhoneSegment], chop_seconds: float
) -> list[tuple[PosteriorGram, list[PhoneSegment]]]:
    """Split an utterance into fixed-duration fragments.

    Fragment length is floor(chop_seconds * 1000 / frame_shift_ms)
    frames; phones are split at cut points and re-indexed per fragment.
    """
    validate_segments(segments, ppg.num_frames)
    fragment_frames = chop_frames(chop_seconds, ppg.frame_shift_ms)
    out = []
    for start, end in chop_bounds(ppg.num_frames, fragment_frames):
        piece = PosteriorGram(values=ppg.values[start:end].copy(), frame_shift_ms=ppg.frame_shift_ms)
        out.append((piece, clip_segments(segments, start, end)))
    return out


def make_code_switch(
    lm_a: LanguageModelSpec,
    lm_b: LanguageModelSpec,
    total_frames: int,
    switch_prob: float,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> tuple[list[PhoneSegment], list[int]]:
    """Sample an utterance that alternates between two languages.

    At every phone boundary the active language flips with probability
    ``switch_prob``; the next phone is drawn from the active language's
    transition row of the previous phone, so spans are geometric.
    Returns the segments and a parallel 0/1 language label per segment.
    """
    if len(lm_a.inventory) != len(lm_b.inventory):
        raise DataError("code-switched languages must share one inventory")
    if not 0.0 <= switch_prob <= 1.0:
        raise DataError(f"switch_prob must be in [0, 1], got {switch_prob}")
    if total_frames < 1:
        raise DataError(f"total_frames must be >= 1, got {total_frames}")
    if rng is None:
        rng = np.random.default_rng(seed)
    lms = (lm_a, lm_b)
    cdfs = tuple(np.cumsum(lm.transition, axis=1) for lm in lms)
    cur = int(rng.random() < 0.5)
    phone = _sample_index(np.cumsum(lms[cur].initial), rng)
    segments, langs = [], []
    t = 0
    while t < total_frames:
        lm = lms[cur]
        dur = int(rng.integers(lm.dur_min[phone], lm.dur_max[phone] + 1))
        end = min(t + dur, total_frames)
        segments.append(PhoneSegment(phone, t, end))
        langs.append(cur)
        t = end
        if rng.random() < switch_prob:
            cur = 1 - cur
        phone = _sample_index(cdfs[cur][phone], rng)
    return segments, langs


def frame_languages(segments: list[PhoneSegment], seg_langs: list[int]) -> np.ndarray:
    """Per-frame language labels expanded from per-segment labels."""
    if len(segments) != len(seg_langs):
        raise DataError("segments and language labels must be parallel")
    out = np.empty(segments[-1].end, dtype=np.int64)
    for seg, lang in zip(segments, seg_langs):
        out[seg.start : seg.end] = lang
    return out


def majority_label(frame_langs: np.ndarray, start: int, end: int, num_languages: int) -> int:
    """Most frequent language over [start, end); ties break low."""
    counts = np.bincount(frame_langs[start:end], minlength=num_languages)
    return int(np.argmax(counts))


def transition_loglik(phones: list[int], lm: LanguageModelSpec) -> float:
    """Sum of log transition probabilities along a phone sequence."""
    with np.errstate(divide="ignore"):
        log_t = np.log(lm.transition)
    total = 0.0
    for a, b in zip(phones, phones[1:]):
        total += log_t[a, b]
    return float(total)


def classify_loglik(phones: list[int], lms: list[LanguageModelSpec]) -> int:
    """Oracle classifier: argmax of transition log-likelihood, ties low."""
    scores = np.array([transition_loglik(phones, lm) for lm in lms])
    return int(np.argmax(scores))


def make_language_models(
    num_languages: int,
    num_phones: int,
    seed: int = 0,
    dur_min: int = 3,
    dur_max: int = 10,
    concentration: float = 0.1,
) -> tuple[PhoneInventory, list[LanguageModelSpec]]:
    """Random language family sharing one inventory.

    Transition rows are Dirichlet draws with a sparse concentration so
    each language has a distinctive transition structure.  Rows are
    floored at 1e-8 (then renormalized) so log-likelihood scoring never
    sees an exact zero.
    """
    inventory = PhoneInventory(tuple(f"p{i:02d}" for i in range(num_phones)))
    lms = []
    for lang in range(num_languages):
        rng = np.random.default_rng([seed, lang])
        transition = rng.dirichlet(np.full(num_phones, concentration), size=num_phones)
        transition = np.maximum(transition, 1e-8)
        transition /= transition.sum(axis=1, keepdims=True)
        initial = rng.dirichlet(np.ones(num_phones))
        lms.append(
            LanguageModelSpec(
                inventory=inventory,
                transition=transition,
                initial=initial,
                dur_min=np.full(num_phones, dur_min),
                dur_max=np.full(num_phones, dur_max),
                seed=seed + lang,
            )
        )
    return inventory, lms


def build_dataset(cfg: SynthConfig, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write inventory, PPGs, alignments and manifests for all splits.

    Byte-identical for identical configs.  Returns the manifest paths
    keyed by split name.
    """
    out_dir = os.fspath(out_dir)
    inventory, lms = make_language_models(
        cfg.num_languages,
        cfg.num_phones,
        seed=cfg.seed,
        dur_min=cfg.dur_min,
        dur_max=cfg.dur_max,
        concentration=cfg.transition_concentration,
    )
    os.makedirs(os.path.join(out_dir, "ppg"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "align"), exist_ok=True)
    with open(os.path.join(out_dir, "inventory.txt"), "wb") as f:
        f.write(write_inventory(inventory))

    fragment_frames = chop_frames(cfg.chop_seconds, cfg.frame_shift_ms)
    manifests = {}
    splits = [
        ("train", cfg.train_utterances),
        ("dev", cfg.dev_utterances),
        ("test", cfg.test_utterances),
    ]
    for split_idx, (split, count) in enumerate(splits):
        records = []
        for u in range(count):
            rng = np.random.default_rng([cfg.seed, split_idx, u])
            if cfg.code_switch_prob > 0:
                pair = rng.choice(cfg.num_languages, size=2, replace=False)
                segments, seg_langs = make_code_switch(
                    lms[pair[0]], lms[pair[1]], cfg.utterance_frames, cfg.code_switch_prob, rng=rng
                )
                seg_langs = [int(pair[i]) for i in seg_langs]
            else:
                lang = u % cfg.num_languages
                segments = sample_utterance(lms[lang], cfg.utterance_frames, rng=rng)
                seg_langs = [lang] * len(segments)
            ppg = emit_ppg(segments, inventory, cfg.kappa, frame_shift_ms=cfg.frame_shift_ms, rng=rng)
            langs = frame_languages(segments, seg_langs)
            for f_idx, (start, end) in enumerate(chop_bounds(ppg.num_frames, fragment_frames)):
                piece = PosteriorGram(values=ppg.values[start:end].copy(), frame_shift_ms=cfg.frame_shift_ms)
                piece_segs = clip_segments(segments, start, end)
                label = majority_label(langs, start, end, cfg.num_languages)
                utt_id = f"{split}-{u:05d}-{f_idx:02d}"
                with open(os.path.join(out_dir, "ppg", f"{utt_id}.ppg"), "wb") as f:
                    f.write(write_ppg_file(piece))
                with open(os.path.join(out_dir, "align", f"{utt_id}.ali"), "wb") as f:
                    f.write(write_alignment(piece_segs, inventory))
                records.append(
                    UtteranceRecord(utt_id, label, f"ppg/{utt_id}.ppg", f"align/{utt_id}.ali")
                )
        manifest_path = os.path.join(out_dir, f"{split}.tsv")
        with open(manifest_path, "wb") as f:
            f.write(write_manifest(records))
        manifests[split] = manifest_path

    meta = {"config": asdict(cfg), "fragment_frames": fragment_frames}
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifests


__all__ = [
    "LanguageModelSpec",
    "SynthConfig",
    "sample_utterance",
    "emit_ppg",
    "chop",
    "chop_bounds",
    "chop_frames",
    "clip_segments",
    "make_code_switch",
    "frame_languages",
    "majority_label",
    "transition_loglik",
    "classify_loglik",
    "make_language_models",
    "build_dataset",
    "phone_sequence",
]
