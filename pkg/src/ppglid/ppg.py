"""Phonetic posteriorgram data model, file I/O, decoding and tokenization.

A posteriorgram (PPG) is a T x P row-stochastic matrix: for each of T
frames, a posterior distribution over P phones.  This module owns the
on-disk text formats (PPG, alignment, inventory, manifest), a greedy
frame decoder used when no alignment file exists, phone-wise PPG
averaging, and construction of the three token-embedding inputs
(ppg_frm / phone_emb / avppg) consumed by the encoder.

All functions here are pure over immutable inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

# Token embedding modes.
PPG_FRM = "ppg_frm"
PHONE_EMB = "phone_emb"
AVPPG = "avppg"
MODES = (PPG_FRM, PHONE_EMB, AVPPG)
VECTOR_MODES = (PPG_FRM, AVPPG)

# Reserved token ids for phone_emb mode; real phones start at PHONE_ID_BASE.
PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
PHONE_ID_BASE = 3

# Row sums further than this from 1 are rejected instead of renormalized.
ROW_SUM_TOL = 1e-3


@dataclass(frozen=True)
class PhoneInventory:
    """Ordered phone label set; a symbol's line number is its index."""

    symbols: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise DataError("phone inventory needs at least 2 symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("phone inventory has duplicate symbols")
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class PosteriorGram:
    """T x P matrix of per-frame phone posteriors plus the frame shift."""

    values: np.ndarray
    frame_shift_ms: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 2:
            raise DataError(f"posteriorgram must be T x P with T >= 1, P >= 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("posteriorgram has non-finite entries")
        if v.min() < 0.0 or v.max() > 1.0 + 1e-9:
            raise DataError("posteriorgram entries must lie in [0, 1]")
        sums = v.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise DataError("posteriorgram rows must sum to 1 within 1e-5")
        if not self.frame_shift_ms > 0:
            raise DataError("frame_shift_ms must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_phones(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, order=True)
class PhoneSegment:
    """Half-open frame span [start, end) labeled with one phone index."""

    phone: int
    start: int
    end: int

    def __post_init__(self):
        if self.phone < 0:
            raise DataError(f"negative phone index {self.phone}")
        if not 0 <= self.start < self.end:
            raise DataError(f"bad segment span [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class TokenizedInput:
    """Fixed-length encoder input: content, positions, segment ids, mask.

    ``content`` is an (L, P) float matrix for vector modes or an (L,)
    id vector for phone_emb.  The mask is true on the real-token prefix
    and false on trailing padding.  Two slots are always left free for
    the CLS/SEP specials the encoder inserts.
    """

    mode: str
    content: np.ndarray
    positions: np.ndarray
    segments: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"unknown token mode {self.mode!r}")
        L = len(self.mask)
        if not (len(self.content) == len(self.positions) == len(self.segments) == L):
            raise DataError("tokenized input lists must have equal length")
        if not np.array_equal(self.positions, np.arange(L)):
            raise DataError("positions must be 0..L-1")
        if np.any(self.segments != 0):
            raise DataError("segment ids must all be 0")
        n = int(self.mask.sum())
        if not (np.all(self.mask[:n]) and not np.any(self.mask[n:])):
            raise DataError("mask must be a true prefix followed by padding")

    @property
    def length(self) -> int:
        return len(self.mask)

    @property
    def num_tokens(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class UtteranceRecord:
    """One manifest row: utterance id, language label, file paths."""

    id: str
    label: int
    ppg_path: str
    align_path: str | None = None


def _fmt(x: float) -> str:
    # repr gives the shortest decimal string that round-trips the float.
    return repr(float(x))


# ---------------------------------------------------------------------------
# PPG text format: header "PPG <T> <P> <frame_shift_ms>", then T rows of
# P space-separated floats.


def parse_ppg_file(data: bytes | str) -> PosteriorGram:
    """Parse PPG text, renormalizing rows whose sum is within 1e-3 of 1."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.splitlines()
    if not lines:
        raise FormatError("line 1: empty PPG file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "PPG":
        raise FormatError(f"line 1: malformed PPG header {lines[0]!r}")
    try:
        n_frames, n_phones = int(head[1]), int(head[2])
        frame_shift = float(head[3])
    except ValueError:
        raise FormatError(f"line 1: non-numeric field in header {lines[0]!r}") from None
    if n_frames < 1 or n_phones < 2 or not frame_shift > 0:
        raise FormatError(f"line 1: header values out of range {lines[0]!r}")

    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n_frames:
        raise FormatError(f"line {len(lines)}: expected {n_frames} data rows, found {len(body)}")

    values = np.empty((n_frames, n_phones), dtype=np.float64)
    for i, line in enumerate(body):
        lineno = i + 2
        parts = line.split()
        if len(parts) != n_phones:
            raise FormatError(f"line {lineno}: expected {n_phones} values, found {len(parts)}")
        try:
            row = np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric entry in {line!r}") from None
        if np.any(row < 0.0):
            raise FormatError(f"line {lineno}: negative posterior entry")
        s = row.sum()
        if abs(s - 1.0) > ROW_SUM_TOL:
            raise FormatError(f"line {lineno}: row sum {s!r} outside tolerance {ROW_SUM_TOL}")
        values[i] = row / s
    return PosteriorGram(values=values, frame_shift_ms=frame_shift)


def write_ppg_file(ppg: PosteriorGram) -> bytes:
    lines = [f"PPG {ppg.num_frames} {ppg.num_phones} {_fmt(ppg.frame_shift_ms)}"]
    for row in ppg.values:
        lines.append(" ".join(_fmt(x) for x in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_ppg(path: str | os.PathLike) -> PosteriorGram:
    with open(path, "rb") as f:
        return parse_ppg_file(f.read())


# ---------------------------------------------------------------------------
# Alignment format: one "<phone_symbol> <start_frame> <end_frame>" line per
# segment, sorted by start, covering [0, T) without gaps or overlaps.


def validate_segments(segments: list[PhoneSegment], num_frames: int) -> None:
    """Check the coverage invariant: sorted, gapless, spans exactly [0, T)."""
    if not segments:
        raise DataError("empty segment list")
    if segments[0].start != 0:
        raise DataError(f"segments must start at frame 0, got {segments[0].start}")
    for prev, cur in zip(segments, segments[1:]):
        if cur.start != prev.end:
            kind = "overlap" if cur.start < prev.end else "gap"
            raise DataError(f"{kind} between frames {prev.end} and {cur.start}")
    if segments[-1].end != num_frames:
        raise DataError(f"segments end at {segments[-1].end}, expected {num_frames}")


def parse_alignment(data: bytes | str, inventory: PhoneInventory, num_frames: int) -> list[PhoneSegment]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    segments = []
    lineno = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 'phone start end', got {line!r}")
        symbol, start_s, end_s = parts
        if symbol not in inventory.index:
            raise FormatError(f"line {lineno}: unknown phone symbol {symbol!r}")
        try:
            start, end = int(start_s), int(end_s)
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer frame index in {line!r}") from None
        if not 0 <= start < end:
            raise FormatError(f"line {lineno}: bad span [{start}, {end})")
        if end > num_frames:
            raise FormatError(f"line {lineno}: segment end {end} exceeds frame count {num_frames}")
        segments.append(PhoneSegment(inventory.index[symbol], start, end))
    try:
        validate_segments(segments, num_frames)
    except DataError as e:
        raise FormatError(f"alignment does not cover [0, {num_frames}): {e}") from None
    return segments


def write_alignment(segments: list[PhoneSegment], inventory: PhoneInventory) -> bytes:
    lines = [f"{inventory.symbols[s.phone]} {s.start} {s.end}" for s in segments]
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_alignment(path: str | os.PathLike, inventory: PhoneInventory, num_frames: int) -> list[PhoneSegment]:
    with open(path, "rb") as f:
        return parse_alignment(f.read(), inventory, num_frames)


# ---------------------------------------------------------------------------
# Inventory format: one phone symbol per line, line number = phone index.


def parse_inventory(data: bytes | str) -> PhoneInventory:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    symbols = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        sym = line.strip()
        if not sym:
            continue
        if len(sym.split()) != 1:
            raise FormatError(f"line {lineno}: phone symbol may not contain whitespace")
        symbols.append(sym)
    if len(symbols) < 2:
        raise FormatError("inventory must list at least 2 phone symbols")
    if len(set(symbols)) != len(symbols):
        raise FormatError("inventory has duplicate phone symbols")
    return PhoneInventory(tuple(symbols))


def write_inventory(inventory: PhoneInventory) -> bytes:
    return ("\n".join(inventory.symbols) + "\n").encode("utf-8")


def read_inventory(path: str | os.PathLike) -> PhoneInventory:
    with open(path, "rb") as f:
        return parse_inventory(f.read())


# ---------------------------------------------------------------------------
# Manifest format: TSV with columns id, label, ppg_path, align_path,
# where align_path may be "-" for none.  Paths are relative to the
# manifest's directory.


def parse_manifest(data: bytes | str) -> list[UtteranceRecord]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    records = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"line {lineno}: expected 4 tab-separated columns, got {len(parts)}")
        utt_id, label_s, ppg_path, align_path = parts
        if utt_id in seen:
            raise FormatError(f"line {lineno}: duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        try:
            label = int(label_s)
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer label {label_s!r}") from None
        if label < 0:
            raise FormatError(f"line {lineno}: negative label {label}")
        records.append(UtteranceRecord(utt_id, label, ppg_path, None if align_path == "-" else align_path))
    if not records:
        raise FormatError("empty manifest")
    return records


def write_manifest(records: list[UtteranceRecord]) -> bytes:
    lines = [f"{r.id}\t{r.label}\t{r.ppg_path}\t{r.align_path or '-'}" for r in records]
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_manifest(path: str | os.PathLike) -> list[UtteranceRecord]:
    with open(path, "rb") as f:
        return parse_manifest(f.read())


# ---------------------------------------------------------------------------
# Greedy decoding and phone-wise averaging.


def greedy_decode(ppg: PosteriorGram, min_run: int = 1) -> list[PhoneSegment]:
    """Segment a PPG by per-frame argmax.

    Ties break toward the lowest phone index.  Consecutive equal labels
    merge into one segment; a run shorter than ``min_run`` is absorbed
    into the segment before it (the first run is exempt).  The result
    always covers [0, T).
    """
    if min_run < 1:
        raise DataError(f"min_run must be >= 1, got {min_run}")
    labels = np.argmax(ppg.values, axis=1)
    merged: list[list[int]] = []
    run_start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[run_start]:
            phone = int(labels[run_start])
            if merged and t - run_start < min_run:
                merged[-1][2] = t
            elif merged and merged[-1][0] == phone:
                merged[-1][2] = t
            else:
                merged.append([phone, run_start, t])
            run_start = t
    return [PhoneSegment(*m) for m in merged]


def average_ppg(ppg: PosteriorGram, segments: list[PhoneSegment]) -> np.ndarray:
    """Mean PPG row per segment, as an S x P matrix.

    Frames are accumulated left to right in double precision and divided
    once, so results are bit-for-bit reproducible.
    """
    validate_segments(segments, ppg.num_frames)
    out = np.empty((len(segments), ppg.num_phones), dtype=np.float64)
    for s, seg in enumerate(segments):
        acc = np.zeros(ppg.num_phones, dtype=np.float64)
        for t in range(seg.start, seg.end):
            acc += ppg.values[t]
        out[s] = acc / seg.length
    return out


def phone_sequence(segments: list[PhoneSegment]) -> list[int]:
    return [s.phone for s in segments]


def make_vocab_map(inventory: PhoneInventory) -> dict[int, int]:
    """Phone index -> token id, with ids 0..2 reserved for PAD/CLS/SEP."""
    return {i: PHONE_ID_BASE + i for i in range(len(inventory))}


def vocab_size(inventory: PhoneInventory) -> int:
    return PHONE_ID_BASE + len(inventory)


# ---------------------------------------------------------------------------
# Token construction.


def build_tokens(
    ppg: PosteriorGram,
    segments: list[PhoneSegment] | None,
    mode: str,
    vocab_map: dict[int, int] | None = None,
    max_len: int = 256,
) -> TokenizedInput:
    """Build the encoder input for one utterance in the given mode.

    ppg_frm uses raw frame rows as tokens, avppg uses segment-averaged
    rows, phone_emb uses token ids looked up from ``vocab_map``.  Token
    sequences longer than max_len - 2 are tail-truncated (two slots stay
    reserved for the CLS/SEP specials) and the rest is padded to max_len
    with the mask false.
    """
    if mode not in MODES:
        raise DataError(f"unknown token mode {mode!r}")
    if max_len < 3:
        raise DataError(f"max_len must be >= 3, got {max_len}")
    limit = max_len - 2

    if mode == PPG_FRM:
        rows = ppg.values
    else:
        if segments is None:
            raise DataError(f"mode {mode} requires phone segments")
        if not segments:
            raise DataError("empty utterance: no phone segments")
        if mode == AVPPG:
            rows = average_ppg(ppg, segments)
        else:
            if vocab_map is None:
                raise DataError("mode phone_emb requires a vocab_map")
            ids = []
            for seg in segments:
                if seg.phone not in vocab_map:
                    raise DataError(f"vocab_map does not cover phone index {seg.phone}")
                ids.append(vocab_map[seg.phone])

    if mode == PHONE_EMB:
        n = min(len(ids), limit)
        content = np.full(max_len, PAD_ID, dtype=np.int64)
        content[:n] = ids[:n]
    else:
        n = min(rows.shape[0], limit)
        content = np.zeros((max_len, ppg.num_phones), dtype=np.float64)
        content[:n] = rows[:n]

    mask = np.zeros(max_len, dtype=bool)
    mask[:n] = True
    return TokenizedInput(
        mode=mode,
        content=content,
        positions=np.arange(max_len),
        segments=np.zeros(max_len, dtype=np.int64),
        mask=mask,
    )


def segments_for(
    ppg: PosteriorGram,
    align_path: str | None,
    inventory: PhoneInventory,
    decode: bool = False,
    min_run: int = 1,
) -> list[PhoneSegment]:
    """Segments from the alignment file if present, else greedy decoding.

    Raises unless an alignment exists or ``decode`` is set, so callers
    surface a clear error instead of silently decoding.
    """
    if align_path is not None:
        return read_alignment(align_path, inventory, ppg.num_frames)
    if not decode:
        raise DataError("no alignment file; pass --decode to derive segments by greedy decoding")
    return greedy_decode(ppg, min_run=min_run)
