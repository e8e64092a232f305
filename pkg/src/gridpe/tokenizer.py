"""Grid <-> token sequences, plus model input/target composition.

Token ids are a frozen wire-format contract (vocabulary size 20):
colors 0-9 -> ids 0-9, Start=10, End=11, RowOpen=12, RowClose=13, Pad=14,
Sep=15; ids 16-19 are reserved.

Two formats: raw (Start, cells row-major, End) and bracketed (Start, then
RowOpen/cells/RowClose per row, End). Every token carries an (x, y)
coordinate; special tokens are flagged non-spatial (bracket tokens record the
y of their row).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import Grid
from .tasks import Example

VOCAB_SIZE = 20
MAX_TOKENS = 512

COLOR_IDS = tuple(range(10))
START, END, ROW_OPEN, ROW_CLOSE, PAD, SEP = 10, 11, 12, 13, 14, 15
IGNORE = -1  # loss-mask value in target arrays, never a real token

TOKEN_NAMES = {
    **{i: f"color_{i}" for i in COLOR_IDS},
    START: "start",
    END: "end",
    ROW_OPEN: "row_open",
    ROW_CLOSE: "row_close",
    PAD: "pad",
    SEP: "sep",
    16: "reserved_16",
    17: "reserved_17",
    18: "reserved_18",
    19: "reserved_19",
}

FORMATS = ("raw", "bracketed")


class CapacityError(ValueError):
    """Sequence would exceed the 512-token budget."""


class DecodeError(ValueError):
    """Token sequence does not decode to a grid (scored 0, never a crash)."""


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    coords: tuple[tuple[int, int], ...]  # (x, y) per token
    spatial: tuple[bool, ...]  # False for special tokens
    format: str
    source_shape: tuple[int, int]  # (height, width)

    def __len__(self) -> int:
        return len(self.tokens)


def sequence_length(h: int, w: int, fmt: str) -> int:
    """raw: h*w + 2; bracketed: h*w + 2h + 2."""
    return h * w + 2 + (2 * h if fmt == "bracketed" else 0)


def tokenize(g: Grid, fmt: str) -> TokenSequence:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    n = sequence_length(g.height, g.width, fmt)
    if n > MAX_TOKENS:
        raise CapacityError(
            f"{g.height}x{g.width} grid needs {n} {fmt} tokens; the limit is {MAX_TOKENS}"
        )
    tokens = [START]
    coords = [(0, 0)]
    spatial = [False]
    for y in range(g.height):
        if fmt == "bracketed":
            tokens.append(ROW_OPEN)
            coords.append((0, y))
            spatial.append(False)
        for x in range(g.width):
            tokens.append(g.at(y, x))
            coords.append((x, y))
            spatial.append(True)
        if fmt == "bracketed":
            tokens.append(ROW_CLOSE)
            coords.append((0, y))
            spatial.append(False)
    tokens.append(END)
    coords.append((0, 0))
    spatial.append(False)
    return TokenSequence(
        tokens=tuple(tokens),
        coords=tuple(coords),
        spatial=tuple(spatial),
        format=fmt,
        source_shape=(g.height, g.width),
    )


def detokenize(tokens, fmt: str, expected_width: int | None = None) -> Grid:
    """Inverse of tokenize. Raw needs expected_width (the evaluator supplies
    the ground-truth output width); bracketed is self-delimiting."""
    toks = list(int(t) for t in tokens)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    if len(toks) < 2 or toks[0] != START or toks[-1] != END:
        raise DecodeError("sequence must be framed by Start ... End")
    body = toks[1:-1]
    if fmt == "raw":
        if expected_width is None:
            raise DecodeError("raw decoding requires expected_width")
        if any(t not in COLOR_IDS for t in body):
            raise DecodeError("raw body must contain only color tokens")
        if expected_width < 1 or len(body) == 0 or len(body) % expected_width:
            raise DecodeError(
                f"cell count {len(body)} is not divisible by width {expected_width}"
            )
        h = len(body) // expected_width
        return Grid(h, expected_width, tuple(body))
    rows: list[list[int]] = []
    cur: list[int] | None = None
    for t in body:
        if t == ROW_OPEN:
            if cur is not None:
                raise DecodeError("nested RowOpen")
            cur = []
        elif t == ROW_CLOSE:
            if cur is None:
                raise DecodeError("RowClose without RowOpen")
            rows.append(cur)
            cur = None
        elif t in COLOR_IDS:
            if cur is None:
                raise DecodeError("cell outside a row")
            cur.append(t)
        else:
            raise DecodeError(f"stray special token {t}")
    if cur is not None:
        raise DecodeError("unclosed row")
    if not rows or any(len(r) == 0 for r in rows):
        raise DecodeError("empty grid or empty row")
    if len(set(len(r) for r in rows)) != 1:
        raise DecodeError("ragged rows")
    return Grid.from_rows(rows)


@dataclass(frozen=True)
class ComposedExample:
    """Model-ready sequences for one example.

    encoder_decoder: enc_* hold the input grid; dec_in_* are the teacher-forced
    decoder input ([Start] ++ target[:-1]) and targets the full tokenized
    output. decoder_only: enc_* are empty; dec_in_*/targets are the shifted
    combined sequence tokenize(input) ++ [Sep] ++ tokenize(output); targets
    before the output framing are IGNORE.
    """

    arch: str
    format: str
    enc_tokens: tuple[int, ...]
    enc_coords: tuple[tuple[int, int], ...]
    enc_spatial: tuple[bool, ...]
    dec_in_tokens: tuple[int, ...]
    dec_in_coords: tuple[tuple[int, int], ...]
    dec_in_spatial: tuple[bool, ...]
    targets: tuple[int, ...]
    input_shape: tuple[int, int]
    output_shape: tuple[int, int]


def compose_example(ex: Example, fmt: str, arch: str) -> ComposedExample:
    if arch not in ("encoder_decoder", "decoder_only"):
        raise ValueError(f"unknown arch {arch!r}")
    src = tokenize(ex.input, fmt)
    tgt = tokenize(ex.output, fmt)
    if arch == "encoder_decoder":
        dec_in = (START,) + tgt.tokens[:-1]
        dec_coords = ((0, 0),) + tgt.coords[:-1]
        dec_spatial = (False,) + tgt.spatial[:-1]
        return ComposedExample(
            arch=arch,
            format=fmt,
            enc_tokens=src.tokens,
            enc_coords=src.coords,
            enc_spatial=src.spatial,
            dec_in_tokens=dec_in,
            dec_in_coords=dec_coords,
            dec_in_spatial=dec_spatial,
            targets=tgt.tokens,
            input_shape=src.source_shape,
            output_shape=tgt.source_shape,
        )
    full_tokens = src.tokens + (SEP,) + tgt.tokens
    full_coords = src.coords + ((0, 0),) + tgt.coords
    full_spatial = src.spatial + (False,) + tgt.spatial
    if len(full_tokens) > MAX_TOKENS:
        raise CapacityError(
            f"decoder-only sequence needs {len(full_tokens)} tokens; the limit is {MAX_TOKENS}"
        )
    sep_idx = len(src.tokens)  # position of Sep in the combined sequence
    dec_in = full_tokens[:-1]
    targets = tuple(
        tok if pos + 1 > sep_idx else IGNORE for pos, tok in enumerate(full_tokens[1:])
    )
    return ComposedExample(
        arch=arch,
        format=fmt,
        enc_tokens=(),
        enc_coords=(),
        enc_spatial=(),
        dec_in_tokens=dec_in,
        dec_in_coords=full_coords[:-1],
        dec_in_spatial=full_spatial[:-1],
        targets=targets,
        input_shape=src.source_shape,
        output_shape=tgt.source_shape,
    )


def composed_length(ex: Example, fmt: str, arch: str) -> int:
    """Token budget a composed example needs (max of the two streams)."""
    hi, wi = ex.input.height, ex.input.width
    ho, wo = ex.output.height, ex.output.width
    if arch == "decoder_only":
        return sequence_length(hi, wi, fmt) + 1 + sequence_length(ho, wo, fmt)
    return max(sequence_length(hi, wi, fmt), sequence_length(ho, wo, fmt))


def vocab_table() -> dict:
    """Token id table (wire-format contract), as dumped by --dump-vocab."""
    return {
        "vocab_size": VOCAB_SIZE,
        "max_tokens": MAX_TOKENS,
        "ids": {name: tid for tid, name in sorted(TOKEN_NAMES.items())},
    }
