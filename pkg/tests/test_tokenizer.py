import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridpe.grids import Grid
from gridpe.tasks import Example
from gridpe.tokenizer import (
    CapacityError,
    DecodeError,
    END,
    IGNORE,
    PAD,
    ROW_CLOSE,
    ROW_OPEN,
    SEP,
    START,
    VOCAB_SIZE,
    compose_example,
    detokenize,
    sequence_length,
    tokenize,
    vocab_table,
)

grids = st.integers(1, 8).flatmap(
    lambda h: st.integers(1, 8).flatmap(
        lambda w: st.lists(
            st.integers(0, 9), min_size=h * w, max_size=h * w
        ).map(lambda cells: Grid(h, w, tuple(cells)))
    )
)


def test_token_id_contract_is_frozen():
    ids = vocab_table()["ids"]
    assert ids["color_0"] == 0 and ids["color_9"] == 9
    assert ids["start"] == 10 and ids["end"] == 11
    assert ids["row_open"] == 12 and ids["row_close"] == 13
    assert ids["pad"] == 14 and ids["sep"] == 15
    assert vocab_table()["vocab_size"] == VOCAB_SIZE == 20


def test_raw_tokenization_example():
    g = Grid.from_rows([[2, 3], [0, 0]])
    seq = tokenize(g, "raw")
    assert seq.tokens == (10, 2, 3, 0, 0, 11)
    assert seq.coords[1:5] == ((0, 0), (1, 0), (0, 1), (1, 1))
    assert seq.spatial == (False, True, True, True, True, False)


def test_bracketed_tokenization_example():
    g = Grid.from_rows([[2, 3], [0, 0]])
    seq = tokenize(g, "bracketed")
    assert seq.tokens == (10, 12, 2, 3, 13, 12, 0, 0, 13, 11)
    # bracket tokens record the y of their row, flagged non-spatial
    assert seq.coords[1] == (0, 0) and not seq.spatial[1]
    assert seq.coords[5] == (0, 1) and not seq.spatial[5]


@given(grids, st.sampled_from(["raw", "bracketed"]))
def test_round_trip_identity(g, fmt):
    seq = tokenize(g, fmt)
    width = g.width if fmt == "raw" else None
    assert detokenize(seq.tokens, fmt, expected_width=width) == g


@given(grids)
def test_length_formulas_exact(g):
    h, w = g.height, g.width
    assert len(tokenize(g, "raw")) == h * w + 2
    assert len(tokenize(g, "bracketed")) == h * w + 2 * h + 2
    assert sequence_length(h, w, "raw") == h * w + 2
    assert sequence_length(h, w, "bracketed") == h * w + 2 * h + 2


def test_raw_decode_with_width():
    assert detokenize([10, 2, 3, 0, 0, 11], "raw", expected_width=2) == Grid.from_rows(
        [[2, 3], [0, 0]]
    )


@pytest.mark.parametrize(
    "tokens,fmt,width",
    [
        ([10, 12, 1, 13, 12, 1, 1, 13, 11], "bracketed", None),  # ragged rows
        ([10, 2, 3, 0, 11], "raw", 2),  # cell count not divisible
        ([10, 2, 15, 0, 0, 11], "raw", 2),  # stray special
        ([10, 12, 1, 12, 1, 13, 13, 11], "bracketed", None),  # nested RowOpen
        ([10, 1, 13, 11], "bracketed", None),  # RowClose without open
        ([2, 3, 11], "raw", 1),  # missing Start
        ([10, 2, 3], "raw", 1),  # missing End
        ([10, 11], "raw", 1),  # empty body
        ([10, 12, 13, 11], "bracketed", None),  # empty row
        ([10, 2, 3, 0, 0, 11], "raw", None),  # raw without width
    ],
)
def test_malformed_decodes_raise_decode_error(tokens, fmt, width):
    with pytest.raises(DecodeError):
        detokenize(tokens, fmt, expected_width=width)


def test_tokenize_capacity_error_names_limit():
    g = Grid(23, 23, tuple([0] * (23 * 23)))
    with pytest.raises(CapacityError, match="512"):
        tokenize(g, "raw")


def big_example(n):
    g = Grid(n, n, tuple([1] * (n * n)))
    return Example(input=g, output=g, task_family="denoise")


def test_compose_teacher_forcing_shift():
    ex = Example(
        input=Grid.from_rows([[2, 3], [0, 0]]),
        output=Grid.from_rows([[2, 3]]),
        task_family="denoise",
    )
    c = compose_example(ex, "raw", "encoder_decoder")
    assert c.targets == (10, 2, 3, 11)
    assert c.dec_in_tokens == (10, 10, 2, 3)
    assert c.enc_tokens == (10, 2, 3, 0, 0, 11)


def test_compose_decoder_only_masks_prompt():
    ex = Example(
        input=Grid.from_rows([[5]]),
        output=Grid.from_rows([[6]]),
        task_family="denoise",
    )
    c = compose_example(ex, "raw", "decoder_only")
    # sequence: 10 5 11 15 10 6 11 ; inputs drop the last token
    assert c.dec_in_tokens == (10, 5, 11, 15, 10, 6, 11)[:-1]
    sep_idx = 3
    assert all(t == IGNORE for t in c.targets[:sep_idx])
    assert c.targets[sep_idx:] == (10, 6, 11)


def test_compose_decoder_only_capacity_error():
    with pytest.raises(CapacityError, match="512"):
        compose_example(big_example(20), "raw", "decoder_only")


def test_compose_encoder_decoder_20x20_fits():
    c = compose_example(big_example(20), "raw", "encoder_decoder")
    assert len(c.enc_tokens) == 402
    assert len(c.targets) == 402
