import math

import numpy as np
import pytest

from gridpe.posenc import (
    PosEncSpec,
    bucket_matrix,
    dump_table,
    relative_bucket,
    rope_apply,
    rope_tables,
    same_column_bias,
    sinusoidal_1d,
    sinusoidal_2d,
    sinusoidal_2d_table,
    sinusoidal_table,
)


def test_sinusoidal_1d_pos0():
    assert np.allclose(sinusoidal_1d(0, 4), [0.0, 1.0, 0.0, 1.0], atol=0)


def test_sinusoidal_1d_closed_form_pos1():
    expect = [math.sin(1.0), math.cos(1.0), math.sin(0.01), math.cos(0.01)]
    assert np.allclose(sinusoidal_1d(1, 4), expect, atol=1e-15)


def test_sinusoidal_entries_bounded():
    table = sinusoidal_table(np.arange(512), 64)
    assert table.min() >= -1.0 and table.max() <= 1.0


def test_sinusoidal_2d_zero_case():
    assert np.allclose(sinusoidal_2d(0, 0, 8), [0, 1, 0, 1, 0, 1, 0, 1], atol=0)


def test_sinusoidal_2d_is_exact_concatenation():
    for x, y in [(0, 0), (1, 2), (7, 3), (39, 39)]:
        enc = sinusoidal_2d(x, y, 16)
        assert np.array_equal(enc[:8], sinusoidal_1d(x, 8))
        assert np.array_equal(enc[8:], sinusoidal_1d(y, 8))


def test_sinusoidal_2d_second_half_closed_form():
    enc = sinusoidal_2d(1, 2, 8)
    expect = [math.sin(2.0), math.cos(2.0), math.sin(0.02), math.cos(0.02)]
    assert np.allclose(enc[4:], expect, atol=1e-15)


def test_sinusoidal_2d_shared_axes():
    # same column -> identical first half; same row -> identical second half
    a = sinusoidal_2d(3, 1, 12)
    b = sinusoidal_2d(3, 5, 12)
    c = sinusoidal_2d(7, 5, 12)
    assert np.array_equal(a[:6], b[:6])
    assert np.array_equal(b[6:], c[6:])


def test_sinusoidal_2d_rejects_indivisible_d_model():
    with pytest.raises(ValueError):
        sinusoidal_2d(0, 0, 6)
    with pytest.raises(ValueError):
        PosEncSpec(kind="2d", d_model=6)


def test_2d_table_nonspatial_tokens_get_origin_encoding():
    coords = np.array([[3, 2], [0, 0]])
    spatial = np.array([False, True])
    table = sinusoidal_2d_table(coords, spatial, 8)
    assert np.array_equal(table[0], sinusoidal_2d(0, 0, 8))
    assert np.array_equal(table[1], sinusoidal_2d(0, 0, 8))


def test_rope_pos0_is_identity():
    v = np.random.default_rng(0).normal(size=8)
    assert np.allclose(rope_apply(v, 0), v, atol=0)


def test_rope_preserves_norm():
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.normal(size=16)
        p = int(rng.integers(0, 500))
        assert abs(np.linalg.norm(rope_apply(v, p)) - np.linalg.norm(v)) < 1e-6


def test_rope_shift_invariance_100_draws():
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = rng.normal(size=16)
        k = rng.normal(size=16)
        m = int(rng.integers(0, 200))
        n = int(rng.integers(0, 200))
        t = int(rng.integers(0, 200))
        a = float(rope_apply(q, m) @ rope_apply(k, n))
        b = float(rope_apply(q, m + t) @ rope_apply(k, n + t))
        assert abs(a - b) < 1e-5


def test_rope_rejects_odd_head_dim():
    with pytest.raises(ValueError):
        rope_tables(np.arange(3), 5)


def test_bucket_zero_distance():
    assert int(relative_bucket(7, 7)) == 0


def test_bucket_depends_only_on_distance():
    assert int(relative_bucket(3, 7)) == int(relative_bucket(10, 14))


def test_bucket_terminal_saturation():
    # enumerate distances 0..256: everything beyond max_distance shares one bucket
    buckets = relative_bucket(np.zeros(257, dtype=int), np.arange(257), 32, 128)
    far = buckets[129:]
    assert len(set(far.tolist())) == 1
    assert far[0] == buckets.max()
    near = buckets[:8]
    assert near.tolist() == [0, 17, 18, 19, 20, 21, 22, 23]


def test_bucket_sign_split():
    pos = int(relative_bucket(0, 5))
    neg = int(relative_bucket(5, 0))
    assert pos != neg
    assert 0 <= pos < 32 and 0 <= neg < 32


def test_bucket_matrix_shape_and_range():
    m = bucket_matrix(40)
    assert m.shape == (40, 40)
    assert m.min() >= 0 and m.max() < 32
    assert np.all(np.diag(m) == 0)


def test_same_column_bias_hook():
    coords = np.array([[0, 0], [1, 0], [0, 1], [0, 0]])
    spatial = np.array([True, True, True, False])
    bias = same_column_bias(2.5)(coords, spatial)
    assert bias.shape == (4, 4)
    assert bias[0, 2] == 2.5 and bias[2, 0] == 2.5  # share column x=0
    assert bias[0, 1] == 0.0  # different columns
    assert bias[0, 3] == 0.0  # non-spatial token never biased


def test_dump_table_rows():
    rows = dump_table("1d", 8, range(0, 4))
    assert len(rows) == 4 and len(rows[0]) == 8
    assert rows[0] == list(sinusoidal_1d(0, 8))
