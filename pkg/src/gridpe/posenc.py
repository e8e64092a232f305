"""Positional-information schemes behind one model-facing interface.

Five kinds:
  1d               interleaved sin/cos of the flat sequence index
  2d               concatenation of two half-width 1d encodings of (x, y)
  rope             rotation of query/key pairs by position-scaled angles
  learned          trainable per-position table (lives in the model's params)
  relative_bucket  learned per-(bucket, head) additive attention-logit bias

Fixed tables are pure float64 functions of (pos, d_model, base); the model
casts to its working dtype. Swapping kinds never changes a tensor shape —
only whether an additive table, rotation, or logit bias is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("1d", "2d", "rope", "learned", "relative_bucket")


@dataclass(frozen=True)
class PosEncSpec:
    kind: str
    d_model: int = 512
    base: float = 10000.0
    num_buckets: int = 32
    max_distance: int = 128

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown positional encoding kind {self.kind!r}")
        if self.d_model <= 0 or self.d_model % 2:
            raise ValueError(f"d_model must be even and positive, got {self.d_model}")
        if self.kind == "2d" and self.d_model % 4:
            raise ValueError(f"2d encoding needs d_model divisible by 4, got {self.d_model}")
        if self.kind == "relative_bucket":
            if self.num_buckets < 4 or self.num_buckets % 2:
                raise ValueError("num_buckets must be even and >= 4")
            if self.max_distance <= self.num_buckets // 4:
                raise ValueError("max_distance too small for the bucket layout")


def sinusoidal_table(positions, d_model: int, base: float = 10000.0) -> np.ndarray:
    """(..., d_model) interleaved sin/cos table for integer positions."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(d_model // 2, dtype=np.float64)
    ang = pos / base ** (2.0 * i / d_model)
    out = np.empty(ang.shape[:-1] + (d_model,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def sinusoidal_1d(pos: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    """PE(pos, 2i) = sin(pos / base^(2i/d)), PE(pos, 2i+1) = cos(same)."""
    if pos < 0:
        raise ValueError("pos must be >= 0")
    return sinusoidal_table(pos, d_model, base)


def sinusoidal_2d(x: int, y: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    """First d/2 entries encode the column x, last d/2 the row y."""
    if d_model % 4:
        raise ValueError(f"2d encoding needs d_model divisible by 4, got {d_model}")
    half = d_model // 2
    return np.concatenate([sinusoidal_table(x, half, base), sinusoidal_table(y, half, base)], axis=-1)


def sinusoidal_2d_table(
    coords: np.ndarray, spatial: np.ndarray, d_model: int, base: float = 10000.0
) -> np.ndarray:
    """Per-token 2d table: cells use their (x, y); non-spatial tokens get the
    (0, 0) encoding (the model adds a learned flag so they stay distinguishable).

    coords: (..., 2) ints; spatial: (...,) bools.
    """
    coords = np.asarray(coords)
    spatial = np.asarray(spatial, dtype=bool)
    x = np.where(spatial, coords[..., 0], 0)
    y = np.where(spatial, coords[..., 1], 0)
    return sinusoidal_2d(x, y, d_model, base)


# -- rotary ----------------------------------------------------------------------


def rope_tables(positions, d_head: int, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin of pos * theta_i, theta_i = base^(-2i/d_head); shape (..., d_head/2)."""
    if d_head % 2:
        raise ValueError(f"rope needs an even head dim, got {d_head}")
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(d_head // 2, dtype=np.float64)
    ang = pos * base ** (-2.0 * i / d_head)
    return np.cos(ang), np.sin(ang)


def rope_apply(vec: np.ndarray, pos: int, base: float = 10000.0) -> np.ndarray:
    """Rotate consecutive (even, odd) pairs of vec by pos * theta_i."""
    vec = np.asarray(vec, dtype=np.float64)
    cos, sin = rope_tables(pos, vec.shape[-1], base)
    out = np.empty_like(vec)
    out[..., 0::2] = vec[..., 0::2] * cos - vec[..., 1::2] * sin
    out[..., 1::2] = vec[..., 0::2] * sin + vec[..., 1::2] * cos
    return out


# -- relative bucket bias -----------------------------------------------------------


def relative_bucket(i, j, num_buckets: int = 32, max_distance: int = 128) -> np.ndarray:
    """Bucket index for signed distance j - i (T5 convention, bidirectional).

    Half the buckets split by sign; within a sign, half are exact small
    distances and the rest grow logarithmically up to max_distance, beyond
    which everything shares the terminal bucket.
    """
    rel = np.asarray(j, dtype=np.int64) - np.asarray(i, dtype=np.int64)
    nb = num_buckets // 2
    out = (rel > 0).astype(np.int64) * nb
    rel = np.abs(rel)
    max_exact = nb // 2
    large = max_exact + (
        np.log(np.maximum(rel, 1) / max_exact)
        / math.log(max_distance / max_exact)
        * (nb - max_exact)
    ).astype(np.int64)
    large = np.minimum(large, nb - 1)
    out = out + np.where(rel < max_exact, rel, large)
    return out


def bucket_matrix(n: int, num_buckets: int = 32, max_distance: int = 128) -> np.ndarray:
    """(n, n) bucket ids for all query/key position pairs."""
    pos = np.arange(n)
    return relative_bucket(pos[:, None], pos[None, :], num_buckets, max_distance)


# -- attention-bias hook -------------------------------------------------------------


def same_column_bias(strength: float = 2.0):
    """Demonstration attention-bias hook: raise logits between tokens that share
    a grid column. One concrete instance of a task-aware additive bias; the
    hook contract is hook(coords (T,2), spatial (T,)) -> (T, T) additive bias.
    """

    def hook(coords: np.ndarray, spatial: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords)
        spatial = np.asarray(spatial, dtype=bool)
        x = coords[:, 0]
        same = (x[:, None] == x[None, :]) & spatial[:, None] & spatial[None, :]
        return np.where(same, float(strength), 0.0)

    return hook


def dump_table(kind: str, d_model: int, positions: range, base: float = 10000.0) -> list[list[float]]:
    """Rows for --dump-posenc: one encoding vector per position (1d), or per
    (x, y) with y fixed to 0 (2d), or cos/sin angle rows (rope)."""
    if kind == "1d":
        return [list(sinusoidal_1d(p, d_model, base)) for p in positions]
    if kind == "2d":
        return [list(sinusoidal_2d(p, 0, d_model, base)) for p in positions]
    if kind == "rope":
        rows = []
        for p in positions:
            cos, sin = rope_tables(p, d_model, base)
            rows.append(list(cos) + list(sin))
        return rows
    raise ValueError(f"dump_table supports fixed kinds (1d/2d/rope), got {kind!r}")
