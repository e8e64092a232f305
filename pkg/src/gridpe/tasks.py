"""Procedural ARC-style task families with controlled orientation and size.

Four families, each with a generator and an independently implemented rule
function; generated outputs are cross-checked against apply_rule. Generation
is a pure function of (spec, index): a vertical example equals the 90-degree
rotation of the horizontal example for the same (seed, index).

Families:
  line_connect    fill rows whose two end pixels share a non-background color
  majority_object crop of the most frequent (shape, color) object
  recolor_fill    enclosed background regions are filled with color 4
  denoise         isolated single pixels are erased, larger shapes kept
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grids import BACKGROUND, Grid, rotate90
from .rng import stream

FAMILIES = ("line_connect", "majority_object", "recolor_fill", "denoise")
ORIENTATIONS = ("horizontal", "vertical", "mixed")
FILL_COLOR = 4  # recolor_fill target color; outlines never use it

_MAX_PLACEMENT_TRIES = 200


class GenerationError(ValueError):
    """Size bounds cannot accommodate the requested family."""


@dataclass(frozen=True)
class TaskSpec:
    family: str
    orientation: str = "horizontal"
    size_bounds: tuple[int, int, int] = (3, 10, 40)  # (min_dim, max_dim, max_dim_sum)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        lo, hi, cap = self.size_bounds
        if not (1 <= lo <= hi) or cap < 2 * lo:
            raise ValueError(f"bad size bounds {self.size_bounds}")


@dataclass(frozen=True)
class Example:
    input: Grid
    output: Grid
    task_family: str
    index: int = 0


# -- rules (pure functions of the input, kept separate from the generators) ------


def line_connect_rule(g: Grid) -> Grid:
    a = g.to_array()
    h, w = a.shape
    ys, xs = np.nonzero(a)
    if ys.size == 0:
        raise ValueError("line_connect input has no pixels")
    if np.all((xs == 0) | (xs == w - 1)) and np.all((ys > 0) & (ys < h - 1)):
        out = a.copy()
        for y in range(h):
            if a[y, 0] != BACKGROUND and a[y, 0] == a[y, w - 1]:
                out[y, :] = a[y, 0]
        return Grid.from_array(out)
    if np.all((ys == 0) | (ys == h - 1)) and np.all((xs > 0) & (xs < w - 1)):
        out = a.copy()
        for x in range(w):
            if a[0, x] != BACKGROUND and a[0, x] == a[h - 1, x]:
                out[:, x] = a[0, x]
        return Grid.from_array(out)
    raise ValueError("line_connect input matches neither orientation layout")


def _components(a: np.ndarray) -> list[list[tuple[int, int]]]:
    """4-connected components of equal-colored non-background cells."""
    h, w = a.shape
    seen = np.zeros_like(a, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if a[y, x] == BACKGROUND or seen[y, x]:
                continue
            color = a[y, x]
            todo = [(y, x)]
            seen[y, x] = True
            cells = []
            while todo:
                cy, cx = todo.pop()
                cells.append((cy, cx))
                for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and a[ny, nx] == color:
                        seen[ny, nx] = True
                        todo.append((ny, nx))
            comps.append(cells)
    return comps


def _normalize(cells: list[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    y0 = min(c[0] for c in cells)
    x0 = min(c[1] for c in cells)
    return tuple(sorted((y - y0, x - x0) for y, x in cells))


def majority_object_rule(g: Grid) -> Grid:
    a = g.to_array()
    counts: dict[tuple, int] = {}
    for cells in _components(a):
        key = (_normalize(cells), int(a[cells[0]]))
        counts[key] = counts.get(key, 0) + 1
    if not counts:
        raise ValueError("majority_object input has no objects")
    best = max(counts.values())
    winners = [k for k, v in counts.items() if v == best]
    if len(winners) > 1:
        raise ValueError("tied object counts")
    shape, color = winners[0]
    hh = max(y for y, _ in shape) + 1
    ww = max(x for _, x in shape) + 1
    out = np.zeros((hh, ww), dtype=np.int64)
    for y, x in shape:
        out[y, x] = color
    return Grid.from_array(out)


def recolor_fill_rule(g: Grid) -> Grid:
    a = g.to_array()
    h, w = a.shape
    reach = np.zeros((h, w), dtype=bool)
    todo = [
        (y, x)
        for y in range(h)
        for x in range(w)
        if (y in (0, h - 1) or x in (0, w - 1)) and a[y, x] == BACKGROUND
    ]
    for y, x in todo:
        reach[y, x] = True
    while todo:
        cy, cx = todo.pop()
        for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
            if 0 <= ny < h and 0 <= nx < w and not reach[ny, nx] and a[ny, nx] == BACKGROUND:
                reach[ny, nx] = True
                todo.append((ny, nx))
    out = a.copy()
    out[(a == BACKGROUND) & ~reach] = FILL_COLOR
    return Grid.from_array(out)


def denoise_rule(g: Grid) -> Grid:
    a = g.to_array()
    h, w = a.shape
    out = a.copy()
    for y in range(h):
        for x in range(w):
            if a[y, x] == BACKGROUND:
                continue
            isolated = all(
                not (0 <= ny < h and 0 <= nx < w) or a[ny, nx] == BACKGROUND
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1))
            )
            if isolated:
                out[y, x] = BACKGROUND
    return Grid.from_array(out)


_RULES = {
    "line_connect": line_connect_rule,
    "majority_object": majority_object_rule,
    "recolor_fill": recolor_fill_rule,
    "denoise": denoise_rule,
}


def apply_rule(family: str, g: Grid) -> Grid:
    return _RULES[family](g)


# -- generators ------------------------------------------------------------------


def _sample_dims(rng: np.random.Generator, lo: int, hi: int, cap: int) -> tuple[int, int]:
    h = int(rng.integers(lo, hi + 1))
    w_hi = min(hi, cap - h)
    if w_hi < lo:
        raise GenerationError(f"bounds ({lo}, {hi}, sum<={cap}) admit no width for height {h}")
    w = int(rng.integers(lo, w_hi + 1))
    return h, w


def _gen_line_connect(rng: np.random.Generator, lo: int, hi: int, cap: int) -> Grid:
    lo = max(lo, 3)
    if hi < lo or cap < 2 * lo:
        raise GenerationError("line_connect needs dims >= 3")
    h, w = _sample_dims(rng, lo, hi, cap)
    a = np.zeros((h, w), dtype=np.int64)
    interior = np.arange(1, h - 1)
    n_rows = int(rng.integers(1, len(interior) + 1))
    rows = rng.choice(interior, size=n_rows, replace=False)
    connect = rng.random(n_rows) < 0.5
    connect[int(rng.integers(n_rows))] = True  # at least one connectable row
    for y, conn in zip(rows, connect):
        left = int(rng.integers(1, 10))
        if conn:
            right = left
        else:
            right = int(rng.integers(1, 10))
            while right == left:
                right = int(rng.integers(1, 10))
        a[y, 0] = left
        a[y, w - 1] = right
    return Grid.from_array(a)


def _random_polyomino(rng: np.random.Generator, size: int) -> tuple[tuple[int, int], ...]:
    cells = {(0, 0)}
    while len(cells) < size:
        y, x = list(cells)[int(rng.integers(len(cells)))]
        ny, nx = (
            (y - 1, x),
            (y + 1, x),
            (y, x - 1),
            (y, x + 1),
        )[int(rng.integers(4))]
        cells.add((ny, nx))
    return _normalize(sorted(cells))


def _place_shapes(
    rng: np.random.Generator,
    h: int,
    w: int,
    shapes: list[tuple[tuple[tuple[int, int], ...], int]],
) -> np.ndarray | None:
    """Place (shape, color) items with 1-cell separation; None if it won't fit."""
    a = np.zeros((h, w), dtype=np.int64)
    blocked = np.zeros((h, w), dtype=bool)
    for shape, color in shapes:
        sh = max(y for y, _ in shape) + 1
        sw = max(x for _, x in shape) + 1
        if sh > h or sw > w:
            return None
        for _ in range(_MAX_PLACEMENT_TRIES):
            oy = int(rng.integers(0, h - sh + 1))
            ox = int(rng.integers(0, w - sw + 1))
            spots = [(oy + y, ox + x) for y, x in shape]
            if any(blocked[y, x] for y, x in spots):
                continue
            for y, x in spots:
                a[y, x] = color
                y0, y1 = max(0, y - 1), min(h, y + 2)
                x0, x1 = max(0, x - 1), min(w, x + 2)
                blocked[y0:y1, x0:x1] = True
            break
        else:
            return None
    return a


def _gen_majority_object(rng: np.random.Generator, lo: int, hi: int, cap: int) -> Grid:
    lo = max(lo, 6)
    if hi < lo or cap < 2 * lo:
        raise GenerationError("majority_object needs dims >= 6")
    for _ in range(_MAX_PLACEMENT_TRIES):
        h, w = _sample_dims(rng, lo, hi, cap)
        maj_shape = _random_polyomino(rng, int(rng.integers(2, 5)))
        colors = rng.permutation(np.arange(1, 10))
        maj_color = int(colors[0])
        maj_count = int(rng.integers(2, 4))
        n_distract = int(rng.integers(1, 3))
        items = [(maj_shape, maj_color)] * maj_count
        for d in range(n_distract):
            d_shape = _random_polyomino(rng, int(rng.integers(2, 5)))
            items.append((d_shape, int(colors[d + 1])))
        order = rng.permutation(len(items))
        a = _place_shapes(rng, h, w, [items[i] for i in order])
        if a is not None:
            return Grid.from_array(a)
    raise GenerationError("could not place majority_object shapes within bounds")


def _gen_recolor_fill(rng: np.random.Generator, lo: int, hi: int, cap: int) -> Grid:
    lo = max(lo, 5)
    if hi < lo or cap < 2 * lo:
        raise GenerationError("recolor_fill needs dims >= 5")
    outline_colors = [c for c in range(1, 10) if c != FILL_COLOR]
    for _ in range(_MAX_PLACEMENT_TRIES):
        h, w = _sample_dims(rng, lo, hi, cap)
        a = np.zeros((h, w), dtype=np.int64)
        blocked = np.zeros((h, w), dtype=bool)
        placed = 0
        for _ in range(int(rng.integers(1, 4))):
            rh = int(rng.integers(3, min(h, 6) + 1))
            rw = int(rng.integers(3, min(w, 6) + 1))
            for _ in range(_MAX_PLACEMENT_TRIES):
                oy = int(rng.integers(0, h - rh + 1))
                ox = int(rng.integers(0, w - rw + 1))
                if blocked[oy : oy + rh, ox : ox + rw].any():
                    continue
                color = outline_colors[int(rng.integers(len(outline_colors)))]
                a[oy : oy + rh, ox : ox + rw] = color
                a[oy + 1 : oy + rh - 1, ox + 1 : ox + rw - 1] = BACKGROUND
                y0, y1 = max(0, oy - 1), min(h, oy + rh + 1)
                x0, x1 = max(0, ox - 1), min(w, ox + rw + 1)
                blocked[y0:y1, x0:x1] = True
                placed += 1
                break
        if placed:
            return Grid.from_array(a)
    raise GenerationError("could not place recolor_fill rectangles within bounds")


def _gen_denoise(rng: np.random.Generator, lo: int, hi: int, cap: int) -> Grid:
    lo = max(lo, 5)
    if hi < lo or cap < 2 * lo:
        raise GenerationError("denoise needs dims >= 5")
    for _ in range(_MAX_PLACEMENT_TRIES):
        h, w = _sample_dims(rng, lo, hi, cap)
        shapes = []
        for _ in range(int(rng.integers(1, 4))):
            shapes.append((_random_polyomino(rng, int(rng.integers(2, 6))), int(rng.integers(1, 10))))
        a = _place_shapes(rng, h, w, shapes)
        if a is None:
            continue
        occupied = a != BACKGROUND
        pad = np.pad(occupied, 1)
        near = (
            pad[1:-1, 1:-1] | pad[:-2, 1:-1] | pad[2:, 1:-1] | pad[1:-1, :-2] | pad[1:-1, 2:]
        )
        free = [tuple(p) for p in np.argwhere(~near)]
        if not free:
            continue
        n_specks = min(int(rng.integers(1, 5)), len(free))
        picked: list[tuple[int, int]] = []
        order = rng.permutation(len(free))
        for i in order:
            y, x = free[i]
            if any(abs(y - py) + abs(x - px) == 1 for py, px in picked):
                continue  # adjacent specks would form a preserved shape
            picked.append((y, x))
            if len(picked) == n_specks:
                break
        if not picked:
            continue
        for y, x in picked:
            a[y, x] = int(rng.integers(1, 10))
        return Grid.from_array(a)
    raise GenerationError("could not place denoise shapes within bounds")


_GENERATORS = {
    "line_connect": _gen_line_connect,
    "majority_object": _gen_majority_object,
    "recolor_fill": _gen_recolor_fill,
    "denoise": _gen_denoise,
}


def generate(spec: TaskSpec, index: int) -> Example:
    """Deterministic example #index for spec; vertical = rotate90(horizontal)."""
    lo, hi, cap = spec.size_bounds
    rng = stream(spec.seed, "task", spec.family, index)
    inp = _GENERATORS[spec.family](rng, lo, hi, cap)
    out = apply_rule(spec.family, inp)
    orientation = spec.orientation
    if orientation == "mixed":
        coin = stream(spec.seed, "orient", spec.family, index)
        orientation = "vertical" if coin.random() < 0.5 else "horizontal"
    if orientation == "vertical":
        inp, out = rotate90(inp), rotate90(out)
    return Example(input=inp, output=out, task_family=spec.family, index=index)


def generate_line_connect(spec: TaskSpec, index: int) -> Example:
    return generate(replace(spec, family="line_connect"), index)


def generate_majority_object(spec: TaskSpec, index: int) -> Example:
    return generate(replace(spec, family="majority_object"), index)


def generate_recolor_fill(spec: TaskSpec, index: int) -> Example:
    return generate(replace(spec, family="recolor_fill"), index)


def generate_denoise(spec: TaskSpec, index: int) -> Example:
    return generate(replace(spec, family="denoise"), index)


# -- dataset assembly --------------------------------------------------------------


def _serial(ex: Example) -> tuple:
    return (
        ex.input.height,
        ex.input.width,
        ex.input.cells,
        ex.output.height,
        ex.output.width,
        ex.output.cells,
    )


def build_dataset(
    spec: TaskSpec,
    n_examples: int,
    split_seed: int = 0,
    max_total_tokens: int | None = None,
    token_length=None,
) -> tuple[list[Example], list[Example]]:
    """Deterministic, disjoint (train, eval) sets: n_examples train examples
    plus min(500, max(1, n/20)) eval examples, unique under grid serialization.

    token_length(example) -> int, with max_total_tokens, filters out examples
    that would not fit a composed sequence budget (decoder-only runs).
    """
    if n_examples < 1:
        raise ValueError("n_examples must be >= 1")
    eval_n = min(500, max(1, n_examples // 20))
    total = n_examples + eval_n
    unique: list[Example] = []
    seen: set[tuple] = set()
    index = 0
    limit = 200 * total + 1000
    while len(unique) < total:
        if index >= limit:
            raise GenerationError(
                f"exhausted {limit} candidate indices collecting {total} unique examples"
            )
        ex = generate(spec, index)
        index += 1
        if max_total_tokens is not None and token_length is not None:
            if token_length(ex) > max_total_tokens:
                continue
        key = _serial(ex)
        if key in seen:
            continue
        seen.add(key)
        unique.append(ex)
    perm = stream(split_seed, "split", spec.family).permutation(total)
    eval_ids = set(int(i) for i in perm[:eval_n])
    eval_set = [unique[i] for i in sorted(eval_ids)]
    train_set = [unique[i] for i in range(total) if i not in eval_ids]
    return train_set, eval_set


def dump_examples(path: str | Path, examples: list[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "input": ex.input.to_rows(),
                        "output": ex.output.to_rows(),
                        "family": ex.task_family,
                        "index": ex.index,
                    }
                )
                + "\n"
            )


def load_examples(path: str | Path) -> list[Example]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(
                Example(
                    input=Grid.from_rows(rec["input"]),
                    output=Grid.from_rows(rec["output"]),
                    task_family=rec["family"],
                    index=rec["index"],
                )
            )
    return out
