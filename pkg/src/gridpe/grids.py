"""Rectangular color grids, the universal input/output object.

Cells hold color indices 0..9 (0 = black background), stored row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_COLORS = 10
BACKGROUND = 0


@dataclass(frozen=True)
class Grid:
    height: int
    width: int
    cells: tuple[int, ...]  # row-major, each in 0..9

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid extents must be >= 1, got {self.height}x{self.width}")
        if len(self.cells) != self.height * self.width:
            raise ValueError(
                f"cell count {len(self.cells)} != {self.height}x{self.width}"
            )
        if any(not (0 <= c < N_COLORS) for c in self.cells):
            raise ValueError("cell colors must be in 0..9")

    @classmethod
    def from_rows(cls, rows) -> "Grid":
        rows = [list(r) for r in rows]
        h = len(rows)
        w = len(rows[0]) if rows else 0
        if any(len(r) != w for r in rows):
            raise ValueError("ragged rows")
        return cls(h, w, tuple(int(c) for r in rows for c in r))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Grid":
        arr = np.asarray(arr)
        return cls(arr.shape[0], arr.shape[1], tuple(int(c) for c in arr.reshape(-1)))

    def to_rows(self) -> list[list[int]]:
        return [list(self.cells[y * self.width : (y + 1) * self.width]) for y in range(self.height)]

    def to_array(self) -> np.ndarray:
        return np.array(self.cells, dtype=np.int64).reshape(self.height, self.width)

    def at(self, y: int, x: int) -> int:
        return self.cells[y * self.width + x]


def rotate90(g: Grid) -> Grid:
    """Clockwise quarter turn: out[x][h-1-y] = in[y][x]; dimensions swap."""
    return Grid.from_array(np.rot90(g.to_array(), k=-1))
