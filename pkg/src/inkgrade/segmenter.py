"""Answer-sheet segmentation.

A scanned sheet is cut into answer blocks by row/column ink projections,
each block's ruled grid is found by morphological erosion with long thin
structuring elements, the grid lines are removed, and the cell interiors
are padded to 64x64 and ordered top-right to bottom-left into a vertical
text line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GridNotFoundError, NoContentError
from .imagecore import WHITE, BinaryImage, BoundingBox, GrayImage, binarize, crop

CELL_SIZE = 64


@dataclass(frozen=True)
class SegmenterConfig:
    blank_row_frac: float = 0.005  # min ink fraction of width for a content row
    min_gap: int = 10              # blank rows required to separate blocks
    line_frac: float = 0.7         # structuring element length / block extent
    border_pad: int = 2            # pixels whitened around each grid line
    blank_cell_frac: float = 0.01  # ink fraction below which a cell is blank
    binarize_method: str = "otsu"
    fixed_threshold: int = 128

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ProjectionProfile:
    """Per-row or per-column ink pixel counts."""

    axis: str  # "horizontal" = one count per row; "vertical" = per column
    counts: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64))
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)


@dataclass(frozen=True)
class AnswerBlock:
    box: BoundingBox
    index: int


@dataclass(frozen=True)
class CharacterCell:
    """A cell interior in block coordinates plus its grid position.

    grid_pos = (column_from_right, row_from_top); reading order sorts by
    column first, then row, which linearizes vertical writing.
    """

    box: BoundingBox
    grid_pos: tuple[int, int]


@dataclass(frozen=True)
class TextLineImage:
    """Reading-ordered 64x64 cell images; blanks[i] marks a space cell."""

    cells: tuple[GrayImage, ...]
    blanks: tuple[bool, ...]

    def __post_init__(self):
        for cell in self.cells:
            if cell.width != CELL_SIZE or cell.height != CELL_SIZE:
                raise ValueError("text line cells must be 64x64")
        if len(self.cells) != len(self.blanks):
            raise ValueError("cells and blanks must align")


def project(img: BinaryImage, axis: str) -> ProjectionProfile:
    """Count ink pixels per row ("horizontal") or per column ("vertical")."""
    if axis == "horizontal":
        counts = img.mask.sum(axis=1)
    elif axis == "vertical":
        counts = img.mask.sum(axis=0)
    else:
        raise ValueError(f"unknown projection axis {axis!r}")
    return ProjectionProfile(axis, counts)


def _content_runs(flags: np.ndarray, min_gap: int) -> list[tuple[int, int]]:
    """Maximal [start, end) runs of True, merging runs split by short gaps."""
    idx = np.flatnonzero(flags)
    if idx.size == 0:
        return []
    runs: list[tuple[int, int]] = []
    start = prev = int(idx[0])
    for i in idx[1:]:
        i = int(i)
        if i - prev - 1 >= min_gap:
            runs.append((start, prev + 1))
            start = i
        prev = i
    runs.append((start, prev + 1))
    return runs


def _binarize(sheet: GrayImage, cfg: SegmenterConfig) -> BinaryImage:
    return binarize(sheet, cfg.binarize_method, cfg.fixed_threshold)


def segment_blocks(sheet: GrayImage, cfg: SegmenterConfig | None = None) -> list[AnswerBlock]:
    """Find answer blocks by a horizontal projection refined by a vertical one.

    Content rows are rows whose ink count reaches blank_row_frac of the sheet
    width; runs separated by fewer than min_gap blank rows merge into one
    block.  Each run is then trimmed left/right to its ink extent.
    """
    cfg = cfg or SegmenterConfig()
    mask = _binarize(sheet, cfg).mask
    row_counts = mask.sum(axis=1)
    thr = max(1, int(round(cfg.blank_row_frac * sheet.width)))
    runs = _content_runs(row_counts >= thr, cfg.min_gap)
    blocks: list[AnswerBlock] = []
    for index, (y0, y1) in enumerate(runs):
        col_counts = mask[y0:y1].sum(axis=0)
        cols = np.flatnonzero(col_counts > 0)
        x0, x1 = int(cols[0]), int(cols[-1]) + 1
        blocks.append(AnswerBlock(BoundingBox(x0, y0, x1 - x0, y1 - y0), index))
    if not blocks:
        raise NoContentError("no answer blocks found")
    return blocks


def _window_full_runs(mask: np.ndarray, length: int, axis: int) -> np.ndarray:
    """Pixels where an all-ink run of ``length`` exists along ``axis``."""
    ink = mask.astype(np.int32)
    # Moving sum of window `length` via cumulative sums.
    cs = np.cumsum(ink, axis=axis)
    pad_shape = list(ink.shape)
    pad_shape[axis] = 1
    cs = np.concatenate([np.zeros(pad_shape, dtype=np.int32), cs], axis=axis)
    take_hi = [slice(None)] * ink.ndim
    take_lo = [slice(None)] * ink.ndim
    take_hi[axis] = slice(length, None)
    take_lo[axis] = slice(0, -length)
    window = cs[tuple(take_hi)] - cs[tuple(take_lo)]
    return window == length  # window sums; index i = run starting at i


def detect_borderlines(block: BinaryImage, cfg: SegmenterConfig | None = None) -> tuple[list[int], list[int]]:
    """Locate ruled grid lines by erosion with 1xL / Lx1 structuring elements.

    L is line_frac of the block width (horizontal lines) or height (vertical
    lines), so handwriting strokes are erased and only ruled lines survive.
    Returns the integer center coordinate of each surviving line band.
    """
    cfg = cfg or SegmenterConfig()
    h, w = block.mask.shape
    len_h = max(1, int(round(cfg.line_frac * w)))
    len_v = max(1, int(round(cfg.line_frac * h)))
    if len_h > w or len_v > h:
        raise GridNotFoundError("block smaller than structuring element")

    surviving_rows = _window_full_runs(block.mask, len_h, axis=1).any(axis=1)
    surviving_cols = _window_full_runs(block.mask, len_v, axis=0).any(axis=0)

    rows = [(a + b - 1) // 2 for a, b in _content_runs(surviving_rows, 1)]
    cols = [(a + b - 1) // 2 for a, b in _content_runs(surviving_cols, 1)]
    if len(rows) < 2 or len(cols) < 2:
        raise GridNotFoundError(f"grid needs >=2 row and column lines, got {len(rows)}x{len(cols)}")
    return rows, cols


def extract_cells(block: GrayImage, rows: Sequence[int], cols: Sequence[int],
                  cfg: SegmenterConfig | None = None) -> list[CharacterCell]:
    """One cell per grid rectangle, shrunk past a border_pad band on each line.

    Cell (i, j) lies between column lines i,i+1 and row lines j,j+1; its
    grid_pos counts columns from the right and rows from the top.
    """
    cfg = cfg or SegmenterConfig()
    if len(rows) < 2 or len(cols) < 2:
        raise GridNotFoundError("cell extraction needs at least a 2x2 line grid")
    n_cols = len(cols) - 1
    cells: list[CharacterCell] = []
    pad = cfg.border_pad
    for i in range(n_cols):
        for j in range(len(rows) - 1):
            x0 = cols[i] + pad + 1
            x1 = cols[i + 1] - pad - 1
            y0 = rows[j] + pad + 1
            y1 = rows[j + 1] - pad - 1
            if x1 < x0 or y1 < y0:
                raise GridNotFoundError("grid pitch smaller than border padding")
            box = BoundingBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
            cells.append(CharacterCell(box, (n_cols - 1 - i, j)))
    return cells


def _nearest_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = pixels.shape
    ys = np.minimum((np.arange(out_h) * in_h) // out_h, in_h - 1)
    xs = np.minimum((np.arange(out_w) * in_w) // out_w, in_w - 1)
    return pixels[np.ix_(ys, xs)]


def pad_to_64(cell: GrayImage) -> GrayImage:
    """Center a cell on a white 64x64 canvas.

    Oversized cells are first downscaled (nearest neighbor, aspect preserved)
    so the longer side fits in 64.
    """
    px = cell.pixels
    h, w = px.shape
    if h > CELL_SIZE or w > CELL_SIZE:
        scale = min(CELL_SIZE / w, CELL_SIZE / h)
        new_w = max(1, int(w * scale))
        new_h = max(1, int(h * scale))
        px = _nearest_resize(px, new_h, new_w)
        h, w = new_h, new_w
    if h == CELL_SIZE and w == CELL_SIZE:
        return GrayImage(px)
    canvas = np.full((CELL_SIZE, CELL_SIZE), WHITE, dtype=np.uint8)
    oy = (CELL_SIZE - h) // 2
    ox = (CELL_SIZE - w) // 2
    canvas[oy : oy + h, ox : ox + w] = px
    return GrayImage(canvas)


def _is_blank(cell: GrayImage, cfg: SegmenterConfig) -> bool:
    mask = binarize(cell, "fixed", cfg.fixed_threshold).mask
    return mask.mean() < cfg.blank_cell_frac


def assemble_line(cells: Sequence[tuple[CharacterCell, GrayImage]],
                  cfg: SegmenterConfig | None = None) -> TextLineImage:
    """Order cells top-right to bottom-left and trim trailing blank cells.

    Interior blank cells stay in the line as space markers; only the blank
    tail (the unused end of the grid) is dropped.
    """
    cfg = cfg or SegmenterConfig()
    ordered = sorted(cells, key=lambda item: item[0].grid_pos)
    images = [pad_to_64(img) for _, img in ordered]
    blanks = [_is_blank(img, cfg) for img in images]
    end = len(blanks)
    while end > 0 and blanks[end - 1]:
        end -= 1
    return TextLineImage(tuple(images[:end]), tuple(blanks[:end]))


# -- whole-sheet convenience --------------------------------------------------


@dataclass(frozen=True)
class BlockSegmentation:
    block: AnswerBlock
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    cells: tuple[CharacterCell, ...]
    line: TextLineImage


def segment_sheet(sheet: GrayImage, cfg: SegmenterConfig | None = None) -> list[BlockSegmentation]:
    """Run the full block -> grid -> cells -> line pipeline on one sheet."""
    cfg = cfg or SegmenterConfig()
    results = []
    for block in segment_blocks(sheet, cfg):
        block_img = crop(sheet, block.box)
        block_mask = _binarize(block_img, cfg)
        rows, cols = detect_borderlines(block_mask, cfg)
        cells = extract_cells(block_img, rows, cols, cfg)
        line = assemble_line([(c, crop(block_img, c.box)) for c in cells], cfg)
        results.append(BlockSegmentation(block, tuple(rows), tuple(cols), tuple(cells), line))
    return results


def segmentation_to_json(blocks: Sequence[BlockSegmentation]) -> str:
    """Export detected geometry as JSON: {blocks: [{box, cells: [...]}]}."""
    payload = {
        "blocks": [
            {
                "box": [b.block.box.x, b.block.box.y, b.block.box.w, b.block.box.h],
                "cells": [
                    {
                        "box": [c.box.x, c.box.y, c.box.w, c.box.h],
                        "grid_pos": list(c.grid_pos),
                    }
                    for c in b.cells
                ],
            }
            for b in blocks
        ]
    }
    return json.dumps(payload, indent=2, sort_keys=True)
