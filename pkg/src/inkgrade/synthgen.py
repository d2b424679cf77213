"""Synthetic handwriting corpus generation.

Glyphs are rendered from procedural stroke programs with per-sample jitter,
optionally distorted by the training augmentations (rotation, shear, shift,
blur, salt-and-pepper noise), and assembled into ruled answer sheets whose
exact geometry and transcription are returned as ground truth.  A small
procedural language (lexicon + keyword words) provides text for language
model training and for score-rubric corpora.

All generation is a pure function of (spec, seed) through the portable RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .errors import SheetSpecError, UnknownLabelError
from .imagecore import WHITE, BoundingBox, GrayImage
from .rng import Rng, splitmix64

GLYPH_SIZE = 64
# Glyph strokes live in the central region so rotation/shift never clips them.
_GLYPH_MARGIN = 12.0
_GLYPH_SPAN = GLYPH_SIZE - 2 * _GLYPH_MARGIN

# -- stroke programs ----------------------------------------------------------
# Each program is a list of primitives in the unit square (x right, y down):
#   ("line", (x0, y0), (x1, y1), ...)            polyline through the points
#   ("arc", cx, cy, rx, ry, deg0, deg1)          elliptic arc, 0 deg = +x axis

_STROKES = {
    "0": [("arc", 0.5, 0.5, 0.3, 0.44, 0, 360)],
    "1": [("line", (0.32, 0.18), (0.52, 0.05), (0.52, 0.95))],
    "2": [("line", (0.24, 0.22), (0.4, 0.06), (0.62, 0.06), (0.76, 0.22),
           (0.72, 0.42), (0.22, 0.95), (0.8, 0.95))],
    "3": [("arc", 0.45, 0.27, 0.27, 0.22, -80, 90),
          ("arc", 0.45, 0.72, 0.3, 0.24, -90, 100)],
    "4": [("line", (0.58, 0.05), (0.16, 0.62), (0.88, 0.62)),
          ("line", (0.64, 0.35), (0.64, 0.95))],
    "5": [("line", (0.76, 0.05), (0.26, 0.05), (0.23, 0.45)),
          ("arc", 0.47, 0.67, 0.29, 0.27, -90, 160)],
    "6": [("line", (0.68, 0.05), (0.38, 0.42), (0.27, 0.62)),
          ("arc", 0.48, 0.7, 0.25, 0.24, 0, 360)],
    "7": [("line", (0.16, 0.05), (0.84, 0.05), (0.4, 0.95))],
    "8": [("arc", 0.5, 0.27, 0.23, 0.21, 0, 360),
          ("arc", 0.5, 0.73, 0.27, 0.23, 0, 360)],
    "9": [("arc", 0.47, 0.3, 0.25, 0.24, 0, 360),
          ("line", (0.72, 0.3), (0.6, 0.95))],
    "a": [("arc", 0.45, 0.66, 0.24, 0.27, 0, 360),
          ("line", (0.69, 0.4), (0.69, 0.95))],
    "b": [("line", (0.26, 0.05), (0.26, 0.95)),
          ("arc", 0.5, 0.68, 0.24, 0.25, 0, 360)],
    "c": [("arc", 0.52, 0.65, 0.28, 0.3, 45, 315)],
    "d": [("line", (0.74, 0.05), (0.74, 0.95)),
          ("arc", 0.5, 0.68, 0.24, 0.25, 0, 360)],
    "e": [("line", (0.24, 0.64), (0.78, 0.64)),
          ("arc", 0.5, 0.66, 0.27, 0.28, 0, 310)],
    "f": [("arc", 0.6, 0.22, 0.18, 0.16, 180, 300),
          ("line", (0.42, 0.22), (0.42, 0.95)),
          ("line", (0.24, 0.48), (0.62, 0.48))],
    "g": [("arc", 0.45, 0.6, 0.24, 0.23, 0, 360),
          ("line", (0.69, 0.4), (0.69, 0.82), (0.54, 0.96), (0.34, 0.9))],
    "h": [("line", (0.26, 0.05), (0.26, 0.95)),
          ("line", (0.26, 0.6), (0.44, 0.42), (0.68, 0.5), (0.68, 0.95))],
    "j": [("line", (0.6, 0.18), (0.6, 0.24)),
          ("line", (0.6, 0.38), (0.6, 0.84), (0.46, 0.96), (0.3, 0.9))],
    "k": [("line", (0.26, 0.05), (0.26, 0.95)),
          ("line", (0.7, 0.4), (0.26, 0.68)),
          ("line", (0.44, 0.57), (0.74, 0.95))],
    "m": [("line", (0.15, 0.4), (0.15, 0.95)),
          ("line", (0.15, 0.55), (0.3, 0.38), (0.46, 0.55), (0.46, 0.95)),
          ("line", (0.46, 0.55), (0.62, 0.38), (0.8, 0.55), (0.8, 0.95))],
    "n": [("line", (0.26, 0.4), (0.26, 0.95)),
          ("line", (0.26, 0.55), (0.46, 0.38), (0.68, 0.5), (0.68, 0.95))],
    "p": [("line", (0.26, 0.42), (0.26, 0.97)),
          ("arc", 0.52, 0.62, 0.24, 0.23, 0, 360)],
    "q": [("arc", 0.48, 0.62, 0.24, 0.23, 0, 360),
          ("line", (0.72, 0.42), (0.72, 0.97))],
    "r": [("line", (0.3, 0.4), (0.3, 0.95)),
          ("line", (0.3, 0.58), (0.46, 0.42), (0.7, 0.42))],
    "s": [("line", (0.72, 0.42), (0.5, 0.36), (0.3, 0.46), (0.5, 0.62),
           (0.7, 0.76), (0.5, 0.92), (0.26, 0.85))],
    "t": [("line", (0.45, 0.1), (0.45, 0.82), (0.58, 0.95)),
          ("line", (0.26, 0.35), (0.7, 0.35))],
    "u": [("line", (0.26, 0.4), (0.26, 0.76), (0.42, 0.95), (0.64, 0.86)),
          ("line", (0.7, 0.4), (0.7, 0.95))],
    "v": [("line", (0.2, 0.4), (0.48, 0.95), (0.76, 0.4))],
    "w": [("line", (0.14, 0.4), (0.3, 0.95), (0.48, 0.55), (0.66, 0.95), (0.84, 0.4))],
    "x": [("line", (0.22, 0.4), (0.76, 0.95)),
          ("line", (0.76, 0.4), (0.22, 0.95))],
    "y": [("line", (0.22, 0.4), (0.5, 0.82)),
          ("line", (0.76, 0.4), (0.38, 0.97))],
    "z": [("line", (0.24, 0.4), (0.74, 0.4), (0.22, 0.95), (0.78, 0.95))],
    "+": [("line", (0.5, 0.22), (0.5, 0.78)),
          ("line", (0.22, 0.5), (0.78, 0.5))],
    "-": [("line", (0.2, 0.5), (0.8, 0.5))],
    "*": [("line", (0.5, 0.18), (0.5, 0.82)),
          ("line", (0.24, 0.34), (0.76, 0.66)),
          ("line", (0.76, 0.34), (0.24, 0.66))],
    "=": [("line", (0.2, 0.36), (0.8, 0.36)),
          ("line", (0.2, 0.64), (0.8, 0.64))],
    "/": [("line", (0.7, 0.08), (0.3, 0.92))],
    "<": [("line", (0.76, 0.2), (0.24, 0.5), (0.76, 0.8))],
    ">": [("line", (0.24, 0.2), (0.76, 0.5), (0.24, 0.8))],
}

DEFAULT_ALPHABET = "0123456789abcdefghjkmnpqrstuvwxyz+-*=/<>"


@dataclass(frozen=True)
class GlyphAtlas:
    """Ordered alphabet plus the per-label stroke programs that render it."""

    labels: tuple[str, ...]
    strokes: dict
    samples_per_label: int = 0

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("atlas labels must be unique")
        missing = [l for l in self.labels if l not in self.strokes]
        if missing:
            raise ValueError(f"labels without stroke programs: {missing}")

    def label_id(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(f"label {label!r} not in atlas") from None


def default_atlas(alphabet: str = DEFAULT_ALPHABET) -> GlyphAtlas:
    labels = tuple(alphabet)
    for l in labels:
        if l not in _STROKES:
            raise UnknownLabelError(f"no stroke program for {l!r}")
    return GlyphAtlas(labels, {l: _STROKES[l] for l in labels})


@dataclass(frozen=True)
class AugmentParams:
    """Uniform sampling ranges for the five augmentations, applied in the
    fixed order rotation -> shear -> shift -> blur -> noise."""

    rotation: tuple[float, float] = (0.0, 0.0)  # degrees
    shear: tuple[float, float] = (0.0, 0.0)     # horizontal shear factor
    shift: tuple[float, float] = (0.0, 0.0)     # pixels, both axes
    blur: tuple[float, float] = (0.0, 0.0)      # gaussian sigma
    noise: tuple[float, float] = (0.0, 0.0)     # salt-and-pepper probability
    rng_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "rotation": list(self.rotation), "shear": list(self.shear),
            "shift": list(self.shift), "blur": list(self.blur),
            "noise": list(self.noise), "rng_seed": self.rng_seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "AugmentParams":
        return AugmentParams(
            rotation=tuple(d.get("rotation", (0.0, 0.0))),
            shear=tuple(d.get("shear", (0.0, 0.0))),
            shift=tuple(d.get("shift", (0.0, 0.0))),
            blur=tuple(d.get("blur", (0.0, 0.0))),
            noise=tuple(d.get("noise", (0.0, 0.0))),
            rng_seed=int(d.get("rng_seed", 0)),
        )


# -- glyph rendering ----------------------------------------------------------


def _expand_primitive(prim, rng: Rng) -> np.ndarray:
    """Expand a primitive to jittered polyline points in canvas pixels."""
    if prim[0] == "line":
        pts = np.array(prim[1:], dtype=np.float64)
    elif prim[0] == "arc":
        _, cx, cy, rx, ry, a0, a1 = prim
        steps = max(8, int(abs(a1 - a0) / 15))
        ang = np.radians(np.linspace(a0, a1, steps + 1))
        pts = np.stack([cx + rx * np.cos(ang), cy + ry * np.sin(ang)], axis=1)
    else:
        raise ValueError(f"unknown primitive {prim[0]!r}")
    jitter = rng.normal(size=2 * len(pts), std=0.018).reshape(-1, 2)
    return (pts + jitter) * _GLYPH_SPAN + _GLYPH_MARGIN


def _draw_segments(canvas: np.ndarray, pts: np.ndarray, radius: float, ink: float) -> None:
    """Stamp anti-aliased constant-width segments onto the canvas (min-compose)."""
    h, w = canvas.shape
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        lo_x = max(0, int(min(x0, x1) - radius - 1))
        hi_x = min(w, int(max(x0, x1) + radius + 2))
        lo_y = max(0, int(min(y0, y1) - radius - 1))
        hi_y = min(h, int(max(y0, y1) + radius + 2))
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        ys, xs = np.mgrid[lo_y:hi_y, lo_x:hi_x]
        dx, dy = x1 - x0, y1 - y0
        seg_len2 = dx * dx + dy * dy
        if seg_len2 < 1e-12:
            t = np.zeros_like(xs, dtype=np.float64)
        else:
            t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg_len2, 0.0, 1.0)
        dist = np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy))
        alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)
        value = WHITE - alpha * (WHITE - ink)
        region = canvas[lo_y:hi_y, lo_x:hi_x]
        np.minimum(region, value, out=region)


def render_glyph(atlas: GlyphAtlas, label: str, seed: int) -> GrayImage:
    """Render one 64x64 glyph; deterministic for (label, seed), with stroke
    jitter, width and darkness variation between seeds."""
    if label not in atlas.strokes:
        raise UnknownLabelError(f"label {label!r} not in atlas")
    rng = Rng(splitmix64(seed, 0x617 + atlas.label_id(label)))
    canvas = np.full((GLYPH_SIZE, GLYPH_SIZE), float(WHITE))
    radius = rng.uniform(0.8, 1.3)
    ink = rng.uniform(0.0, 60.0)
    scale_x = rng.uniform(0.86, 1.0)
    scale_y = rng.uniform(0.86, 1.0)
    center = GLYPH_SIZE / 2.0
    for prim in atlas.strokes[label]:
        pts = _expand_primitive(prim, rng)
        pts[:, 0] = center + (pts[:, 0] - center) * scale_x
        pts[:, 1] = center + (pts[:, 1] - center) * scale_y
        _draw_segments(canvas, pts, radius, ink)
    return GrayImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


# -- augmentation -------------------------------------------------------------


def _bilinear_sample(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample px at float coords; coordinates outside the raster read white."""
    h, w = px.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.full(xs.shape, float(WHITE))
            vals[inside] = px[yi[inside], xi[inside]]
            weight = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            out += weight * vals
    return out


def _gaussian_blur(px: np.ndarray, sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    padded = np.pad(px, radius, mode="constant", constant_values=WHITE)
    tmp = np.zeros_like(px, dtype=np.float64)
    for k, weight in enumerate(taps):
        tmp += weight * padded[radius:-radius or None, k : k + px.shape[1]]
    padded = np.pad(tmp, ((radius, radius), (0, 0)), mode="constant", constant_values=WHITE)
    out = np.zeros_like(px, dtype=np.float64)
    for k, weight in enumerate(taps):
        out += weight * padded[k : k + px.shape[0], :]
    return out


def augment(img: GrayImage, params: AugmentParams, seed: int) -> GrayImage:
    """Apply rotation -> shear -> shift -> blur -> noise with parameters drawn
    uniformly from the configured ranges.

    Positive angles rotate the content clockwise on screen (y axis points
    down).  The canvas stays 64x64; exposed background is white.
    """
    rng = Rng(params.rng_seed).fork_index(seed)
    theta = math.radians(rng.uniform(*params.rotation))
    shear = rng.uniform(*params.shear)
    shift_x = rng.uniform(*params.shift)
    shift_y = rng.uniform(*params.shift)
    sigma = rng.uniform(*params.blur)
    sp = rng.uniform(*params.noise)

    px = img.pixels.astype(np.float64)
    h, w = px.shape
    if theta != 0.0 or shear != 0.0 or shift_x != 0.0 or shift_y != 0.0:
        c, s = math.cos(theta), math.sin(theta)
        # Forward map: p' = Shear @ Rot @ (p - center) + center + shift.
        fwd = np.array([[c + shear * s, -s + shear * c], [s, c]])
        inv = np.linalg.inv(fwd)
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        rel_x = xs - cx - shift_x
        rel_y = ys - cy - shift_y
        src_x = inv[0, 0] * rel_x + inv[0, 1] * rel_y + cx
        src_y = inv[1, 0] * rel_x + inv[1, 1] * rel_y + cy
        px = _bilinear_sample(px, src_x, src_y)
    if sigma > 1e-3:
        px = _gaussian_blur(px, sigma)
    if sp > 0.0:
        u = rng.uniform(size=h * w).reshape(h, w)
        px = np.where(u < sp / 2, 0.0, np.where(u < sp, float(WHITE), px))
    return GrayImage(np.clip(np.rint(px), 0, 255).astype(np.uint8))


# -- sheets -------------------------------------------------------------------

LINE_THICKNESS = 2


@dataclass(frozen=True)
class BlockSpec:
    rows: int
    cols: int
    cell_px: int = 64


@dataclass(frozen=True)
class SheetSpec:
    blocks: tuple[BlockSpec, ...]
    texts: tuple[str, ...]
    margin: int = 48
    inter_block_gap: int = 40

    def __post_init__(self):
        if len(self.blocks) != len(self.texts):
            raise SheetSpecError("one text per block required")
        for spec, text in zip(self.blocks, self.texts):
            if len(text) > spec.rows * spec.cols:
                raise SheetSpecError(
                    f"text of length {len(text)} exceeds {spec.rows}x{spec.cols} grid")


@dataclass(frozen=True)
class CellTruth:
    box: BoundingBox          # interior, block-local coordinates
    grid_pos: tuple[int, int]
    label: str | None         # None = blank cell


@dataclass(frozen=True)
class BlockTruth:
    box: BoundingBox
    row_lines: tuple[int, ...]  # band centers, block-local
    col_lines: tuple[int, ...]
    cells: tuple[CellTruth, ...]  # reading order
    text: str


@dataclass(frozen=True)
class GroundTruth:
    blocks: tuple[BlockTruth, ...]


def _nearest_resize(px: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = px.shape
    ys = np.minimum((np.arange(out_h) * in_h) // out_h, in_h - 1)
    xs = np.minimum((np.arange(out_w) * in_w) // out_w, in_w - 1)
    return px[np.ix_(ys, xs)]


def generate_sheet(spec: SheetSpec, atlas: GlyphAtlas, aug: AugmentParams,
                   seed: int) -> tuple[GrayImage, GroundTruth]:
    """Draw a ruled answer sheet with glyphs written top-right to bottom-left.

    The returned ground truth carries exact block boxes, grid line centers,
    cell interiors and the per-block transcription.
    """
    t = LINE_THICKNESS
    widths = [b.cols * (b.cell_px + t) + t for b in spec.blocks]
    heights = [b.rows * (b.cell_px + t) + t for b in spec.blocks]
    sheet_w = 2 * spec.margin + max(widths)
    sheet_h = 2 * spec.margin + sum(heights) + spec.inter_block_gap * (len(spec.blocks) - 1)
    sheet = np.full((sheet_h, sheet_w), WHITE, dtype=np.uint8)
    rng = Rng(seed)

    truths = []
    y_cursor = spec.margin
    for block, text in zip(spec.blocks, spec.texts):
        pitch = block.cell_px + t
        bw = block.cols * pitch + t
        bh = block.rows * pitch + t
        x0 = spec.margin
        row_lines, col_lines = [], []
        for j in range(block.rows + 1):
            y = y_cursor + j * pitch
            sheet[y : y + t, x0 : x0 + bw] = 0
            row_lines.append((2 * (j * pitch) + t - 1) // 2)
        for i in range(block.cols + 1):
            x = x0 + i * pitch
            sheet[y_cursor : y_cursor + bh, x : x + t] = 0
            col_lines.append((2 * (i * pitch) + t - 1) // 2)

        cells = []
        order = [(c, r) for c in range(block.cols) for r in range(block.rows)]
        for idx, (col_from_right, row) in enumerate(order):
            label = text[idx] if idx < len(text) else None
            if label == " ":
                label = None
            col_left = block.cols - 1 - col_from_right
            cell_x = col_left * pitch + t
            cell_y = row * pitch + t
            box = BoundingBox(cell_x, cell_y, block.cell_px, block.cell_px)
            if label is not None:
                glyph = render_glyph(atlas, label, rng.u64())
                glyph = augment(glyph, aug, rng.u64())
                px = glyph.pixels
                if block.cell_px != GLYPH_SIZE:
                    px = _nearest_resize(px, block.cell_px, block.cell_px)
                target = sheet[y_cursor + cell_y : y_cursor + cell_y + block.cell_px,
                               x0 + cell_x : x0 + cell_x + block.cell_px]
                np.minimum(target, px, out=target)
            text_label = text[idx] if idx < len(text) else None
            cells.append(CellTruth(box, (col_from_right, row),
                                   None if text_label in (None, " ") else text_label))
        truths.append(BlockTruth(BoundingBox(x0, y_cursor, bw, bh),
                                 tuple(row_lines), tuple(col_lines), tuple(cells), text))
        y_cursor += bh + spec.inter_block_gap
    return GrayImage(sheet), GroundTruth(tuple(truths))


# -- labeled datasets ----------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Labeled 64x64 glyph images; labels index into ``alphabet``."""

    images: np.ndarray  # (n, 64, 64) uint8
    labels: np.ndarray  # (n,) int64
    alphabet: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class CorpusBundle:
    pretrain_train: Dataset
    pretrain_test: Dataset
    exam_train: Dataset
    exam_test: Dataset


def _balanced_labels(n: int, k: int, rng: Rng) -> np.ndarray:
    """Exactly floor(n/k) or ceil(n/k) samples per label, shuffled."""
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    labels = [i for i, c in enumerate(counts) for _ in range(c)]
    rng.shuffle(labels)
    return np.array(labels, dtype=np.int64)


def _render_set(atlas: GlyphAtlas, aug: AugmentParams, n: int, rng: Rng) -> Dataset:
    labels = _balanced_labels(n, len(atlas.labels), rng)
    images = np.empty((n, GLYPH_SIZE, GLYPH_SIZE), dtype=np.uint8)
    for i, label_id in enumerate(labels):
        glyph = render_glyph(atlas, atlas.labels[label_id], rng.u64())
        images[i] = augment(glyph, aug, rng.u64()).pixels
    return Dataset(images, labels, atlas.labels)


def generate_corpus(atlas: GlyphAtlas, aug: AugmentParams, n_train: int, n_test: int,
                    seed: int, domain_shift: AugmentParams,
                    n_exam_train: int | None = None,
                    n_exam_test: int | None = None) -> CorpusBundle:
    """Pretraining sets drawn with ``aug`` plus exam-domain sets drawn with
    ``domain_shift``, emulating the gap between a generic handwriting corpus
    and the actual answer-sheet distribution.  Streams are disjoint."""
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    n_exam_train = n_exam_train if n_exam_train is not None else max(len(atlas.labels), n_train // 3)
    n_exam_test = n_exam_test if n_exam_test is not None else n_test
    root = Rng(seed)
    return CorpusBundle(
        pretrain_train=_render_set(atlas, aug, n_train, root.fork("pretrain-train")),
        pretrain_test=_render_set(atlas, aug, n_test, root.fork("pretrain-test")),
        exam_train=_render_set(atlas, domain_shift, n_exam_train, root.fork("exam-train")),
        exam_test=_render_set(atlas, domain_shift, n_exam_test, root.fork("exam-test")),
    )


# -- procedural language --------------------------------------------------------

_MARKERS = ("*", "=", "+")
_FILLER_CHARS = "0123456789abcdefghjkmnpqrstuvwxyz/<>-"


@dataclass(frozen=True)
class Language:
    """A small procedural language: filler lexicon plus one keyword word per
    positive score rank (rank r answers contain keywords[r - 1])."""

    lexicon: tuple[str, ...]
    keywords: tuple[str, ...]


def make_language(seed: int = 0xA11CE, n_words: int = 120) -> Language:
    rng = Rng(seed).fork("language")
    words = []
    seen = set()
    while len(words) < n_words:
        length = rng.randint(3, 8)
        word = "".join(rng.choice(_FILLER_CHARS) for _ in range(length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    keywords = tuple(
        "".join(rng.choice(_FILLER_CHARS) for _ in range(2)) + marker +
        "".join(rng.choice(_FILLER_CHARS) for _ in range(2))
        for marker in _MARKERS
    )
    return Language(tuple(words), keywords)


def sample_answer(language: Language, rank: int, rng: Rng, max_chars: int = 44) -> str:
    """Answer text for a score rank: rank 0 has no keyword (or is very short);
    rank r >= 1 plants keywords[r-1] twice so one misread cannot erase it."""
    if not 0 <= rank <= len(language.keywords):
        raise ValueError(f"rank {rank} out of range")
    n_filler = rng.randint(3, 7)
    words = [language.lexicon[rng.randint(0, len(language.lexicon))] for _ in range(n_filler)]
    if rank == 0 and rng.uniform() < 0.25:
        words = words[:1]  # occasionally a too-short throwaway answer
    keyword_budget = 2 * (len(language.keywords[rank - 1]) + 1) if rank >= 1 else 0
    while words and len(" ".join(words)) + keyword_budget > max_chars:
        words.pop()
    if rank >= 1:
        keyword = language.keywords[rank - 1]
        for _ in range(2):
            words.insert(rng.randint(0, len(words) + 1), keyword)
    return " ".join(words)


def true_rank(language: Language, text: str) -> int:
    """The rubric rule: rank = index of the keyword present (0 if none or the
    answer is shorter than 8 characters)."""
    if len(text) < 8:
        return 0
    for i, keyword in enumerate(language.keywords):
        if keyword in text:
            return i + 1
    return 0


def make_rubric_corpus(language: Language, n: int, seed: int) -> list[tuple[str, int]]:
    """Balanced (text, rank) pairs over ranks 0..3."""
    rng = Rng(seed).fork("rubric")
    items = []
    for i in range(n):
        rank = i % (len(language.keywords) + 1)
        text = sample_answer(language, rank, rng)
        items.append((text, true_rank(language, text)))
    rng.shuffle(items)
    return items


def make_lm_corpus(language: Language, n_words: int, seed: int) -> list[str]:
    """Word-per-line corpus for the character n-gram model; keywords are
    mixed in so rescoring knows the rubric vocabulary."""
    rng = Rng(seed).fork("lm-corpus")
    out = []
    for _ in range(n_words):
        if rng.uniform() < 0.12:
            out.append(language.keywords[rng.randint(0, len(language.keywords))])
        else:
            out.append(language.lexicon[rng.randint(0, len(language.lexicon))])
    return out
