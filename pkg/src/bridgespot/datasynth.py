"""Deterministic synthetic glyph scenes.

Scenes hold horizontal strings drawn from a 20-glyph 7x5 stencil alphabet at
integer scales, plus rectangle distractors and Gaussian pixel noise. Every
sample is a pure function of its integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

_STENCIL_ROWS = {
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "C": ["01111", "10000", "10000", "10000", "10000", "10000", "01111"],
    "D": ["11110", "10001", "10001", "10001", "10001", "10001", "11110"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "J": ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "11001", "10101", "10011", "10001", "10001", "10001"],
    "P": ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
    "R": ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "U": ["10001", "10001", "10001", "10001", "10001", "10001", "01110"],
    "V": ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
    "Y": ["10001", "10001", "01010", "00100", "00100", "00100", "00100"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
}

GLYPH_H, GLYPH_W = 7, 5


class GenerationError(RuntimeError):
    """Could not place the requested strings."""


class GlyphAlphabet:
    """Symbol table and 7x5 binary stencils; class 0 is reserved for blank."""

    def __init__(self, rows: dict[str, list[str]] = _STENCIL_ROWS):
        self.symbols = "".join(rows)
        self.stencils = np.array(
            [[[c == "1" for c in r] for r in rows[s]] for s in self.symbols], dtype=np.float64)
        self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        return [self.index[c] + 1 for c in text]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i - 1] for i in ids)

    def stencil(self, ch: str) -> np.ndarray:
        return self.stencils[self.index[ch]]


ALPHABET = GlyphAlphabet()


@dataclass
class Annotation:
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 (pixel edges)
    text: str | None
    char_spans: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class SceneSample:
    image: np.ndarray  # (1, H, W) in [0, 1]
    annotations: list[Annotation]
    seed: int

    @property
    def boxes(self) -> np.ndarray:
        return np.array([a.box for a in self.annotations], dtype=np.float64).reshape(-1, 4)

    @property
    def texts(self) -> list[str | None]:
        return [a.text for a in self.annotations]


@dataclass(frozen=True)
class SceneConfig:
    height: int = 48
    width: int = 96
    n_strings: int = 2
    noise_std: float = 0.05
    distractors: int = 3
    min_len: int = 2
    max_len: int = 8
    scales: tuple[int, ...] = (1, 2, 3)
    margin: int = 2


def string_extent(length: int, scale: int) -> tuple[int, int]:
    """(width, height) in pixels of a rendered string."""
    return length * GLYPH_W * scale + (length - 1) * scale, GLYPH_H * scale


def draw_string(canvas: np.ndarray, text: str, x: int, y: int, scale: int,
                ink: float = 1.0) -> list[tuple[float, float]]:
    """Stamp ``text`` into ``canvas`` (H, W) with its top-left at (x, y)."""
    spans = []
    block = np.ones((scale, scale))
    for k, ch in enumerate(text):
        gx = x + k * (GLYPH_W + 1) * scale
        glyph = np.kron(ALPHABET.stencil(ch), block)
        region = canvas[y:y + GLYPH_H * scale, gx:gx + GLYPH_W * scale]
        np.maximum(region, glyph * ink, out=region)
        spans.append((float(gx), float(gx + GLYPH_W * scale)))
    return spans


def _overlaps(box, others, margin) -> bool:
    x0, y0, x1, y1 = box
    for ox0, oy0, ox1, oy1 in others:
        if x0 < ox1 + margin and ox0 < x1 + margin and y0 < oy1 + margin and oy0 < y1 + margin:
            return True
    return False


def _random_text(rng: np.random.Generator, length: int) -> str:
    return "".join(ALPHABET.symbols[i] for i in rng.integers(0, len(ALPHABET), size=length))


def _place_strings(rng, canvas, annotations, placed, config: SceneConfig,
                   with_text: bool) -> bool:
    """Rejection-sample every string; False if one cannot be placed in 100 tries."""
    h, w = canvas.shape
    for _ in range(config.n_strings):
        for _attempt in range(100):
            scale = int(rng.choice(config.scales))
            max_fit = (w - 2 * config.margin + scale) // (6 * scale)
            hi = min(config.max_len, max_fit)
            if hi < config.min_len or GLYPH_H * scale > h - 2 * config.margin:
                continue
            length = int(rng.integers(config.min_len, hi + 1))
            sw, sh = string_extent(length, scale)
            x = int(rng.integers(config.margin, w - sw - config.margin + 1))
            y = int(rng.integers(config.margin, h - sh - config.margin + 1))
            box = (x, y, x + sw, y + sh)
            if _overlaps(box, placed, config.margin):
                continue
            text = _random_text(rng, length)
            spans = draw_string(canvas, text, x, y, scale)
            placed.append(box)
            annotations.append(Annotation(tuple(float(v) for v in box),
                                          text if with_text else None, spans))
            break
        else:
            return False
    return True


def render_scene(seed: int, config: SceneConfig = SceneConfig(),
                 with_text: bool = True) -> SceneSample:
    """Render one scene; identical seeds give bit-identical samples."""
    rng = np.random.default_rng(seed)
    h, w = config.height, config.width
    for _layout in range(100):
        canvas = np.zeros((h, w))
        annotations: list[Annotation] = []
        placed: list[tuple[int, int, int, int]] = []
        if _place_strings(rng, canvas, annotations, placed, config, with_text):
            break
    else:
        raise GenerationError(f"seed {seed}: could not place {config.n_strings} strings "
                              f"after 100 layouts of 100 retries each")
    for _ in range(config.distractors):
        for _attempt in range(20):
            dw = int(rng.integers(2, 16))
            dh = int(rng.integers(2, 16))
            x = int(rng.integers(0, w - dw + 1))
            y = int(rng.integers(0, h - dh + 1))
            box = (x, y, x + dw, y + dh)
            if _overlaps(box, placed, config.margin):
                continue
            level = rng.uniform(0.3, 1.0)
            if rng.random() < 0.5:
                canvas[y:y + dh, x:x + dw] = np.maximum(canvas[y:y + dh, x:x + dw], level)
            else:
                canvas[y, x:x + dw] = np.maximum(canvas[y, x:x + dw], level)
                canvas[y + dh - 1, x:x + dw] = np.maximum(canvas[y + dh - 1, x:x + dw], level)
                canvas[y:y + dh, x] = np.maximum(canvas[y:y + dh, x], level)
                canvas[y:y + dh, x + dw - 1] = np.maximum(canvas[y:y + dh, x + dw - 1], level)
            break
    if config.noise_std > 0:
        canvas = np.clip(canvas + rng.normal(0.0, config.noise_std, size=canvas.shape), 0.0, 1.0)
    return SceneSample(canvas[None], annotations, seed)


@dataclass
class WordCrop:
    """A recognizer training example: 32x96 crop, its text and per-token labels."""

    image: np.ndarray  # (1, 32, 96)
    text: str
    labels: np.ndarray  # (24,) class ids, 0 = blank


CROP_H, CROP_W = 32, 96


def jitter_box(box, rng: np.random.Generator, amount: float = 0.35):
    """Perturb each side of ``box`` by up to ``amount`` x its height.

    Sides move outward up to ``amount`` and inward up to half of that, which
    mimics the looseness of a dense detector's boxes.
    """
    x0, y0, x1, y1 = box
    j = amount * (y1 - y0) * rng.uniform(-0.5, 1.0, size=4)
    return (x0 - j[0], y0 - j[1], x1 + j[2], y1 + j[3])


def render_word_crop(seed: int, noise_std: float = 0.05, blank_prob: float = 0.05,
                     config: SceneConfig = SceneConfig()) -> WordCrop:
    """A word rendered on its own canvas, cut out with a jittered box."""
    from .spotter import column_targets, crop_region  # spotter imports this module

    rng = np.random.default_rng(seed)
    scale = int(rng.choice(config.scales))
    blank = rng.random() < blank_prob
    max_fit = (config.width - 2 * config.margin + scale) // (6 * scale)
    length = int(rng.integers(config.min_len, min(config.max_len, max_fit) + 1))
    sw, sh = string_extent(length, scale)
    pad = 4 * scale + 4
    canvas = np.zeros((sh + 2 * pad, sw + 2 * pad))
    text = _random_text(rng, length)
    spans = draw_string(canvas, text, pad, pad, scale)
    if rng.random() < 0.3:
        # a distractor stroke inside the padding
        dx = pad // 2 if rng.random() < 0.5 else pad + sw + pad // 2 - 1
        canvas[pad:pad + sh, dx:dx + 1] = rng.uniform(0.3, 1.0)
    if blank:
        canvas[:] = 0.0
        text, spans = "", []
    if noise_std > 0:
        canvas = np.clip(canvas + rng.normal(0.0, noise_std, size=canvas.shape), 0.0, 1.0)
    box = jitter_box((pad, pad, pad + sw, pad + sh), rng)
    crop = crop_region(canvas[None], box, CROP_H, CROP_W)
    return WordCrop(crop, text, column_targets(spans, text, box))


SPLIT_OFFSETS = {"det_train": 0, "rec_train": 100_000, "bridge_train": 200_000, "test": 300_000}
SPLIT_SIZES = {"det_train": 2000, "rec_train": 8000, "bridge_train": 1000, "test": 500}


class Split(Sequence):
    """Lazily rendered, seed-indexed dataset split."""

    def __init__(self, name: str, master_seed: int, size: int,
                 config: SceneConfig = SceneConfig()):
        if name not in SPLIT_OFFSETS:
            raise KeyError(f"unknown split {name!r}")
        self.name, self.master_seed, self.size, self.config = name, master_seed, size, config
        self._cache: dict[int, object] = {}

    def seed_of(self, i: int) -> int:
        return self.master_seed * 1_000_000 + SPLIT_OFFSETS[self.name] + i

    def seeds(self) -> list[int]:
        return [self.seed_of(i) for i in range(self.size)]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self.size))]
        if not 0 <= i < self.size:
            raise IndexError(i)
        item = self._cache.get(i)
        if item is None:
            seed = self.seed_of(i)
            if self.name == "rec_train":
                item = render_word_crop(seed, self.config.noise_std, config=self.config)
            else:
                item = render_scene(seed, self.config, with_text=self.name != "det_train")
            self._cache[i] = item
        return item


def make_splits(seed: int, sizes: dict[str, int] | None = None,
                config: SceneConfig = SceneConfig()) -> dict[str, Split]:
    sizes = {**SPLIT_SIZES, **(sizes or {})}
    return {name: Split(name, seed, sizes[name], config) for name in SPLIT_OFFSETS}


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary 8-bit PGM of a (1, H, W) or (H, W) image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0]
    h, w = img.shape
    px = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    px = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return px.astype(np.float64) / maxval


def dump_sample(sample: SceneSample, directory: Path, stem: str) -> None:
    """Write ``<stem>.pgm`` and ``<stem>.txt`` (one ``x0 y0 x1 y1 text`` per line)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_pgm(directory / f"{stem}.pgm", sample.image)
    lines = []
    for a in sample.annotations:
        x0, y0, x1, y1 = a.box
        lines.append(f"{x0:g} {y0:g} {x1:g} {y1:g} {a.text if a.text is not None else '-'}")
    (directory / f"{stem}.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
