"""Synthetic standard-cell corpus: generation, morphing, splitting, export.

Cells are built from parameterized rectangle templates on the lambda grid, so
every sample is clean against the spacing/width rules by construction. Layer
ids: metal1 = 1, poly = 2, contact = 3.

Each category carries two signatures that survive size variants: a trio of
horizontal metal bars in a reserved zone near the left edge (rows picked per
category), and a trio of contact rows. Drive strength adds transistor fingers
and stretches routing strips; per-sample jitter shifts the transistor section
and bar zone on the lambda grid. Power rails pin the cell origin at (0, 0) so
jitter stays visible after bbox-anchored rasterization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Cell, Layout, TechRules, rect
from .morphology import MorphKernel, fab_morph
from .raster import CANVAS, RasterImage, composite_layers, rasterize, write_pgm

LAYER_METAL1 = 1
LAYER_POLY = 2
LAYER_CONTACT = 3

LAYER_TAGS = {
    "metal1": (LAYER_METAL1,),
    "poly": (LAYER_POLY,),
    "contact": (LAYER_CONTACT,),
    "all": (LAYER_METAL1, LAYER_POLY, LAYER_CONTACT),
}

PROVENANCE_ORDER = ("clean", "morphed", "adversarial", "drc_compliant")

# per-category template knobs, all in lambda units:
# (transistor gate fingers, metal signature bar rows, contact signature rows)
_TEMPLATES = {
    "INV":   (1, (8, 16, 24),  (12, 18, 24)),
    "BUF":   (2, (8, 16, 32),  (12, 18, 30)),
    "NAND2": (2, (8, 16, 40),  (12, 18, 36)),
    "NAND3": (3, (8, 16, 48),  (12, 18, 42)),
    "NOR2":  (2, (8, 24, 32),  (12, 24, 30)),
    "NOR3":  (3, (8, 24, 40),  (12, 24, 36)),
    "AND2":  (3, (8, 24, 48),  (12, 24, 42)),
    "OR2":   (3, (8, 32, 40),  (12, 30, 36)),
    "XOR2":  (4, (16, 24, 32), (18, 24, 30)),
    "XNOR2": (4, (16, 24, 40), (18, 24, 36)),
    "MUX2":  (5, (16, 32, 48), (18, 30, 42)),
}

_CELL_H = 62          # cell height
_RAIL_T = 4           # power rail thickness
_ZONE_X = 4           # signature bar zone left edge
_ZONE_W = 20          # signature bar width
_BAR_H = 5            # signature bar height
_SECTION_X = 36       # first contact column at zero jitter
_PITCH = 8            # finger/column pitch


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class GateCategory:
    id: int
    name: str


@dataclass(frozen=True)
class GeneratorConfig:
    categories: tuple = tuple(_TEMPLATES)
    counts: tuple = (81,) * 9 + (80,) * 2
    drive_strengths: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        if len(self.categories) != len(self.counts):
            raise ConfigInvalid("categories and counts must align")
        if len(set(self.categories)) != len(self.categories):
            raise ConfigInvalid("duplicate category names")
        if any(c <= 0 for c in self.counts):
            raise ConfigInvalid("per-category counts must be positive")
        if not self.drive_strengths or any(d < 1 for d in self.drive_strengths):
            raise ConfigInvalid("drive strengths must be >= 1")
        unknown = [c for c in self.categories if c not in _TEMPLATES]
        if unknown:
            raise ConfigInvalid(f"no geometry template for {unknown}")

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass
class Sample:
    sample_id: str
    image: RasterImage
    label: GateCategory
    layer_tag: str
    provenance: str = "clean"

    def __post_init__(self):
        if self.layer_tag not in LAYER_TAGS:
            raise ValueError(f"unknown layer tag {self.layer_tag}")
        if self.provenance not in PROVENANCE_ORDER:
            raise ValueError(f"unknown provenance {self.provenance}")

    def evolved(self, image: RasterImage, provenance: str) -> "Sample":
        """Copy with a later-stage image; provenance may only move forward."""
        if PROVENANCE_ORDER.index(provenance) <= PROVENANCE_ORDER.index(self.provenance):
            raise ValueError(f"provenance cannot go {self.provenance} -> {provenance}")
        return Sample(self.sample_id, image, self.label, self.layer_tag, provenance)


def _cell_geometry(cat_name: str, drive: int, jx: int, u: int, e: int, lam: int):
    """All rectangles of one cell instance, as (layer, x0, y0, x1, y1) in db units."""
    gates, bar_rows, contact_rows = _TEMPLATES[cat_name]
    n_fingers = gates + drive - 1
    strip_len = 26 + 3 * drive + e
    n_cols = n_fingers + 1
    width = _SECTION_X + _PITCH * n_cols - 2 + jx
    rects = []

    def add(layer, x0, y0, x1, y1):
        rects.append((layer, x0 * lam, y0 * lam, x1 * lam, y1 * lam))

    add(LAYER_METAL1, 0, 0, width, _RAIL_T)
    add(LAYER_METAL1, 0, _CELL_H - _RAIL_T, width, _CELL_H)
    for row in bar_rows:
        add(LAYER_METAL1, _ZONE_X + u, row, _ZONE_X + u + _ZONE_W, row + _BAR_H)
    for i in range(n_cols):
        x = _SECTION_X + _PITCH * i + jx
        if i % 2 == 0:
            add(LAYER_METAL1, x, 0, x + 2, _RAIL_T + strip_len)
        else:
            add(LAYER_METAL1, x, _CELL_H - _RAIL_T - strip_len, x + 2, _CELL_H)
        for row in contact_rows:
            add(LAYER_CONTACT, x, row, x + 2, row + 2)
    for i in range(n_fingers):
        x = _SECTION_X + 4 + _PITCH * i + jx
        add(LAYER_POLY, x, 10, x + 2, 52)
    return rects


def _build_cell(name: str, cat_name: str, rng, cfg: GeneratorConfig, rules: TechRules) -> Cell:
    drive = int(rng.choice(np.asarray(cfg.drive_strengths)))
    jx = int(rng.integers(0, 7))
    u = int(rng.integers(0, 3))
    e = int(rng.integers(0, 3))
    polys = [rect(x0, y0, x1, y1, layer)
             for layer, x0, y0, x1, y1 in
             _cell_geometry(cat_name, drive, jx, u, e, rules.lambda_db)]
    return Cell(name, polys)


def generate_corpus(cfg: GeneratorConfig, rules: TechRules, seed: int):
    """Deterministic corpus as a list of (Cell, GateCategory) pairs."""
    out = []
    for cat_id, (cat_name, count) in enumerate(zip(cfg.categories, cfg.counts)):
        category = GateCategory(cat_id, cat_name)
        for idx in range(count):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(cat_id, idx)))
            name = f"{cat_name}_{idx:03d}"
            out.append((_build_cell(name, cat_name, rng, cfg, rules), category))
    return out


def corpus_layout(pairs, library_name: str = "SYNTH") -> Layout:
    return Layout(library_name=library_name, cells=[cell for cell, _ in pairs])


def render_samples(pairs, layer_tag: str, rules: TechRules, canvas=CANVAS,
                   morph: MorphKernel | None = None):
    """Rasterize every cell on one layer tag, optionally fabrication-morphed."""
    layer_ids = LAYER_TAGS[layer_tag]
    samples = []
    for cell, category in pairs:
        if len(layer_ids) == 1:
            img = rasterize(cell, layer_ids[0], rules, canvas)
        else:
            img = composite_layers(cell, layer_ids, rules, canvas)
        s = Sample(cell.name, img, category, layer_tag)
        if morph is not None:
            s = s.evolved(fab_morph(img, morph), "morphed")
        samples.append(s)
    return samples


class RatioOutOfRange(ValueError):
    pass


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int


def split(samples, ratio: float, seed: int) -> DatasetSplit:
    """Stratified shuffle split, deterministic per seed.

    Per-category quotas use largest-remainder rounding against the global
    target round(ratio * n), ties broken by category id, which keeps every
    category within one sample of the global ratio.
    """
    if not 0.0 < ratio < 1.0:
        raise RatioOutOfRange(f"ratio {ratio} not in (0, 1)")
    by_cat = {}
    for s in samples:
        by_cat.setdefault(s.label.id, []).append(s)
    target = round(len(samples) * ratio)
    quotas = {cid: int(len(group) * ratio) for cid, group in by_cat.items()}
    leftover = target - sum(quotas.values())
    order = sorted(by_cat, key=lambda cid: (-(len(by_cat[cid]) * ratio % 1.0), cid))
    for cid in order[:leftover]:
        quotas[cid] += 1
    train, test = [], []
    for cid in sorted(by_cat):
        group = list(by_cat[cid])
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(0x5B17, cid)))
        rng.shuffle(group)
        train += group[:quotas[cid]]
        test += group[quotas[cid]:]
    if not train or not test:
        raise RatioOutOfRange(f"ratio {ratio} leaves an empty side")
    return DatasetSplit(train, test, seed)


def write_sample_tree(out_dir, samples, maxval: int = 255) -> Path:
    """Dump samples as PGM files plus a one-line-per-sample manifest.

    Manifest line format: sample_id,category,layer_tag,provenance,relative_path
    """
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        rel = f"images/{s.sample_id}.{s.layer_tag}.{s.provenance}.pgm"
        write_pgm(root / rel, s.image, maxval)
        lines.append(f"{s.sample_id},{s.label.name},{s.layer_tag},{s.provenance},{rel}")
    manifest = root / "corpus_manifest.txt"
    manifest.write_text("".join(line + "\n" for line in lines), encoding="ascii")
    return manifest


def read_manifest(path) -> list:
    """Parse a corpus manifest back into (sample_id, category, layer_tag, provenance, relpath)."""
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"manifest line {n}: expected 5 fields, got {len(parts)}")
        rows.append(tuple(parts))
    return rows
