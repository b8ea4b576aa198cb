"""Rasterize layout layers to binary images and map pixel squares back to geometry.

Convention: arrays are (height, width) uint8 with values {0, 1}; row 0 is the
lowest y, so the array is y-up. PGM files are stored top-row-first and flipped
on read/write. A pixel is foreground when its center point falls inside or on
the boundary of any polygon; centers sit at half-pixel offsets, and membership
is decided in doubled integer coordinates so no float rounding is involved.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .geometry import Cell, Layout, TechRules, band_rects, rect

# default canvas (rows, cols); every corpus sample shares this shape
CANVAS = (258, 1049)


class CanvasOverflow(ValueError):
    """Cell extent exceeds the raster canvas."""


class UnknownCell(ValueError):
    pass


class SquareOutOfCanvas(ValueError):
    pass


@dataclass
class RasterImage:
    a: np.ndarray                  # (H, W) uint8 in {0, 1}, row 0 = lowest y
    origin_db: tuple = (0, 0)      # database coordinates of pixel (0, 0)
    nm_per_pixel: int = 5
    layer_absent: bool = False     # warning flag: requested layer had no polygons

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=np.uint8)

    @property
    def height(self) -> int:
        return self.a.shape[0]

    @property
    def width(self) -> int:
        return self.a.shape[1]

    def copy(self) -> "RasterImage":
        return RasterImage(self.a.copy(), self.origin_db, self.nm_per_pixel,
                           self.layer_absent)


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _fill_rect(arr, ox, oy, dpp, x0, y0, x1, y1):
    # pixel center (2c+1)*dpp/2 relative to origin lies in [x0-ox, x1-ox]
    c0 = _ceil_div(2 * (x0 - ox) - dpp, 2 * dpp)
    c1 = (2 * (x1 - ox) - dpp) // (2 * dpp)
    r0 = _ceil_div(2 * (y0 - oy) - dpp, 2 * dpp)
    r1 = (2 * (y1 - oy) - dpp) // (2 * dpp)
    h, w = arr.shape
    c0, r0 = max(c0, 0), max(r0, 0)
    c1, r1 = min(c1, w - 1), min(r1, h - 1)
    if c0 <= c1 and r0 <= r1:
        arr[r0:r1 + 1, c0:c1 + 1] = 1


def rasterize(cell: Cell, layer_id: int, rules: TechRules,
              canvas=CANVAS) -> RasterImage:
    """Binary image of one layer, anchored at the cell bbox corner.

    The cell occupies the low rows/columns of the fixed canvas; the rest is
    zero padding. An empty layer is legal and comes back all zero with the
    layer_absent flag set.
    """
    xmin, ymin, xmax, ymax = cell.bbox
    dpp = rules.db_per_px
    if _ceil_div(xmax - xmin, dpp) > canvas[1] or _ceil_div(ymax - ymin, dpp) > canvas[0]:
        raise CanvasOverflow(
            f"cell {cell.name} extent {xmax - xmin}x{ymax - ymin} db "
            f"exceeds canvas {canvas[1]}x{canvas[0]} px")
    arr = np.zeros(canvas, dtype=np.uint8)
    polys = cell.layer_polygons(layer_id)
    for poly in polys:
        for x0, y0, x1, y1 in band_rects(poly):
            _fill_rect(arr, xmin, ymin, dpp, x0, y0, x1, y1)
    return RasterImage(arr, (xmin, ymin), rules.nm_per_pixel,
                       layer_absent=not polys)


def composite_layers(cell: Cell, layer_ids, rules: TechRules,
                     canvas=CANVAS) -> RasterImage:
    """Pixel-wise union of several layers of one cell."""
    if not layer_ids:
        raise ValueError("need at least one layer id")
    images = [rasterize(cell, lid, rules, canvas) for lid in layer_ids]
    merged = images[0].a
    for img in images[1:]:
        merged = merged | img.a
    return RasterImage(merged, images[0].origin_db, rules.nm_per_pixel,
                       layer_absent=all(i.layer_absent for i in images))


def inject_squares(layout: Layout, cell_name: str, layer_id: int, squares,
                   rules: TechRules, canvas=CANVAS) -> Layout:
    """New Layout with one BOUNDARY rectangle appended per noise square.

    Square pixel coordinates are mapped through the cell bbox origin; they must
    land on the lambda grid in database units and stay inside the canvas.
    Pre-existing polygons are carried over untouched, in order.
    """
    try:
        target = layout.cell(cell_name)
    except KeyError:
        raise UnknownCell(cell_name) from None
    ox, oy = target.bbox[0], target.bbox[1]
    dpp = rules.db_per_px
    added = []
    for sq in squares:
        if sq.x < 0 or sq.y < 0 or sq.x + sq.side > canvas[1] or sq.y + sq.side > canvas[0]:
            raise SquareOutOfCanvas(f"square at ({sq.x}, {sq.y}) side {sq.side}")
        x0 = ox + sq.x * dpp
        y0 = oy + sq.y * dpp
        if x0 % rules.lambda_db or y0 % rules.lambda_db:
            raise ValueError(f"square at ({x0}, {y0}) db is off the lambda grid")
        added.append(rect(x0, y0, x0 + sq.side * dpp, y0 + sq.side * dpp, layer_id))
    cells = [Cell(c.name, list(c.polygons) + added) if c is target
             else Cell(c.name, list(c.polygons)) for c in layout.cells]
    return Layout(layout.library_name, layout.user_units_per_db_unit,
                  layout.meters_per_db_unit, cells)


def downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    """Block-OR downsample by an integer factor, padding partial edge blocks."""
    if factor == 1:
        return arr
    h, w = arr.shape
    h2, w2 = _ceil_div(h, factor), _ceil_div(w, factor)
    padded = np.zeros((h2 * factor, w2 * factor), dtype=arr.dtype)
    padded[:h, :w] = arr
    return padded.reshape(h2, factor, w2, factor).max(axis=(1, 3))


# PGM (P5) export, maxval 1 or 255


def pgm_bytes(img, maxval: int = 255) -> bytes:
    arr = img.a if isinstance(img, RasterImage) else np.asarray(img)
    if maxval not in (1, 255):
        raise ValueError("maxval must be 1 or 255")
    if arr.dtype.kind == "f":
        levels = np.rint(np.clip(arr, 0.0, 1.0) * maxval).astype(np.uint8)
    else:
        levels = (arr.astype(np.uint16) * maxval).clip(0, maxval).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    return header + levels[::-1].tobytes()  # file rows run top to bottom


def write_pgm(path, img, maxval: int = 255):
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img, maxval))


def read_pgm(path) -> np.ndarray:
    """Read a P5 file back to a float32 array in [0, 1], y-up."""
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)?(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    levels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=m.end())
    return levels.reshape(h, w)[::-1].astype(np.float32) / maxval


def read_pgm_binary(path) -> np.ndarray:
    """Read a PGM holding a {0, maxval} image back to uint8 {0, 1}."""
    return (read_pgm(path) > 0.5).astype(np.uint8)
