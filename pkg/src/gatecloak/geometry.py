"""Layout geometry primitives: technology rules, polygons, cells, libraries.

All coordinates are integers in database units. Only orthogonal (axis-parallel)
geometry is supported; polygons are stored closed (first vertex repeated last).
"""

from __future__ import annotations

from dataclasses import dataclass, field


class RuleError(ValueError):
    """A TechRules field violates its constraints."""


@dataclass(frozen=True)
class TechRules:
    """Lambda-based technology rules shared by raster, DRC and noise placement.

    lambda_nm is the technology half-pitch unit; every geometric rule in the
    package is a multiple of it. nm_per_pixel must divide lambda_nm so that
    lambda is a whole number of pixels at raster scale.
    """

    lambda_nm: int = 20
    min_spacing_nm: int = 40
    filter_side_lambda: int = 4
    nm_per_pixel: int = 5
    db_units_per_nm: int = 1

    def __post_init__(self):
        if self.lambda_nm <= 0:
            raise RuleError("lambda_nm must be positive")
        if self.min_spacing_nm != 2 * self.lambda_nm:
            raise RuleError("min_spacing_nm must equal 2 * lambda_nm")
        if self.filter_side_lambda < 1:
            raise RuleError("filter_side_lambda must be >= 1")
        if self.nm_per_pixel <= 0 or self.lambda_nm % self.nm_per_pixel:
            raise RuleError("nm_per_pixel must be positive and divide lambda_nm")
        if self.db_units_per_nm < 1:
            raise RuleError("db_units_per_nm must be a positive integer")

    @property
    def lambda_px(self) -> int:
        return self.lambda_nm // self.nm_per_pixel

    @property
    def spacing_px(self) -> int:
        """Minimum spacing, in pixels (always 2 * lambda_px)."""
        return 2 * self.lambda_px

    @property
    def filter_side_px(self) -> int:
        """Noise square side in pixels."""
        return self.filter_side_lambda * self.lambda_px

    @property
    def db_per_px(self) -> int:
        return self.nm_per_pixel * self.db_units_per_nm

    @property
    def lambda_db(self) -> int:
        return self.lambda_nm * self.db_units_per_nm

    def scaled(self, factor: int) -> "TechRules":
        """Rules for a raster downsampled by an integer factor.

        Valid only while the coarser pixel still divides lambda.
        """
        return TechRules(
            lambda_nm=self.lambda_nm,
            min_spacing_nm=self.min_spacing_nm,
            filter_side_lambda=self.filter_side_lambda,
            nm_per_pixel=self.nm_per_pixel * factor,
            db_units_per_nm=self.db_units_per_nm,
        )


class BadPolygon(ValueError):
    """Polygon violates closure/orthogonality constraints."""


@dataclass(frozen=True)
class Polygon:
    layer_id: int
    datatype: int
    vertices: tuple  # ((x, y), ...) closed: first == last

    def __post_init__(self):
        v = tuple((int(x), int(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", v)
        if len(v) < 4:
            raise BadPolygon("need at least 4 stored vertices")
        if v[0] != v[-1]:
            raise BadPolygon("polygon must be closed (first vertex == last)")
        if self.layer_id < 0 or self.datatype < 0:
            raise BadPolygon("layer/datatype must be non-negative")
        for (x0, y0), (x1, y1) in zip(v, v[1:]):
            if x0 != x1 and y0 != y1:
                raise BadPolygon("edges must be axis-parallel")

    def bbox(self):
        xs = [x for x, _ in self.vertices]
        ys = [y for _, y in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


def rect(x0: int, y0: int, x1: int, y1: int, layer_id: int, datatype: int = 0) -> Polygon:
    """Axis-aligned rectangle as a closed 5-vertex polygon."""
    if x1 <= x0 or y1 <= y0:
        raise BadPolygon("rectangle must have positive extent")
    return Polygon(layer_id, datatype,
                   ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)))


def band_rects(poly: Polygon):
    """Decompose an orthogonal polygon into closed rectangles (x0,y0,x1,y1).

    Scanline over the unique y coordinates; within each horizontal band the
    vertical edges crossing it are paired even-odd. The union of the closed
    rectangles equals the closed polygon region, so boundary points stay in.
    """
    v = poly.vertices
    vedges = []
    for (x0, y0), (x1, y1) in zip(v, v[1:]):
        if x0 == x1 and y0 != y1:
            vedges.append((x0, min(y0, y1), max(y0, y1)))
    ys = sorted({y for _, ylo, yhi in vedges for y in (ylo, yhi)})
    out = []
    for ylo, yhi in zip(ys, ys[1:]):
        xs = sorted(x for x, elo, ehi in vedges if elo <= ylo and yhi <= ehi)
        for xa, xb in zip(xs[0::2], xs[1::2]):
            out.append((xa, ylo, xb, yhi))
    return out


@dataclass
class Cell:
    name: str
    polygons: list = field(default_factory=list)
    bbox: tuple = None  # (xmin, ymin, xmax, ymax), derived when omitted

    def __post_init__(self):
        if not self.name:
            raise ValueError("cell name must be nonempty")
        if self.bbox is None:
            self.bbox = self._compute_bbox()

    def _compute_bbox(self):
        if not self.polygons:
            return (0, 0, 0, 0)
        boxes = [p.bbox() for p in self.polygons]
        return (min(b[0] for b in boxes), min(b[1] for b in boxes),
                max(b[2] for b in boxes), max(b[3] for b in boxes))

    def layer_polygons(self, layer_id: int):
        return [p for p in self.polygons if p.layer_id == layer_id]


@dataclass
class Layout:
    library_name: str = "LIB"
    user_units_per_db_unit: float = 1e-3
    meters_per_db_unit: float = 1e-9
    cells: list = field(default_factory=list)

    def __post_init__(self):
        if self.user_units_per_db_unit <= 0 or self.meters_per_db_unit <= 0:
            raise ValueError("unit factors must be positive")
        if not self.cells:
            raise ValueError("layout needs at least one cell")
        names = [c.name for c in self.cells]
        if len(names) != len(set(names)):
            raise ValueError("cell names must be unique")

    def cell(self, name: str) -> Cell:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)
