"""Turning raw perturbations into fabricable, rule-clean square noise.

The flow: squarify tiles the canvas with the noise-filter window and keeps
tiles where a strict majority of pixels was perturbed (additive changes only);
forbidden_area dilates the existing foreground by the minimum spacing;
place_squares greedily accepts candidates that avoid the forbidden region and
keep spacing from each other; apply_squares ORs them into the image. drc_check
and lvs_lite then verify the result independently.

Spacing semantics are Chebyshev (square-kernel) throughout, a conservative
over-approximation of Euclidean distance. For pixel grids the measured spacing
between shapes is the count of empty pixels separating them, scaled to nm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Layout, TechRules, band_rects
from .morphology import MorphKernel, dilate
from .raster import CANVAS, RasterImage, SquareOutOfCanvas, rasterize

_EIGHT = np.ones((3, 3), np.int32)


class FilterLargerThanCanvas(ValueError):
    pass


class GeometryModified(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSquare:
    x: int
    y: int
    side: int
    layer_id: int

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("square side must be >= 1")
        if self.x < 0 or self.y < 0:
            raise ValueError("square corner must be non-negative")


@dataclass
class ForbiddenMap:
    mask: np.ndarray


@dataclass(frozen=True)
class DrcViolation:
    rule: str
    x: int
    y: int
    measured: float
    required: float
    context: str = ""


@dataclass
class DrcReport:
    violations: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations


@dataclass
class LvsResult:
    passed: bool
    failures: list = field(default_factory=list)


def _plane(img) -> np.ndarray:
    """Accept RasterImage, (H,W) or (H,W,1) arrays; return 2-d uint8 {0,1}."""
    a = img.a if isinstance(img, RasterImage) else np.asarray(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim != 2:
        raise ValueError(f"expected a single-plane image, got shape {a.shape}")
    return (a > 0).astype(np.uint8) if a.dtype.kind != "f" else (a >= 0.5).astype(np.uint8)


def squarify(mask, rules: TechRules, layer_id: int) -> list:
    """Candidate squares from a perturbation mask on a stride-f tiling.

    Only additive changes count: a tile qualifies when strictly more than half
    of its pixels carry positive delta.
    """
    delta = np.asarray(mask.delta)
    if delta.ndim == 3 and delta.shape[2] == 1:
        delta = delta[..., 0]
    if delta.ndim != 2:
        raise ValueError(f"expected one sample's mask, delta shape {delta.shape}")
    f = rules.filter_side_px
    h, w = delta.shape
    if f > h or f > w:
        raise FilterLargerThanCanvas(f"filter {f} px vs canvas {h}x{w}")
    added = delta > 0
    th, tw = h // f, w // f
    counts = added[:th * f, :tw * f].reshape(th, f, tw, f).sum(axis=(1, 3))
    out = []
    for r in range(th):
        for c in range(tw):
            if counts[r, c] * 2 > f * f:
                out.append(NoiseSquare(c * f, r * f, f, layer_id))
    return out


def forbidden_area(layer_img, rules: TechRules) -> ForbiddenMap:
    """Everything within Chebyshev distance 2-lambda of the foreground."""
    a = _plane(layer_img)
    half = rules.spacing_px
    mask = dilate(a, MorphKernel(2 * half + 1)).astype(bool)
    return ForbiddenMap(mask)


def _box_sep(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1):
    """Per-axis empty separation between two half-open boxes (0 = touch/overlap)."""
    sx = max(bx0 - ax1, ax0 - bx1, 0)
    sy = max(by0 - ay1, ay0 - by1, 0)
    return sx, sy


def place_squares(candidates, forbidden: ForbiddenMap, rules: TechRules) -> list:
    """Row-major greedy acceptance with first-come priority."""
    need = rules.spacing_px
    mask = forbidden.mask
    h, w = mask.shape
    accepted = []
    for sq in sorted(candidates, key=lambda s: (s.y, s.x)):
        if sq.x % rules.lambda_px or sq.y % rules.lambda_px:
            continue
        if sq.y + sq.side > h or sq.x + sq.side > w:
            continue
        if mask[sq.y:sq.y + sq.side, sq.x:sq.x + sq.side].any():
            continue
        ok = True
        for other in accepted:
            sx, sy = _box_sep(sq.x, sq.y, sq.x + sq.side, sq.y + sq.side,
                              other.x, other.y, other.x + other.side,
                              other.y + other.side)
            if max(sx, sy) < need:
                ok = False
                break
        if ok:
            accepted.append(sq)
    return accepted


def apply_squares(img: RasterImage, squares) -> RasterImage:
    a = img.a.copy()
    h, w = a.shape
    for sq in squares:
        if sq.y + sq.side > h or sq.x + sq.side > w:
            raise SquareOutOfCanvas(f"square at ({sq.x},{sq.y}) side {sq.side} "
                                    f"outside {h}x{w} canvas")
        a[sq.y:sq.y + sq.side, sq.x:sq.x + sq.side] = 1
    return RasterImage(a, img.origin_db, img.nm_per_pixel, img.layer_absent)


def _open_square(a: np.ndarray, k: int) -> np.ndarray:
    """Binary opening with a k-by-k structuring element (k may be even)."""
    from numpy.lib.stride_tricks import sliding_window_view
    h, w = a.shape
    if h < k or w < k:
        return np.zeros_like(a, bool)
    fits = sliding_window_view(a, (k, k)).min(axis=(2, 3)).astype(bool)
    pad = np.zeros((h + k - 1, w + k - 1), bool)
    pad[k - 1:h, k - 1:w] = fits    # window (i,j) covers pixels [i, i+k)
    win = sliding_window_view(pad, (k, k))
    return win.max(axis=(2, 3))


def drc_check_image(img, rules: TechRules, context: str = "") -> DrcReport:
    a = _plane(img)
    violations = []
    k = rules.lambda_px
    lbl, n = ndimage.label(a, structure=_EIGHT)
    # feature width: every pixel must be coverable by a lambda-sided square
    if k > 1 and n:
        thin = a.astype(bool) & ~_open_square(a, k)
        if thin.any():
            for comp in np.unique(lbl[thin]):
                rows, cols = np.nonzero((lbl == comp) & thin)
                comp_mask = (lbl == comp).astype(np.uint8)
                measured = 0
                for kk in range(k - 1, 0, -1):
                    if not (comp_mask.astype(bool) & ~_open_square(comp_mask, kk)).any():
                        measured = kk
                        break
                violations.append(DrcViolation(
                    "width", int(cols[0]), int(rows[0]),
                    measured * rules.nm_per_pixel, rules.lambda_nm, context))
    # spacing: components that merge under half-spacing dilation are too close
    if n >= 2:
        merged = dilate(a, MorphKernel(2 * k + 1))
        lbl2, n2 = ndimage.label(merged, structure=_EIGHT)
        if n2 < n:
            groups = {}
            for comp in range(1, n + 1):
                rows, cols = np.nonzero(lbl == comp)
                groups.setdefault(int(lbl2[rows[0], cols[0]]), []).append(comp)
            for members in groups.values():
                if len(members) < 2:
                    continue
                for i, ca in enumerate(members):
                    dist = ndimage.distance_transform_cdt(
                        (lbl != ca).astype(np.uint8), metric="chessboard")
                    for cb in members[i + 1:]:
                        rows, cols = np.nonzero(lbl == cb)
                        dmin = int(dist[rows, cols].min())
                        gap = dmin - 1
                        if gap * rules.nm_per_pixel < rules.min_spacing_nm:
                            j = int(dist[rows, cols].argmin())
                            violations.append(DrcViolation(
                                "spacing", int(cols[j]), int(rows[j]),
                                gap * rules.nm_per_pixel, rules.min_spacing_nm,
                                context))
    return DrcReport(violations)


def canvas_for(cell, rules: TechRules):
    x0, y0, x1, y1 = cell.bbox
    npp = rules.nm_per_pixel * rules.db_units_per_nm
    return ((y1 - y0) // npp + 1, (x1 - x0) // npp + 1)


def drc_check_layout(layout: Layout, rules: TechRules) -> DrcReport:
    violations = []
    for cell in layout.cells:
        layers = sorted({p.layer_id for p in cell.polygons})
        for poly in cell.polygons:
            for vx, vy in poly.vertices:
                if vx % rules.lambda_db or vy % rules.lambda_db:
                    violations.append(DrcViolation(
                        "grid", int(vx), int(vy),
                        float(max(vx % rules.lambda_db, vy % rules.lambda_db)),
                        0.0, f"{cell.name}/l{poly.layer_id}"))
        canvas = canvas_for(cell, rules)
        for layer in layers:
            img = rasterize(cell, layer, rules, canvas)
            rep = drc_check_image(img, rules, context=f"{cell.name}/l{layer}")
            violations.extend(rep.violations)
    return DrcReport(violations)


def drc_check(subject, rules: TechRules) -> DrcReport:
    if isinstance(subject, Layout):
        return drc_check_layout(subject, rules)
    return drc_check_image(subject, rules)


def lvs_lite(original: Layout, perturbed: Layout, rules: TechRules) -> LvsResult:
    """Added shapes must be electrically floating; originals must be untouched."""
    orig = {c.name: c for c in original.cells}
    pert = {c.name: c for c in perturbed.cells}
    if set(orig) != set(pert):
        raise GeometryModified(
            f"cell sets differ: {sorted(set(orig) ^ set(pert))}")
    spacing_db = rules.min_spacing_nm * rules.db_units_per_nm
    failures = []
    for name, oc in orig.items():
        remaining = list(pert[name].polygons)
        for poly in oc.polygons:
            for i, cand in enumerate(remaining):
                if (cand.layer_id == poly.layer_id
                        and cand.datatype == poly.datatype
                        and cand.vertices == poly.vertices):
                    del remaining[i]
                    break
            else:
                raise GeometryModified(
                    f"{name}: original polygon on layer {poly.layer_id} "
                    "missing or modified")
        if not remaining:
            continue
        orig_boxes = []
        for poly in oc.polygons:
            orig_boxes += [(poly.layer_id,) + b for b in band_rects(poly)]
        for ai, added in enumerate(remaining):
            for box in band_rects(added):
                for layer, ox0, oy0, ox1, oy1 in orig_boxes:
                    sx, sy = _box_sep(box[0], box[1], box[2], box[3],
                                      ox0, oy0, ox1, oy1)
                    overlap = (box[0] < ox1 and ox0 < box[2]
                               and box[1] < oy1 and oy0 < box[3])
                    if overlap:
                        failures.append((name, added.layer_id, ai, "overlap", 0.0))
                    elif (layer == added.layer_id
                          and max(sx, sy) < spacing_db):
                        failures.append((name, added.layer_id, ai, "spacing",
                                         float(max(sx, sy))))
    return LvsResult(not failures, failures)


def drc_csv_rows(report: DrcReport) -> list:
    rows = ["rule,x,y,measured,required"]
    rows += [f"{v.rule},{v.x},{v.y},{v.measured:g},{v.required:g}"
             for v in report.violations]
    return rows


def squares_csv_rows(squares) -> list:
    rows = ["x,y,side,layer"]
    rows += [f"{s.x},{s.y},{s.side},{s.layer_id}" for s in squares]
    return rows
