"""Geometry primitives: rules arithmetic, polygons, band decomposition."""

import pytest
from hypothesis import given, strategies as st

from gatecloak.geometry import (BadPolygon, Cell, Layout, Polygon, RuleError,
                                TechRules, band_rects, rect)


class TestTechRules:
    def test_defaults(self):
        r = TechRules()
        assert r.lambda_nm == 20
        assert r.min_spacing_nm == 40
        assert r.nm_per_pixel == 5
        assert r.lambda_px == 4
        assert r.spacing_px == 8
        assert r.filter_side_px == 16
        assert r.db_per_px == 5
        assert r.lambda_db == 20

    def test_spacing_is_twice_lambda(self):
        with pytest.raises(RuleError):
            TechRules(min_spacing_nm=60)

    def test_pixel_must_divide_lambda(self):
        with pytest.raises(RuleError):
            TechRules(nm_per_pixel=3)

    def test_scaled_rules(self):
        r = TechRules().scaled(2)
        assert r.nm_per_pixel == 10
        assert r.lambda_px == 2
        assert r.spacing_px == 4
        assert r.filter_side_px == 8
        # scaling past the lambda grid is rejected
        with pytest.raises(RuleError):
            TechRules().scaled(8)

    def test_nonpositive_fields(self):
        with pytest.raises(RuleError):
            TechRules(lambda_nm=0, min_spacing_nm=0)
        with pytest.raises(RuleError):
            TechRules(db_units_per_nm=0)


class TestPolygon:
    def test_rect_is_closed(self):
        p = rect(0, 0, 40, 20, 1)
        assert p.vertices[0] == p.vertices[-1]
        assert p.bbox() == (0, 0, 40, 20)

    def test_open_polygon_rejected(self):
        with pytest.raises(BadPolygon):
            Polygon(1, 0, ((0, 0), (10, 0), (10, 10), (0, 10)))

    def test_diagonal_edge_rejected(self):
        with pytest.raises(BadPolygon):
            Polygon(1, 0, ((0, 0), (10, 10), (0, 10), (0, 0)))

    def test_empty_rect_rejected(self):
        with pytest.raises(BadPolygon):
            rect(5, 5, 5, 10, 1)


class TestBandRects:
    def test_rect_roundtrip(self):
        assert band_rects(rect(2, 3, 9, 7, 1)) == [(2, 3, 9, 7)]

    def test_l_shape(self):
        # L covering [0,4]x[0,2] plus [0,2]x[2,6]
        p = Polygon(1, 0, ((0, 0), (4, 0), (4, 2), (2, 2), (2, 6), (0, 6), (0, 0)))
        bands = sorted(band_rects(p))
        assert bands == [(0, 0, 4, 2), (0, 2, 2, 6)]

    def test_bands_cover_same_area(self):
        p = Polygon(1, 0, ((0, 0), (6, 0), (6, 4), (4, 4), (4, 8),
                           (2, 8), (2, 4), (0, 4), (0, 0)))
        area = sum((x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in band_rects(p))
        assert area == 6 * 4 + 2 * 4

    @given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12),
                              st.integers(1, 6), st.integers(1, 6)),
                    min_size=1, max_size=4))
    def test_bands_of_rects_identity(self, boxes):
        # a plain rectangle always decomposes to itself
        for x, y, w, h in boxes:
            assert band_rects(rect(x, y, x + w, y + h, 1)) == [(x, y, x + w, y + h)]


class TestCellLayout:
    def test_bbox_derived(self):
        c = Cell("C", [rect(10, 20, 30, 40, 1), rect(0, 25, 5, 30, 2)])
        assert c.bbox == (0, 20, 30, 40)

    def test_layer_filter(self):
        c = Cell("C", [rect(0, 0, 5, 5, 1), rect(0, 0, 5, 5, 2)])
        assert len(c.layer_polygons(1)) == 1
        assert c.layer_polygons(3) == []

    def test_duplicate_cell_names_rejected(self):
        a = Cell("X", [rect(0, 0, 5, 5, 1)])
        b = Cell("X", [rect(0, 0, 5, 5, 1)])
        with pytest.raises(ValueError):
            Layout(cells=[a, b])

    def test_cell_lookup(self):
        a = Cell("A", [rect(0, 0, 5, 5, 1)])
        lay = Layout(cells=[a])
        assert lay.cell("A") is a
        with pytest.raises(KeyError):
            lay.cell("B")
