"""Rasterization, downsampling, PGM codec, and square injection."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatecloak.constrain import NoiseSquare
from gatecloak.dataset import corpus_layout
from gatecloak.geometry import Cell, TechRules, band_rects, rect
from gatecloak.raster import (CANVAS, CanvasOverflow, RasterImage,
                              SquareOutOfCanvas, UnknownCell, composite_layers,
                              downsample, inject_squares, pgm_bytes, rasterize,
                              read_pgm, read_pgm_binary, write_pgm)


def naive_raster(cell, layer_id, rules, canvas):
    """Per-pixel center membership, in doubled integer coordinates."""
    ox, oy = cell.bbox[0], cell.bbox[1]
    dpp = rules.db_per_px
    boxes = [b for p in cell.layer_polygons(layer_id) for b in band_rects(p)]
    a = np.zeros(canvas, np.uint8)
    for r in range(canvas[0]):
        for c in range(canvas[1]):
            cx2 = 2 * ox + (2 * c + 1) * dpp
            cy2 = 2 * oy + (2 * r + 1) * dpp
            for x0, y0, x1, y1 in boxes:
                if 2 * x0 <= cx2 <= 2 * x1 and 2 * y0 <= cy2 <= 2 * y1:
                    a[r, c] = 1
                    break
    return a


class TestRasterize:
    def test_single_rect(self, rules):
        cell = Cell("C", [rect(0, 0, 20, 10, 1)])
        img = rasterize(cell, 1, rules, canvas=(4, 6))
        want = np.zeros((4, 6), np.uint8)
        want[0:2, 0:4] = 1  # centers 2.5..17.5 fall inside [0, 20] x [0, 10]
        assert np.array_equal(img.a, want)
        assert img.origin_db == (0, 0)
        assert not img.layer_absent

    def test_boundary_center_is_foreground(self):
        # 4 nm pixels put centers on even coordinates; x = 6 lands exactly on
        # the rectangle edge and membership is boundary-inclusive
        r = TechRules(nm_per_pixel=4)
        img = rasterize(Cell("C", [rect(0, 0, 6, 4, 1)]), 1, r, canvas=(2, 4))
        assert img.a[0, 1] == 1
        assert img.a[0, 2] == 0

    def test_bbox_anchoring(self, rules):
        base = Cell("A", [rect(0, 0, 40, 20, 1)])
        moved = Cell("B", [rect(100, 60, 140, 80, 1)])
        a = rasterize(base, 1, rules, canvas=(8, 12)).a
        b = rasterize(moved, 1, rules, canvas=(8, 12)).a
        assert np.array_equal(a, b)
        assert rasterize(moved, 1, rules, canvas=(8, 12)).origin_db == (100, 60)

    def test_canvas_overflow(self, rules):
        cell = Cell("C", [rect(0, 0, 10_000, 40, 1)])
        with pytest.raises(CanvasOverflow):
            rasterize(cell, 1, rules, canvas=(8, 12))

    def test_empty_layer_flagged(self, rules):
        cell = Cell("C", [rect(0, 0, 40, 20, 1)])
        img = rasterize(cell, 2, rules, canvas=(8, 12))
        assert img.layer_absent
        assert not img.a.any()

    @settings(deadline=None, max_examples=40)
    @given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 20),
                              st.integers(1, 30), st.integers(1, 15),
                              st.sampled_from((1, 2))),
                    min_size=1, max_size=4))
    def test_matches_center_membership_oracle(self, rules, boxes):
        polys = [rect(x, y, x + w, y + h, lid) for x, y, w, h, lid in boxes]
        cell = Cell("C", polys)
        for lid in (1, 2):
            got = rasterize(cell, lid, rules, canvas=(8, 16)).a
            assert np.array_equal(got, naive_raster(cell, lid, rules, (8, 16)))

    def test_composite_is_union(self, rules, tiny_pairs):
        cell, _ = tiny_pairs[0]
        union = np.zeros(CANVAS, np.uint8)
        for lid in (1, 2, 3):
            union |= rasterize(cell, lid, rules).a
        assert np.array_equal(composite_layers(cell, (1, 2, 3), rules).a, union)

    def test_composite_needs_layers(self, rules, tiny_pairs):
        with pytest.raises(ValueError):
            composite_layers(tiny_pairs[0][0], (), rules)


class TestDownsample:
    def test_block_or_oracle(self):
        rng = np.random.default_rng(3)
        a = (rng.random((9, 14)) < 0.3).astype(np.uint8)
        got = downsample(a, 2)
        assert got.shape == (5, 7)
        for r in range(5):
            for c in range(7):
                assert got[r, c] == a[2 * r:2 * r + 2, 2 * c:2 * c + 2].max()

    def test_identity_factor(self):
        a = np.eye(4, dtype=np.uint8)
        assert downsample(a, 1) is a

    def test_partial_edge_blocks_pad_with_zero(self):
        a = np.ones((3, 3), np.uint8)
        assert np.array_equal(downsample(a, 2), np.ones((2, 2), np.uint8))

    def test_grid_geometry_downsamples_exactly(self, rules, tiny_pairs):
        # on-grid corpus geometry: block-OR at factor 2 equals rasterizing
        # at the doubled pixel pitch
        cell, _ = tiny_pairs[0]
        full = rasterize(cell, 1, rules).a
        half = rasterize(cell, 1, rules.scaled(2), canvas=(129, 525)).a
        assert np.array_equal(downsample(full, 2), half)


class TestPgm:
    def test_roundtrip_binary(self, tmp_path, rules, tiny_metal):
        img = tiny_metal[0].image
        p = tmp_path / "x.pgm"
        write_pgm(p, img)
        assert np.array_equal(read_pgm_binary(p), img.a)

    def test_roundtrip_maxval_1(self, tmp_path):
        a = np.array([[0, 1], [1, 0]], np.uint8)
        p = tmp_path / "x.pgm"
        write_pgm(p, a, maxval=1)
        assert np.array_equal(read_pgm_binary(p), a)

    def test_float_image_quantized(self, tmp_path):
        a = np.array([[0.0, 0.25], [0.75, 1.0]], np.float32)
        p = tmp_path / "x.pgm"
        write_pgm(p, a)
        back = read_pgm(p)
        assert np.allclose(back, [[0.0, 64 / 255], [191 / 255, 1.0]], atol=1e-6)

    def test_file_rows_run_top_down(self):
        a = np.zeros((3, 2), np.uint8)
        a[0, 0] = 1  # y-up row 0 = bottom scanline = last row in the file
        data = pgm_bytes(a, maxval=1)
        header = b"P5\n2 3\n1\n"
        assert data.startswith(header)
        assert data[len(header):] == bytes([0, 0, 0, 0, 1, 0])

    def test_bad_maxval_rejected(self):
        with pytest.raises(ValueError):
            pgm_bytes(np.zeros((2, 2), np.uint8), maxval=7)

    def test_non_pgm_rejected(self, tmp_path):
        p = tmp_path / "x.pgm"
        p.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(ValueError):
            read_pgm(p)


class TestInjectSquares:
    def test_injected_square_rasterizes_to_painted_pixels(self, rules, tiny_pairs):
        layout = corpus_layout(tiny_pairs[:3])
        name = layout.cells[0].name
        squares = [NoiseSquare(8, 4, 16, 1), NoiseSquare(200, 100, 16, 1)]
        out = inject_squares(layout, name, 1, squares, rules)
        before = rasterize(layout.cell(name), 1, rules).a
        painted = before.copy()
        for sq in squares:
            painted[sq.y:sq.y + sq.side, sq.x:sq.x + sq.side] = 1
        assert np.array_equal(rasterize(out.cell(name), 1, rules).a, painted)
        # original layout untouched, other cells carried over
        assert len(layout.cell(name).polygons) + 2 == len(out.cell(name).polygons)
        assert [c.name for c in out.cells] == [c.name for c in layout.cells]

    def test_unknown_cell(self, rules, tiny_pairs):
        layout = corpus_layout(tiny_pairs[:2])
        with pytest.raises(UnknownCell):
            inject_squares(layout, "nope", 1, [], rules)

    def test_square_out_of_canvas(self, rules, tiny_pairs):
        layout = corpus_layout(tiny_pairs[:2])
        name = layout.cells[0].name
        bad = [NoiseSquare(CANVAS[1] - 8, 0, 16, 1)]
        with pytest.raises(SquareOutOfCanvas):
            inject_squares(layout, name, 1, bad, rules)

    def test_off_grid_square_rejected(self, rules, tiny_pairs):
        layout = corpus_layout(tiny_pairs[:2])
        name = layout.cells[0].name
        with pytest.raises(ValueError, match="grid"):
            inject_squares(layout, name, 1, [NoiseSquare(3, 0, 16, 1)], rules)
