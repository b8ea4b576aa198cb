"""Corpus generation, category separation, splitting, manifest export."""

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatecloak.dataset import (ConfigInvalid, GateCategory, GeneratorConfig,
                               RatioOutOfRange, generate_corpus, read_manifest,
                               render_samples, split, write_sample_tree)
from gatecloak.morphology import MorphKernel
from gatecloak.raster import CANVAS, read_pgm_binary


class TestGeneratorConfig:
    def test_default_corpus_shape(self):
        cfg = GeneratorConfig()
        assert len(cfg.categories) == 11
        assert cfg.counts == (81,) * 9 + (80,) * 2
        assert cfg.total == 889

    def test_misaligned_counts_rejected(self):
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(counts=(5, 5))

    def test_unknown_category_rejected(self):
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(categories=("INV", "BOGUS"), counts=(2, 2))

    def test_nonpositive_count_rejected(self):
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(counts=(3,) * 10 + (0,))


class TestGenerateCorpus:
    def test_pairs_and_labels(self, tiny_pairs):
        assert len(tiny_pairs) == 33
        ids = sorted({cat.id for _, cat in tiny_pairs})
        assert ids == list(range(11))
        for cell, cat in tiny_pairs:
            assert cell.name.startswith(cat.name)

    def test_deterministic_per_seed(self, rules, tiny_pairs):
        again = generate_corpus(GeneratorConfig(counts=(3,) * 11), rules, seed=5)
        for (a, ca), (b, cb) in zip(tiny_pairs, again):
            assert ca == cb and a.name == b.name
            assert [p.vertices for p in a.polygons] == [p.vertices for p in b.polygons]

    def test_seed_changes_geometry(self, rules, tiny_pairs):
        other = generate_corpus(GeneratorConfig(counts=(3,) * 11), rules, seed=6)
        same = all(
            [p.vertices for p in a.polygons] == [p.vertices for p in b.polygons]
            for (a, _), (b, _) in zip(tiny_pairs, other))
        assert not same

    def test_geometry_on_lambda_grid(self, rules, tiny_pairs):
        for cell, _ in tiny_pairs:
            for poly in cell.polygons:
                for x, y in poly.vertices:
                    assert x % rules.lambda_db == 0
                    assert y % rules.lambda_db == 0

    def test_origin_pinned(self, tiny_pairs):
        for cell, _ in tiny_pairs:
            assert cell.bbox[:2] == (0, 0)


class TestCategorySeparation:
    def test_metal_hamming_floor(self, tiny_metal):
        flat = np.stack([s.image.a.reshape(-1) for s in tiny_metal])
        labels = [s.label.id for s in tiny_metal]
        worst = None
        for i in range(len(flat)):
            for j in range(i + 1, len(flat)):
                if labels[i] == labels[j]:
                    continue
                d = int(np.count_nonzero(flat[i] != flat[j]))
                worst = d if worst is None else min(worst, d)
        # different categories always differ by at least two signature bars
        assert worst is not None and worst >= 3200


class TestRenderSamples:
    def test_canvas_and_tags(self, tiny_metal):
        for s in tiny_metal:
            assert s.image.a.shape == CANVAS
            assert s.layer_tag == "metal1"
            assert s.provenance == "clean"

    def test_all_tag_is_union(self, rules, tiny_pairs, tiny_metal, tiny_all):
        poly = render_samples(tiny_pairs[:1], "poly", rules)[0]
        contact = render_samples(tiny_pairs[:1], "contact", rules)[0]
        union = tiny_metal[0].image.a | poly.image.a | contact.image.a
        assert np.array_equal(tiny_all[0].image.a, union)

    def test_morph_moves_provenance(self, rules, tiny_pairs):
        morphed = render_samples(tiny_pairs[:2], "metal1", rules,
                                 morph=MorphKernel())
        for s in morphed:
            assert s.provenance == "morphed"

    def test_provenance_only_moves_forward(self, tiny_metal):
        s = tiny_metal[0]
        evolved = s.evolved(s.image, "adversarial")
        assert evolved.provenance == "adversarial"
        with pytest.raises(ValueError):
            evolved.evolved(s.image, "clean")

    def test_unknown_tag_rejected(self, rules, tiny_pairs):
        with pytest.raises(KeyError):
            render_samples(tiny_pairs[:1], "metal9", rules)


def fake_samples(counts):
    out = []
    for cid, n in enumerate(counts):
        cat = GateCategory(cid, f"c{cid}")
        out += [SimpleNamespace(label=cat, sample_id=f"c{cid}_{i}")
                for i in range(n)]
    return out


class TestSplit:
    def test_standard_quota(self):
        sp = split(fake_samples((81,) * 9 + (80,) * 2), 0.7875, seed=0)
        assert len(sp.train) == 700
        assert len(sp.test) == 189

    def test_largest_remainder_allocation(self):
        sp = split(fake_samples((81,) * 9 + (80,) * 2), 0.7875, seed=0)
        per_cat = {}
        for s in sp.train:
            per_cat[s.label.id] = per_cat.get(s.label.id, 0) + 1
        # 81 * 0.7875 = 63.7875 and 80 * 0.7875 = 63.0; the 7 leftover slots
        # go to the largest fractional remainders, ties broken by id
        assert [per_cat[c] for c in range(11)] == [64] * 7 + [63] * 4

    @settings(deadline=None, max_examples=30)
    @given(st.lists(st.integers(2, 12), min_size=2, max_size=6),
           st.floats(0.2, 0.8), st.integers(0, 99))
    def test_split_properties(self, counts, ratio, seed):
        samples = fake_samples(counts)
        try:
            sp = split(samples, ratio, seed)
        except RatioOutOfRange:
            return  # degenerate quota, legitimately rejected
        assert len(sp.train) + len(sp.test) == len(samples)
        assert len(sp.train) == round(ratio * len(samples))
        got = sorted(s.sample_id for s in sp.train + sp.test)
        assert got == sorted(s.sample_id for s in samples)
        for cid, n in enumerate(counts):
            k = sum(1 for s in sp.train if s.label.id == cid)
            assert abs(k - ratio * n) < 1.0 + 1e-9

    def test_deterministic(self):
        a = split(fake_samples((9, 9)), 0.5, seed=3)
        b = split(fake_samples((9, 9)), 0.5, seed=3)
        assert [s.sample_id for s in a.train] == [s.sample_id for s in b.train]
        c = split(fake_samples((9, 9)), 0.5, seed=4)
        assert [s.sample_id for s in a.train] != [s.sample_id for s in c.train]

    def test_ratio_bounds(self):
        with pytest.raises(RatioOutOfRange):
            split(fake_samples((4, 4)), 0.0, seed=0)
        with pytest.raises(RatioOutOfRange):
            split(fake_samples((4, 4)), 1.0, seed=0)

    def test_empty_side_rejected(self):
        with pytest.raises(RatioOutOfRange):
            split(fake_samples((2,)), 0.1, seed=0)


class TestSampleTree:
    def test_write_and_read_back(self, tmp_path, tiny_metal):
        manifest = write_sample_tree(tmp_path, tiny_metal[:5])
        rows = read_manifest(manifest)
        assert len(rows) == 5
        for (sid, cat, tag, prov, rel), s in zip(rows, tiny_metal[:5]):
            assert (sid, cat, tag, prov) == (s.sample_id, s.label.name,
                                             "metal1", "clean")
            assert np.array_equal(read_pgm_binary(tmp_path / rel), s.image.a)

    def test_manifest_rejects_bad_line(self, tmp_path):
        p = tmp_path / "corpus_manifest.txt"
        p.write_text("a,b,c\n", encoding="ascii")
        with pytest.raises(ValueError):
            read_manifest(p)
