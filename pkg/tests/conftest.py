"""Shared fixtures: one small deterministic corpus reused across suites."""

import pytest

from gatecloak.dataset import GeneratorConfig, generate_corpus, render_samples
from gatecloak.geometry import TechRules


@pytest.fixture(scope="session")
def rules():
    return TechRules()


@pytest.fixture(scope="session")
def tiny_pairs(rules):
    # three cells per category keeps whole-corpus suites fast while still
    # exercising every template
    cfg = GeneratorConfig(counts=(3,) * 11)
    return generate_corpus(cfg, rules, seed=5)


@pytest.fixture(scope="session")
def tiny_metal(tiny_pairs, rules):
    return render_samples(tiny_pairs, "metal1", rules)


@pytest.fixture(scope="session")
def tiny_all(tiny_pairs, rules):
    return render_samples(tiny_pairs, "all", rules)
