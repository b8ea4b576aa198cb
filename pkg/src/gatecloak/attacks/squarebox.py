"""Gradient-free square-placement attack with random search.

Candidates set an s-by-s region to the clean image plus or minus epsilon
(saturated into [0, 1]); a candidate is kept only when the margin loss
(true logit minus best other logit) strictly decreases. The square side
follows the published halving schedule on the perturbed-fraction parameter.

Every (restart, sample) pair owns a counter-based RNG stream keyed by the
caller's seed and the sample's position, so results are bit-reproducible
and independent of forward-pass chunking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import F32
from .common import as_batch, finalize

_SCHEDULE = ((10, 1), (50, 2), (200, 4), (500, 8), (1000, 16), (2000, 32),
             (4000, 64), (6000, 128), (8000, 256))


@dataclass(frozen=True)
class SquareConfig:
    norm_tag: int = 0
    max_iter: int = 500
    epsilon: float = 0.1
    p_init: float = 0.7
    nb_restarts: int = 3
    batch_size: int = 64

    def __post_init__(self):
        if self.norm_tag != 0:
            raise ValueError("only norm_tag 0 (sup-norm square update) is supported")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} not in [0, 1]")
        if not 0.0 < self.p_init <= 1.0:
            raise ValueError(f"p_init {self.p_init} not in (0, 1]")
        if self.max_iter < 1 or self.nb_restarts < 1 or self.batch_size < 1:
            raise ValueError("max_iter, nb_restarts, batch_size must be >= 1")


def _p_fraction(p_init: float, it: int, n_iters: int) -> float:
    frac = int(it / n_iters * 10000)
    div = 512
    for bound, d in _SCHEDULE:
        if frac <= bound:
            div = d
            break
    return p_init / div


def _side(p: float, h: int, w: int) -> int:
    s = int(round(np.sqrt(p * h * w)))
    return max(1, min(s, h, w))


def _margins(model, x, y, chunk: int) -> np.ndarray:
    out = np.empty(len(x), F32)
    for i in range(0, len(x), chunk):
        logits = model.logits(x[i:i + chunk])
        rows = np.arange(len(logits))
        true = logits[rows, y[i:i + chunk]].copy()
        logits[rows, y[i:i + chunk]] = -np.inf
        out[i:i + chunk] = true - logits.max(axis=1)
    return out


def square_attack(model, x, y, cfg: SquareConfig = SquareConfig(), seed: int = 0):
    """Returns one PerturbationMask per sample (a bare mask for HWC input)."""
    xb, single = as_batch(x)
    labels = np.atleast_1d(np.asarray(y, np.int64))
    n, h, w, c = xb.shape
    if labels.shape != (n,):
        raise ValueError(f"labels {labels.shape} vs batch {n}")

    clean_margin = _margins(model, xb, labels, cfg.batch_size)
    best = xb.copy()
    best_margin = clean_margin.copy()
    best_iters = np.zeros(n, int)

    for restart in range(cfg.nb_restarts):
        todo = np.flatnonzero(best_margin >= 0)
        if todo.size == 0:
            break
        rngs = {int(i): np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(restart, int(i)))))
            for i in todo}
        cur = xb[todo].copy()
        cur_margin = clean_margin[todo].copy()
        cur_iters = np.zeros(todo.size, int)
        alive = np.ones(todo.size, bool)
        for it in range(cfg.max_iter):
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            p = _p_fraction(cfg.p_init, it, cfg.max_iter)
            s = _side(p, h, w)
            cand = cur[live].copy()
            for row, li in enumerate(live):
                rng = rngs[int(todo[li])]
                r0 = int(rng.integers(0, h - s + 1))
                c0 = int(rng.integers(0, w - s + 1))
                sign = F32(cfg.epsilon) if rng.integers(0, 2) else F32(-cfg.epsilon)
                cand[row, r0:r0 + s, c0:c0 + s] = np.clip(
                    xb[todo[li], r0:r0 + s, c0:c0 + s] + sign, 0.0, 1.0)
            cand_margin = _margins(model, cand, labels[todo[live]], cfg.batch_size)
            cur_iters[live] += 1
            accept = cand_margin < cur_margin[live]
            rows = live[accept]
            cur[rows] = cand[accept]
            cur_margin[rows] = cand_margin[accept]
            alive[rows[cur_margin[rows] < 0]] = False
        improved = cur_margin < best_margin[todo]
        gidx = todo[improved]
        best[gidx] = cur[improved]
        best_margin[gidx] = cur_margin[improved]
        best_iters[gidx] = cur_iters[improved]

    masks = [finalize(xb[i], best[i], bool(best_margin[i] < 0), int(best_iters[i]))
             for i in range(n)]
    return masks[0] if single else masks
