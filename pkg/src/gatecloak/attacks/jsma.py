"""Saliency-map attack: pairwise greedy feature perturbation.

The per-feature score follows the two-branch rule: zero wherever the target
gradient is negative or the summed other-category gradient is positive,
otherwise the product of the target gradient and the magnitude of that sum.
With softmax outputs the other-category sum is exactly the negated target
gradient, so saliency_map needs a single backward pass per step.

Used untargeted: the target category is the runner-up of the clean prediction,
the cheapest way to pull probability off the true category.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import F32
from .common import PerturbationMask, as_batch, finalize


@dataclass(frozen=True)
class JsmaConfig:
    theta: float = 10.0
    gamma: float = 1.0
    target_rule: str = "runner_up"
    max_iter: int = 60

    def __post_init__(self):
        if self.theta == 0:
            raise ValueError("theta must be nonzero")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma {self.gamma} not in (0, 1]")
        if self.target_rule != "runner_up":
            raise ValueError(f"unsupported target rule {self.target_rule!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def saliency_scores(grad_target: np.ndarray, grad_others: np.ndarray) -> np.ndarray:
    """Two-branch saliency on explicit gradients; pure, shape-preserving."""
    gt = np.asarray(grad_target, F32)
    go = np.asarray(grad_others, F32)
    if gt.shape != go.shape:
        raise ValueError(f"gradient shapes differ: {gt.shape} vs {go.shape}")
    return np.where((gt < 0) | (go > 0), F32(0.0), gt * np.abs(go))


def saliency_map(model, x, target) -> np.ndarray:
    """Saliency of each input pixel toward `target` on softmax outputs."""
    gt = model.input_gradient(x, target)
    return saliency_scores(gt, -gt)


def jsma_attack(model, x, true_label, cfg: JsmaConfig = JsmaConfig(),
                batch_size: int = 12):
    """Returns one PerturbationMask per sample (a bare mask for HWC input)."""
    xb, single = as_batch(x)
    labels = np.atleast_1d(np.asarray(true_label, np.int64))
    if labels.shape != (xb.shape[0],):
        raise ValueError(f"labels {labels.shape} vs batch {xb.shape[0]}")
    masks = []
    for i in range(0, len(xb), batch_size):
        masks += _jsma_batch(model, xb[i:i + batch_size], labels[i:i + batch_size], cfg)
    return masks[0] if single else masks


def _jsma_batch(model, x0, labels, cfg: JsmaConfig):
    n, h, w, c = x0.shape
    feat = h * w * c
    budget = int(cfg.gamma * feat)
    x_adv = x0.copy()
    touched = np.zeros((n, feat), bool)
    done = np.zeros(n, bool)
    success = np.zeros(n, bool)
    iters = np.zeros(n, int)

    probs = model.predict_proba(x0)
    targets = np.argsort(probs, axis=1)[:, -2:]
    # runner-up of the clean prediction; fall back to top-1 if the model
    # already disagrees with the stated true label
    target = np.where(targets[:, 1] == labels, targets[:, 0], targets[:, 1])

    if budget < 2:
        return [finalize(x0[i], x0[i], model.predict(x0[i:i + 1])[0] != labels[i], 0)
                for i in range(n)]

    for it in range(cfg.max_iter):
        alive = ~done
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        pred = model.predict(x_adv[idx])
        flipped = pred != labels[idx]
        success[idx[flipped]] = True
        done[idx[flipped]] = True
        idx = idx[~flipped]
        if idx.size == 0:
            break
        iters[idx] += 1
        sal = saliency_map(model, x_adv[idx], target[idx]).reshape(len(idx), feat)
        saturated = ((x_adv[idx] >= 1.0) if cfg.theta > 0 else
                     (x_adv[idx] <= 0.0)).reshape(len(idx), feat)
        sal[touched[idx] | saturated] = -np.inf
        top2 = np.argsort(sal, axis=1)[:, -2:]
        for row, gi in enumerate(idx):
            i1, i2 = int(top2[row, 0]), int(top2[row, 1])
            s1, s2 = sal[row, i1], sal[row, i2]
            if not np.isfinite(s1) or not np.isfinite(s2) or s1 + s2 <= 0:
                done[gi] = True
                continue
            if touched[gi].sum() + 2 > budget:
                done[gi] = True
                continue
            flat = x_adv[gi].reshape(feat)
            flat[[i1, i2]] = np.clip(flat[[i1, i2]] + cfg.theta, 0.0, 1.0)
            touched[gi, [i1, i2]] = True

    alive = np.flatnonzero(~done)
    if alive.size:
        flipped = model.predict(x_adv[alive]) != labels[alive]
        success[alive[flipped]] = True
    return [finalize(x0[i], x_adv[i], success[i], int(iters[i])) for i in range(n)]
