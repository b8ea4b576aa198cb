"""Minimal-perturbation attack via iterated linearization.

Each iteration treats the logits as locally affine, steps to the nearest class
boundary hyperplane, and accumulates; the final perturbation is overshot by
(1 + perturbation_amount) and clipped into [0, 1]. The attacked label is the
model's own clean prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import F32
from .common import as_batch, finalize


@dataclass(frozen=True)
class DeepfoolConfig:
    perturbation_amount: float = 0.5
    max_iter: int = 50

    def __post_init__(self):
        if self.perturbation_amount < 0:
            raise ValueError("perturbation_amount must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


class DegenerateGradient(ArithmeticError):
    pass


def deepfool_attack(model, x, cfg: DeepfoolConfig = DeepfoolConfig(),
                    batch_size: int = 12):
    xb, single = as_batch(x)
    masks = []
    for i in range(0, len(xb), batch_size):
        masks += _deepfool_batch(model, xb[i:i + batch_size], cfg)
    return masks[0] if single else masks


def _deepfool_batch(model, x0, cfg: DeepfoolConfig):
    n = x0.shape[0]
    k = model.num_classes
    over = F32(1.0 + cfg.perturbation_amount)
    base = model.predict(x0)
    r_tot = np.zeros_like(x0)
    done = np.zeros(n, bool)
    iters = np.zeros(n, int)

    for _ in range(cfg.max_iter):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        xi = np.clip(x0[idx] + over * r_tot[idx], 0.0, 1.0)
        logits, caches = model.forward(xi, training=False)
        flipped = logits.argmax(axis=1) != base[idx]
        done[idx[flipped]] = True
        idx2 = idx[~flipped]
        if idx2.size == 0:
            continue
        keep = ~flipped
        iters[idx2] += 1
        grads = np.empty((k,) + xi[keep].shape, F32)
        for cls in range(k):
            dlog = np.zeros_like(logits)
            dlog[:, cls] = F32(1.0)
            grads[cls] = model.backward(dlog, caches, need_param_grads=False).input_grad[keep]
        sub_logits = logits[keep]
        for row, gi in enumerate(idx2):
            t = base[gi]
            w_diff = grads[:, row] - grads[t, row]
            f_diff = sub_logits[row] - sub_logits[row, t]
            norms = np.sqrt((w_diff.reshape(k, -1) ** 2).sum(axis=1))
            norms[t] = np.inf
            if not np.any(norms < np.inf) or np.all(norms[norms < np.inf] < 1e-12):
                raise DegenerateGradient(
                    "all class gradients coincide with the true-class gradient")
            ratio = np.abs(f_diff) / np.where(norms > 1e-12, norms, np.inf)
            ratio[t] = np.inf
            best = int(ratio.argmin())
            step = ((np.abs(f_diff[best]) + 1e-6) / (norms[best] ** 2)) * w_diff[best]
            r_tot[gi] += step.astype(F32)

    x_adv = np.clip(x0 + over * r_tot, 0.0, 1.0)
    final_pred = model.predict(x_adv)
    out = []
    for i in range(n):
        out.append(finalize(x0[i], x_adv[i], final_pred[i] != base[i], int(iters[i])))
    return out
