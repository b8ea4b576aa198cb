"""Shared perturbation-mask plumbing for the three attacks."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn.layers import F32
from ..raster import pgm_bytes


@dataclass
class PerturbationMask:
    delta: np.ndarray
    changed: np.ndarray
    success: bool
    iterations: int = 0

    def __post_init__(self):
        if self.delta.shape != self.changed.shape:
            raise ValueError("delta and changed must share a shape")
        if bool(np.any(self.changed != (self.delta != 0))):
            raise ValueError("changed grid inconsistent with delta")


def finalize(x0: np.ndarray, x_adv: np.ndarray, success: bool,
             iterations: int) -> PerturbationMask:
    delta = (x_adv - x0).astype(F32)
    return PerturbationMask(delta, delta != 0, bool(success), iterations)


def as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, F32)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected HWC or NHWC input, got shape {x.shape}")


def attack_csv_rows(sample_ids, method: str, masks) -> list[str]:
    rows = ["sample_id,method,success,pixels_changed,linf,l2"]
    for sid, m in zip(sample_ids, masks):
        d = m.delta
        rows.append(
            f"{sid},{method},{int(m.success)},{int(m.changed.sum())},"
            f"{float(np.abs(d).max()):.6f},{float(np.sqrt((d * d).sum())):.6f}")
    return rows


def write_attack_outputs(out_dir, sample_ids, method: str, x, masks,
                         maxval: int = 255) -> Path:
    """Per-sample mask and perturbed-image PGMs plus the summary CSV."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for sid, x0, m in zip(sample_ids, np.asarray(x, F32), masks):
        adv = np.clip(x0 + m.delta, 0.0, 1.0)[..., 0]
        (root / f"{sid}.{method}.mask.pgm").write_bytes(
            pgm_bytes(m.changed[..., 0].astype(np.uint8), 1))
        (root / f"{sid}.{method}.adv.pgm").write_bytes(pgm_bytes(adv, maxval))
    csv = root / f"{method}.csv"
    csv.write_text("\n".join(attack_csv_rows(sample_ids, method, masks)) + "\n",
                   encoding="ascii")
    return csv
