"""Binary morphology with square kernels, as used by the fabrication model.

Everything outside the image counts as background, for erosion and dilation
alike. Square kernels make both filters separable: a row min/max pass followed
by a column pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class MorphKernel:
    side: int = 3
    shape: str = "square"

    def __post_init__(self):
        if self.side < 3 or self.side % 2 == 0:
            raise ValueError("kernel side must be an odd integer >= 3")
        if self.shape != "square":
            raise ValueError("only square kernels are supported")


def _axis_filter(arr: np.ndarray, side: int, reduce_fn, pad_value: int, axis: int):
    pad = side // 2
    widths = [(0, 0), (0, 0)]
    widths[axis] = (pad, pad)
    padded = np.pad(arr, widths, constant_values=pad_value)
    return reduce_fn(sliding_window_view(padded, side, axis=axis), axis=-1)


def _as_array(img):
    return img if isinstance(img, np.ndarray) else img.a


def _like(img, arr):
    if isinstance(img, np.ndarray):
        return arr
    out = img.copy()
    out.a = arr
    return out


def erode(img, k: MorphKernel = MorphKernel()):
    """Keep a pixel only when the whole kernel window sits on foreground."""
    a = _as_array(img)
    out = _axis_filter(a, k.side, np.min, 0, axis=0)
    out = _axis_filter(out, k.side, np.min, 0, axis=1)
    return _like(img, out.astype(np.uint8))


def dilate(img, k: MorphKernel = MorphKernel()):
    """Set a pixel when the kernel window touches any foreground."""
    a = _as_array(img)
    out = _axis_filter(a, k.side, np.max, 0, axis=0)
    out = _axis_filter(out, k.side, np.max, 0, axis=1)
    return _like(img, out.astype(np.uint8))


def close(img, k: MorphKernel = MorphKernel()):
    return erode(dilate(img, k), k)


def fab_morph(img, k: MorphKernel = MorphKernel()):
    """Fabrication-mimicking transform.

    Two branches run on the input: plain erosion, and dilation followed by
    closing. Their pixel mean is binarized at 0.5 with ties to foreground,
    which keeps the result binary while blending both distortions.
    """
    a = erode(img, k)
    b = close(dilate(img, k), k)
    mean = 0.5 * _as_array(a) + 0.5 * _as_array(b)
    return _like(img, (mean >= 0.5).astype(np.uint8))
