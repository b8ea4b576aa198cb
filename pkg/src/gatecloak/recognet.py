"""The three recognition networks: assembly, training, evaluation.

Architecture rows follow the published tables verbatim; net_a and net_b get a
flatten inserted before their first dense layer since their listings omit it
and the shape arithmetic requires one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import TechRules
from .nn import Adam, LayerSpec, Network, ShapeUnderflow  # noqa: F401 (re-export)
from .nn.layers import F32, ShapeMismatch
from .raster import downsample as _downsample_arr


def _conv(f):
    return LayerSpec("conv2d_relu", {"filters": f})


def _pool():
    return LayerSpec("maxpool")


def _drop(rate):
    return LayerSpec("dropout", {"rate": rate})


def _dense(units, relu):
    return LayerSpec("dense_relu" if relu else "dense_linear", {"units": units})


ARCHITECTURES = {
    "recog_net": (
        _conv(32), _conv(64), _pool(), _drop(0.5),
        _conv(32), _conv(64), _pool(), _drop(0.5),
        LayerSpec("flatten"), _dense(250, True), _dense(11, False),
    ),
    "net_a": (
        _conv(32), _conv(32), _pool(), _drop(0.7),
        _conv(32), _conv(32), _pool(), _drop(0.7),
        LayerSpec("flatten"), _dense(250, True), _dense(11, False),
    ),
    "net_b": (
        _conv(32), _conv(64), _conv(64), _pool(), _drop(0.5),
        _conv(32), _conv(64), _pool(), _drop(0.5),
        LayerSpec("flatten"), _dense(250, True), _dense(120, True), _dense(11, False),
    ),
}


class EmptySplit(ValueError):
    pass


class DivergenceDetected(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    repeats: int = 10
    input_downsample: int = 1
    patience: int = 5
    stop_train_acc: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.input_downsample < 1:
            raise ValueError("input_downsample must be >= 1")

    def check_rules(self, rules: TechRules) -> None:
        if rules.lambda_px % self.input_downsample:
            raise ValueError(
                f"downsample {self.input_downsample} breaks the integer "
                f"lambda grid ({rules.lambda_px} px per lambda)")


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    per_sample: list

    def __post_init__(self):
        total = int(self.confusion.sum())
        if total and abs(self.accuracy - np.trace(self.confusion) / total) > 1e-12:
            raise ValueError("accuracy inconsistent with confusion matrix")


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    stopped_early: bool = False


@dataclass
class RepeatedResult:
    mean_accuracy: float
    std_accuracy: float
    runs: list
    model: Network


def build(arch: str, input_shape, seed: int = 0) -> Network:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}, have {sorted(ARCHITECTURES)}")
    return Network(ARCHITECTURES[arch], input_shape, seed)


def to_arrays(samples, input_downsample: int = 1):
    """Sample list -> (uint8 images [N,h,w,1], labels [N], ids). Batches cast later."""
    if not samples:
        raise EmptySplit("no samples")
    imgs, labels, ids = [], [], []
    for s in samples:
        a = s.image.a
        if input_downsample > 1:
            a = _downsample_arr(a, input_downsample)
        imgs.append(a)
        labels.append(s.label.id)
        ids.append(s.sample_id)
    x = np.stack(imgs)[..., None]
    return x, np.asarray(labels, np.int64), ids


def train(model: Network, split, cfg: TrainConfig):
    """Train in place; returns a TrainHistory.

    Stops early when the probe accuracy (inference mode, a seeded subset of at
    most 256 training samples) reaches cfg.stop_train_acc, or when the best
    loss has not improved for cfg.patience epochs.
    """
    if not split.train or not split.test:
        raise EmptySplit("both sides of the split must be non-empty")
    x, y, _ = to_arrays(split.train, cfg.input_downsample)
    if x.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"images {x.shape[1:]} vs model {model.input_shape}")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0x7A,)))
    probe = rng.permutation(len(x))[:256]
    opt = Adam(step=cfg.learning_rate)
    hist = TrainHistory()
    best_loss, stale = np.inf, 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx].astype(F32), y[idx])
            if not np.isfinite(loss):
                raise DivergenceDetected(f"loss became {loss}")
            opt.update(model.params, grads.param_grads)
            total += loss * len(idx)
        hist.losses.append(total / len(order))
        hits = [model.predict(x[probe[i:i + 16]].astype(F32)) == y[probe[i:i + 16]]
                for i in range(0, len(probe), 16)]
        acc = float(np.mean(np.concatenate(hits)))
        hist.train_acc.append(acc)
        if acc >= cfg.stop_train_acc:
            hist.stopped_early = True
            break
        if hist.losses[-1] < best_loss - 1e-4:
            best_loss, stale = hist.losses[-1], 0
        else:
            stale += 1
            if stale >= cfg.patience:
                hist.stopped_early = True
                break
    return hist


def evaluate(model: Network, samples, input_downsample: int = 1,
             batch_size: int = 16) -> EvalResult:
    x, y, ids = to_arrays(samples, input_downsample)
    k = model.num_classes
    confusion = np.zeros((k, k), np.int64)
    per_sample = []
    for i in range(0, len(x), batch_size):
        pred = model.predict(x[i:i + batch_size].astype(F32))
        for sid, t, p in zip(ids[i:i + batch_size], y[i:i + batch_size], pred):
            confusion[int(t), int(p)] += 1
            per_sample.append((sid, int(p), int(t)))
    acc = float(np.trace(confusion) / max(1, confusion.sum()))
    return EvalResult(acc, confusion, per_sample)


def run_repeated(arch: str, samples, cfg: TrainConfig, ratio: float = 0.7875):
    """Train/evaluate over cfg.repeats reshuffled splits; returns the summary
    plus the last trained model."""
    from .dataset import split as make_split
    accs, runs, model = [], [], None
    h = w = None
    for r in range(cfg.repeats):
        sp = make_split(samples, ratio, seed=cfg.seed + r)
        if h is None:
            probe, _, _ = to_arrays(sp.train[:1], cfg.input_downsample)
            h, w = probe.shape[1:3]
        model = build(arch, (h, w, 1), seed=cfg.seed + r)
        train(model, sp, cfg)
        res = evaluate(model, sp.test, cfg.input_downsample)
        runs.append(res)
        accs.append(res.accuracy)
    return RepeatedResult(float(np.mean(accs)), float(np.std(accs)), runs, model)


def write_eval_csv(result: EvalResult, path) -> None:
    lines = ["sample_id,true,pred"]
    lines += [f"{sid},{t},{p}" for sid, p, t in result.per_sample]
    lines.append("")
    from pathlib import Path
    Path(path).write_text("\n".join(lines), encoding="ascii")


def summary_text(result: EvalResult, title: str) -> str:
    k = result.confusion.shape[0]
    lines = [title, f"accuracy: {result.accuracy:.4f}",
             f"samples: {int(result.confusion.sum())}", "confusion:"]
    lines += ["  " + " ".join(f"{int(v):4d}" for v in result.confusion[i])
              for i in range(k)]
    return "\n".join(lines) + "\n"
