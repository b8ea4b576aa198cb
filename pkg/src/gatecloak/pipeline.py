"""Experiment orchestration: corpus, training, the validation sweep, scenarios.

The sweep loop realizes the validate-until-stealthy cycle: pick perturbation
parameters from the declared schedule, attack, constrain to fabricable squares,
re-evaluate, and stop once constrained accuracy falls to the threshold. Three
scenarios differ only in which network generates perturbations and which one
grades them.

Everything downstream of rendering runs at the configured raster downsample;
squares are scaled back to full resolution when they become layout artifacts.
Accuracy is measured on a seeded subset of test samples that every network in
the scenario classifies correctly, so the noise-free baseline is 100% and any
drop is attributable to the perturbation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .attacks import deepfool_attack, jsma_attack, square_attack
from .config import RunConfig
from .constrain import (DrcReport, NoiseSquare, drc_check_image, drc_csv_rows,
                        forbidden_area, place_squares, squares_csv_rows,
                        squarify)
from .morphology import MorphKernel
from .nn import load_params, save_params
from .raster import CANVAS, composite_layers, downsample, read_pgm_binary
from .recognet import ARCHITECTURES, build, to_arrays, train

F32 = np.float32

# scenario -> (perturbation-generating net, evaluation nets)
SCENARIO_NETS = {
    "whitebox": ("recog_net", ("recog_net",)),
    "transfer_gen_recog": ("recog_net", ("net_a", "net_b")),
    "transfer_eval_recog": ("net_a", ("recog_net",)),
}

SPLIT_RATIO = 0.7875


class ManifestError(ValueError):
    pass


class NoCorrectSamples(RuntimeError):
    """Every candidate test sample is misclassified by some scenario net."""


class MissingModel(FileNotFoundError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Content hashes for every file a run emits; report refuses files not here."""

    NAME = "manifest.txt"

    def __init__(self, root):
        self.root = Path(root)
        self.entries = {}

    def add(self, path):
        p = Path(path)
        rel = p.relative_to(self.root).as_posix()
        self.entries[rel] = sha256_file(p)

    def write(self):
        lines = [f"{h}  {rel}" for rel, h in sorted(self.entries.items())]
        (self.root / self.NAME).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, root) -> "Manifest":
        m = cls(root)
        path = m.root / cls.NAME
        if not path.exists():
            raise ManifestError(f"no {cls.NAME} in {root}")
        for ln, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                digest, rel = line.split(None, 1)
            except ValueError:
                raise ManifestError(f"{path}:{ln}: bad line {line!r}") from None
            m.entries[rel.strip()] = digest
        return m

    def check(self, path):
        p = Path(path)
        rel = p.relative_to(self.root).as_posix()
        if rel not in self.entries:
            raise ManifestError(f"{rel} is not in the run manifest")
        if sha256_file(p) != self.entries[rel]:
            raise ManifestError(f"{rel} does not match its manifest hash")


@dataclass(frozen=True)
class ExperimentRow:
    scenario: str
    method: str
    layer: str
    gen_net: str
    eval_net: str
    noise_free_acc: float
    adversarial_acc: float
    drc_acc: float
    improvement: float
    schedule_exhausted: bool = False
    params: str = ""

    def __post_init__(self):
        want = self.noise_free_acc - self.drc_acc
        if abs(self.improvement - want) > 0.1 + 1e-9:
            raise ValueError(
                f"improvement {self.improvement} != noise_free - drc "
                f"({self.noise_free_acc} - {self.drc_acc})")


@dataclass
class ExperimentReport:
    scenario: str
    seed: int
    rows: list = field(default_factory=list)

    @property
    def schedule_exhausted(self) -> bool:
        return any(r.schedule_exhausted for r in self.rows)


def improvement_of(noise_free: float, drc: float) -> float:
    return round(noise_free - drc, 1)


def make_row(scenario, method, layer, gen_net, eval_net, noise_free, adv, drc,
             exhausted=False, params="") -> ExperimentRow:
    nf, av, dc = (round(v, 1) for v in (noise_free, adv, drc))
    return ExperimentRow(scenario, method, layer, gen_net, eval_net,
                         nf, av, dc, improvement_of(nf, dc), exhausted, params)


REPORT_HEADER = ("scenario,method,layer,gen_net,eval_net,noise_free_acc,"
                 "adversarial_acc,drc_acc,improvement,schedule_exhausted,params")


def report_csv_rows(reports) -> list:
    rows = [REPORT_HEADER]
    for rep in reports:
        for r in rep.rows:
            rows.append(f"{r.scenario},{r.method},{r.layer},{r.gen_net},"
                        f"{r.eval_net},{r.noise_free_acc:.1f},"
                        f"{r.adversarial_acc:.1f},{r.drc_acc:.1f},"
                        f"{r.improvement:.1f},{int(r.schedule_exhausted)},"
                        f"{r.params}")
    return rows


def parse_report_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError("unrecognized results header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 11:
            raise ValueError(f"bad results line: {ln!r}")
        rows.append(ExperimentRow(
            parts[0], parts[1], parts[2], parts[3], parts[4],
            float(parts[5]), float(parts[6]), float(parts[7]),
            improvement_of(float(parts[5]), float(parts[7])),
            bool(int(parts[9])), parts[10]))
    return rows


def report_table_text(reports) -> str:
    out = []
    for rep in reports:
        out.append(f"scenario: {rep.scenario}   seed: {rep.seed}"
                   + ("   [schedule exhausted]" if rep.schedule_exhausted else ""))
        out.append(f"{'method':<10} {'layer':<8} {'eval net':<10} "
                   f"{'noise-free':>10} {'adversarial':>11} {'constrained':>11} "
                   f"{'improvement':>11}")
        for r in rep.rows:
            out.append(f"{r.method:<10} {r.layer:<8} {r.eval_net:<10} "
                       f"{r.noise_free_acc:>10.1f} {r.adversarial_acc:>11.1f} "
                       f"{r.drc_acc:>11.1f} {r.improvement:>11.1f}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# corpus and model preparation


@dataclass
class PreparedCorpus:
    pairs: list                 # (Cell, GateCategory), generation order
    samples: list               # rendered eval samples, same order
    split: "ds.DatasetSplit"
    cells_by_id: dict


def generator_config(cfg: RunConfig) -> ds.GeneratorConfig:
    if cfg.corpus_count > 0:
        base = ds.GeneratorConfig()
        return ds.GeneratorConfig(counts=(cfg.corpus_count,) * len(base.categories))
    return ds.GeneratorConfig()


def prepare_corpus(cfg: RunConfig) -> PreparedCorpus:
    pairs = ds.generate_corpus(generator_config(cfg), cfg.rules, cfg.seed)
    morph = MorphKernel() if cfg.fab_sim else None
    samples = ds.render_samples(pairs, cfg.layer_tag, cfg.rules, morph=morph)
    part = ds.split(samples, SPLIT_RATIO, cfg.seed)
    cells = {cell.name: cell for cell, _ in pairs}
    return PreparedCorpus(pairs, samples, part, cells)


# deterministic per-architecture training-seed offsets
_ARCH_SEED = {name: i for i, name in enumerate(sorted(ARCHITECTURES))}


def model_filename(cfg: RunConfig, arch: str) -> str:
    return (f"{arch}.{cfg.layer_tag}.ds{cfg.train.input_downsample}"
            f".s{cfg.seed}.params")


def predict_chunked(model, x, chunk: int = 16) -> np.ndarray:
    out = np.empty(len(x), np.int64)
    for i in range(0, len(x), chunk):
        out[i:i + chunk] = model.predict(x[i:i + chunk].astype(F32))
    return out


def accuracy_on(model, x, y, chunk: int = 16) -> float:
    if not len(x):
        raise ValueError("empty evaluation batch")
    return float((predict_chunked(model, x, chunk) == y).mean())


class ExperimentEnv:
    """Lazily built shared state: corpus, arrays, trained nets, forbidden maps."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dsf = cfg.train.input_downsample
        self.rules_ds = cfg.rules.scaled(self.dsf)
        self._corpus = None
        self._test_arrays = None
        self._models = {}
        self._forb = {}
        self._subsets = {}

    @property
    def corpus(self) -> PreparedCorpus:
        if self._corpus is None:
            self._corpus = prepare_corpus(self.cfg)
        return self._corpus

    @property
    def test_arrays(self):
        if self._test_arrays is None:
            self._test_arrays = to_arrays(self.corpus.split.test, self.dsf)
        return self._test_arrays

    @property
    def input_shape(self):
        x, _, _ = self.test_arrays
        return x.shape[1:]

    def model(self, arch: str, allow_train: bool = True):
        if arch in self._models:
            return self._models[arch]
        cfg = self.cfg
        net = build(arch, self.input_shape, seed=cfg.seed + _ARCH_SEED[arch])
        path = Path(cfg.model_dir) / model_filename(cfg, arch)
        if path.exists():
            load_params(net, path)
        elif not allow_train:
            raise MissingModel(f"{arch}: no parameters at {path}")
        else:
            tc = replace(cfg.train, seed=cfg.seed + _ARCH_SEED[arch])
            train(net, self.corpus.split, tc)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_params(net, path)
        self._models[arch] = net
        return net

    def subset(self, net_names):
        """Seeded pick of test samples all named nets classify correctly."""
        key = tuple(sorted(set(net_names)))
        if key in self._subsets:
            return self._subsets[key]
        x, y, ids = self.test_arrays
        ok = np.ones(len(y), bool)
        for name in key:
            ok &= predict_chunked(self.model(name), x) == y
        idx = np.nonzero(ok)[0]
        if not len(idx):
            raise NoCorrectSamples(f"nets {key} agree on no test sample")
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=self.cfg.seed, spawn_key=(0xE7A1,)))
        idx = idx[rng.permutation(len(idx))]
        if self.cfg.eval_subset:
            idx = idx[:self.cfg.eval_subset]
        idx = np.sort(idx)
        picked = (idx, x[idx].astype(F32), y[idx], [ids[i] for i in idx])
        self._subsets[key] = picked
        return picked

    def forbidden(self, sample_id):
        """Spacing-dilated union of all layers, at the working downsample."""
        if sample_id not in self._forb:
            cell = self.corpus.cells_by_id[sample_id]
            comp = composite_layers(cell, ds.LAYER_TAGS["all"], self.cfg.rules)
            base = downsample(comp.a, self.dsf)
            self._forb[sample_id] = forbidden_area(base, self.rules_ds)
        return self._forb[sample_id]

    def clean_composite(self, sample_id):
        cell = self.corpus.cells_by_id[sample_id]
        return composite_layers(cell, ds.LAYER_TAGS["all"], self.cfg.rules)


# ---------------------------------------------------------------------------
# the validation sweep (perturb / constrain / evaluate until stealthy)


def schedule_for(cfg: RunConfig, method: str) -> list:
    if method == "square":
        return [(f, e) for f in cfg.sweep_filter_sides
                for e in cfg.sweep_epsilons]
    return [(f, None) for f in cfg.sweep_filter_sides]


def paint_squares(x, per_sample_squares):
    """OR square noise into a batch of eval images (ds-space pixels)."""
    out = x.copy()
    for i, squares in enumerate(per_sample_squares):
        for sq in squares:
            out[i, sq.y:sq.y + sq.side, sq.x:sq.x + sq.side, 0] = 1.0
    return out


def scale_square(sq: NoiseSquare, factor: int) -> NoiseSquare:
    return NoiseSquare(sq.x * factor, sq.y * factor, sq.side * factor,
                       sq.layer_id)


def constrain_masks(env: ExperimentEnv, masks, sample_ids, fsl: int):
    """squarify + place for each mask; returns per-sample accepted squares."""
    rules_step = replace(env.cfg.rules, filter_side_lambda=fsl).scaled(env.dsf)
    layer_id = ds.LAYER_TAGS[env.cfg.layer_tag][0]
    placed = []
    for mask, sid in zip(masks, sample_ids):
        cand = squarify(mask, rules_step, layer_id)
        placed.append(place_squares(cand, env.forbidden(sid), rules_step))
    return placed


@dataclass
class MaskDelta:
    """Bare perturbation carrier for constraint-stage entry points."""
    delta: np.ndarray


def attack_masks(env: ExperimentEnv, method: str, gen, x, y, epsilon=None):
    cfg = env.cfg
    if method == "jsma":
        return jsma_attack(gen, x, y, cfg.jsma)
    if method == "deepfool":
        return deepfool_attack(gen, x, cfg.deepfool)
    sq = cfg.square if epsilon is None else replace(cfg.square, epsilon=epsilon)
    return square_attack(gen, x, y, sq, seed=cfg.seed)


def run_sweep(cfg: RunConfig, env: ExperimentEnv | None = None,
                   keep_squares: dict | None = None) -> ExperimentReport:
    """Sweep the perturbation schedule until constrained accuracy is low enough.

    keep_squares, if given, collects {method: (sample_ids, per-sample squares)}
    for the winning schedule step so callers can emit layout artifacts.
    """
    env = env or ExperimentEnv(cfg)
    gen_name, eval_names = SCENARIO_NETS[cfg.scenario]
    gen = env.model(gen_name)
    evals = {n: env.model(n) for n in eval_names}
    _, x0, y, ids = env.subset((gen_name,) + tuple(eval_names))

    report = ExperimentReport(cfg.scenario, cfg.seed)
    for method in cfg.methods:
        attacked = {}              # epsilon -> (x_adv, adv_acc per net)
        best = {n: None for n in eval_names}
        exhausted = True
        for fsl, eps in schedule_for(cfg, method):
            if eps not in attacked:
                masks = attack_masks(env, method, gen, x0, y, eps)
                x_adv = np.clip(x0 + np.stack([m.delta for m in masks]), 0, 1)
                adv = {n: accuracy_on(evals[n], x_adv, y) for n in eval_names}
                attacked[eps] = (masks, adv)
            masks, adv = attacked[eps]
            squares = constrain_masks(env, masks, ids, fsl)
            x_drc = paint_squares(x0, squares)
            tag = f"filter_side_lambda={fsl}" + (
                f";epsilon={eps:g}" if eps is not None else "")
            stop = True
            for n in eval_names:
                drc = accuracy_on(evals[n], x_drc, y)
                if best[n] is None or drc < best[n][0]:
                    best[n] = (drc, adv[n], tag, squares)
                stop = stop and drc <= cfg.accuracy_threshold
            if stop:
                exhausted = False
                break
        for n in eval_names:
            drc, adv_n, tag, squares = best[n]
            report.rows.append(make_row(
                cfg.scenario, method, cfg.layer_tag, gen_name, n,
                100.0, 100.0 * adv_n, 100.0 * drc, exhausted, tag))
        if keep_squares is not None:
            # artifact squares follow the first evaluation net's best step
            report_squares = best[eval_names[0]][3]
            keep_squares[method] = (ids, report_squares)
    return report


def run_scenarios(cfg: RunConfig):
    env = ExperimentEnv(cfg)
    reports = []
    for scenario in SCENARIO_NETS:
        reports.append(run_sweep(replace(cfg, scenario=scenario), env))
    return reports


# ---------------------------------------------------------------------------
# artifacts


def write_squares_tree(out_dir, env: ExperimentEnv, kept: dict,
                       manifest: Manifest):
    """Per-sample square CSVs plus a full-resolution drc report per method.

    Squares are stored in full-canvas pixels; the drc check runs on the clean
    all-layer raster with the squares applied, so an empty violations file is
    the fabricability certificate for the emitted noise.
    """
    cfg = env.cfg
    dsf = cfg.train.input_downsample
    out = Path(out_dir)
    for method, (ids, per_sample) in kept.items():
        mdir = out / "squares" / method
        mdir.mkdir(parents=True, exist_ok=True)
        drc_rows = None
        for sid, squares in zip(ids, per_sample):
            full = [scale_square(s, dsf) for s in squares]
            path = mdir / f"{sid}.csv"
            path.write_text("\n".join(squares_csv_rows(full)) + "\n")
            manifest.add(path)
            img = env.clean_composite(sid)
            arr = img.a.copy()
            for s in full:
                arr[s.y:s.y + s.side, s.x:s.x + s.side] = 1
            rep = drc_check_image(arr, cfg.rules)
            rows = drc_csv_rows(rep)
            drc_rows = rows if drc_rows is None else drc_rows + rows[1:]
        if drc_rows is None:
            drc_rows = drc_csv_rows(DrcReport())
        dpath = out / "squares" / f"{method}.drc.csv"
        dpath.write_text("\n".join(drc_rows) + "\n")
        manifest.add(dpath)


def write_reports(out_dir, reports, manifest: Manifest | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    csv_path.write_text("\n".join(report_csv_rows(reports)) + "\n")
    txt_path = out / "results.txt"
    txt_path.write_text(report_table_text(reports))
    if manifest is not None:
        manifest.add(csv_path)
        manifest.add(txt_path)
    return csv_path, txt_path


# ---------------------------------------------------------------------------
# corpus trees on disk (CLI subcommand plumbing)


def load_sample_tree(corpus_dir, layer_tag=None, provenance=None):
    """Samples from a written corpus tree, optionally filtered."""
    root = Path(corpus_dir)
    rows = ds.read_manifest(root / "corpus_manifest.txt")
    cats = {c.name: c for c in
            (ds.GateCategory(i, n) for i, n in
             enumerate(ds.GeneratorConfig().categories))}
    samples = []
    for sid, cat, tag, prov, rel in rows:
        if layer_tag and tag != layer_tag:
            continue
        if provenance and prov != provenance:
            continue
        img = read_pgm_binary(root / rel)
        samples.append(ds.Sample(sid, img, cats[cat], tag, prov))
    return samples


def infer_downsample(img_shape) -> int:
    for f in (1, 2, 3, 4, 6, 8):
        if (-(-CANVAS[0] // f), -(-CANVAS[1] // f)) == tuple(img_shape[:2]):
            return f
    raise ValueError(f"image shape {img_shape} does not match any downsample "
                     f"of the {CANVAS} canvas")
