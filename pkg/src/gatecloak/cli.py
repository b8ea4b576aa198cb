"""Command line front end.

Every subcommand reads an optional flat key=value config file; flags override
file values, and GATECLOAK_OUTPUT_ROOT overrides the output directory. Exit
codes: 0 success, 1 domain error (module exceptions, by name), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset as ds
from . import gdsio
from .config import (ConfigError, METHODS, RunConfig, SCENARIOS,
                     build_run_config, load_config_file)
from .constrain import drc_check_layout, drc_csv_rows, squares_csv_rows
from .attacks import write_attack_outputs
from .morphology import MorphKernel, fab_morph
from .nn import save_params
from .pipeline import (ExperimentEnv, ExperimentReport, Manifest, MaskDelta,
                       SCENARIO_NETS, attack_masks, constrain_masks,
                       generator_config, infer_downsample, load_sample_tree,
                       model_filename, paint_squares, parse_report_csv,
                       report_table_text, run_sweep, scale_square,
                       write_reports, write_squares_tree)
from .raster import inject_squares, read_pgm, write_pgm
from .recognet import ARCHITECTURES, build, evaluate, train, write_eval_csv


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="top-level experiment seed")
    p.add_argument("--layer", choices=sorted(ds.LAYER_TAGS),
                   help="layer tag the samples show")
    p.add_argument("--downsample", type=int,
                   help="integer raster downsample for network inputs")
    p.add_argument("--count", type=int,
                   help="samples per category (0 = full corpus)")
    p.add_argument("--out", help="output directory for this command")


def _cfg_from(args, **extra) -> RunConfig:
    kv = load_config_file(args.config) if args.config else {}
    ov = {
        "seed": getattr(args, "seed", None),
        "layer_tag": getattr(args, "layer", None),
        "train_input_downsample": getattr(args, "downsample", None),
        "corpus_count": getattr(args, "count", None),
        "output_dir": getattr(args, "out", None),
    }
    ov.update(extra)
    return build_run_config(kv, ov)


def _out_dir(cfg, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_dataset(args) -> int:
    cfg = _cfg_from(args)
    out = Path(args.out) if args.out else Path(cfg.corpus_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = ds.generate_corpus(generator_config(cfg), cfg.rules, cfg.seed)
    gds_path = out / "cells.gds"
    gds_path.write_bytes(gdsio.write_gds(ds.corpus_layout(pairs)))
    samples = ds.render_samples(pairs, cfg.layer_tag, cfg.rules)
    if cfg.fab_sim:
        samples = samples + [s.evolved(fab_morph(s.image), "morphed")
                             for s in samples]
    tree_manifest = ds.write_sample_tree(out, samples)
    manifest = Manifest(out)
    manifest.add(gds_path)
    manifest.add(tree_manifest)
    for _, _, _, _, rel in ds.read_manifest(tree_manifest):
        manifest.add(out / rel)
    manifest.write()
    print(f"wrote {len(pairs)} cells, {len(samples)} images -> {out}")
    return 0


def cmd_fab_sim(args) -> int:
    cfg = _cfg_from(args)
    root = Path(args.corpus) if args.corpus else Path(cfg.corpus_dir)
    clean = load_sample_tree(root, provenance="clean")
    morphed = [s.evolved(fab_morph(s.image), "morphed") for s in clean]
    tree_manifest = ds.write_sample_tree(root, clean + morphed)
    manifest = Manifest(root)
    for _, _, _, _, rel in ds.read_manifest(tree_manifest):
        manifest.add(root / rel)
    manifest.add(tree_manifest)
    if (root / "cells.gds").exists():
        manifest.add(root / "cells.gds")
    manifest.write()
    print(f"morphed {len(morphed)} images in {root}")
    return 0


def cmd_train(args) -> int:
    cfg = _cfg_from(args)
    env = ExperimentEnv(cfg)
    arch = args.arch
    net = build(arch, env.input_shape,
                seed=cfg.seed + sorted(ARCHITECTURES).index(arch))
    tc = replace(cfg.train, seed=cfg.seed + sorted(ARCHITECTURES).index(arch))
    history = train(net, env.corpus.split, tc)
    model_dir = Path(args.out) if args.out else Path(cfg.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    path = model_dir / model_filename(cfg, arch)
    save_params(net, path)
    log = model_dir / f"{arch}.train_log.csv"
    log.write_text("\n".join(
        ["epoch,loss"] + [f"{i},{l:.6f}" for i, l in enumerate(history.losses)])
        + "\n")
    stop = "early" if history.stopped_early else "full schedule"
    print(f"trained {arch} ({stop}, {len(history.losses)} epochs) -> {path}")
    return 0


def cmd_attack(args) -> int:
    cfg = _cfg_from(args, scenario=args.scenario)
    env = ExperimentEnv(cfg)
    gen_name = SCENARIO_NETS[cfg.scenario][0]
    gen = env.model(gen_name)
    _, x0, y, ids = env.subset((gen_name,))
    masks = attack_masks(env, args.method, gen, x0, y)
    out = _out_dir(cfg, args) / "attacks" / args.method
    write_attack_outputs(out, ids, args.method, x0, masks)
    manifest = Manifest(out)
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != Manifest.NAME:
            manifest.add(p)
    manifest.write()
    flipped = sum(m.success for m in masks)
    print(f"{args.method}: {flipped}/{len(masks)} flipped -> {out}")
    return 0


def cmd_constrain(args) -> int:
    cfg = _cfg_from(args)
    env = ExperimentEnv(cfg)
    masks_dir = Path(args.masks)
    method = args.method
    gen_name = SCENARIO_NETS[cfg.scenario][0]
    _, x0, y, ids = env.subset((gen_name,))
    deltas = []
    for sid, x_clean in zip(ids, x0):
        adv = read_pgm(masks_dir / f"{sid}.{method}.adv.pgm")
        if infer_downsample(adv.shape) != env.dsf:
            raise ValueError(f"{sid}: stored image downsample does not match "
                             f"the configured value {env.dsf}")
        deltas.append(MaskDelta(adv[..., None] - x_clean))
    squares = constrain_masks(env, deltas, ids, cfg.rules.filter_side_lambda)
    out = _out_dir(cfg, args) / "constrained" / method
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    layout = ds.corpus_layout(env.corpus.pairs)
    layer_id = ds.LAYER_TAGS[cfg.layer_tag][0]
    x_drc = paint_squares(x0, squares)
    for i, (sid, placed) in enumerate(zip(ids, squares)):
        full = [scale_square(s, env.dsf) for s in placed]
        csv = out / f"{sid}.squares.csv"
        csv.write_text("\n".join(squares_csv_rows(full)) + "\n")
        manifest.add(csv)
        pgm = out / f"{sid}.{method}.drc.pgm"
        write_pgm(pgm, x_drc[i, ..., 0])
        manifest.add(pgm)
        layout = inject_squares(layout, sid, layer_id, full, cfg.rules)
    gds_path = out / "constrained.gds"
    gds_path.write_bytes(gdsio.write_gds(layout))
    manifest.add(gds_path)
    manifest.write()
    total = sum(len(s) for s in squares)
    print(f"{method}: {total} squares across {len(ids)} cells -> {out}")
    return 0


def cmd_drc_check(args) -> int:
    cfg = _cfg_from(args)
    layout = gdsio.parse_gds(Path(args.gds).read_bytes())
    report = drc_check_layout(layout, cfg.rules)
    out = _out_dir(cfg, args)
    csv = out / "drc.csv"
    csv.write_text("\n".join(drc_csv_rows(report)) + "\n")
    print(f"{len(report.violations)} violations -> {csv}")
    return 0 if report.clean else 1


def cmd_evaluate(args) -> int:
    cfg = _cfg_from(args)
    env = ExperimentEnv(cfg)
    net = env.model(args.arch, allow_train=not args.no_train)
    result = evaluate(net, env.corpus.split.test, cfg.train.input_downsample)
    out = _out_dir(cfg, args)
    csv = out / f"{args.arch}.eval.csv"
    write_eval_csv(result, csv)
    print(f"{args.arch}: test accuracy {result.accuracy:.4f} "
          f"({len(result.per_sample)} samples) -> {csv}")
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    manifest = Manifest.load(run)
    csv_path = run / "results.csv"
    manifest.check(csv_path)
    rows = parse_report_csv(csv_path.read_text())
    by_scenario = {}
    for r in rows:
        by_scenario.setdefault(r.scenario, []).append(r)
    reports = [ExperimentReport(s, args.seed or 0, rs)
               for s, rs in by_scenario.items()]
    write_reports(run, reports, manifest)
    manifest.write()
    print(report_table_text(reports))
    return 0


def cmd_sweep(args) -> int:
    cfg = _cfg_from(args, scenario=args.scenario)
    env = ExperimentEnv(cfg)
    kept = {}
    report = run_sweep(cfg, env, kept)
    out = _out_dir(cfg, args)
    manifest = Manifest(out)
    write_reports(out, [report], manifest)
    write_squares_tree(out, env, kept, manifest)
    manifest.write()
    print(report_table_text([report]))
    return 0


def cmd_scenarios(args) -> int:
    cfg = _cfg_from(args)
    env = ExperimentEnv(cfg)
    reports = [run_sweep(replace(cfg, scenario=s), env)
               for s in SCENARIO_NETS]
    out = _out_dir(cfg, args)
    manifest = Manifest(out)
    write_reports(out, reports, manifest)
    manifest.write()
    print(report_table_text(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gatecloak",
        description="Layout-level adversarial camouflage pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate the synthetic cell corpus")
    _add_common(p)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("fab-sim", help="apply fabrication morphology to a corpus")
    _add_common(p)
    p.add_argument("--corpus", help="corpus directory (default from config)")
    p.set_defaults(func=cmd_fab_sim)

    p = sub.add_parser("train", help="train one recognition network")
    _add_common(p)
    p.add_argument("--arch", default="recog_net", choices=sorted(ARCHITECTURES))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run one adversarial attack")
    _add_common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--scenario", default=None, choices=SCENARIOS)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("constrain", help="turn stored attacks into square noise")
    _add_common(p)
    p.add_argument("--masks", required=True,
                   help="directory holding <sample>.<method>.adv.pgm files")
    p.add_argument("--method", required=True, choices=METHODS)
    p.set_defaults(func=cmd_constrain)

    p = sub.add_parser("drc-check", help="design-rule check a GDS file")
    _add_common(p)
    p.add_argument("--gds", required=True)
    p.set_defaults(func=cmd_drc_check)

    p = sub.add_parser("evaluate", help="score a trained network on the test split")
    _add_common(p)
    p.add_argument("--arch", default="recog_net", choices=sorted(ARCHITECTURES))
    p.add_argument("--no-train", action="store_true",
                   help="fail instead of training when parameters are missing")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="recompute improvement tables for a run")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory with results.csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="perturb/constrain/evaluate until stealthy")
    _add_common(p)
    p.add_argument("--scenario", default=None, choices=SCENARIOS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scenarios", help="run all three evaluation scenarios")
    _add_common(p)
    p.set_defaults(func=cmd_scenarios)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError, ArithmeticError, OSError,
            KeyError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
