"""Command-line entry point: ``avatarfit <subcommand> [--config FILE | --preset NAME] ...``.

Every training subcommand builds (or loads from the artifact cache) the
stages it depends on, so ``train-mapper`` on a fresh cache also trains the
loss kit, imitator and stylizer.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, preset
from .conversion import INITS, argmax_convert, search_convert
from .engine import Dataset, generate_dataset
from .errors import ConfigError, NotTrainedError, TrainingDivergedError
from .evalharness import ablation, pipeline
from .evalharness.sheets import write_stage_sheet
from .evalharness.system import ArtifactCache, Builder
from .schema import RelaxedAvatarVector, StrictAvatarVector

log = logging.getLogger("avatarfit")


def _config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.load(args.config)
    return preset(args.preset)


def _workdir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.workdir) if args.workdir else Path("runs") / cfg.name


def _builder(args) -> tuple[ExperimentConfig, Builder, Path]:
    cfg = _config(args)
    work = _workdir(args, cfg)
    work.mkdir(parents=True, exist_ok=True)
    cfg.save(work / "config.json")
    return cfg, Builder(cfg, ArtifactCache(args.cache, not args.no_cache), work), work


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")
    print(path)


def _load_vector(schema, path: str, strict: bool):
    rec = json.loads(Path(path).read_text())
    return (StrictAvatarVector if strict else RelaxedAvatarVector).from_record(schema, rec)


# -- subcommands ------------------------------------------------------------------
def cmd_render(args) -> None:
    cfg, b, _ = _builder(args)
    engine = b.engine()
    v = _load_vector(engine.schema, args.vector, strict=True) if args.vector else engine.schema.random_strict(args.seed)
    out = engine.render(v)
    io.write_png(args.out, out.image)
    if args.seg:
        io.write_png(args.seg, out.segmentation.astype(np.uint8))
    print(json.dumps(v.to_record()))


def cmd_synth_data(args) -> None:
    cfg, b, _ = _builder(args)
    engine = b.engine()
    d = cfg.data
    ds = generate_dataset(engine, args.n or d.n_train, d.seed if args.seed is None else args.seed, d.magnitude,
                          d.clean_fraction)
    ds.save(args.out)
    print(f"{len(ds)} samples -> {args.out}")


def _copy(src_key: str, b: Builder, kind: str, dst: Path) -> None:
    p = b.cache.path(kind, b.keys[src_key], ".pt")
    if p.exists():
        shutil.copyfile(p, dst)
        print(dst)


def cmd_train_imitator(args) -> None:
    cfg, b, work = _builder(args)
    b.build(stages=("kit", "imitator"))
    _copy("imitator", b, "imitator", work / "imitator.pt")


def cmd_train_stylizer(args) -> None:
    cfg, b, work = _builder(args)
    b.build(stages=("kit", "stylizer"))
    _copy("stylizer", b, "stylizer", work / "stylizer.pt")


def cmd_train_mapper(args) -> None:
    cfg, b, work = _builder(args)
    system = b.build(stages=("kit", "imitator", "stylizer"))
    train_cfg = replace(cfg.mapper.train, mode=args.mode)
    mapper, curve, val = b.mapper(system, train_cfg, tag=f"mapper_{args.mode}")
    mapper.save(work / f"mapper_{args.mode}.pt", {"final_val_loss": val})
    _write_json(work / f"mapper_{args.mode}.json", {"mode": args.mode, "final_val_loss": val,
                                                   "final_beta": train_cfg.final_beta})


def cmd_encode(args) -> None:
    cfg, b, _ = _builder(args)
    system = b.build(stages=("kit", "stylizer"))
    src = Path(args.input)
    if src.is_dir():
        ds = Dataset.load(src)
        images = ds.selfies
        out = Path(args.out) if args.out else src / "latents.npy"
    else:
        images = io.read_png(src)[..., :3]
        out = Path(args.out) if args.out else src.with_suffix(".latent.npy")
    np.save(out, system.stylizer.encode_many(images) if images.ndim == 4 else system.stylizer.encode(images))
    print(out)


def cmd_convert(args) -> None:
    cfg, b, work = _builder(args)
    schema = cfg.build_schema()
    relaxed = _load_vector(schema, args.input, strict=False)
    if args.mode == "argmax":
        strict = argmax_convert(relaxed)
        extra = {}
    else:
        system = b.build(stages=("kit", "imitator"))
        engine = system.engine if cfg.conversion.scorer == "engine" else None
        res = search_convert(relaxed, system.imitator, system.kit, init=args.init or cfg.conversion.init,
                             passes=args.passes or cfg.conversion.passes, engine=engine)
        strict = res.strict
        extra = {"objective_argmax": res.objective_before, "objective_search": res.objective_after,
                 "pass_objectives": res.pass_objectives}
        tables = Path(args.tables) if args.tables else work / "conversion_tables.csv"
        io.write_csv(tables, ["sample_id", "pass", "attribute", "candidate", "loss", "chosen"], res.csv_rows(0))
    rec = strict.to_record()
    rec.update(extra)
    if args.out:
        _write_json(Path(args.out), rec)
    else:
        print(json.dumps(rec))


def cmd_run(args) -> None:
    cfg, b, work = _builder(args)
    system = b.build()
    image = io.read_png(args.image)[..., :3]
    if image.shape[:2] != (cfg.image_size, cfg.image_size):
        raise ConfigError(f"image must be {cfg.image_size}x{cfg.image_size}, got {image.shape[:2]}")
    e = pipeline.run_pipeline(system, image, passes=args.passes)
    out = Path(args.out) if args.out else work / "run"
    for stage in pipeline.STAGES:
        io.write_png(out / f"{stage}.png", getattr(e, stage))
    _write_json(out / "result.json", e.record())


def cmd_evaluate(args) -> None:
    cfg, b, work = _builder(args)
    system = b.build()
    rep = pipeline.evaluate(system, corrupted=args.corrupted, n=args.n, passes=args.passes)
    out = Path(args.out) if args.out else work / ("eval_corrupted" if args.corrupted else "eval_clean")
    rep.save(out)
    if args.sheets:
        write_stage_sheet(out / "stages.png", rep.entries)
    print(json.dumps({k: rep.aggregate[k] for k in ("objective_search_mean", "objective_argmax_mean", "frechet")},
                     indent=1))
    if "search" in rep.aggregate:
        print(f"search accuracy {rep.aggregate['search']['mean_accuracy']:.4f}  "
              f"argmax accuracy {rep.aggregate['argmax']['mean_accuracy']:.4f}  "
              f"continuous MAE {rep.aggregate['search']['mean_mae']:.4f}")
    print(out / "report.json")


def cmd_ablate(args) -> None:
    cfg, b, work = _builder(args)
    system = b.build()
    out = Path(args.out) if args.out else work / "ablation"
    which = set(args.which)
    if "losses" in which:
        rows = ablation.ablate_losses(b, system, max_seconds=args.max_seconds)
        _write_json(out / "losses.json", rows)
        io.write_csv(out / "losses.csv", ["arm", "completed", "mean_accuracy", "mean_mae", "final_val_loss"],
                     [[r["arm"], r["completed"], r.get("mean_accuracy", ""), r.get("mean_mae", ""),
                       r.get("final_val_loss", "")] for r in rows])
    if "relaxation" in which:
        rows = ablation.compare_relaxation(b, system)
        _write_json(out / "relaxation.json", rows)
        io.write_csv(out / "relaxation.csv", ["seed", "relaxed", "straight_through"],
                     [[r["seed"], r["relaxed"], r["straight_through"]] for r in rows])
    if "pipeline" in which:
        _write_json(out / "pipeline.json", ablation.ablate_pipeline(b, system))


# -- parser ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="experiment config JSON")
    src.add_argument("--preset", default="default", help="built-in config: default, acceptance or smoke")
    common.add_argument("--cache", default=None, help="artifact cache directory (default $AVATARFIT_CACHE)")
    common.add_argument("--no-cache", action="store_true", help="train everything from scratch, store nothing")
    common.add_argument("--workdir", default=None, help="curves, configs and copies of checkpoints")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="avatarfit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common], help="render one strict vector")
    p.add_argument("--vector", help="strict vector JSON (random when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--seg", help="also write the label map as PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth-data", parents=[common], help="write a PNG dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth_data)

    for name, fn in (("train-imitator", cmd_train_imitator), ("train-stylizer", cmd_train_stylizer)):
        sub.add_parser(name, parents=[common]).set_defaults(func=fn)

    p = sub.add_parser("train-mapper", parents=[common])
    p.add_argument("--mode", choices=("relaxed", "straight_through"), default="relaxed")
    p.set_defaults(func=cmd_train_mapper)

    p = sub.add_parser("encode", parents=[common], help="stylizer latents for a PNG or dataset directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("convert", parents=[common], help="relaxed vector JSON -> strict vector JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("search", "argmax"), default="search")
    p.add_argument("--passes", type=int, default=None)
    p.add_argument("--init", choices=INITS, default=None)
    p.add_argument("--tables", default=None, help="candidate-loss CSV path")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("run", parents=[common], help="full pipeline on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--passes", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", parents=[common], help="pipeline over the eval split")
    p.add_argument("--corrupted", action="store_true", help="feed corrupted selfies instead of clean renders")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--passes", type=int, default=None)
    p.add_argument("--sheets", action="store_true", help="write a per-stage PNG contact sheet")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="loss, relaxation and pipeline ablations")
    p.add_argument("--which", nargs="+", choices=("losses", "relaxation", "pipeline"),
                   default=["losses", "relaxation", "pipeline"])
    p.add_argument("--max-seconds", type=float, default=None, help="skip remaining loss arms after this budget")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, NotTrainedError, TrainingDivergedError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
