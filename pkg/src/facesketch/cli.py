import argparse
import json
import os
import sys

import torch

from .PairedData import PairedDataIO, check_disjoint
from .ResultRenderer import ResultRenderer
from .SketchConfig import SketchConfig, SketchConfigIO
from .SketchEvaluator import ABLATION_CONFIGS, SketchEvaluator
from .SketchSynthesizer import SYNTH_DIRECTIONS, SketchSynthesizer
from .SketchTrainer import CheckpointIO, SketchTrainer
from .SyntheticFaces import SyntheticFaces
from .utils import logger

OUT_ENV = "PS2MAN_OUT"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

ABLATION_FIGURE_ROWS = 4


class ConfigError(Exception):
    """Invalid configuration file, key or value."""


def out_root() -> str:
    return os.environ.get(OUT_ENV) or "runs"


def load_config(args: argparse.Namespace, base: dict | None = None) -> SketchConfig:
    """
    Defaults, then the config file (or `base`), then --set overrides, then --seed.
    """
    try:
        if getattr(args, "config", None):
            config = SketchConfigIO.load_from_json_file(args.config)
        else:
            config = SketchConfig(base)
        config.apply_overrides(getattr(args, "set", None))
        if getattr(args, "seed", None) is not None:
            config.set("seed", args.seed)
        return config.validate()
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {e.filename}") from e
    except KeyError as e:
        raise ConfigError(f"Invalid config key: {e.args[0]}") from e
    except ValueError as e:
        raise ConfigError(f"Invalid config: {e}") from e


def _dataset_root(config: SketchConfig) -> str:
    root = config["dataset"]["root"]
    if not root:
        raise ConfigError("dataset.root is not set (use --set dataset.root=<dir>)")
    return root


def _load_splits(config: SketchConfig) -> dict:
    splits = PairedDataIO.load_dataset(
        _dataset_root(config), config.split_spec(), config.aligner()
    )
    check_disjoint(splits)
    return splits


def _train_one(
    config: SketchConfig, out_dir: str, device: str, resume: str | None = None
) -> tuple[dict, SketchTrainer]:
    splits = _load_splits(config)
    os.makedirs(out_dir, exist_ok=True)
    SketchConfigIO.save_to_json_file(config, os.path.join(out_dir, "config.json"))

    trainer = SketchTrainer.from_config(config, device=device)
    history = trainer.fit(splits, out_dir, augmenter=config.augmenter(), resume_from=resume)
    with open(os.path.join(out_dir, "history.json"), "w", encoding="utf-8") as f:
        json.dump(history, f, indent=2)
    return splits, trainer


def _resolve_checkpoint(path: str) -> str:
    if os.path.isdir(path):
        return CheckpointIO.find_for_inference(path)
    return path


# subcommands


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args)
    out_dir = args.out or os.path.join(out_root(), f"train-{config.config_hash()[:8]}")
    _train_one(config, out_dir, args.device, resume=args.resume)
    logger.info(f"Training artifacts in {out_dir}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    base = load_config(args)
    configs: dict[str, SketchConfig] = {}
    for name, mask in ABLATION_CONFIGS.items():
        configs[name] = base.copy().set("trainer.ablation_level_mask", list(mask)).validate()

    if args.dry_run:
        for name, config in configs.items():
            print(f"# {name}")
            print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK

    out_dir = args.out or os.path.join(out_root(), f"ablate-{base.config_hash()[:8]}")
    evaluator = SketchEvaluator.from_config(base)
    results, outputs = {}, {}
    shown = []
    for name, config in configs.items():
        run_dir = os.path.join(out_dir, name)
        splits, _ = _train_one(config, run_dir, args.device)
        synth = SketchSynthesizer.from_file(CheckpointIO.find_for_inference(run_dir), args.device)
        results[name] = evaluator.evaluate_run(synth, splits["test"], config["dataset"]["name"])
        SketchEvaluator.write_reports(results[name], run_dir, plot=config["metrics"]["cmc_plot"])
        shown = list(splits["test"])[:ABLATION_FIGURE_ROWS]
        outputs[name] = [synth.photo_to_sketch(s.photo) for s in shown]

    table = SketchEvaluator.ablation_table(results)
    SketchEvaluator.write_ablation_table(table, os.path.join(out_dir, "ablation.csv"))
    if shown:
        ResultRenderer().draw_ablation(
            [s.photo for s in shown],
            [s.sketch for s in shown],
            outputs,
            filename=os.path.join(out_dir, "ablation.png"),
        )
    for row in table:
        print("  ".join(f"{cell:>14}" for cell in row))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    synth = SketchSynthesizer.from_file(_resolve_checkpoint(args.ckpt), args.device)
    out_dir = args.out or os.path.join(out_root(), f"synth-{args.direction}")
    synth.synthesize_directory(
        args.input,
        args.direction,
        out_dir,
        target_dir=args.targets,
        landmarks_path=args.landmarks,
        grid=args.grid,
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = CheckpointIO.load(_resolve_checkpoint(args.ckpt))
    config = load_config(args, base=ckpt.config)
    splits = _load_splits(config)
    evaluator = SketchEvaluator.from_config(config)
    result = evaluator.evaluate_run(
        SketchSynthesizer(ckpt, args.device), splits["test"], config["dataset"]["name"]
    )
    out_dir = args.out or os.path.join(out_root(), "eval")
    SketchEvaluator.write_reports(result, out_dir, plot=config["metrics"]["cmc_plot"])
    SketchConfigIO.save_to_json_file(config, os.path.join(out_dir, "config.json"))
    return EXIT_OK


def cmd_synthetic(args: argparse.Namespace) -> int:
    out_dir = args.out or os.path.join(out_root(), "synthetic")
    SyntheticFaces.write_dataset(out_dir, count=args.count, seed=args.seed or 0)
    return EXIT_OK


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help=f"output directory (default under ${OUT_ENV})")
    common.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("--config", default=None, help="JSON config file")
    configured.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (section.key or unique key); repeatable",
    )
    configured.add_argument("--seed", type=int, default=None)

    parser = argparse.ArgumentParser(
        prog="facesketch", description="Photo/sketch synthesis with multi-level adversarial supervision"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, configured], help="train a model")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", parents=[common, configured], help="train the three level masks")
    p.add_argument("--dry-run", action="store_true", help="print resolved configs only")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", parents=[common], help="synthesize a directory of images")
    p.add_argument("--ckpt", required=True, help="checkpoint file or run directory")
    p.add_argument("--in", dest="input", required=True, help="input image directory")
    p.add_argument("--direction", required=True, choices=SYNTH_DIRECTIONS)
    p.add_argument("--targets", default=None, help="ground-truth directory for the grid")
    p.add_argument("--landmarks", default=None, help="landmark file for raw inputs")
    p.add_argument("--grid", action="store_true", help="also write grid.png")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[common, configured], help="evaluate on the test split")
    p.add_argument("--ckpt", required=True, help="checkpoint file or run directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synthetic", parents=[common], help="write a synthetic paired dataset")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthetic)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (FileNotFoundError, ValueError, KeyError, FloatingPointError, RuntimeError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
