import argparse
import glob
import json
import os
import re
import sys
import warnings
from typing import List

import json5

from src.config import CONFIG_SECTIONS, RunConfig
from src.cooccurrence import read_plc_csv
from src.data.dataset import load_dataset
from src.data.split import load_mapping
from src.data.synthetic import SyntheticSpec, generate_synthetic, write_mapping_csv
from src.errors import ConfigurationError, LatentSegError
from src.evaluation import export_plc_heatmap, evaluate, plot_loss_curves, render_plc_heatmap
from src.hooks.progressListener import create_progress_listener_handle
from src.hooks.tqdmProgressListener import TqdmProgressListener
from src.segmentation.checkpoint import load_checkpoint, restore_segnet
from src.segmentation.segNet import parameter_report
from src.training.ablation import ablation_matrix, suite_names
from src.training.experiment import find_grouping, run_experiment
from src.training.trainer import training_projection
from src.utils import alpha_or_auto, int_list, optional_int, read_json_lines, str2bool, write_json

CONFIG_HELP = {
    "lambda_adv": "weight of the adversarial losses",
    "lambda_unlabeled": "weight of the unlabeled objective",
    "reduction": "pixel reduction of every loss (mean or sum)",
    "consistency_variant": "consistency loss (cross_entropy or symmetric_kl)",
    "latent_mode": "how the latent branch is trained (learned, manual or identity)",
    "max_latent": "number of latent classes of the learned latent branch",
    "allow_latent_overflow": "allow more latent than semantic classes",
    "ema_alpha": "moving average weight of the co-occurrence matrix, or 'auto' (batch size / labeled images)",
    "manual_mapping": "CSV mapping semantic classes to supercategories (latent_mode manual)",
    "lr0": "initial learning rate of the segmentation network",
    "disc_lr": "initial learning rate of the discriminator",
    "max_iters": "number of training iterations",
    "warmup_iters": "iterations before the consistency loss is enabled",
    "checkpoint_every": "write a checkpoint and P(l|c) every N iterations (0 = only at the end)",
    "labeled_fraction": "fraction of the training images used with labels",
    "seeds": "number of independent runs, with seeds seed, seed + 1, ...",
    "precision": "float32 or float64",
    "device": "torch device, e.g. cpu or cuda:0 (default: auto)",
}

def _argument_type(field: str, default):
    if field == "ema_alpha":
        return alpha_or_auto
    if field == "head_dilations":
        return int_list
    if isinstance(default, bool):
        return str2bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str

def add_config_arguments(parser: argparse.ArgumentParser, cfg: RunConfig):
    """
    One flag per RunConfig field; defaults come from the loaded configuration so that flags override it.
    """
    for section, fields in CONFIG_SECTIONS.items():
        group = parser.add_argument_group(section)

        for field in fields:
            default = getattr(cfg, field)
            names = ["--" + field]
            if field == "labeled_fraction":
                names.append("--fraction")

            group.add_argument(*names, dest=field, type=_argument_type(field, RunConfig().__dict__[field]), default=default,
                               help=CONFIG_HELP.get(field, field.replace("_", " ")))

def load_config(config_path: str = None) -> RunConfig:
    """
    Built-in defaults < config file < flags. The seed falls back to LATENTSEG_SEED when the file does not set it.
    """
    file_keys = set()

    if config_path is not None:
        if not os.path.isfile(config_path):
            raise ConfigurationError(f"Config file {config_path} does not exist")
        cfg = RunConfig.parse_file(config_path)
        file_keys = _file_fields(config_path)
    else:
        cfg = RunConfig.create_default()
        default_path = os.environ.get("LATENTSEG_CONFIG", "config.json5")
        if os.path.exists(default_path):
            file_keys = _file_fields(default_path)

    env_seed = os.environ.get("LATENTSEG_SEED")
    if env_seed is not None and "seed" not in file_keys:
        cfg = cfg.update(seed=int(env_seed))
    return cfg

def _file_fields(path: str) -> set:
    with open(path, "r") as f:
        return { key.split(".")[-1] for key in json5.load(f).keys() }

def _config_from_args(args: argparse.Namespace) -> RunConfig:
    values = { field: getattr(args, field) for fields in CONFIG_SECTIONS.values() for field in fields }
    return RunConfig(**values).validate()

def _seed_default() -> int:
    return int(os.environ.get("LATENTSEG_SEED", "0"))

def _pre_parse_config(argv: List[str]) -> str:
    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument("--config", type=str, default=None)
    known, _ = pre_parser.parse_known_args(argv)
    return known.config

def build_parser(cfg: RunConfig) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentseg", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                     description="Semi-supervised segmentation with latent classes")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                              help="generate a synthetic dataset with known supercategories")
    gen.add_argument("--classes", type=int, default=6, help="number of semantic classes, including the background")
    gen.add_argument("--groups", type=int, default=3, help="number of appearance groups, including the background group")
    gen.add_argument("--n", type=int, default=800, help="number of training images")
    gen.add_argument("--n-val", dest="n_val", type=optional_int, default=None, help="number of validation images (default: n / 4)")
    gen.add_argument("--image-size", dest="image_size", type=int, default=64, help="image width and height")
    gen.add_argument("--shapes-min", dest="shapes_min", type=int, default=2, help="minimum number of shapes per image")
    gen.add_argument("--shapes-max", dest="shapes_max", type=int, default=4, help="maximum number of shapes per image")
    gen.add_argument("--boundary-ignore", dest="boundary_ignore", type=str2bool, default=True,
                     help="draw a 1 pixel ignore outline around every shape")
    gen.add_argument("--seed", type=int, default=_seed_default(), help="generator seed")
    gen.add_argument("--out", type=str, required=True, help="output directory")

    train = commands.add_parser("train", formatter_class=argparse.ArgumentDefaultsHelpFormatter, help="train and evaluate")
    train.add_argument("--config", type=str, default=None, help="JSON/JSON5 config file with dotted keys")
    train.add_argument("--data", type=str, required=True, help="dataset root (with train/ and val/)")
    train.add_argument("--out", type=str, required=True, help="run directory")
    train.add_argument("--dry-run", dest="dry_run", action="store_true", help="validate config and data without training")
    train.add_argument("--resume", type=str, default=None, help="checkpoint to continue from")
    train.add_argument("--quiet", action="store_true", help="disable the progress bar")
    add_config_arguments(train, cfg)

    evaluation = commands.add_parser("eval", formatter_class=argparse.ArgumentDefaultsHelpFormatter, help="evaluate a checkpoint")
    evaluation.add_argument("--checkpoint", type=str, required=True, help="checkpoint file")
    evaluation.add_argument("--data", type=str, required=True, help="labeled dataset root")
    evaluation.add_argument("--grouping", type=str, default=None, help="supercategory CSV used for grouping_agreement")
    evaluation.add_argument("--out", type=str, default=None, help="directory for metrics.json and the P(l|c) heatmap")
    evaluation.add_argument("--device", type=str, default="cpu", help="torch device")

    ablate = commands.add_parser("ablate", formatter_class=argparse.ArgumentDefaultsHelpFormatter, help="run an ablation suite")
    ablate.add_argument("--config", type=str, default=None, help="JSON/JSON5 config file with dotted keys")
    ablate.add_argument("--suite", type=str, default="loss_terms", choices=suite_names(), help="suite to run")
    ablate.add_argument("--data", type=str, required=True, help="dataset root (with train/ and val/)")
    ablate.add_argument("--out", type=str, required=True, help="output directory")
    ablate.add_argument("--workers", type=int, default=1, help="number of parallel processes")
    ablate.add_argument("--quiet", action="store_true", help="disable the progress bar")
    add_config_arguments(ablate, cfg)

    plot = commands.add_parser("plot", formatter_class=argparse.ArgumentDefaultsHelpFormatter, help="render run artifacts")
    plot.add_argument("--run", type=str, required=True, help="run directory")
    plot.add_argument("--what", type=str, default="plc", choices=["plc", "losses"], help="what to render")
    return parser

def gen_data(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ConfigurationError(f"--n must be >= 1, got {args.n}")

    spec = SyntheticSpec(semantic_count=args.classes, group_count=args.groups, image_size=args.image_size,
                         shapes_per_image=(args.shapes_min, args.shapes_max), boundary_ignore=args.boundary_ignore)
    n_val = args.n_val if args.n_val is not None else max(1, args.n // 4)

    os.makedirs(args.out, exist_ok=True)
    generate_synthetic(spec, args.n, args.seed, os.path.join(args.out, "train"), stream=0)
    if n_val > 0:
        generate_synthetic(spec, n_val, args.seed, os.path.join(args.out, "val"), stream=1)
    write_mapping_csv(os.path.join(args.out, "supercategories.csv"), spec.class_names, spec.supercategory_map)

    print(f"Wrote {args.n} training and {n_val} validation images to {args.out}")
    return 0

def train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)

    if args.resume is not None:
        checkpoint = load_checkpoint(args.resume)
        if checkpoint.iteration >= cfg.max_iters:
            warnings.warn(f"Checkpoint is at iteration {checkpoint.iteration}, nothing left to train")

    listener = TqdmProgressListener(desc="Training", disable=args.quiet or args.dry_run)

    with create_progress_listener_handle(listener):
        result = run_experiment(cfg, args.data, args.out, listener=listener, resume=args.resume, dry_run=args.dry_run)

    if not args.dry_run:
        print(json.dumps({ key: value for key, value in result.summary.items() if key != "seeds" }, indent=2))
    return 1 if result.failed else 0

def evaluate_checkpoint(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint, map_location=args.device)
    seg = restore_segnet(checkpoint, device=args.device)
    print("Parameters: " + ", ".join(f"{key}={value}" for key, value in parameter_report(seg).items()))

    dataset = load_dataset(args.data, semantic_count=checkpoint.semantic_count, ignore_index=checkpoint.config.ignore_index)
    if args.grouping is not None:
        grouping = load_mapping(args.grouping, dataset.class_names)
    else:
        grouping = find_grouping(os.path.dirname(os.path.normpath(args.data)), dataset)

    report, estimate = evaluate(seg, dataset, ignore_index=checkpoint.config.ignore_index,
                                batch_size=checkpoint.config.eval_batch_size, grouping=grouping,
                                projection=training_projection(checkpoint.config, checkpoint.cooccurrence))
    report["iteration"] = checkpoint.iteration
    report["seed"] = checkpoint.config.seed

    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "metrics.json"), report)
        export_plc_heatmap(estimate, os.path.join(args.out, "plc_eval.csv"), checkpoint.class_names)

    print(json.dumps({ key: value for key, value in report.items() if key != "confusion_matrix" }, indent=2))
    return 0

def ablate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    listener = TqdmProgressListener(desc="Ablation " + args.suite, disable=args.quiet or args.workers > 1)

    with create_progress_listener_handle(listener):
        rows = ablation_matrix(cfg, args.data, args.out, suite=args.suite, workers=args.workers, listener=listener)

    for row in rows:
        print(f"{row['suite']:>12} {row['member']:<24} {row['status']:<8} mIoU {row.get('miou_mean', '')}")
    return 1 if any(row["status"] in ("error", "failed") for row in rows) else 0

def _iteration_of(path: str) -> int:
    match = re.search(r"plc_(\d+)\.csv$", path)
    return int(match.group(1)) if match else -1

def plot(args: argparse.Namespace) -> int:
    if not os.path.isdir(args.run):
        raise ConfigurationError(f"Run directory {args.run} does not exist")

    written = []
    if args.what == "plc":
        for seed_dir in sorted(glob.glob(os.path.join(args.run, "seed_*"))):
            exports = sorted(glob.glob(os.path.join(seed_dir, "plc_*.csv")), key=_iteration_of)

            if len(exports) > 0:
                names, projection = read_plc_csv(exports[-1])
                written.append(render_plc_heatmap(projection, os.path.splitext(exports[-1])[0] + ".png", names))
    else:
        records = read_json_lines(os.path.join(args.run, "losses.jsonl"))
        if len(records) > 0:
            written.append(plot_loss_curves(records, os.path.join(args.run, "losses.png")))

    if len(written) == 0:
        raise ConfigurationError(f"Nothing to plot for '{args.what}' in {args.run}")

    for path in written:
        print("Wrote " + path)
    return 0

COMMANDS = {
    "gen-data": gen_data,
    "train": train,
    "eval": evaluate_checkpoint,
    "ablate": ablate,
    "plot": plot,
}

def main(argv: List[str] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        cfg = load_config(_pre_parse_config(argv))
        args = build_parser(cfg).parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:
        # argparse reports unknown flags and --help this way
        return e.code if isinstance(e.code, int) else 1
    except (LatentSegError, OSError, ValueError) as e:
        print(json.dumps({ "error": type(e).__name__, "message": str(e) }), file=sys.stderr)
        return 1

if __name__ == '__main__':
    sys.exit(main())
