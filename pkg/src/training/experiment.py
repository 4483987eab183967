import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.config import LatentMode, RunConfig
from src.cooccurrence import write_plc_csv
from src.data.augment import AugmentOptions
from src.data.dataset import SegmentationDataset, load_dataset
from src.data.split import ManualMapping, load_mapping, split_semi
from src.data.stream import BatchLoader, BatchStream
from src.errors import ConfigurationError, LatentSegError
from src.evaluation import evaluate
from src.hooks.progressListener import ProgressListener
from src.hooks.subTaskProgressListener import SubTaskProgressListener
from src.segmentation.checkpoint import load_checkpoint
from src.training.trainer import (TrainState, build_state, current_projection, restore_state, save_state,
                                  train_iteration, training_projection, unlabeled_active)
from src.utils import JsonLinesWriter, read_json_lines, write_json

MAPPING_FILE = "supercategories.csv"

# Scalar diagnostics averaged over seeds
SUMMARY_KEYS = ["miou", "effective_latent_t01", "effective_latent_t09", "dominance_fraction", "grouping_agreement",
                "grouping_agreement_eval"]

@dataclass
class ExperimentData:
    train: SegmentationDataset
    val: SegmentationDataset
    grouping: Optional[ManualMapping] = None
    mapping: Optional[ManualMapping] = None

@dataclass
class ExperimentResult:
    run_dir: str
    per_seed: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any("error" in seed for seed in self.per_seed)

def find_grouping(data_root: str, train: SegmentationDataset) -> Optional[ManualMapping]:
    for candidate in [ os.path.join(data_root, MAPPING_FILE), os.path.join(train.root, MAPPING_FILE) ]:
        if os.path.isfile(candidate):
            return load_mapping(candidate, train.class_names)

    if train.supercategories is not None:
        return ManualMapping.from_groups(train.supercategories)
    return None

def prepare_data(cfg: RunConfig, data_root: str) -> ExperimentData:
    """
    Load <data_root>/train and <data_root>/val, falling back to data_root for both.
    The ground-truth grouping is only used for evaluation, or as the mapping of latent_mode 'manual'.
    """
    if not os.path.isdir(data_root):
        raise ConfigurationError(f"Dataset directory {data_root} does not exist")

    train_root = os.path.join(data_root, "train")
    val_root = os.path.join(data_root, "val")

    if not os.path.isdir(train_root):
        train_root = data_root
    train = load_dataset(train_root, ignore_index=cfg.ignore_index)

    if not train.has_labels:
        raise ConfigurationError(f"{train_root} has no labels; semi-supervised training needs a labeled pool")

    if os.path.isdir(val_root):
        val = load_dataset(val_root, semantic_count=train.semantic_count, ignore_index=cfg.ignore_index)
    else:
        warnings.warn(f"No validation split under {data_root}, evaluating on the training images")
        val = train

    grouping = find_grouping(data_root, train)
    mapping = None

    if cfg.get_latent_mode() == LatentMode.MANUAL:
        mapping = load_mapping(cfg.manual_mapping, train.class_names) if cfg.manual_mapping else grouping

        if mapping is None:
            raise ConfigurationError("latent_mode 'manual' needs manual_mapping or a supercategories.csv next to the data")
    return ExperimentData(train, val, grouping, mapping)

def _export_projection(state: TrainState, cfg: RunConfig, seed_dir: str):
    if state.cooccurrence.update_count == 0:
        return
    write_plc_csv(current_projection(state, cfg), os.path.join(seed_dir, f"plc_{state.iteration}.csv"),
                  state.class_space.get_names())

def run_seed(cfg: RunConfig, data: ExperimentData, seed: int, run_dir: str, loss_writer: JsonLinesWriter = None,
             listener: ProgressListener = None, resume: str = None) -> Dict[str, Any]:
    """
    Train and evaluate one seed. Writes seed_<seed>/checkpoints, plc_<iter>.csv and metrics.json.
    """
    seed_dir = os.path.join(run_dir, f"seed_{seed}")
    checkpoint_dir = os.path.join(seed_dir, "checkpoints")
    os.makedirs(checkpoint_dir, exist_ok=True)

    split = split_semi(data.train, cfg.labeled_fraction, seed)
    print(f"Seed {seed}: {len(split.labeled_ids)} labeled, {len(split.unlabeled_ids)} unlabeled images")

    state = build_state(cfg, data.train.semantic_count, len(split.labeled_ids), seed,
                        mapping=data.mapping, class_names=data.train.class_names)
    if resume is not None:
        state = restore_state(state, load_checkpoint(resume, map_location=str(state.device)))
        print(f"Resuming seed {seed} at iteration {state.iteration}")

    options = AugmentOptions(crop_size=cfg.crop_size, scale_range=(cfg.scale_min, cfg.scale_max), flip=cfg.flip,
                             ignore_index=cfg.ignore_index, mean_pixel=tuple(data.train.mean_pixel))

    labeled_batches = BatchLoader(data.train, BatchStream(split.labeled_ids, cfg.batch_size, seed, "labeled"),
                                  options, labeled=True).batches(start=state.iteration)
    unlabeled_batches = None

    if len(split.unlabeled_ids) > 0 and unlabeled_active(cfg):
        unlabeled_batches = BatchLoader(data.train, BatchStream(split.unlabeled_ids, cfg.batch_size, seed, "unlabeled"),
                                        options, labeled=False).batches(start=state.iteration)

    start_time = time.perf_counter()

    while state.iteration < cfg.max_iters:
        labeled = next(labeled_batches)
        unlabeled = next(unlabeled_batches) if unlabeled_batches is not None else None

        components = train_iteration(state, labeled, unlabeled, cfg)

        if loss_writer is not None:
            loss_writer.write(dict(seed=seed, **components))
        if listener is not None:
            listener.on_metrics(state.iteration, components)
            listener.on_progress(state.iteration, cfg.max_iters)

        if cfg.checkpoint_every > 0 and state.iteration % cfg.checkpoint_every == 0 and state.iteration < cfg.max_iters:
            save_state(state, os.path.join(checkpoint_dir, f"ckpt_{state.iteration}.pt"), cfg)
            _export_projection(state, cfg, seed_dir)

    save_state(state, os.path.join(checkpoint_dir, f"ckpt_{state.iteration}.pt"), cfg)
    _export_projection(state, cfg, seed_dir)
    print(f"Seed {seed}: trained {cfg.max_iters} iterations in {time.perf_counter() - start_time:.1f} seconds")

    report, _ = evaluate(state.seg, data.val, ignore_index=cfg.ignore_index, batch_size=cfg.eval_batch_size,
                         grouping=data.grouping, projection=training_projection(cfg, state.cooccurrence))
    metrics = dict(report, seed=seed)
    write_json(os.path.join(seed_dir, "metrics.json"), metrics)

    print(f"Seed {seed}: mIoU {metrics['miou']:.4f}")
    return metrics

def summarize(per_seed: List[Dict[str, Any]]) -> Dict[str, Any]:
    succeeded = [ metrics for metrics in per_seed if "error" not in metrics ]
    summary: Dict[str, Any] = { "seeds": per_seed, "completed": len(succeeded), "failed": len(per_seed) - len(succeeded) }

    for key in SUMMARY_KEYS:
        values = [ metrics[key] for metrics in succeeded if metrics.get(key) is not None ]

        if len(values) > 0:
            summary[key + "_mean"] = float(np.mean(values))
            summary[key + "_std"] = float(np.std(values))
    return summary

def _trim_loss_log(path: str, seed: int, iteration: int):
    # Drop records a resumed run is about to write again
    kept = [ record for record in read_json_lines(path) if record.get("seed") != seed or record["iter"] < iteration ]

    with JsonLinesWriter(path) as writer:
        for record in kept:
            writer.write(record)

def run_experiment(cfg: RunConfig, data_root: str, out_dir: str, listener: ProgressListener = None,
                   resume: str = None, dry_run: bool = False, data: ExperimentData = None) -> ExperimentResult:
    """
    Run cfg.seeds independent trainings (seeds cfg.seed, cfg.seed + 1, ...) and aggregate their metrics.
    A failing seed is recorded in metrics.json and does not stop the others.
    """
    cfg.validate()

    if resume is not None and cfg.seeds != 1:
        raise ConfigurationError("Resuming is only supported for single-seed runs")

    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "config.json"), cfg.to_dict())

    data = data or prepare_data(cfg, data_root)
    result = ExperimentResult(out_dir)

    if dry_run:
        split = split_semi(data.train, cfg.labeled_fraction, cfg.seed)
        state = build_state(cfg, data.train.semantic_count, len(split.labeled_ids), cfg.seed,
                            mapping=data.mapping, class_names=data.train.class_names)

        result.summary = { "dry_run": True, "train_images": len(data.train), "val_images": len(data.val),
                           "labeled": len(split.labeled_ids), "unlabeled": len(split.unlabeled_ids),
                           "semantic_count": state.seg.semantic_count, "latent_count": state.seg.latent_count }
        print("Dry run: " + ", ".join(f"{key}={value}" for key, value in result.summary.items()))
        return result

    loss_path = os.path.join(out_dir, "losses.jsonl")
    if resume is not None and os.path.isfile(loss_path):
        _trim_loss_log(loss_path, cfg.seed, load_checkpoint(resume).iteration)

    with JsonLinesWriter(loss_path, append=resume is not None) as loss_writer:
        for k in range(cfg.seeds):
            seed = cfg.seed + k
            sub_listener = SubTaskProgressListener(listener, cfg.seeds, k, 1) if listener is not None else None

            try:
                result.per_seed.append(run_seed(cfg, data, seed, out_dir, loss_writer, sub_listener, resume))
            except LatentSegError as e:
                print(f"Seed {seed} failed: {e}")
                result.per_seed.append({ "seed": seed, "error": type(e).__name__, "message": str(e) })

            if sub_listener is not None:
                sub_listener.on_finished()

    result.summary = summarize(result.per_seed)
    write_json(os.path.join(out_dir, "metrics.json"), result.summary)
    return result
