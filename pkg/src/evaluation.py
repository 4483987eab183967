import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from src.cooccurrence import (LatentProjection, batch_statistic, dominance_fraction, effective_latent_count,
                              write_plc_csv)
from src.core import ClassSpace, one_hot
from src.data.dataset import SegmentationDataset
from src.data.split import ManualMapping
from src.errors import ConfigurationError, DimensionError, UndefinedMetricError
from src.segmentation.segNet import SegNet

# Thresholds of the latent class diagnostics
LOW_THRESHOLD = 0.1
HIGH_THRESHOLD = 0.9

@dataclass
class ConfusionMatrix:
    """
    counts[g, p]: number of non-ignored pixels with ground truth g predicted as p.
    """
    counts: np.ndarray

    @staticmethod
    def create(class_count: int) -> "ConfusionMatrix":
        return ConfusionMatrix(np.zeros((class_count, class_count), dtype=np.int64))

    @property
    def class_count(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, predictions: np.ndarray, labels: np.ndarray):
        n = self.class_count
        valid = (labels >= 0) & (labels < n)

        index = n * labels[valid].astype(np.int64) + predictions[valid].astype(np.int64)
        self.counts += np.bincount(index, minlength=n ** 2).reshape(n, n)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

def per_class_iou(cm: ConfusionMatrix) -> List[Optional[float]]:
    """
    IoU of every class; None for classes absent from both ground truth and prediction.
    """
    intersection = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - intersection

    return [ float(i / u) if u > 0 else None for i, u in zip(intersection, union) ]

def miou(cm: ConfusionMatrix) -> float:
    present = [ iou for iou in per_class_iou(cm) if iou is not None ]

    if len(present) == 0:
        raise UndefinedMetricError("mIoU is undefined when no class occurs in ground truth or prediction")
    return float(np.mean(present))

def grouping_agreement(P: LatentProjection, truth: ManualMapping) -> float:
    """
    Fraction of semantic classes whose dominant latent class maps to their true group, under the
    best one-to-one matching of latent classes to groups. Unmatched latent classes count as wrong.
    """
    if truth.semantic_count != P.semantic_count:
        raise DimensionError(f"Grouping covers {truth.semantic_count} classes, P(l|c) has {P.semantic_count}")

    assigned = P.matrix.argmax(axis=1)
    counts = np.zeros((P.latent_count, truth.group_count), dtype=np.int64)

    for latent, group in zip(assigned, truth.groups):
        counts[latent, group] += 1

    rows, columns = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, columns].sum()) / P.semantic_count

def export_plc_heatmap(P: LatentProjection, path: str, class_names: Sequence[str] = None) -> Tuple[str, str]:
    """
    Write P(l|c) as CSV and as a heatmap PNG. path may end in .csv or .png; both files share its stem.
    """
    stem = os.path.splitext(path)[0]
    csv_path, png_path = stem + ".csv", stem + ".png"
    names = list(class_names) if class_names is not None else [ f"class_{c}" for c in range(P.semantic_count) ]

    write_plc_csv(P, csv_path, names)
    render_plc_heatmap(P, png_path, names)
    return csv_path, png_path

def render_plc_heatmap(P: LatentProjection, png_path: str, class_names: Sequence[str] = None) -> str:
    names = list(class_names) if class_names is not None else [ f"class_{c}" for c in range(P.semantic_count) ]

    fig, ax = plt.subplots(figsize=(1.5 + 0.45 * P.latent_count, 1.0 + 0.35 * P.semantic_count))
    image = ax.imshow(P.matrix, cmap="viridis", vmin=0, vmax=1, aspect="auto")

    ax.set_xticks(range(P.latent_count))
    ax.set_yticks(range(P.semantic_count))
    ax.set_yticklabels(names)
    ax.set_xlabel("latent class")
    ax.set_ylabel("semantic class")
    fig.colorbar(image, ax=ax, label="P(l|c)")

    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return png_path

def plot_loss_curves(records: List[Dict[str, Any]], path: str, keys: Sequence[str] = ("l_ce", "l_latent", "l_cons", "l_disc", "total")):
    fig, ax = plt.subplots(figsize=(8, 4.5))

    for seed in sorted(set(record.get("seed", 0) for record in records)):
        seed_records = [ record for record in records if record.get("seed", 0) == seed ]
        iterations = [ record["iter"] for record in seed_records ]

        for key in keys:
            ax.plot(iterations, [ record[key] for record in seed_records ], label=f"{key} (seed {seed})", linewidth=1)

    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize="small", ncol=2)

    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path

def _pad_to_multiple(images: torch.Tensor, multiple: int, mean_pixel: Sequence[float]) -> torch.Tensor:
    height, width = images.shape[1], images.shape[2]
    pad_h, pad_w = (-height) % multiple, (-width) % multiple

    if pad_h == 0 and pad_w == 0:
        return images

    padded = torch.empty((images.shape[0], height + pad_h, width + pad_w, 3), dtype=images.dtype, device=images.device)
    padded[:] = torch.tensor(mean_pixel, dtype=images.dtype, device=images.device)
    padded[:, :height, :width] = images
    return padded

@torch.no_grad()
def predict(seg: SegNet, images: torch.Tensor, mean_pixel: Sequence[float] = (0.5, 0.5, 0.5)) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Full-image inference. Images whose size is not a multiple of the output stride are padded and the
    prediction is cropped back.
    """
    height, width = images.shape[1], images.shape[2]
    s_c, s_l = seg(_pad_to_multiple(images, seg.output_stride, mean_pixel))
    return s_c[:, :height, :width], s_l[:, :height, :width]

def _shape_groups(dataset: SegmentationDataset, batch_size: int):
    # Consecutive images of the same size are batched together
    current, shape = [], None

    for i in range(len(dataset)):
        image, labels = dataset[i]

        if current and (image.shape != shape or len(current) == batch_size):
            yield current
            current = []
        current.append((image, labels))
        shape = image.shape
    if current:
        yield current

def _diagnostics(projection: LatentProjection, grouping: Optional[ManualMapping], suffix: str = "") -> Dict[str, Any]:
    report = {
        "effective_latent_t01" + suffix: effective_latent_count(projection, LOW_THRESHOLD),
        "effective_latent_t09" + suffix: effective_latent_count(projection, HIGH_THRESHOLD),
        "dominance_fraction" + suffix: dominance_fraction(projection, HIGH_THRESHOLD),
    }
    if grouping is not None:
        report["grouping_agreement" + suffix] = grouping_agreement(projection, grouping)
    return report

def evaluate(seg: SegNet, dataset: SegmentationDataset, ignore_index: int = 255, batch_size: int = 4,
             grouping: ManualMapping = None, projection: LatentProjection = None, device: torch.device = None,
             dtype: torch.dtype = None) -> Tuple[Dict[str, Any], LatentProjection]:
    """
    Evaluate a model on every image of a labeled dataset, without cropping or augmentation.

    The latent diagnostics are computed on projection, the P(l|c) of the training co-occurrence matrix.
    P(l|c) accumulated from ground truth and latent predictions on this dataset is returned and reported
    under the *_eval keys; it stands in for projection when none is given.
    """
    if not dataset.has_labels:
        raise ConfigurationError(f"{dataset.root} has no labels to evaluate against")
    if dataset.semantic_count != seg.semantic_count:
        raise DimensionError(f"The dataset has {dataset.semantic_count} classes, the model {seg.semantic_count}")
    if projection is not None and projection.matrix.shape != (seg.semantic_count, seg.latent_count):
        raise DimensionError(f"Projection {projection.matrix.shape} does not match the model ({seg.semantic_count}, {seg.latent_count})")

    parameter = next(seg.parameters())
    device = device or parameter.device
    dtype = dtype or parameter.dtype

    class_space = ClassSpace(seg.semantic_count, seg.latent_count, ignore_index=ignore_index, allow_latent_overflow=True)
    cm = ConfusionMatrix.create(seg.semantic_count)
    statistic = np.zeros((seg.semantic_count, seg.latent_count), dtype=np.float64)

    was_training = seg.training
    seg.eval()

    try:
        for group in _shape_groups(dataset, batch_size):
            images = torch.stack([ image for image, _ in group ]).to(device=device, dtype=dtype)
            labels = torch.stack([ labels for _, labels in group ]).to(device=device)

            s_c, s_l = predict(seg, images, dataset.mean_pixel)

            valid = labels != ignore_index
            cm.add(s_c.argmax(dim=-1)[valid].cpu().numpy(), labels[valid].cpu().numpy())
            statistic += batch_statistic(one_hot(labels, class_space, dtype=dtype), s_l)
    finally:
        seg.train(was_training)

    row_sums = statistic.sum(axis=1, keepdims=True)
    matrix = np.where(row_sums > 0, statistic / np.where(row_sums > 0, row_sums, 1.0), 1.0 / seg.latent_count)
    estimate = LatentProjection(matrix)

    report = {
        "miou": miou(cm),
        "per_class_iou": per_class_iou(cm),
        "confusion_matrix": cm.counts.tolist(),
        "latent_count": seg.latent_count,
    }
    report.update(_diagnostics(projection if projection is not None else estimate, grouping))
    report.update(_diagnostics(estimate, grouping, suffix="_eval"))
    return report, estimate
