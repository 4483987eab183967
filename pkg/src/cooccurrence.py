import csv
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch

from src.core import ProbMap, _values, validate_probmap
from src.errors import ConfigurationError, DimensionError, StateError

# Largest alpha accepted by the moving average; alpha = 1 would stop it being an average
MAX_ALPHA = 1 - 1e-6

@dataclass(frozen=True)
class LatentProjection:
    """
    Row-stochastic estimate of P(l|c), shape (|C|, |L|).
    """
    matrix: np.ndarray

    @property
    def semantic_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def latent_count(self) -> int:
        return self.matrix.shape[1]

    def as_tensor(self, dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
        return torch.as_tensor(self.matrix, dtype=dtype, device=device)

    @staticmethod
    def identity(count: int) -> "LatentProjection":
        return LatentProjection(np.eye(count, dtype=np.float64))

@dataclass(frozen=True)
class CoOccurrence:
    """
    Exponential moving average of soft (semantic, latent) pixel co-occurrence counts.
    Always held in double precision.
    """
    M: np.ndarray
    alpha: float
    update_count: int = 0

    @staticmethod
    def create(semantic_count: int, latent_count: int, alpha: float) -> "CoOccurrence":
        if not (0 < alpha < 1):
            raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
        return CoOccurrence(np.zeros((semantic_count, latent_count), dtype=np.float64), alpha, 0)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.M.shape

def batch_statistic(y: Union[ProbMap, torch.Tensor], s_l: Union[ProbMap, torch.Tensor]) -> np.ndarray:
    """
    Sum over all pixels of y[c] * s_l[l]; ignored pixels (zero rows of y) contribute nothing.
    """
    y_values = _values(y).detach().to(torch.float64)
    s_values = _values(s_l).detach().to(torch.float64)

    if y_values.shape[:-1] != s_values.shape[:-1]:
        raise DimensionError(f"Spatial shapes differ: {tuple(y_values.shape)} vs {tuple(s_values.shape)}")
    return torch.einsum("nhwc,nhwl->cl", y_values, s_values).cpu().numpy()

def ema_update(state: CoOccurrence, y: Union[ProbMap, torch.Tensor], s_l: Union[ProbMap, torch.Tensor]) -> CoOccurrence:
    validate_probmap(s_l)
    statistic = batch_statistic(y, s_l)

    if statistic.shape != state.M.shape:
        raise DimensionError(f"Batch statistic has shape {statistic.shape}, expected {state.M.shape}")
    return update_with_statistic(state, statistic)

def update_with_statistic(state: CoOccurrence, statistic: np.ndarray) -> CoOccurrence:
    new_m = (1 - state.alpha) * state.M + state.alpha * statistic
    return CoOccurrence(new_m, state.alpha, state.update_count + 1)

def default_alpha(batch_size: int, dataset_size: int) -> float:
    if dataset_size <= 0:
        raise ConfigurationError(f"Dataset size must be positive, got {dataset_size}")
    if batch_size <= 0:
        raise ConfigurationError(f"Batch size must be positive, got {batch_size}")

    alpha = batch_size / dataset_size

    if alpha >= 1:
        warnings.warn(f"EMA alpha {alpha} (batch size {batch_size} / {dataset_size} images) is not below 1; clamping to {MAX_ALPHA}")
        alpha = MAX_ALPHA
    return alpha

def project_distribution(state: CoOccurrence) -> LatentProjection:
    if state.update_count == 0:
        raise StateError("projection requested before any statistics")

    row_sums = state.M.sum(axis=1, keepdims=True)
    latent_count = state.M.shape[1]

    uniform = np.full_like(state.M, 1.0 / latent_count)
    with np.errstate(invalid="ignore", divide="ignore"):
        projection = np.where(row_sums > 0, state.M / np.where(row_sums > 0, row_sums, 1.0), uniform)
    return LatentProjection(projection)

def effective_latent_count(P: LatentProjection, t: float) -> int:
    if not (0 < t < 1):
        raise ConfigurationError(f"Threshold must be in (0, 1), got {t}")
    return int((P.matrix > t).any(axis=0).sum())

def dominance_fraction(P: LatentProjection, t: float) -> float:
    if not (0 < t < 1):
        raise ConfigurationError(f"Threshold must be in (0, 1), got {t}")
    return float((P.matrix.max(axis=1) > t).mean())

def write_plc_csv(P: LatentProjection, path: str, class_names: Sequence[str] = None):
    """
    Header row: "class" followed by latent indices. One row per semantic class, in class-index order.
    """
    names = list(class_names) if class_names is not None else [ f"class_{c}" for c in range(P.semantic_count) ]

    if len(names) != P.semantic_count:
        raise DimensionError(f"Expected {P.semantic_count} class names, got {len(names)}")

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class"] + [ str(l) for l in range(P.latent_count) ])

        for name, row in zip(names, P.matrix):
            writer.writerow([name] + [ f"{value:.12g}" for value in row ])

def read_plc_csv(path: str) -> Tuple[List[str], LatentProjection]:
    with open(path, "r", newline="") as f:
        rows = list(csv.reader(f))

    if len(rows) < 2:
        raise DimensionError(f"{path}: no rows")

    names = [ row[0] for row in rows[1:] ]
    matrix = np.array([ [ float(x) for x in row[1:] ] for row in rows[1:] ], dtype=np.float64)
    return names, LatentProjection(matrix)
