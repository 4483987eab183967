import csv
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch

from src.errors import ConfigurationError, LoadError

# Stream tag of the split generator, separate from data order and augmentation
SPLIT_STREAM = 17

@dataclass(frozen=True)
class SemiSplit:
    labeled_fraction: float
    labeled_ids: Tuple[int, ...]
    unlabeled_ids: Tuple[int, ...]

    @property
    def total(self) -> int:
        return len(self.labeled_ids) + len(self.unlabeled_ids)

def split_semi(dataset, fraction: float, seed: int) -> SemiSplit:
    """
    Draw round(fraction * total) labeled images; the rest form the unlabeled pool.
    dataset may be a sized collection or the number of images.
    """
    total = dataset if isinstance(dataset, int) else len(dataset)

    if not (0 < fraction <= 1):
        raise ConfigurationError(f"labeled fraction must be in (0, 1], got {fraction}")

    labeled_count = int(np.floor(fraction * total + 0.5))
    if labeled_count == 0:
        raise ConfigurationError(f"labeled fraction {fraction} of {total} images leaves no labeled image")

    order = np.random.default_rng([seed, SPLIT_STREAM]).permutation(total)

    labeled = tuple(sorted(int(i) for i in order[:labeled_count]))
    unlabeled = tuple(sorted(int(i) for i in order[labeled_count:]))
    return SemiSplit(fraction, labeled, unlabeled)

@dataclass(frozen=True)
class ManualMapping:
    """
    Total function from semantic class index to supercategory id.
    """
    groups: Tuple[int, ...]
    group_names: Tuple[str, ...] = ()

    @property
    def semantic_count(self) -> int:
        return len(self.groups)

    @property
    def group_count(self) -> int:
        return max(self.groups) + 1

    def lookup_table(self, ignore_index: int) -> torch.Tensor:
        size = max(ignore_index, self.semantic_count) + 1
        table = torch.full((size,), ignore_index, dtype=torch.long)
        table[:self.semantic_count] = torch.tensor(self.groups, dtype=torch.long)
        return table

    def map_labels(self, labels: torch.Tensor, ignore_index: int) -> torch.Tensor:
        """
        Replace every semantic label by its supercategory id; ignored pixels stay ignored.
        """
        return self.lookup_table(ignore_index).to(labels.device)[labels.long()]

    @staticmethod
    def from_groups(groups: Sequence[int]) -> "ManualMapping":
        # Renumber to 0..G-1 in order of first appearance
        renumber = {}
        for g in groups:
            renumber.setdefault(g, len(renumber))
        return ManualMapping(tuple(renumber[g] for g in groups), tuple(str(g) for g in renumber))

def _resolve_class(value: str, class_names: Sequence[str]) -> int:
    value = value.strip()
    if value.isdigit():
        return int(value)

    lowered = [ name.lower() for name in class_names ]
    if value.lower() in lowered:
        return lowered.index(value.lower())
    return -1

def load_mapping(path: str, class_names: Sequence[str]) -> ManualMapping:
    """
    Read a CSV with columns semantic_class,supercategory. Classes are given by name or index,
    supercategory ids are assigned in order of first appearance.
    """
    try:
        with open(path, "r", newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise LoadError(path, f"unreadable mapping ({e})")

    if len(rows) == 0 or "semantic_class" not in rows[0] or "supercategory" not in rows[0]:
        raise LoadError(path, "expected columns semantic_class,supercategory")

    assigned: List[Union[str, None]] = [None] * len(class_names)
    group_ids = {}

    for row in rows:
        c = _resolve_class(row["semantic_class"], class_names)

        if not (0 <= c < len(class_names)):
            raise LoadError(path, f"unknown semantic class {row['semantic_class']!r}")
        if assigned[c] is not None:
            raise LoadError(path, f"class {class_names[c]} is assigned twice")

        group = row["supercategory"].strip()
        group_ids.setdefault(group, len(group_ids))
        assigned[c] = group

    missing = [ class_names[c] for c, group in enumerate(assigned) if group is None ]
    if missing:
        raise LoadError(path, f"no supercategory for {', '.join(missing)}")

    return ManualMapping(tuple(group_ids[g] for g in assigned), tuple(group_ids.keys()))
