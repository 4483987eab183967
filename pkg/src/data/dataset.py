import json
import os
import warnings
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from PIL import Image

from src.core import DEFAULT_IGNORE_INDEX
from src.errors import LoadError

IMAGE_DIR = "images"
LABEL_DIR = "labels"
MANIFEST_FILE = "manifest.json"

def _list_png(directory: str) -> Dict[str, str]:
    if not os.path.isdir(directory):
        return {}
    return { os.path.splitext(name)[0]: os.path.join(directory, name) for name in sorted(os.listdir(directory))
             if name.lower().endswith(".png") }

def read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8)
    except OSError as e:
        raise LoadError(path, f"unreadable image ({e})")

def read_label_map(path: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if image.mode not in ("L", "P"):
                raise LoadError(path, f"label maps must be single channel, got mode {image.mode}")
            return np.array(image, dtype=np.uint8)
    except LoadError:
        raise
    except OSError as e:
        raise LoadError(path, f"unreadable label map ({e})")

def check_label_range(label_map: np.ndarray, semantic_count: int, ignore_index: int, path: str):
    values = np.unique(label_map)
    invalid = values[(values >= semantic_count) & (values != ignore_index)]

    if len(invalid) > 0:
        raise LoadError(path, f"label value {int(invalid[0])} outside [0, {semantic_count}) and not the ignore index {ignore_index}")

class SegmentationDataset:
    """
    Image/label pairs read from root/images and root/labels (matched by filename stem).
    An empty labels directory makes the dataset an unlabeled pool.
    """
    def __init__(self, root: str, image_paths: List[str], label_paths: Optional[List[str]], class_names: List[str],
                 ignore_index: int = DEFAULT_IGNORE_INDEX, mean_pixel: Optional[List[float]] = None,
                 supercategories: Optional[List[int]] = None, cache: bool = True):
        self.root = root
        self.image_paths = image_paths
        self.label_paths = label_paths
        self.class_names = class_names
        self.ignore_index = ignore_index
        self.supercategories = supercategories
        self.cache = cache

        self._cache: Dict[int, Tuple[np.ndarray, Optional[np.ndarray]]] = {}
        self.mean_pixel = mean_pixel if mean_pixel is not None else self._compute_mean_pixel()

    @property
    def semantic_count(self) -> int:
        return len(self.class_names)

    @property
    def has_labels(self) -> bool:
        return self.label_paths is not None

    def __len__(self):
        return len(self.image_paths)

    def _compute_mean_pixel(self) -> List[float]:
        total = np.zeros(3, dtype=np.float64)

        for i in range(len(self)):
            image, _ = self.read(i)
            total += image.reshape(-1, 3).mean(axis=0) / 255.0
        return [ float(x) for x in total / max(len(self), 1) ]

    def read(self, index: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """
        Raw uint8 image (H, W, 3) and label map (H, W), or None for the label of an unlabeled pool.
        """
        if index in self._cache:
            return self._cache[index]

        image = read_image(self.image_paths[index])
        label_map = read_label_map(self.label_paths[index]) if self.has_labels else None

        if label_map is not None and label_map.shape != image.shape[:2]:
            raise LoadError(self.label_paths[index], f"label size {label_map.shape} differs from image size {image.shape[:2]}")

        if self.cache:
            self._cache[index] = (image, label_map)
        return image, label_map

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        image, label_map = self.read(index)

        image_tensor = torch.from_numpy(image.astype(np.float32) / 255.0)
        label_tensor = torch.from_numpy(label_map.astype(np.int64)) if label_map is not None else None
        return image_tensor, label_tensor

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

def read_manifest(root: str) -> Optional[dict]:
    path = os.path.join(root, MANIFEST_FILE)

    if not os.path.isfile(path):
        return None
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise LoadError(path, f"unreadable manifest ({e})")

def load_dataset(root: str, semantic_count: int = None, ignore_index: int = None, validate: bool = True) -> SegmentationDataset:
    images = _list_png(os.path.join(root, IMAGE_DIR))

    if len(images) == 0:
        raise LoadError(os.path.join(root, IMAGE_DIR), "no PNG images found")

    manifest = read_manifest(root) or {}

    if ignore_index is None:
        ignore_index = manifest.get("ignore_index", DEFAULT_IGNORE_INDEX)

    class_names = manifest.get("class_names")
    if semantic_count is None:
        if class_names is None:
            raise LoadError(root, f"the number of classes is unknown (no {MANIFEST_FILE} and none given)")
        semantic_count = len(class_names)
    if class_names is None or len(class_names) != semantic_count:
        class_names = [ f"class_{c}" for c in range(semantic_count) ]

    labels = _list_png(os.path.join(root, LABEL_DIR))
    stems = list(images.keys())

    if len(labels) == 0:
        warnings.warn(f"{root} has no label maps, treating it as an unlabeled pool")
        label_paths = None
    else:
        for stem in stems:
            if stem not in labels:
                raise LoadError(images[stem], "no matching label map")
        for stem in labels:
            if stem not in images:
                raise LoadError(labels[stem], "no matching image")
        label_paths = [ labels[stem] for stem in stems ]

    dataset = SegmentationDataset(root, [ images[stem] for stem in stems ], label_paths, class_names,
                                  ignore_index=ignore_index, mean_pixel=manifest.get("mean_pixel"),
                                  supercategories=manifest.get("supercategories"))

    if validate and dataset.has_labels:
        for i, path in enumerate(dataset.label_paths):
            _, label_map = dataset.read(i)
            check_label_range(label_map, semantic_count, ignore_index, path)

    print(f"Loaded {len(dataset)} images from {root} ({semantic_count} classes, "
          f"{'labeled' if dataset.has_labels else 'unlabeled'})")
    return dataset
