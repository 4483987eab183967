import colorsys
import csv
import json
import os
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from src.core import DEFAULT_IGNORE_INDEX
from src.errors import ConfigurationError, GenerationError

# Number of complete regenerations before an unsatisfiable class coverage is reported
MAX_GENERATION_ATTEMPTS = 5

SHAPE_KINDS = ["rectangle", "ellipse", "triangle"]

@dataclass
class SyntheticSpec:
    """
    Desk-scale segmentation benchmark with a known supercategory structure.

    Every semantic class belongs to one appearance group. Groups have well separated base colors;
    classes within a group share that color and differ by a small brightness offset and a stripe texture.
    Class 0 is the background and forms its own group. The grouping is written next to the dataset
    for evaluation only.
    """
    semantic_count: int = 6
    group_count: int = 3
    image_size: int = 64
    shapes_per_image: Tuple[int, int] = (2, 4)
    boundary_ignore: bool = True
    noise: float = 0.04
    texture_amplitude: float = 0.08
    brightness_step: float = 0.12
    min_group_distance: float = 0.35
    min_class_fraction: float = 0.01
    ignore_index: int = DEFAULT_IGNORE_INDEX
    supercategory_map: Optional[List[int]] = None
    class_names: Optional[List[str]] = None

    def __post_init__(self):
        if self.semantic_count < 2:
            raise ConfigurationError(f"At least 2 classes are required, got {self.semantic_count}")
        if not (1 <= self.group_count <= self.semantic_count):
            raise ConfigurationError(f"group_count must be in [1, {self.semantic_count}], got {self.group_count}")
        if self.shapes_per_image[0] < 1 or self.shapes_per_image[0] > self.shapes_per_image[1]:
            raise ConfigurationError(f"Invalid shapes_per_image range {self.shapes_per_image}")

        if self.supercategory_map is None:
            self.supercategory_map = default_supercategory_map(self.semantic_count, self.group_count)
        if len(self.supercategory_map) != self.semantic_count:
            raise ConfigurationError("supercategory_map must assign a group to every semantic class")
        if self.class_names is None:
            self.class_names = [ "background" ] + [ f"g{self.supercategory_map[c]}_c{c}" for c in range(1, self.semantic_count) ]

def default_supercategory_map(semantic_count: int, group_count: int) -> List[int]:
    if group_count == 1:
        return [0] * semantic_count

    result = [0]
    foreground = np.array_split(np.arange(1, semantic_count), group_count - 1)

    for group, members in enumerate(foreground, start=1):
        result.extend([group] * len(members))
    return result

@dataclass
class ClassAppearance:
    color: np.ndarray
    angle: float
    frequency: float

def group_colors(group_count: int) -> np.ndarray:
    colors = []

    for group in range(group_count):
        # Group 0 holds the background and gets a desaturated color
        saturation = 0.15 if group == 0 else 0.85
        hue = group / group_count
        colors.append(colorsys.hsv_to_rgb(hue, saturation, 0.85))
    return np.array(colors, dtype=np.float64)

def class_appearances(spec: SyntheticSpec) -> List[ClassAppearance]:
    colors = group_colors(spec.group_count)

    for a, b in combinations(range(spec.group_count), 2):
        distance = float(np.linalg.norm(colors[a] - colors[b]))

        if distance < spec.min_group_distance:
            raise GenerationError(f"Groups {a} and {b} are not separable (color distance {distance:.3f})")

    members: Dict[int, List[int]] = {}
    for c, group in enumerate(spec.supercategory_map):
        members.setdefault(group, []).append(c)

    result = []
    for c, group in enumerate(spec.supercategory_map):
        index = members[group].index(c)
        size = len(members[group])

        brightness = 1 + spec.brightness_step * (index - (size - 1) / 2)
        color = np.clip(colors[group] * brightness, 0, 1)
        result.append(ClassAppearance(color=color, angle=np.pi * index / max(size, 1), frequency=0.15 + 0.05 * index))
    return result

def _draw_shape(draw: ImageDraw.ImageDraw, rng: np.random.Generator, image_size: int, label: int, outline: Optional[int]):
    kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
    width, height = (rng.uniform(0.2, 0.5, size=2) * image_size).astype(int)
    left = int(rng.integers(0, image_size - width + 1))
    top = int(rng.integers(0, image_size - height + 1))
    box = [left, top, left + width, top + height]

    if kind == "rectangle":
        draw.rectangle(box, fill=label, outline=outline)
    elif kind == "ellipse":
        draw.ellipse(box, fill=label, outline=outline)
    else:
        points = [(left + width // 2, top), (left, top + height), (left + width, top + height)]
        draw.polygon(points, fill=label, outline=outline)

def render_image(labels: np.ndarray, appearances: List[ClassAppearance], rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    size = labels.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.zeros((size, size, 3), dtype=np.float64)

    for c, appearance in enumerate(appearances):
        phase = rng.uniform(0, 2 * np.pi)
        mask = labels == c

        if not mask.any():
            continue

        stripes = np.sin(2 * np.pi * appearance.frequency * (xx * np.cos(appearance.angle) + yy * np.sin(appearance.angle)) + phase)
        texture = appearance.color[None, None, :] + spec.texture_amplitude * stripes[..., None]
        image[mask] = texture[mask]

    # Void pixels take the color of the background class
    void = labels == spec.ignore_index
    image[void] = appearances[0].color

    image += rng.normal(0, spec.noise, size=image.shape)
    return np.clip(image, 0, 1)

def _generate_samples(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    appearances = class_appearances(spec)
    foreground = list(range(1, spec.semantic_count))
    cycle: List[int] = []

    images, labels = [], []
    outline = spec.ignore_index if spec.boundary_ignore else None

    for _ in range(n):
        canvas = Image.new("L", (spec.image_size, spec.image_size), 0)
        draw = ImageDraw.Draw(canvas)

        for _ in range(int(rng.integers(spec.shapes_per_image[0], spec.shapes_per_image[1] + 1))):
            # Cycle through the foreground classes so every class gets drawn equally often
            if len(cycle) == 0:
                cycle = list(rng.permutation(foreground))
            _draw_shape(draw, rng, spec.image_size, int(cycle.pop()), outline)

        label_map = np.array(canvas, dtype=np.uint8)
        labels.append(label_map)
        images.append(render_image(label_map, appearances, rng, spec))
    return images, labels

def class_histogram(labels: List[np.ndarray], semantic_count: int) -> np.ndarray:
    counts = np.zeros(semantic_count, dtype=np.int64)

    for label_map in labels:
        valid = label_map[label_map < semantic_count]
        counts += np.bincount(valid.ravel(), minlength=semantic_count)
    return counts

def generate_synthetic(spec: SyntheticSpec, n: int, seed: int, root: str, stream: int = 0) -> Dict:
    """
    Write n image/label pairs to root/images and root/labels plus manifest.json and supercategories.csv.
    The output is a pure function of (spec, n, seed, stream).
    """
    if n < 1:
        raise ConfigurationError(f"At least one image must be generated, got {n}")

    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = np.random.default_rng([seed, stream, attempt])
        images, labels = _generate_samples(spec, n, rng)

        counts = class_histogram(labels, spec.semantic_count)
        fractions = counts / max(counts.sum(), 1)

        if (fractions >= spec.min_class_fraction).all():
            break
        print(f"Class coverage not reached on attempt {attempt + 1} (min fraction {fractions.min():.4f}), regenerating")
    else:
        raise GenerationError(f"Could not cover every class with at least {spec.min_class_fraction:.2%} of the pixels "
                              f"after {MAX_GENERATION_ATTEMPTS} attempts; generate more images")

    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "labels"), exist_ok=True)

    mean_pixel = np.zeros(3, dtype=np.float64)
    for i, (image, label_map) in enumerate(zip(images, labels)):
        stem = f"{i:05d}"
        encoded = np.round(image * 255).astype(np.uint8)
        mean_pixel += encoded.reshape(-1, 3).mean(axis=0) / 255.0

        Image.fromarray(encoded).save(os.path.join(root, "images", stem + ".png"), format="PNG")
        Image.fromarray(label_map).save(os.path.join(root, "labels", stem + ".png"), format="PNG")

    manifest = {
        "class_names": spec.class_names,
        "class_pixel_counts": [ int(x) for x in counts ],
        "image_count": n,
        "image_size": spec.image_size,
        "ignore_index": spec.ignore_index,
        "mean_pixel": [ round(float(x), 6) for x in mean_pixel / n ],
        "supercategories": list(spec.supercategory_map),
        "seed": seed,
        "stream": stream,
    }
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    write_mapping_csv(os.path.join(root, "supercategories.csv"), spec.class_names, spec.supercategory_map)
    return manifest

def write_mapping_csv(path: str, class_names: List[str], supercategories: List[int]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["semantic_class", "supercategory"])

        for name, group in zip(class_names, supercategories):
            writer.writerow([name, group])
