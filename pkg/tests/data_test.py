import sys
import os
import csv
import filecmp
import json
import tempfile
import unittest
import warnings

import numpy as np
import torch
from PIL import Image

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import Batch
from src.data.augment import AugmentOptions, AugmentParams, apply_augment, augment, sample_params
from src.data.dataset import load_dataset
from src.data.split import ManualMapping, load_mapping, split_semi
from src.data.stream import BatchLoader, BatchStream
from src.data.synthetic import SyntheticSpec, default_supercategory_map, generate_synthetic, group_colors
from src.errors import ConfigurationError, GenerationError, LoadError
from tests.toy_data import toy_spec

MAPPINGS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src", "data", "mappings")

class TestSyntheticGenerator(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = self.directory.name

    def tearDown(self):
        self.directory.cleanup()

    def test_same_seed_same_bytes(self):
        first = os.path.join(self.root, "a")
        second = os.path.join(self.root, "b")

        generate_synthetic(toy_spec(), 6, 3, first)
        generate_synthetic(toy_spec(), 6, 3, second)

        for sub in ["images", "labels"]:
            names = sorted(os.listdir(os.path.join(first, sub)))
            self.assertEqual(len(names), 6)

            _, mismatch, errors = filecmp.cmpfiles(os.path.join(first, sub), os.path.join(second, sub), names, shallow=False)
            self.assertListEqual(mismatch + errors, [])

        self.assertTrue(filecmp.cmp(os.path.join(first, "manifest.json"), os.path.join(second, "manifest.json"), shallow=False))

    def test_streams_differ(self):
        generate_synthetic(toy_spec(), 2, 3, os.path.join(self.root, "train"), stream=0)
        generate_synthetic(toy_spec(), 2, 3, os.path.join(self.root, "val"), stream=1)

        self.assertFalse(filecmp.cmp(os.path.join(self.root, "train", "labels", "00000.png"),
                                     os.path.join(self.root, "val", "labels", "00000.png"), shallow=False))

    def test_coverage_and_label_range(self):
        spec = toy_spec()
        manifest = generate_synthetic(spec, 16, 0, self.root)

        counts = np.array(manifest["class_pixel_counts"])
        self.assertTrue((counts / counts.sum() >= spec.min_class_fraction).all())
        self.assertListEqual(manifest["supercategories"], [0, 1, 1, 1, 2, 2])

        for name in os.listdir(os.path.join(self.root, "labels")):
            with Image.open(os.path.join(self.root, "labels", name)) as image:
                self.assertEqual(image.mode, "L")
                values = set(np.unique(np.array(image)).tolist())
            self.assertTrue(values <= set(range(6)) | {255})

        with open(os.path.join(self.root, "manifest.json")) as f:
            self.assertEqual(json.load(f)["image_count"], 16)

    def test_groups_are_color_separable(self):
        spec = toy_spec()
        generate_synthetic(spec, 8, 1, self.root)
        dataset = load_dataset(self.root)

        centroids = group_colors(spec.group_count)
        groups = np.array(spec.supercategory_map)
        correct, total = 0, 0

        for i in range(len(dataset)):
            image, label_map = dataset.read(i)
            valid = label_map != spec.ignore_index

            pixels = image[valid].astype(np.float64) / 255.0
            nearest = np.linalg.norm(pixels[:, None, :] - centroids[None, :, :], axis=-1).argmin(axis=1)

            correct += int((nearest == groups[label_map[valid]]).sum())
            total += int(valid.sum())

        self.assertGreaterEqual(correct / total, 0.95)

    def test_invalid_requests(self):
        with self.assertRaises(ConfigurationError):
            generate_synthetic(toy_spec(), 0, 0, self.root)
        with self.assertRaises(ConfigurationError):
            SyntheticSpec(semantic_count=1, group_count=1)
        with self.assertRaises(ConfigurationError):
            SyntheticSpec(semantic_count=4, group_count=5)

    def test_unsatisfiable_coverage(self):
        with self.assertRaises(GenerationError):
            generate_synthetic(toy_spec(shapes_per_image=(1, 1)), 1, 0, self.root)

    def test_too_many_groups(self):
        with self.assertRaises(GenerationError):
            generate_synthetic(SyntheticSpec(semantic_count=40, group_count=40, image_size=32), 4, 0, self.root)

    def test_default_supercategories(self):
        self.assertListEqual(default_supercategory_map(6, 3), [0, 1, 1, 1, 2, 2])
        self.assertListEqual(default_supercategory_map(4, 1), [0, 0, 0, 0])
        self.assertListEqual(default_supercategory_map(4, 4), [0, 1, 2, 3])

class TestLoadDataset(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = self.directory.name
        generate_synthetic(toy_spec(), 4, 0, self.root)

    def tearDown(self):
        self.directory.cleanup()

    def test_load(self):
        dataset = load_dataset(self.root)
        image, labels = dataset[0]

        self.assertEqual(len(dataset), 4)
        self.assertEqual(dataset.semantic_count, 6)
        self.assertEqual(tuple(image.shape), (32, 32, 3))
        self.assertEqual(image.dtype, torch.float32)
        self.assertEqual(labels.dtype, torch.int64)
        self.assertTrue(0 <= float(image.min()) and float(image.max()) <= 1)

    def test_unlabeled_pool(self):
        for name in os.listdir(os.path.join(self.root, "labels")):
            os.remove(os.path.join(self.root, "labels", name))

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            dataset = load_dataset(self.root)

        self.assertFalse(dataset.has_labels)
        self.assertIsNone(dataset[0][1])
        self.assertEqual(len(caught), 1)

    def test_missing_label_map(self):
        os.remove(os.path.join(self.root, "labels", "00002.png"))

        with self.assertRaises(LoadError):
            load_dataset(self.root)

    def test_label_outside_class_range(self):
        path = os.path.join(self.root, "labels", "00001.png")
        label_map = np.zeros((32, 32), dtype=np.uint8)
        label_map[3, 4] = 9
        Image.fromarray(label_map).save(path)

        with self.assertRaises(LoadError) as context:
            load_dataset(self.root)
        self.assertEqual(context.exception.path, path)

    def test_unknown_class_count(self):
        os.remove(os.path.join(self.root, "manifest.json"))

        with self.assertRaises(LoadError):
            load_dataset(self.root)
        self.assertEqual(load_dataset(self.root, semantic_count=6).class_names[0], "class_0")

    def test_empty_directory(self):
        with tempfile.TemporaryDirectory() as empty:
            with self.assertRaises(LoadError):
                load_dataset(empty)

class TestSplit(unittest.TestCase):
    def test_counts(self):
        split = split_semi(800, 1 / 8, seed=0)

        self.assertEqual(len(split.labeled_ids), 100)
        self.assertEqual(len(split.unlabeled_ids), 700)
        self.assertEqual(split.total, 800)
        self.assertTrue(set(split.labeled_ids).isdisjoint(split.unlabeled_ids))

    def test_fully_labeled(self):
        split = split_semi(10, 1.0, seed=4)
        self.assertEqual(len(split.unlabeled_ids), 0)

    def test_deterministic(self):
        self.assertEqual(split_semi(50, 0.3, seed=7), split_semi(50, 0.3, seed=7))
        self.assertNotEqual(split_semi(50, 0.3, seed=7).labeled_ids, split_semi(50, 0.3, seed=8).labeled_ids)

    def test_invalid_fraction(self):
        with self.assertRaises(ConfigurationError):
            split_semi(10, 0.0, seed=0)
        with self.assertRaises(ConfigurationError):
            split_semi(10, 0.01, seed=0)

class TestMapping(unittest.TestCase):
    def test_voc_supercategories(self):
        path = os.path.join(MAPPINGS_DIR, "voc_supercategories.csv")

        with open(path, newline="") as f:
            names = [ row["semantic_class"] for row in csv.DictReader(f) ]
        mapping = load_mapping(path, names)

        self.assertEqual(mapping.semantic_count, 21)
        self.assertEqual(mapping.group_count, 10)

    def test_map_labels(self):
        mapping = ManualMapping.from_groups([5, 5, 2, 9])
        labels = torch.tensor([[0, 2, 255], [3, 1, 2]])

        self.assertListEqual(list(mapping.groups), [0, 0, 1, 2])
        self.assertListEqual(mapping.map_labels(labels, 255).tolist(), [[0, 1, 255], [2, 0, 1]])

    def test_invalid_files(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "mapping.csv")
            names = ["background", "cat", "dog"]

            for content in ["class,group\nbackground,0\n",
                            "semantic_class,supercategory\nbackground,a\ncat,b\n",
                            "semantic_class,supercategory\nbackground,a\ncat,b\ncat,b\ndog,b\n",
                            "semantic_class,supercategory\nbackground,a\ncat,b\nhorse,b\ndog,b\n"]:
                with self.subTest(content=content):
                    with open(path, "w") as f:
                        f.write(content)
                    with self.assertRaises(LoadError):
                        load_mapping(path, names)

            with open(path, "w") as f:
                f.write("semantic_class,supercategory\n0,a\nCAT,b\n2,b\n")
            self.assertListEqual(list(load_mapping(path, names).groups), [0, 1, 1])

class TestAugment(unittest.TestCase):
    def setUp(self):
        generator = torch.Generator().manual_seed(0)
        self.image = torch.rand((16, 16, 3), generator=generator)
        self.labels = torch.randint(0, 4, (16, 16), generator=generator)
        self.options = AugmentOptions(crop_size=16, ignore_index=255, mean_pixel=(0.1, 0.2, 0.3))

    def test_identity(self):
        image, labels = apply_augment(self.image, self.labels, AugmentParams(), self.options)

        self.assertTrue(torch.equal(image, self.image))
        self.assertTrue(torch.equal(labels, self.labels))

    def test_flip_is_an_involution(self):
        params = AugmentParams(flip=True)
        once = apply_augment(self.image, self.labels, params, self.options)
        twice = apply_augment(*once, params, self.options)

        self.assertTrue(torch.equal(once[1][:, 0], self.labels[:, -1]))
        self.assertTrue(torch.equal(twice[0], self.image))
        self.assertTrue(torch.equal(twice[1], self.labels))

    def test_scaled_labels_stay_valid(self):
        for scale in [0.5, 0.77, 1.3, 1.5]:
            _, labels = apply_augment(self.image, self.labels, AugmentParams(scale=scale, crop_y=0.2, crop_x=0.9),
                                      self.options)
            values = set(labels.unique().tolist())

            self.assertTrue(values <= set(self.labels.unique().tolist()) | {255})
            self.assertEqual(tuple(labels.shape), (16, 16))

    def test_padding(self):
        image, labels = apply_augment(self.image, self.labels, AugmentParams(scale=0.5, crop_y=0, crop_x=0), self.options)

        self.assertTrue((labels[8:, :] == 255).all())
        self.assertTrue((labels[:, 8:] == 255).all())
        self.assertTrue(torch.allclose(image[12, 12], torch.tensor([0.1, 0.2, 0.3])))
        self.assertTrue((labels[:8, :8] != 255).all())

    def test_sampled_parameters(self):
        rng = np.random.default_rng(0)

        for _ in range(100):
            params = sample_params(rng, AugmentOptions(flip=False))
            self.assertTrue(0.5 <= params.scale <= 1.5)
            self.assertFalse(params.flip)

    def test_batch_geometry_is_shared(self):
        # Image channel 0 encodes the label so both must follow the same transform
        labels = torch.randint(0, 4, (3, 16, 16), generator=torch.Generator().manual_seed(1))
        images = (labels.double() / 4).unsqueeze(-1).repeat(1, 1, 1, 3)
        options = AugmentOptions(crop_size=20, scale_range=(1.0, 1.0), ignore_index=255, mean_pixel=(0.9, 0.9, 0.9))

        batch = augment(Batch(images, labels=labels, ids=[4, 5, 6]), np.random.default_rng(3), options)
        again = augment(Batch(images, labels=labels, ids=[4, 5, 6]), np.random.default_rng(3), options)

        self.assertEqual(tuple(batch.images.shape), (3, 20, 20, 3))
        self.assertEqual(int((batch.labels == 255).sum()), 3 * (20 * 20 - 16 * 16))
        self.assertListEqual(batch.ids, [4, 5, 6])
        self.assertTrue(torch.equal(batch.labels, again.labels))

        valid = batch.labels != 255
        self.assertTrue(torch.equal((batch.images[..., 0][valid] * 4).round().long(), batch.labels[valid]))
        self.assertTrue(torch.allclose(batch.images[..., 0][~valid], torch.tensor(0.9, dtype=torch.float64)))

    def test_unlabeled_batch(self):
        batch = augment(Batch(self.image.unsqueeze(0), labeled=False), np.random.default_rng(0), self.options)

        self.assertIsNone(batch.labels)
        self.assertFalse(batch.labeled)

class TestBatchStream(unittest.TestCase):
    def test_epochs_cover_every_id(self):
        stream = BatchStream([3, 5, 7, 9, 11], batch_size=2, seed=0, role="labeled")
        ids = [ i for _, batch in zip(range(5), stream) for i in batch ]

        # First two epochs back to back
        self.assertListEqual(sorted(ids[:5]), [3, 5, 7, 9, 11])
        self.assertListEqual(sorted(ids[5:10]), [3, 5, 7, 9, 11])

    def test_restart_at_batch_index(self):
        stream = BatchStream(list(range(10)), batch_size=3, seed=2, role="unlabeled")

        full = [ ids for _, (_, ids) in zip(range(12), stream.batches()) ]
        resumed = [ ids for _, (_, ids) in zip(range(7), stream.batches(start=5)) ]
        self.assertListEqual(full[5:], resumed)

    def test_roles_are_independent(self):
        labeled = BatchStream(list(range(20)), 4, 0, "labeled").epoch_order(0)
        unlabeled = BatchStream(list(range(20)), 4, 0, "unlabeled").epoch_order(0)
        self.assertNotEqual(labeled, unlabeled)

    def test_empty_ids(self):
        with self.assertRaises(ValueError):
            BatchStream([], 2, 0, "labeled")

    def test_loader_is_reproducible(self):
        with tempfile.TemporaryDirectory() as root:
            generate_synthetic(toy_spec(), 4, 0, root)
            dataset = load_dataset(root)
            options = AugmentOptions(crop_size=24)

            def batches(start):
                stream = BatchStream([0, 1, 2, 3], 2, 5, "labeled")
                return BatchLoader(dataset, stream, options, labeled=True).batches(start)

            first = [ batch for _, batch in zip(range(3), batches(0)) ]
            resumed = next(batches(2))

            self.assertEqual(tuple(first[0].images.shape), (2, 24, 24, 3))
            self.assertListEqual(first[2].ids, resumed.ids)
            self.assertTrue(torch.equal(first[2].images, resumed.images))
            self.assertTrue(torch.equal(first[2].labels, resumed.labels))

            unlabeled = BatchLoader(dataset, BatchStream([0, 1], 2, 5, "unlabeled"), options, labeled=False)
            self.assertIsNone(next(unlabeled.batches()).labels)

if __name__ == '__main__':
    unittest.main()
