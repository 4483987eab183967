import sys
import os
import tempfile
import unittest

import numpy as np
import torch

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import RunConfig
from src.cooccurrence import CoOccurrence, update_with_statistic
from src.errors import DimensionError, LoadError, ShapeError
from src.segmentation.backboneFactory import create_backbone
from src.segmentation.checkpoint import load_checkpoint, restore_segnet, save_checkpoint
from src.segmentation.discriminator import Discriminator, set_requires_grad
from src.segmentation.segNet import SegNet, parameter_report, seg_forward
from src.core import ClassSpace, MapKind, one_hot
from src.losses import ce_loss, latent_loss

def _small_net(semantic_count: int = 5, latent_count: int = 3) -> SegNet:
    return SegNet(create_backbone("small", width=8, stages=3), semantic_count, latent_count, dilations=[1, 2])

class TestSegNet(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)

    def test_output_shapes_and_normalization(self):
        net = _small_net()
        semantic, latent = seg_forward(net, torch.rand((2, 16, 24, 3)))

        self.assertEqual(tuple(semantic.values.shape), (2, 16, 24, 5))
        self.assertEqual(tuple(latent.values.shape), (2, 16, 24, 3))
        self.assertEqual(latent.kind, MapKind.LATENT)
        self.assertTrue(torch.allclose(semantic.values.sum(dim=-1), torch.ones((2, 16, 24)), atol=1e-5))
        self.assertTrue(torch.allclose(latent.values.sum(dim=-1), torch.ones((2, 16, 24)), atol=1e-5))

    def test_single_latent_class(self):
        _, latent = _small_net(latent_count=1)(torch.rand((1, 8, 8, 3)))
        self.assertTrue(torch.allclose(latent, torch.ones_like(latent)))

    def test_size_must_match_stride(self):
        net = _small_net()
        self.assertEqual(net.output_stride, 4)

        with self.assertRaises(ShapeError) as context:
            net(torch.rand((1, 10, 16, 3)))
        self.assertEqual(context.exception.required_multiple, 4)

    def test_both_heads_train_the_backbone(self):
        net = _small_net()
        labels = torch.randint(0, 5, (2, 16, 16))
        labels[:, 0] = 255
        semantic, latent = seg_forward(net, torch.rand((2, 16, 16, 3)))
        y = one_hot(labels, ClassSpace(semantic_count=5, latent_count=3))

        backbone = list(net.backbone.parameters())
        heads = list(net.semantic_head.parameters()) + list(net.latent_head.parameters())

        for loss, silent_head in [ (ce_loss(semantic, labels), net.latent_head),
                                   (latent_loss(y, latent), net.semantic_head) ]:
            grads = torch.autograd.grad(loss.value, backbone + heads, retain_graph=True, allow_unused=True)
            backbone_grads = grads[:len(backbone)]

            self.assertTrue(all(g is not None and torch.isfinite(g).all() for g in backbone_grads))
            self.assertGreater(sum(float(g.abs().sum()) for g in backbone_grads), 0)

            # Each loss reaches the backbone through its own head only
            silent = [ g for g, p in zip(grads[len(backbone):], heads)
                       if any(p is q for q in silent_head.parameters()) ]
            self.assertTrue(all(g is None for g in silent))

    def test_black_image(self):
        net = _small_net().eval()

        with torch.no_grad():
            semantic, latent = seg_forward(net, torch.zeros((1, 16, 16, 3)))

        self.assertTrue(torch.isfinite(semantic.values).all())
        self.assertTrue(torch.isfinite(latent.values).all())
        self.assertTrue(torch.allclose(latent.values.sum(dim=-1), torch.ones((1, 16, 16)), atol=1e-5))

    def test_repeatable_in_double_precision(self):
        net = _small_net().double().eval()
        images = torch.rand((2, 16, 16, 3), dtype=torch.float64)

        with torch.no_grad():
            first = net(images)
            second = net(images)

        self.assertTrue(torch.equal(first[0], second[0]))
        self.assertTrue(torch.equal(first[1], second[1]))

    def test_channel_first_input_rejected(self):
        with self.assertRaises(DimensionError):
            _small_net()(torch.rand((1, 3, 16, 16)))

    def test_parameter_report(self):
        net = _small_net()
        report = parameter_report(net)

        self.assertEqual(report["total"], report["backbone"] + report["semantic_head"] + report["latent_head"])

        # Two dilation branches of 3x3 convolutions over 32 backbone channels, two more semantic outputs
        self.assertEqual(report["semantic_head"] - report["latent_head"], 2 * 2 * (32 * 9 + 1))

    def test_unknown_backbone(self):
        with self.assertRaises(ValueError):
            create_backbone("resnet101")

class TestDiscriminator(unittest.TestCase):
    def test_confidence_map(self):
        torch.manual_seed(0)
        disc = Discriminator(num_classes=4, ndf=8)

        out = disc(torch.softmax(torch.randn((2, 32, 48, 4)), dim=-1))

        self.assertEqual(tuple(out.shape), (2, 32, 48))
        self.assertTrue(((out > 0) & (out < 1)).all())

    def test_wrong_channel_count(self):
        with self.assertRaises(DimensionError):
            Discriminator(num_classes=4, ndf=8)(torch.rand((1, 32, 32, 3)))

    def test_input_below_minimum_size(self):
        with self.assertRaises(DimensionError):
            Discriminator(num_classes=4, ndf=8)(torch.softmax(torch.randn((1, 16, 16, 4)), dim=-1))

    def test_frozen_parameters(self):
        disc = Discriminator(num_classes=2, ndf=4)
        set_requires_grad(disc, False)
        self.assertFalse(any(p.requires_grad for p in disc.parameters()))

class TestCheckpoint(unittest.TestCase):
    def test_save_and_restore(self):
        torch.manual_seed(0)
        cfg = RunConfig(backbone_width=8, backbone_stages=3, head_dilations=[1, 2])
        net = _small_net().eval()
        disc = Discriminator(num_classes=5, ndf=4)
        cooccurrence = update_with_statistic(CoOccurrence.create(5, 3, alpha=0.1), np.arange(15.0).reshape(5, 3))

        images = torch.rand((1, 16, 16, 3))

        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "ckpt_7.pt")
            save_checkpoint(path, net, disc, cfg, cooccurrence, 7, [ f"c{i}" for i in range(5) ])

            checkpoint = load_checkpoint(path)
            restored = restore_segnet(checkpoint)

        self.assertEqual(checkpoint.iteration, 7)
        self.assertEqual(checkpoint.latent_count, 3)
        self.assertEqual(checkpoint.config.backbone_stages, 3)
        self.assertEqual(checkpoint.cooccurrence.update_count, 1)
        np.testing.assert_array_equal(checkpoint.cooccurrence.M, cooccurrence.M)
        self.assertIsNone(checkpoint.seg_optimizer_state)

        with torch.no_grad():
            expected, _ = net(images)
            actual, _ = restored(images)
        self.assertTrue(torch.equal(expected, actual))

    def test_unreadable_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "broken.pt")
            with open(path, "w") as f:
                f.write("not a checkpoint")

            with self.assertRaises(LoadError):
                load_checkpoint(path)

            with self.assertRaises(LoadError):
                load_checkpoint(os.path.join(directory, "missing.pt"))

    def test_foreign_payload(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "other.pt")
            torch.save({ "weights": torch.zeros(2) }, path)

            with self.assertRaises(LoadError):
                load_checkpoint(path)

if __name__ == '__main__':
    unittest.main()
