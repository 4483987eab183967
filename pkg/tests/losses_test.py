import sys
import os
import math
import unittest
import warnings

import numpy as np
import torch
from hypothesis import given, settings, strategies as st

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import RunConfig
from src.cooccurrence import LatentProjection
from src.core import ClassSpace, one_hot
from src.errors import DimensionError
from src.losses import (LossValue, adv_gen_loss, batch_joint, composite_labeled, composite_unlabeled, consistency_loss,
                        ce_loss, disc_loss, entropy, latent_loss, semantic_to_latent, total_objective)

def _map(rows) -> torch.Tensor:
    """A list of per-pixel distributions as a (1, 1, W, K) double map."""
    return torch.tensor([[rows]], dtype=torch.float64)

class TestCrossEntropy(unittest.TestCase):
    def test_confident_prediction(self):
        pred = _map([[1 - 1e-9, 1e-9], [1e-9, 1 - 1e-9]])
        self.assertLess(ce_loss(pred, torch.tensor([[[0, 1]]])).item(), 1e-6)

    def test_uniform_prediction(self):
        pred = _map([[0.25] * 4] * 3)
        self.assertAlmostEqual(ce_loss(pred, torch.tensor([[[0, 2, 3]]])).item(), math.log(4), places=10)

    def test_single_pixel(self):
        loss = ce_loss(_map([[0.7, 0.3]]), torch.tensor([[[0]]]))
        self.assertAlmostEqual(loss.item(), 0.35667494, places=6)
        self.assertEqual(set(loss.components), {"ce"})

    def test_ignored_pixels_do_not_count(self):
        pred = _map([[0.7, 0.3], [0.01, 0.99]])
        loss = ce_loss(pred, torch.tensor([[[0, 255]]]))
        self.assertAlmostEqual(loss.item(), -math.log(0.7), places=10)

    def test_all_ignored(self):
        pred = _map([[0.5, 0.5]]).requires_grad_()

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            loss = ce_loss(pred, torch.tensor([[[255]]]))

        self.assertEqual(loss.item(), 0.0)
        self.assertEqual(loss.components["ce_all_ignored"], 1.0)
        self.assertEqual(len(caught), 1)

        loss.value.backward()
        self.assertEqual(float(pred.grad.abs().sum()), 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            ce_loss(_map([[0.5, 0.5]]), torch.tensor([[[0, 1]]]))

class TestAdversarial(unittest.TestCase):
    def test_values(self):
        self.assertAlmostEqual(adv_gen_loss(torch.full((1, 2, 2), 0.5)).item(), math.log(2), places=6)
        self.assertAlmostEqual(adv_gen_loss(torch.full((1, 1, 1), 1e-8, dtype=torch.float64)).item(), 18.420681, places=5)
        self.assertLess(adv_gen_loss(torch.full((1, 1, 1), 1 - 1e-9, dtype=torch.float64)).item(), 1e-8)

    def test_zero_output_is_finite(self):
        self.assertTrue(adv_gen_loss(torch.zeros((1, 2, 2))).is_finite())

    def test_disc_loss_at_chance(self):
        loss = disc_loss(torch.full((2, 3, 3), 0.5), torch.full((2, 3, 3), 0.5))

        self.assertAlmostEqual(loss.item(), 2 * math.log(2), places=6)
        self.assertAlmostEqual(loss.components["disc_fake"], math.log(2), places=6)
        self.assertAlmostEqual(loss.components["disc_real"], math.log(2), places=6)

class TestLatentLoss(unittest.TestCase):
    def setUp(self):
        self.space = ClassSpace(semantic_count=2, latent_count=2)

    def test_batch_joint(self):
        y = one_hot(torch.tensor([[[0, 1]]]), self.space, dtype=torch.float64)
        s_l = _map([[0.8, 0.2], [0.4, 0.6]])

        joint = batch_joint(y, s_l)
        np.testing.assert_allclose(joint.numpy(), [[0.4, 0.1], [0.2, 0.3]])

    def test_bijective_assignment(self):
        y = one_hot(torch.tensor([[[0, 1, 1, 0]]]), self.space, dtype=torch.float64)
        s_l = _map([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

        self.assertAlmostEqual(latent_loss(y, s_l).item(), 0.0, places=7)

    def test_uninformative_latents(self):
        y = one_hot(torch.tensor([[[0, 1, 0, 1]]]), self.space, dtype=torch.float64)
        s_l = _map([[0.5, 0.5]] * 4)

        self.assertAlmostEqual(latent_loss(y, s_l).item(), math.log(2), places=7)

    def test_soft_assignment(self):
        y = one_hot(torch.tensor([[[0, 1]]]), self.space, dtype=torch.float64)
        s_l = _map([[0.8, 0.2], [0.4, 0.6]])

        loss = latent_loss(y, s_l)
        self.assertAlmostEqual(loss.item(), 0.606842, delta=1e-6)
        self.assertEqual(set(loss.components), {"latent"})

    def test_ignored_pixels_do_not_count(self):
        y = one_hot(torch.tensor([[[0, 1, 255]]]), self.space, dtype=torch.float64)
        s_l = _map([[0.8, 0.2], [0.4, 0.6], [0.0, 1.0]])

        self.assertAlmostEqual(latent_loss(y, s_l).item(), 0.606842, delta=1e-6)

    def test_unused_latent_column_is_finite(self):
        y = one_hot(torch.tensor([[[0, 1]]]), self.space, dtype=torch.float64)
        s_l = _map([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).requires_grad_()

        loss = latent_loss(y, s_l)
        loss.value.backward()

        self.assertTrue(loss.is_finite())
        self.assertTrue(torch.isfinite(s_l.grad).all())

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.integers(1, 4))
    def test_bounded_and_latent_order_free(self, seed, semantic_count, latent_count):
        generator = torch.Generator().manual_seed(seed)
        space = ClassSpace(semantic_count=semantic_count, latent_count=latent_count, allow_latent_overflow=True)

        labels = torch.randint(0, semantic_count, (2, 3, 4), generator=generator)
        labels[0, 0, :2] = 255
        y = one_hot(labels, space, dtype=torch.float64)
        s_l = torch.softmax(3 * torch.randn((2, 3, 4, latent_count), generator=generator, dtype=torch.float64), dim=-1)

        value = latent_loss(y, s_l).item()
        self.assertGreaterEqual(value, -1e-12)
        self.assertLessEqual(value, math.log(semantic_count) + 1e-9)

        perm = torch.randperm(latent_count, generator=generator)
        self.assertAlmostEqual(latent_loss(y, s_l[..., perm]).item(), value, places=10)

class TestConsistency(unittest.TestCase):
    def test_identity_projection(self):
        s_c = torch.softmax(torch.randn((2, 3, 3, 4), dtype=torch.float64), dim=-1)
        s_lc = semantic_to_latent(s_c, LatentProjection.identity(4))
        self.assertLessEqual(float((s_lc - s_c).abs().max()), 1e-12)

    def test_projection_stays_normalized(self):
        rng = np.random.default_rng(5)

        for _ in range(1000):
            P = LatentProjection(rng.dirichlet(np.ones(3), size=5))
            s_c = torch.as_tensor(rng.dirichlet(np.ones(5), size=(1, 2, 2)))

            sums = semantic_to_latent(s_c, P).sum(dim=-1)
            self.assertLessEqual(float((sums - 1).abs().max()), 1e-9)

    def test_projection_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            semantic_to_latent(_map([[0.5, 0.5]]), LatentProjection.identity(3))

    def test_cross_entropy_variant(self):
        s_l = _map([[0.5, 0.5]])
        s_lc = _map([[0.25, 0.75]])

        expected = -(0.5 * math.log(0.25) + 0.5 * math.log(0.75))
        self.assertAlmostEqual(consistency_loss(s_l, s_lc).item(), expected, places=10)

    def test_cross_entropy_variant_does_not_train_latent_branch(self):
        s_l = _map([[0.3, 0.7], [0.6, 0.4]]).requires_grad_()
        s_lc = _map([[0.5, 0.5], [0.2, 0.8]]).requires_grad_()

        consistency_loss(s_l, s_lc, "cross_entropy").value.backward()

        self.assertIsNone(s_l.grad)
        self.assertIsNotNone(s_lc.grad)

    def test_symmetric_kl(self):
        s = _map([[0.3, 0.7]])
        self.assertAlmostEqual(consistency_loss(s, s.clone(), "symmetric_kl").item(), 0.0, places=12)

        p, q = _map([[0.5, 0.5]]), _map([[0.25, 0.75]])
        expected = (0.5 * math.log(2) + 0.5 * math.log(0.5 / 0.75)) + (0.25 * math.log(0.5) + 0.75 * math.log(1.5))
        self.assertAlmostEqual(consistency_loss(p, q, "symmetric_kl").item(), expected, places=10)

        # Symmetric in its arguments and trains both branches
        p.requires_grad_()
        loss = consistency_loss(p, q, "symmetric_kl")
        loss.value.backward()
        self.assertAlmostEqual(loss.item(), consistency_loss(q, p.detach(), "symmetric_kl").item(), places=12)
        self.assertIsNotNone(p.grad)

    def test_cross_entropy_bounded_by_entropy(self):
        s_l = torch.softmax(torch.randn((1, 4, 4, 3), dtype=torch.float64), dim=-1)
        s_lc = torch.softmax(torch.randn((1, 4, 4, 3), dtype=torch.float64), dim=-1)

        self.assertGreaterEqual(consistency_loss(s_l, s_lc).item() + 1e-12, float(entropy(s_l)))
        self.assertAlmostEqual(consistency_loss(s_l, s_l).item(), float(entropy(s_l)), places=10)

class TestComposite(unittest.TestCase):
    def test_weights_and_components(self):
        cfg = RunConfig(lambda_adv=0.5, lambda_unlabeled=0.1)
        scalar = lambda x: LossValue(torch.tensor(x, dtype=torch.float64))

        labeled = composite_labeled(scalar(1.0), scalar(2.0), scalar(4.0), cfg)
        unlabeled = composite_unlabeled(scalar(3.0), scalar(2.0), cfg)
        total = total_objective(labeled, unlabeled, cfg)

        self.assertAlmostEqual(labeled.item(), 5.0)
        self.assertAlmostEqual(unlabeled.item(), 4.0)
        self.assertAlmostEqual(total.item(), 5.4)
        self.assertEqual(set(total.components),
                         {"l_ce", "l_latent", "l_adv_lab", "l_labeled", "l_cons", "l_adv_unl", "l_unlabeled", "total"})

    def test_zero(self):
        reference = torch.ones(1, dtype=torch.float64)
        zero = LossValue.zero("adv", reference)

        self.assertEqual(zero.value.dtype, torch.float64)
        self.assertDictEqual(zero.components, {"adv": 0.0})

if __name__ == '__main__':
    unittest.main()
