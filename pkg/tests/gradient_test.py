import sys
import os
import unittest

import torch
from torch.autograd import gradcheck

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import ClassSpace, one_hot
from src.losses import adv_gen_loss, ce_loss, consistency_loss, disc_loss, latent_loss

TRIALS = 20

def _check(function, inputs) -> bool:
    return gradcheck(function, inputs, eps=1e-6, atol=1e-6, rtol=1e-4)

class TestAnalyticGradients(unittest.TestCase):
    """
    Every loss is checked against finite differences in double precision.
    Inputs are logits so the probability maps stay normalized and away from the log clamp.
    """
    def setUp(self):
        self.generator = torch.Generator().manual_seed(11)

    def _logits(self, *shape) -> torch.Tensor:
        return torch.randn(shape, generator=self.generator, dtype=torch.float64).requires_grad_()

    def _labels(self, classes: int, *shape) -> torch.Tensor:
        labels = torch.randint(0, classes, shape, generator=self.generator)
        labels[..., 0] = 255
        return labels

    def test_cross_entropy(self):
        for _ in range(TRIALS):
            labels = self._labels(4, 1, 3, 3)
            self.assertTrue(_check(lambda z: ce_loss(torch.softmax(z, -1), labels).value,
                                   (self._logits(1, 3, 3, 4),)))

    def test_latent(self):
        space = ClassSpace(semantic_count=4, latent_count=3)

        for _ in range(TRIALS):
            y = one_hot(self._labels(4, 1, 3, 3), space, dtype=torch.float64)
            self.assertTrue(_check(lambda z: latent_loss(y, torch.softmax(z, -1)).value,
                                   (self._logits(1, 3, 3, 3),)))

    def test_cross_entropy_consistency(self):
        # The latent map is a fixed target here, only the projected map is differentiated
        for _ in range(TRIALS):
            target = torch.softmax(self._logits(1, 2, 2, 3).detach(), -1)
            function = lambda b: consistency_loss(target, torch.softmax(b, -1), "cross_entropy").value
            self.assertTrue(_check(function, (self._logits(1, 2, 2, 3),)))

    def test_symmetric_kl_consistency(self):
        for _ in range(TRIALS):
            function = lambda a, b: consistency_loss(torch.softmax(a, -1), torch.softmax(b, -1), "symmetric_kl").value
            self.assertTrue(_check(function, (self._logits(1, 2, 2, 3), self._logits(1, 2, 2, 3))))

    def test_adversarial(self):
        for _ in range(TRIALS):
            self.assertTrue(_check(lambda z: adv_gen_loss(torch.sigmoid(z)).value, (self._logits(1, 3, 3),)))
            self.assertTrue(_check(lambda a, b: disc_loss(torch.sigmoid(a), torch.sigmoid(b)).value,
                                   (self._logits(1, 2, 2), self._logits(1, 2, 2))))

if __name__ == '__main__':
    unittest.main()
