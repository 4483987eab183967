import warnings
from dataclasses import dataclass, field
from typing import Dict, Union

import torch

from src.config import ConsistencyVariant, Reduction, RunConfig
from src.cooccurrence import LatentProjection
from src.core import DEFAULT_IGNORE_INDEX, ProbMap, _values
from src.errors import DimensionError

# Lower clamp for every log argument
EPS = 1e-8

@dataclass
class LossValue:
    """
    A scalar loss that stays attached to the autograd graph, plus named float components for logging.
    """
    value: torch.Tensor
    components: Dict[str, float] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value.detach())

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.value.detach()).all())

    @staticmethod
    def zero(name: str = None, reference: torch.Tensor = None) -> "LossValue":
        value = torch.zeros((), dtype=reference.dtype, device=reference.device) if reference is not None else torch.zeros(())
        return LossValue(value, { name: 0.0 } if name else {})

def _reduce(per_pixel: torch.Tensor, count, reduction: Union[Reduction, str]) -> torch.Tensor:
    total = per_pixel.sum()

    if Reduction.from_string(reduction) == Reduction.MEAN:
        return total / count
    return total

def _safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp(min=EPS))

def ce_loss(pred: Union[ProbMap, torch.Tensor], target: torch.Tensor, ignore_index: int = DEFAULT_IGNORE_INDEX,
            reduction: Union[Reduction, str] = Reduction.MEAN) -> LossValue:
    """
    Pixel-wise cross-entropy of a probability map (N, H, W, K) against integer labels (N, H, W).
    """
    pred = _values(pred)

    if pred.shape[:-1] != target.shape:
        raise DimensionError(f"Prediction {tuple(pred.shape)} does not match target {tuple(target.shape)}")

    valid = target != ignore_index
    count = int(valid.sum())

    if count == 0:
        warnings.warn("Cross-entropy requested on a batch where every pixel is ignored")
        return LossValue(pred.sum() * 0, { "ce": 0.0, "ce_all_ignored": 1.0 })

    safe_target = torch.where(valid, target, torch.zeros_like(target)).long()
    log_true = _safe_log(pred).gather(-1, safe_target.unsqueeze(-1)).squeeze(-1)

    value = _reduce(-log_true * valid.to(pred.dtype), count, reduction)
    return LossValue(value, { "ce": float(value.detach()) })

def adv_gen_loss(disc_out: torch.Tensor, reduction: Union[Reduction, str] = Reduction.MEAN) -> LossValue:
    """
    Adversarial loss of the segmentation network: -log D(S_c) over all pixels of the discriminator
    confidence map (N, H, W). The discriminator parameters must be frozen by the caller.
    """
    value = _reduce(-_safe_log(disc_out), disc_out.numel(), reduction)
    return LossValue(value, { "adv": float(value.detach()) })

def batch_joint(y: Union[ProbMap, torch.Tensor], s_l: Union[ProbMap, torch.Tensor]) -> torch.Tensor:
    """
    Batch estimate of the joint P_b(c, l), shape (|C|, |L|), normalized by the number of non-ignored pixels.
    """
    y = _values(y)
    s_l = _values(s_l)

    if y.shape[:-1] != s_l.shape[:-1]:
        raise DimensionError(f"Spatial shapes differ: {tuple(y.shape)} vs {tuple(s_l.shape)}")

    count = y.sum()
    joint = torch.einsum("nhwc,nhwl->cl", y.to(s_l.dtype), s_l)

    if float(count) == 0:
        return joint * 0
    return joint / count

def latent_loss(y: Union[ProbMap, torch.Tensor], s_l: Union[ProbMap, torch.Tensor]) -> LossValue:
    """
    Conditional entropy H(C|L) of the batch: -sum_{c,l} P_b(c,l) log P_b(c|l).
    Latent columns with marginal below EPS contribute zero.
    """
    joint = batch_joint(_values(y).detach(), s_l)
    marginal = joint.sum(dim=0, keepdim=True)
    active = marginal >= EPS

    conditional = joint / torch.where(active, marginal, torch.ones_like(marginal))
    terms = torch.where(active, joint * _safe_log(conditional), torch.zeros_like(joint))

    value = -terms.sum()
    return LossValue(value, { "latent": float(value.detach()) })

def semantic_to_latent(s_c: Union[ProbMap, torch.Tensor], P: Union[LatentProjection, torch.Tensor]) -> torch.Tensor:
    """
    Project a semantic probability map onto latent classes: S_lc[..., l] = sum_c P(l|c) S_c[..., c].
    P is a running statistic and receives no gradient.
    """
    s_c = _values(s_c)
    projection = P.as_tensor(dtype=s_c.dtype, device=s_c.device) if isinstance(P, LatentProjection) \
                    else P.detach().to(dtype=s_c.dtype, device=s_c.device)

    if projection.shape[0] != s_c.shape[-1]:
        raise DimensionError(f"Projection has {projection.shape[0]} semantic rows, map has {s_c.shape[-1]} channels")
    return torch.einsum("nhwc,cl->nhwl", s_c, projection)

def consistency_loss(s_l: Union[ProbMap, torch.Tensor], s_lc: Union[ProbMap, torch.Tensor],
                     variant: Union[ConsistencyVariant, str] = ConsistencyVariant.CROSS_ENTROPY,
                     reduction: Union[Reduction, str] = Reduction.MEAN) -> LossValue:
    s_l = _values(s_l)
    s_lc = _values(s_lc)

    if s_l.shape != s_lc.shape:
        raise DimensionError(f"Latent maps differ in shape: {tuple(s_l.shape)} vs {tuple(s_lc.shape)}")
    if not isinstance(variant, ConsistencyVariant):
        variant = ConsistencyVariant.from_string(variant)

    pixel_count = s_l.numel() // s_l.shape[-1]

    if variant == ConsistencyVariant.CROSS_ENTROPY:
        # The latent branch only learns from labeled data, so its prediction is a constant target here
        target = s_l.detach()
        per_pixel = -(target * _safe_log(s_lc)).sum(dim=-1)
    else:
        log_l = _safe_log(s_l)
        log_lc = _safe_log(s_lc)
        per_pixel = (s_l * (log_l - log_lc)).sum(dim=-1) + (s_lc * (log_lc - log_l)).sum(dim=-1)

    value = _reduce(per_pixel, pixel_count, reduction)
    return LossValue(value, { "cons": float(value.detach()) })

def disc_loss(disc_on_pred: torch.Tensor, disc_on_gt: torch.Tensor,
              reduction: Union[Reduction, str] = Reduction.MEAN) -> LossValue:
    """
    Spatial cross-entropy of the discriminator: predictions are fakes (y_n = 0), ground truth maps are real (y_n = 1).
    Each term is reduced over its own pixels and the two are added.
    """
    fake = _reduce(-_safe_log(1 - disc_on_pred), disc_on_pred.numel(), reduction)
    real = _reduce(-_safe_log(disc_on_gt), disc_on_gt.numel(), reduction)

    value = fake + real
    return LossValue(value, { "disc_fake": float(fake.detach()), "disc_real": float(real.detach()),
                              "disc": float(value.detach()) })

def composite_labeled(ce: LossValue, latent: LossValue, adv: LossValue, cfg: RunConfig) -> LossValue:
    value = ce.value + latent.value + cfg.lambda_adv * adv.value
    return LossValue(value, { "l_ce": ce.item(), "l_latent": latent.item(), "l_adv_lab": adv.item(),
                              "l_labeled": float(value.detach()) })

def composite_unlabeled(cons: LossValue, adv: LossValue, cfg: RunConfig) -> LossValue:
    value = cons.value + cfg.lambda_adv * adv.value
    return LossValue(value, { "l_cons": cons.item(), "l_adv_unl": adv.item(),
                              "l_unlabeled": float(value.detach()) })

def total_objective(labeled: LossValue, unlabeled: LossValue, cfg: RunConfig) -> LossValue:
    value = labeled.value + cfg.lambda_unlabeled * unlabeled.value

    components = dict(labeled.components)
    components.update(unlabeled.components)
    components["total"] = float(value.detach())
    return LossValue(value, components)

def entropy(p: torch.Tensor) -> torch.Tensor:
    """
    Mean per-pixel entropy of a probability map, the lower bound of the cross-entropy consistency loss.
    """
    pixel_count = p.numel() // p.shape[-1]
    return -(p * _safe_log(p)).sum() / pixel_count