import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch

from src.config import ConsistencyVariant, LatentMode, Precision, RunConfig
from src.cooccurrence import CoOccurrence, LatentProjection, default_alpha, ema_update, project_distribution
from src.core import Batch, ClassSpace, ProbMap, one_hot
from src.data.split import ManualMapping
from src.errors import ConfigurationError, DimensionError, NonFiniteLossError
from src.losses import (LossValue, adv_gen_loss, ce_loss, composite_labeled, composite_unlabeled, consistency_loss,
                        disc_loss, latent_loss, semantic_to_latent, total_objective)
from src.segmentation.backboneFactory import create_backbone
from src.segmentation.checkpoint import Checkpoint, save_checkpoint
from src.segmentation.discriminator import Discriminator, set_requires_grad
from src.segmentation.segNet import SegNet
from src.training.schedules import poly_disc_lr, poly_lr, set_learning_rate

# Keys of one losses.jsonl record, besides the seed
LOG_KEYS = ["iter", "lr", "l_ce", "l_latent", "l_adv_lab", "l_cons", "l_adv_unl", "l_disc", "total"]

def get_device(cfg: RunConfig) -> torch.device:
    if cfg.device is not None:
        return torch.device(cfg.device)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")

def get_dtype(cfg: RunConfig) -> torch.dtype:
    return torch.float64 if cfg.get_precision() == Precision.FLOAT64 else torch.float32

def resolve_latent_count(cfg: RunConfig, semantic_count: int, mapping: ManualMapping = None) -> int:
    mode = cfg.get_latent_mode()

    if mode == LatentMode.IDENTITY:
        return semantic_count
    if mode == LatentMode.MANUAL:
        if mapping is None:
            raise ConfigurationError("latent_mode 'manual' needs a supercategory mapping")
        if mapping.semantic_count != semantic_count:
            raise DimensionError(f"The mapping covers {mapping.semantic_count} classes, the data has {semantic_count}")
        return mapping.group_count

    if cfg.max_latent > semantic_count and not cfg.allow_latent_overflow:
        warnings.warn(f"max_latent {cfg.max_latent} exceeds the {semantic_count} semantic classes; "
                      f"using {semantic_count} (set allow_latent_overflow to keep it)")
        return semantic_count
    return cfg.max_latent

@dataclass
class TrainState:
    seg: SegNet
    disc: Optional[Discriminator]
    seg_optimizer: torch.optim.Optimizer
    disc_optimizer: Optional[torch.optim.Optimizer]
    cooccurrence: CoOccurrence
    class_space: ClassSpace
    iteration: int = 0
    mapping: Optional[ManualMapping] = None
    device: torch.device = torch.device("cpu")
    dtype: torch.dtype = torch.float32

def build_state(cfg: RunConfig, semantic_count: int, labeled_count: int, seed: int,
                mapping: ManualMapping = None, class_names: List[str] = None) -> TrainState:
    """
    Create networks, optimizers and an empty co-occurrence matrix. Parameter initialization
    only depends on the seed.
    """
    cfg.validate()
    latent_count = resolve_latent_count(cfg, semantic_count, mapping)

    class_space = ClassSpace(semantic_count, latent_count, ignore_index=cfg.ignore_index, names=class_names,
                             allow_latent_overflow=cfg.allow_latent_overflow)

    device = get_device(cfg)
    dtype = get_dtype(cfg)
    torch.manual_seed(seed)

    backbone = create_backbone(cfg.backbone, cfg.backbone_width, cfg.backbone_stages)
    seg = SegNet(backbone, semantic_count, latent_count, cfg.head_dilations).to(device=device, dtype=dtype)
    seg_optimizer = torch.optim.SGD(seg.parameters(), lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    disc, disc_optimizer = None, None
    if cfg.adversarial_enabled():
        disc = Discriminator(semantic_count, ndf=cfg.disc_width).to(device=device, dtype=dtype)
        disc_optimizer = torch.optim.Adam(disc.parameters(), lr=cfg.disc_lr, betas=(0.9, 0.99))

    alpha = default_alpha(cfg.batch_size, labeled_count) if cfg.ema_alpha == "auto" else float(cfg.ema_alpha)
    cooccurrence = CoOccurrence.create(semantic_count, latent_count, alpha)

    return TrainState(seg, disc, seg_optimizer, disc_optimizer, cooccurrence, class_space,
                      mapping=mapping, device=device, dtype=dtype)

def restore_state(state: TrainState, checkpoint: Checkpoint) -> TrainState:
    if (checkpoint.semantic_count, checkpoint.latent_count) != (state.seg.semantic_count, state.seg.latent_count):
        raise DimensionError(f"Checkpoint has {checkpoint.semantic_count}/{checkpoint.latent_count} classes, "
                             f"the run expects {state.seg.semantic_count}/{state.seg.latent_count}")

    state.seg.load_state_dict(checkpoint.seg_state)
    if checkpoint.seg_optimizer_state is not None:
        state.seg_optimizer.load_state_dict(checkpoint.seg_optimizer_state)

    if state.disc is not None and checkpoint.disc_state is not None:
        state.disc.load_state_dict(checkpoint.disc_state)
        if checkpoint.disc_optimizer_state is not None:
            state.disc_optimizer.load_state_dict(checkpoint.disc_optimizer_state)

    state.cooccurrence = checkpoint.cooccurrence
    state.iteration = checkpoint.iteration
    return state

def save_state(state: TrainState, path: str, cfg: RunConfig):
    save_checkpoint(path, state.seg, state.disc, cfg, state.cooccurrence, state.iteration, state.class_space.get_names(),
                    seg_optimizer=state.seg_optimizer, disc_optimizer=state.disc_optimizer)

def current_projection(state: TrainState, cfg: RunConfig) -> LatentProjection:
    if cfg.get_latent_mode() == LatentMode.IDENTITY:
        return LatentProjection.identity(state.class_space.semantic_count)
    return project_distribution(state.cooccurrence)

def training_projection(cfg: RunConfig, cooccurrence: CoOccurrence) -> Optional[LatentProjection]:
    """
    The P(l|c) a run trained with, or None before the first co-occurrence update.
    """
    if cfg.get_latent_mode() == LatentMode.IDENTITY:
        return LatentProjection.identity(cooccurrence.shape[0])
    if cooccurrence.update_count == 0:
        return None
    return project_distribution(cooccurrence)

def _symmetric(cfg: RunConfig) -> bool:
    # Both branches predict semantic classes and are trained the same way
    return cfg.get_latent_mode() == LatentMode.IDENTITY and cfg.get_consistency_variant() == ConsistencyVariant.SYMMETRIC_KL

def _adversarial(state: TrainState, cfg: RunConfig, s_c: torch.Tensor, s_l: torch.Tensor, enabled: bool) -> LossValue:
    if not enabled or state.disc is None:
        return LossValue.zero("adv", s_c)

    reduction = cfg.get_reduction()
    adv = adv_gen_loss(state.disc(s_c), reduction)

    if _symmetric(cfg):
        latent_adv = adv_gen_loss(state.disc(s_l), reduction)
        return LossValue(adv.value + latent_adv.value, { "adv": adv.item() + latent_adv.item() })
    return adv

def labeled_losses(state: TrainState, batch: Batch, cfg: RunConfig, update_statistics: bool = True) -> Tuple[LossValue, torch.Tensor, ProbMap]:
    """
    Forward the labeled batch, update the co-occurrence matrix and build
    L_ce + L_latent + lambda_adv * L_adv. Returns the loss, the semantic prediction and the one-hot ground truth.
    """
    if not batch.labeled:
        raise ConfigurationError("labeled_losses needs a labeled batch")

    s_c, s_l = state.seg(batch.images)
    y = one_hot(batch.labels, state.class_space, dtype=state.dtype)

    if update_statistics:
        state.cooccurrence = ema_update(state.cooccurrence, y, s_l)

    if state.disc is not None:
        set_requires_grad(state.disc, False)

    reduction = cfg.get_reduction()
    ce = ce_loss(s_c, batch.labels, cfg.ignore_index, reduction)

    mode = cfg.get_latent_mode()
    if not cfg.use_latent:
        latent = LossValue.zero("latent", s_c)
    elif mode == LatentMode.LEARNED:
        latent = latent_loss(y, s_l)
    elif mode == LatentMode.MANUAL:
        latent = ce_loss(s_l, state.mapping.map_labels(batch.labels, cfg.ignore_index), cfg.ignore_index, reduction)
    else:
        latent = ce_loss(s_l, batch.labels, cfg.ignore_index, reduction)

    adv = _adversarial(state, cfg, s_c, s_l, cfg.adv_labeled)
    return composite_labeled(ce, latent, adv, cfg), s_c, y

def unlabeled_active(cfg: RunConfig) -> bool:
    return cfg.lambda_unlabeled > 0 and (cfg.use_consistency or (cfg.adv_unlabeled and cfg.lambda_adv > 0))

def unlabeled_losses(state: TrainState, batch: Batch, cfg: RunConfig) -> Tuple[LossValue, Optional[torch.Tensor]]:
    """
    Consistency and adversarial losses of the unlabeled batch, weighted by lambda_unlabeled. Only the images are used.
    """
    reference = torch.zeros((), dtype=state.dtype, device=state.device)

    if batch is None or not unlabeled_active(cfg):
        zero = LossValue.zero(None, reference)
        return composite_unlabeled(LossValue.zero("cons", reference), zero, cfg), None

    u_c, u_l = state.seg(batch.images)

    if cfg.use_consistency and state.iteration >= cfg.warmup_iters:
        u_lc = semantic_to_latent(u_c, current_projection(state, cfg))
        cons = consistency_loss(u_l, u_lc, cfg.get_consistency_variant(), cfg.get_reduction())
    else:
        cons = LossValue.zero("cons", u_c)

    adv = _adversarial(state, cfg, u_c, u_l, cfg.adv_unlabeled)
    return composite_unlabeled(cons, adv, cfg), u_c

def discriminator_step(state: TrainState, fakes: List[torch.Tensor], y: ProbMap, cfg: RunConfig) -> LossValue:
    """
    One update of the discriminator on detached predictions (fake) and one-hot ground truth (real).
    """
    set_requires_grad(state.disc, True)
    state.disc_optimizer.zero_grad()

    d_fake = state.disc(torch.cat([ fake.detach() for fake in fakes ], dim=0))
    d_real = state.disc(y.values)

    loss = disc_loss(d_fake, d_real, cfg.get_reduction())
    loss.value.backward()
    state.disc_optimizer.step()
    return loss

def train_iteration(state: TrainState, labeled: Batch, unlabeled: Optional[Batch], cfg: RunConfig) -> Dict[str, float]:
    """
    One joint iteration. Mutates the state and returns the logged loss components.
    """
    if unlabeled is not None and unlabeled.labeled:
        raise ConfigurationError("The unlabeled batch must not be marked as labeled")

    lr = poly_lr(state.iteration, cfg)
    set_learning_rate(state.seg_optimizer, lr)
    if state.disc_optimizer is not None:
        set_learning_rate(state.disc_optimizer, poly_disc_lr(state.iteration, cfg))

    state.seg.train()
    labeled = labeled.to(state.device, state.dtype)
    if unlabeled is not None:
        # Labels of the unlabeled pool never reach a loss
        unlabeled = unlabeled.withheld().to(state.device, state.dtype)

    labeled_loss, s_c, y = labeled_losses(state, labeled, cfg)
    unlabeled_loss, u_c = unlabeled_losses(state, unlabeled, cfg)
    total = total_objective(labeled_loss, unlabeled_loss, cfg)

    if not total.is_finite():
        raise NonFiniteLossError(dict(total.components, iter=state.iteration))

    state.seg_optimizer.zero_grad()
    total.value.backward()
    state.seg_optimizer.step()

    l_disc = 0.0
    if state.disc is not None:
        fakes = [s_c]
        if cfg.disc_fake_on_unlabeled and u_c is not None:
            fakes.append(u_c)
        l_disc = discriminator_step(state, fakes, y, cfg).item()

    components = { "iter": state.iteration, "lr": lr }
    components.update({ key: total.components[key] for key in ["l_ce", "l_latent", "l_adv_lab", "l_cons", "l_adv_unl"] })
    components["l_disc"] = l_disc
    components["total"] = total.components["total"]

    state.iteration += 1
    return components
