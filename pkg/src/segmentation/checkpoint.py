import pickle
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn

from src.config import Precision, RunConfig
from src.cooccurrence import CoOccurrence
from src.errors import LoadError
from src.segmentation.backboneFactory import create_backbone
from src.segmentation.segNet import SegNet

CHECKPOINT_FORMAT = "latentseg-checkpoint-v1"

@dataclass
class Checkpoint:
    config: RunConfig
    iteration: int
    semantic_count: int
    latent_count: int
    class_names: List[str]
    seg_state: Dict[str, Any]
    disc_state: Optional[Dict[str, Any]]
    seg_optimizer_state: Optional[Dict[str, Any]]
    disc_optimizer_state: Optional[Dict[str, Any]]
    cooccurrence: CoOccurrence

def save_checkpoint(path: str, seg: nn.Module, disc: Optional[nn.Module], cfg: RunConfig, cooccurrence: CoOccurrence,
                    iteration: int, class_names: List[str], seg_optimizer: torch.optim.Optimizer = None,
                    disc_optimizer: torch.optim.Optimizer = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "iteration": iteration,
        "semantic_count": seg.semantic_count,
        "latent_count": seg.latent_count,
        "class_names": list(class_names),
        "seg_state": seg.state_dict(),
        "disc_state": disc.state_dict() if disc is not None else None,
        "seg_optimizer_state": seg_optimizer.state_dict() if seg_optimizer is not None else None,
        "disc_optimizer_state": disc_optimizer.state_dict() if disc_optimizer is not None else None,
        "cooccurrence": {
            "M": torch.from_numpy(np.ascontiguousarray(cooccurrence.M)),
            "alpha": cooccurrence.alpha,
            "update_count": cooccurrence.update_count,
        },
    }
    torch.save(payload, path)

def load_checkpoint(path: str, map_location: str = "cpu") -> Checkpoint:
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise LoadError(path, f"unreadable checkpoint ({e})")

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(path, f"not a {CHECKPOINT_FORMAT} file")

    stats = payload["cooccurrence"]
    cooccurrence = CoOccurrence(stats["M"].numpy().astype(np.float64), float(stats["alpha"]), int(stats["update_count"]))

    return Checkpoint(
        config=RunConfig.from_dict(payload["config"]),
        iteration=int(payload["iteration"]),
        semantic_count=int(payload["semantic_count"]),
        latent_count=int(payload["latent_count"]),
        class_names=list(payload["class_names"]),
        seg_state=payload["seg_state"],
        disc_state=payload["disc_state"],
        seg_optimizer_state=payload["seg_optimizer_state"],
        disc_optimizer_state=payload["disc_optimizer_state"],
        cooccurrence=cooccurrence,
    )

def restore_segnet(checkpoint: Checkpoint, device: str = "cpu") -> SegNet:
    """
    Rebuild the segmentation network of a checkpoint for inference.
    """
    cfg = checkpoint.config
    dtype = torch.float64 if cfg.get_precision() == Precision.FLOAT64 else torch.float32

    backbone = create_backbone(cfg.backbone, cfg.backbone_width, cfg.backbone_stages)
    seg = SegNet(backbone, checkpoint.semantic_count, checkpoint.latent_count, cfg.head_dilations)
    seg.load_state_dict(checkpoint.seg_state)
    return seg.to(device=device, dtype=dtype).eval()
