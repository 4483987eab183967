import torch

from src.config import RunConfig
from src.errors import ConfigurationError

def lr_poly(base_lr: float, iteration: int, max_iters: int, power: float) -> float:
    if iteration < 0:
        raise ConfigurationError(f"iteration must be >= 0, got {iteration}")
    if max_iters <= 0 or iteration >= max_iters:
        return 0.0
    return base_lr * ((1 - float(iteration) / max_iters) ** power)

def poly_lr(iteration: int, cfg: RunConfig) -> float:
    return lr_poly(cfg.lr0, iteration, cfg.max_iters, cfg.power)

def poly_disc_lr(iteration: int, cfg: RunConfig) -> float:
    return lr_poly(cfg.disc_lr, iteration, cfg.max_iters, cfg.power)

def set_learning_rate(optimizer: torch.optim.Optimizer, lr: float):
    for group in optimizer.param_groups:
        group['lr'] = lr
