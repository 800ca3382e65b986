"""Cross-entropy over probability rows and mean absolute error."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..errors import DataError

CE_EPS = 1e-12


def _targets(y: torch.Tensor, C: int, dtype) -> torch.Tensor:
    if y.dim() == 1:
        return F.one_hot(y.long(), C).to(dtype)
    if y.shape[-1] != C:
        raise DataError(f"one-hot targets have {y.shape[-1]} columns, probabilities have {C}")
    return y.to(dtype)


def loss_ce(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """-(1/N) sum_i sum_c y_ic log p_ic.

    ``y`` holds class indices or one-hot rows. Probabilities are clamped to
    ``CE_EPS`` from below so an exact zero at the true class gives a large
    finite loss rather than inf.
    """
    if p.dim() != 2 or p.shape[0] == 0:
        raise DataError(f"expected a non-empty (N, C) probability batch, got {tuple(p.shape)}")
    t = _targets(y, p.shape[1], p.dtype)
    if t.shape[0] != p.shape[0]:
        raise DataError(f"{p.shape[0]} predictions for {t.shape[0]} targets")
    return -(t * torch.log(p.clamp_min(CE_EPS))).sum(dim=1).mean()


def loss_ce_logits(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """loss_ce(softmax(logits), y) computed stably through log-softmax."""
    t = _targets(y, logits.shape[1], logits.dtype)
    return -(t * torch.log_softmax(logits, dim=1)).sum(dim=1).mean()


def loss_mae(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """(1/n) sum_i |y_i - y_hat_i|."""
    y_hat = y_hat.reshape(-1)
    y = y.reshape(-1).to(y_hat.dtype)
    if y_hat.numel() == 0:
        raise DataError("MAE of an empty batch")
    if y_hat.shape != y.shape:
        raise DataError(f"{y_hat.numel()} predictions for {y.numel()} targets")
    return (y - y_hat).abs().mean()
