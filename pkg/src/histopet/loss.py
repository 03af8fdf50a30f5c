"""Composite MAE + MS-SSIM training loss with a self-balancing weight."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor
from .metrics import ms_ssim_images


class LossBalancer:
    """Rolling record of the last ``window`` MAE and (1 - MS-SSIM) terms.

    ``alpha`` is the share of the MAE sum in the total of both sums, so the
    term that has recently been larger gets weighted down.
    """

    def __init__(self, window: int = 50, alpha: float = 0.5):
        if window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.window = window
        self.alpha = alpha
        self.iteration = 0
        self.mae_terms: deque = deque(maxlen=window)
        self.ssim_terms: deque = deque(maxlen=window)

    def record(self, mae_term: float, ssim_term: float):
        self.mae_terms.append(float(mae_term))
        self.ssim_terms.append(float(ssim_term))
        self.iteration += 1

    def state(self) -> dict:
        return {"window": self.window, "alpha": self.alpha, "iteration": self.iteration,
                "mae_terms": list(self.mae_terms), "ssim_terms": list(self.ssim_terms)}

    @classmethod
    def from_state(cls, state: dict) -> "LossBalancer":
        b = cls(int(state["window"]), float(state["alpha"]))
        b.iteration = int(state["iteration"])
        b.mae_terms.extend(state["mae_terms"])
        b.ssim_terms.extend(state["ssim_terms"])
        return b


def update_alpha(balancer: LossBalancer) -> float:
    """Recompute alpha from the window; unchanged while both sums are zero."""
    if not balancer.mae_terms:
        raise ValueError("no iterations recorded yet")
    s_mae = sum(balancer.mae_terms)
    s_ssim = sum(balancer.ssim_terms)
    total = s_mae + s_ssim
    if total > 0:
        balancer.alpha = min(1.0, max(0.0, s_mae / total))
    return balancer.alpha


@dataclass
class LossTerms:
    total: Tensor
    mae: float
    ssim_loss: float
    alpha: float


def batch_ms_ssim(xhat: Tensor, x: Tensor) -> Tensor:
    """Mean slice MS-SSIM of (b, 1, d, h, w) batches, both scaled by their joint batch maximum."""
    peak = Tensor(np.maximum(xhat.data.max(), x.data.max()))
    if peak.data <= 0:
        peak = Tensor(np.maximum(np.abs(xhat.data).max(), np.abs(x.data).max()))
    if peak.data == 0:
        peak = Tensor(np.ones((), dtype=xhat.dtype))
    h, w = xhat.shape[-2:]
    a = (xhat / peak).reshape(-1, h, w)
    b = (x / peak).reshape(-1, h, w)
    return ms_ssim_images(a, b).mean()


def composite_loss(xhat: Tensor, x, balancer: LossBalancer, record: bool = True) -> LossTerms:
    """``(1 - alpha) * MAE + alpha * (1 - MS-SSIM)`` with the balancer's current alpha.

    The joint maximum used to normalize the MS-SSIM inputs is treated as a
    constant.  When ``record`` is set the term values are appended to the
    balancer's window; call :func:`update_alpha` afterwards.
    """
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=xhat.dtype))
    if xhat.shape != x.shape:
        raise ShapeError(f"prediction {xhat.shape} and target {x.shape} differ")
    alpha = balancer.alpha
    mae_t = (xhat - x).abs().mean()
    ssim_t = 1.0 - batch_ms_ssim(xhat, x)
    total = mae_t * (1.0 - alpha) + ssim_t * alpha
    if record:
        balancer.record(mae_t.item(), ssim_t.item())
    return LossTerms(total, mae_t.item(), ssim_t.item(), alpha)
