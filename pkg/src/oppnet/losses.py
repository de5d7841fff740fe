"""Differentiable building blocks shared by the direct solvers and policy
training: the routing-constraint slack, the log utility, and the violation
penalty."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def slack_tensors(transmit: Tensor, keep: Tensor, packets: Tensor,
                  probs: np.ndarray, capacity: np.ndarray) -> Tensor:
    """Differentiable constraint margin T_i C_i - a_i - sum_j T_j R_ij K_ij a_j."""
    num_flows = transmit.shape[1]
    n = transmit.shape[0]
    send = ad.mul(transmit, packets)                                # (n, F)
    send_cols = ad.reshape(ad.transpose(send, (1, 0)), (num_flows, n, 1))
    weighted = ad.mul(keep, Tensor(probs[None, :, :]))              # (F, n, n)
    inflow = ad.transpose(ad.reshape(ad.matmul(weighted, send_cols),
                                     (num_flows, n)), (1, 0))       # (n, F)
    service = ad.mul(transmit, Tensor(capacity[:, None]))
    return ad.sub(ad.sub(service, packets), inflow)


def log_utility(packets: Tensor, dest_mask: np.ndarray) -> Tensor:
    """Sum of log packet rates over non-destination entries.

    Destination entries are shifted by one before the log so they stay inside
    the log domain, then masked out of the sum; their gradient is exactly zero.
    """
    guard = Tensor(dest_mask.astype(np.float64))
    select = Tensor(1.0 - dest_mask.astype(np.float64))
    return ad.tensor_sum(ad.mul(ad.log(ad.add(packets, guard)), select))


def negative_part(x: Tensor) -> Tensor:
    """min(x, 0), the violation residual of an inequality slack."""
    return ad.neg(ad.relu(ad.neg(x)))


def violation_penalty(slack: Tensor, rho: float) -> Tensor:
    """(rho / 2) * sum of squared violation residuals."""
    return ad.mul(ad.squared_norm(negative_part(slack)), 0.5 * rho)
