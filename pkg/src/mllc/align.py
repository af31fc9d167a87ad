"""Label alignment between fitted and generating mixture parameters.

Mixture labels are only identified up to permutation; recovery experiments
match fitted clusters to the generating ones by minimum total L1 distance
between item probability profiles (optimal assignment), then classes by their
class-conditional cluster rows.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def align_clusters(est_item_probs, true_item_probs) -> np.ndarray:
    """Permutation ``perm`` with est[perm[t]] matched to true cluster t."""
    L = est_item_probs[0].shape[0]
    cost = np.zeros((L, L))
    for est_k, true_k in zip(est_item_probs, true_item_probs):
        for le in range(L):
            cost[le] += np.abs(est_k[le][None, :] - true_k).sum(axis=1)
    rows, cols = linear_sum_assignment(cost)  # rows = est index, cols = true index
    perm = np.empty(L, dtype=np.int64)
    perm[cols] = rows
    return perm


def align_classes(est_rows: np.ndarray, true_rows: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` with est_rows[perm[t]] matched to true class t.

    ``est_rows`` must already be cluster-aligned to the truth's column order.
    """
    H = est_rows.shape[0]
    cost = np.abs(est_rows[:, None, :] - true_rows[None, :, :]).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(H, dtype=np.int64)
    perm[cols] = rows
    return perm


__all__ = ["align_classes", "align_clusters"]
