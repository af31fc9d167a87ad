"""Randomized tiny instances for enumeration-oracle sweeps.

Kept small enough (J <= 3, n_j <= 3, K <= 3, L <= 3, H <= 2) that exact
enumeration of all latent assignments is immediate. A third of the instances
carry a concomitant covariate, a third carry non-unit weights, and roughly a
tenth of all responses are missing, so the oracle exercises every contract.
"""
from __future__ import annotations

import numpy as np

from .data import Covariate, ItemSchema, TwoLevelDataset
from .multilevel import ConcomitantCoefs, MllcParams
from .data import DesignColumn


def random_tiny_instance(seed: int) -> tuple[TwoLevelDataset, MllcParams]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    J = int(rng.integers(1, 4))
    sizes = rng.integers(1, 4, size=J)
    K = int(rng.integers(1, 4))
    levels = [int(rng.integers(2, 4)) for _ in range(K)]
    L = int(rng.integers(1, 4))
    H = int(rng.integers(1, min(3, J + 1)))

    n = int(sizes.sum())
    responses = np.empty((n, K), dtype=np.int64)
    for k in range(K):
        responses[:, k] = rng.integers(1, levels[k] + 1, size=n)
    miss = rng.random((n, K)) < 0.1
    responses[miss] = 0

    weighted = rng.random() < 1 / 3
    weights = 0.5 + 1.5 * rng.random(n) if weighted else np.ones(n)

    group_of_unit = []
    for j, s in enumerate(sizes):
        group_of_unit.extend([f"g{j}"] * int(s))

    item_probs = tuple(rng.dirichlet(np.ones(s), size=L) for s in levels)
    class_weights = rng.dirichlet(np.ones(H))

    with_covariate = rng.random() < 1 / 3 and L > 1
    if with_covariate:
        x = rng.normal(size=n)
        covs = [Covariate("x", "continuous", x)]
        gamma = ConcomitantCoefs(
            intercepts=rng.normal(scale=0.8, size=(L - 1, H)),
            slopes=rng.normal(scale=0.8, size=(L - 1, 1)),
            columns=(DesignColumn("x", None),),
            references={},
        )
        params = MllcParams(class_weights=class_weights, item_probs=item_probs, gamma=gamma)
    else:
        covs = []
        table = rng.dirichlet(np.ones(L), size=H)
        params = MllcParams(class_weights=class_weights, item_probs=item_probs, cluster_table=table)

    schema = ItemSchema.from_levels(levels)
    data = TwoLevelDataset.from_arrays(schema, group_of_unit, responses, weights, covs)
    return data, params


__all__ = ["random_tiny_instance"]
