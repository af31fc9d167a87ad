import numpy as np
import pytest

from mllc import Covariate, ItemSchema, LcParams, TwoLevelDataset
from mllc.multilevel import MllcParams


def make_dataset(responses, groups, levels, weights=None, covariates=()):
    schema = ItemSchema.from_levels(levels)
    return TwoLevelDataset.from_arrays(schema, groups, np.asarray(responses), weights, covariates)


@pytest.fixture
def lc_instance():
    """10 units, 3 binary items, mixed weights; loglik frozen from enumeration."""
    resp = [
        (1, 2, 2), (2, 2, 1), (1, 1, 1), (2, 1, 2), (2, 2, 2),
        (1, 1, 2), (2, 1, 1), (1, 2, 1), (2, 2, 2), (1, 1, 1),
    ]
    w = [1, 1, 2, 1, 0.5, 1, 3, 1, 1, 1.5]
    groups = ["a"] * 5 + ["b"] * 5
    data = make_dataset(resp, groups, [2, 2, 2], weights=w)
    params = LcParams(
        cluster_weights=np.array([0.4, 0.6]),
        item_probs=(
            np.array([[0.8, 0.2], [0.3, 0.7]]),
            np.array([[0.6, 0.4], [0.1, 0.9]]),
            np.array([[0.5, 0.5], [0.25, 0.75]]),
        ),
    )
    return data, params


LC_INSTANCE_LOGLIK = -31.199651937656519


@pytest.fixture
def mllc_instance():
    """2 groups x 2 units, 2 binary items, L=2, H=2; loglik frozen from enumeration."""
    resp = [(1, 2), (2, 2), (1, 1), (2, 1)]
    groups = ["g1", "g1", "g2", "g2"]
    data = make_dataset(resp, groups, [2, 2])
    params = MllcParams(
        class_weights=np.array([0.3, 0.7]),
        cluster_table=np.array([[0.6, 0.4], [0.2, 0.8]]),
        item_probs=(
            np.array([[0.9, 0.1], [0.2, 0.8]]),
            np.array([[0.7, 0.3], [0.4, 0.6]]),
        ),
    )
    return data, params


MLLC_INSTANCE_LOGLIK = -5.783310344881283


def separated_mllc_params(L=3, H=2, K=6):
    """Well-separated binary-item mixture used by recovery experiments."""
    base = np.array([0.05, 0.5, 0.95])
    item = []
    for k in range(K):
        yes = np.array([base[(k + l) % 3] for l in range(L)])
        item.append(np.column_stack([1.0 - yes, yes]))
    # class-conditional rows 0.6 apart in total variation
    table = np.array([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]])[:H, :L]
    table = table / table.sum(axis=1, keepdims=True)
    weights = np.full(H, 1.0 / H)
    return MllcParams(class_weights=weights, item_probs=tuple(item), cluster_table=table)


def random_lc_dataset(seed, n_groups=4, group_size=25, levels=(2, 2, 3)):
    rng = np.random.default_rng(seed)
    n = n_groups * group_size
    resp = np.column_stack([rng.integers(1, s + 1, size=n) for s in levels])
    groups = [f"g{j}" for j in range(n_groups) for _ in range(group_size)]
    w = rng.uniform(0.5, 2.0, size=n)
    sector = rng.choice(["m", "r", "s"], size=n)
    covs = [
        Covariate("sector", "categorical", sector.astype(object), ("m", "r", "s")),
        Covariate("x", "continuous", rng.normal(size=n)),
    ]
    return make_dataset(resp, groups, list(levels), weights=w, covariates=covs)
