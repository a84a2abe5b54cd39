import numpy as np
import pytest

from zerorec.dataset import Interaction, build_dataset, split_per_user


def random_bipartite_edges(rng, n_users=12, n_items=12, p=0.35):
    """Random bipartite edge array for oracle comparisons."""
    mask = rng.random((n_users, n_items)) < p
    us, vs = np.nonzero(mask)
    return np.column_stack((us, vs)).astype(np.int64)


def two_block_interactions(
    rng,
    n_users_a=30,
    n_items_a=18,
    n_users_b=10,
    n_items_b=36,
    degree=15,
):
    """Disjoint block toy with a popularity gradient inside each block.

    Block A is user-heavy (its items end up high-degree), block B item-heavy,
    so activity bins separate the blocks and popularity ranks items within
    each block.
    """
    rows = []
    blocks = (
        (range(n_users_a), range(n_items_a)),
        (range(n_users_a, n_users_a + n_users_b), range(n_items_a, n_items_a + n_items_b)),
    )
    for users, items in blocks:
        items = np.array(list(items))
        w = 1.0 / np.arange(1, len(items) + 1)
        p = w / w.sum()
        for u in users:
            chosen = rng.choice(items, size=min(degree, len(items)), replace=False, p=p)
            for v in chosen:
                rows.append(Interaction(f"u{u}", f"i{v}"))
    return rows


@pytest.fixture
def block_dataset():
    """Split two-block dataset used by the model/baseline learnability tests."""
    rng = np.random.default_rng(42)
    ds = build_dataset(two_block_interactions(rng), k=2)
    return split_per_user(ds, 0.7, 0.1, rng_seed=7)
