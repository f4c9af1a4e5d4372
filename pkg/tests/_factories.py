"""Random hierarchical datasets for tests."""

import numpy as np
from scipy.special import expit

from hiertmle import HierarchicalDataset


def random_dataset(seed, J=20, max_size=8, binary=True, confounded=True, p_w=2, p_e=1, weight_scheme="per_cluster"):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, max_size + 1, J)
    n = int(sizes.sum())
    cl = np.repeat(np.arange(J), sizes)
    W = rng.normal(size=(n, p_w)) + rng.normal(size=(J, p_w))[cl]
    E = rng.normal(size=(J, p_e))
    wc = np.bincount(cl, weights=W[:, 0], minlength=J) / sizes if p_w else np.zeros(J)
    g = expit(0.5 * wc) if confounded else np.full(J, 0.5)
    A = (rng.random(J) < g).astype(int)
    A[0], A[1] = 1, 0
    lin = -0.3 + 0.4 * A[cl] + (W[:, 0] * 0.5 if p_w else 0) + (0.3 * E[cl, 0] if p_e else 0)
    p = expit(lin)
    Y = (rng.random(n) < p).astype(float) if binary else np.clip(p + rng.normal(0, 0.1, n), 0, 1)
    return HierarchicalDataset(
        ids=[f"k{j}" for j in range(J)],
        exposure=A,
        sizes=sizes,
        outcome=Y,
        cov=W,
        env=E,
        cov_names=[f"W{k + 1}" for k in range(p_w)],
        env_names=[f"E{k + 1}" for k in range(p_e)],
        weight_scheme=weight_scheme,
    )


def toy_dataset():
    """Six individuals in two clusters with hand-checkable summaries."""
    return HierarchicalDataset(
        ids=["a", "b"],
        exposure=[1, 0],
        sizes=[3, 3],
        outcome=[1, 0, 1, 0, 0, 1],
        cov=[[1.0], [3.0], [2.0], [0.0], [0.0], [3.0]],
        env=[[0.5], [1.5]],
        cov_names=["W1"],
        env_names=["E1"],
    )
