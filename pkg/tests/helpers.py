"""Shared randomized problem instances for the model tests."""
import numpy as np

from smixs.initialization import kmeans_init
from smixs.model import Dataset


def em_instance(seed, n_max=50, p_max=30, c_max=4):
    """Random-walk cluster means on jittered knots, balanced labels.

    Returns ``(dataset, c, init, rng)``; ``rng`` continues the instance's
    stream so callers can draw further settings reproducibly.
    """
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, c_max + 1))
    n = int(rng.integers(max(5, 2 * c), n_max + 1))
    p = int(rng.integers(3, p_max + 1))
    t = np.cumsum(rng.uniform(0.5, 1.5, p))
    means = np.cumsum(rng.normal(size=(c, p)), axis=1) * rng.uniform(0.2, 1.0)
    labels = rng.permutation(np.arange(n) % c)
    y = means[labels] + rng.normal(size=(n, p)) * rng.uniform(0.3, 2.0)
    d = Dataset(y=y, t=t, labels=labels)
    return d, c, kmeans_init(d, c, seed), rng


def fit_with_retries(d, c, config, seed, tries=10):
    """``fit_em`` from k-means seeds ``seed, seed + 1000, ...`` until one fit survives.

    Returns ``(fit, failed_attempts)``.
    """
    from smixs.errors import EmptyCluster
    from smixs.model import fit_em

    for attempt in range(tries):
        try:
            return fit_em(d, c, config, kmeans_init(d, c, seed + 1000 * attempt)), attempt
        except EmptyCluster:
            continue
    raise RuntimeError(f"no initialization of instance {seed} survived {tries} attempts")
