"""K-means seeding, multi-restart fitting and cluster-count selection."""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from . import band
from .errors import (
    AllRestartsFailed,
    DegenerateWeight,
    EmptyCluster,
    NonFiniteObjective,
    NotPositiveDefinite,
    AllClustersUnderflow,
    TooManyClusters,
)
from .model import ALPHA_MIN, SIGMA2_FLOOR, FitConfig, MixtureParams, fit_em

log = logging.getLogger(__name__)

_FIT_FAILURES = (EmptyCluster, DegenerateWeight, NonFiniteObjective, NotPositiveDefinite,
                 AllClustersUnderflow, FloatingPointError)


@dataclass(frozen=True)
class RestartPlan:
    n_restarts: int = 50
    seed: int = 0
    c_range: tuple = (1, 2, 3, 4, 5, 6)
    bic_threshold: float = 0.03
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if len(self.c_range) == 0 or min(self.c_range) < 1:
            raise ValueError("c_range must be nonempty with every c >= 1")


def kmeans(d, c, seed, max_iter=100):
    """Lloyd's algorithm on whole curves, seeded by ``c`` distinct random samples.

    An emptied cluster is reseeded with the sample farthest from its centroid.
    Returns ``(labels, centroids)``.
    """
    y = d.y
    n = y.shape[0]
    if c > n:
        raise TooManyClusters(f"{c} clusters requested for {n} samples")
    rng = np.random.default_rng(seed)
    centroids = y[np.sort(rng.choice(n, size=c, replace=False))].copy()
    labels = None
    for _ in range(max_iter):
        dist = ((y[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        counts = np.bincount(new, minlength=c)
        for k in np.flatnonzero(counts == 0):
            own = dist[np.arange(n), new]
            # never steal the last member of another cluster
            own[np.bincount(new, minlength=c)[new] <= 1] = -1.0
            far = int(np.argmax(own))
            new[far] = k
            counts = np.bincount(new, minlength=c)
        for k in range(c):
            centroids[k] = y[new == k].mean(axis=0)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return labels, centroids


def init_params(d, labels, centroids):
    labels = np.asarray(labels)
    c = centroids.shape[0]
    counts = np.bincount(labels, minlength=c)
    if np.any(counts == 0):
        raise EmptyCluster(int(np.flatnonzero(counts == 0)[0]))
    sigma2 = np.empty(c)
    for k in range(c):
        r = d.y[labels == k] - centroids[k]
        sigma2[k] = max(float(np.mean(r * r)), SIGMA2_FLOOR)
    return MixtureParams(
        pi=counts / d.n,
        mu=np.array(centroids, dtype=float),
        sigma2=sigma2,
        alpha=np.full(c, ALPHA_MIN),
    )


def kmeans_init(d, c, seed, max_iter=100):
    labels, centroids = kmeans(d, c, seed, max_iter)
    return init_params(d, labels, centroids)


def _one_restart(d, c, seed, config, bp):
    try:
        init = kmeans_init(d, c, seed, config.kmeans_iter)
        return fit_em(d, c, config, init, bp=bp), None
    except _FIT_FAILURES as exc:
        return None, f"{type(exc).__name__}: {exc}"


def multi_restart(d, c, plan, config=None, bp=None):
    """Best of ``plan.n_restarts`` k-means-seeded fits by observed log-likelihood."""
    config = config or FitConfig()
    bp = bp or band.band_pair_from_times(d.t)
    seeds = [plan.seed + r for r in range(plan.n_restarts)]
    if plan.n_jobs != 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=plan.n_jobs)(
            delayed(_one_restart)(d, c, s, config, bp) for s in seeds
        )
    else:
        outcomes = [_one_restart(d, c, s, config, bp) for s in seeds]
    best, best_r, failures = None, None, []
    for r, (fit, err) in enumerate(outcomes):
        if fit is None:
            failures.append((r, err))
            continue
        if best is None or fit.loglik > best.loglik:
            best, best_r = fit, r
    if best is None:
        raise AllRestartsFailed(failures)
    if failures:
        log.info("c=%d: %d of %d restarts failed", c, len(failures), len(seeds))
    return best


def n_free_params(fit, d, df="naive", bp=None):
    c = fit.c
    if df == "naive":
        return (c - 1) + c + c * d.p
    if df != "trace":
        raise ValueError(f"df must be 'naive' or 'trace', got {df!r}")
    bp = bp or band.band_pair_from_times(d.t)
    floor = band.weight_floor(d.n)
    total = (c - 1) + c
    for k in range(c):
        w = float(fit.resp[:, k].sum())
        a = float(fit.params.alpha[k])
        sol = band.reinsch_solve(bp, w, a, fit.resp[:, k] @ d.y, floor=floor)
        total += w * float(band.smoother_diagonal(bp, sol.chol, w, a, floor=floor).sum())
    return total


def bic(fit, d, df="naive", bp=None):
    """``k ln n - 2 ln L``; lower is better."""
    return n_free_params(fit, d, df, bp) * math.log(d.n) - 2.0 * fit.loglik


def bic_from_counts(k, loglik, n):
    return k * math.log(n) - 2.0 * loglik


def choose_from_curve(cs, bics, threshold):
    """Smallest ``c`` whose successor fails to lower BIC by ``threshold`` (relative).

    Returns ``(c, saturated)``; ``saturated`` is True when the rule never fired.
    A ``None`` BIC marks a count whose restarts all failed; it counts as no
    improvement, so the count before it is chosen.
    """
    if not cs or bics[0] is None:
        raise AllRestartsFailed([(cs[0] if cs else None, "the smallest cluster count could not be fitted")])
    for a in range(len(cs) - 1):
        if bics[a + 1] is None:
            return cs[a], False
        gain = (bics[a] - bics[a + 1]) / abs(bics[a])
        if gain < threshold:
            return cs[a], False
    return cs[-1], True


@dataclass(frozen=True)
class Selection:
    c: int
    saturated: bool
    c_values: tuple
    bic_values: tuple
    fits: dict = field(repr=False)

    @property
    def fit(self):
        return self.fits[self.c]


def select_cluster_count(d, plan, config=None, bp=None):
    config = config or FitConfig()
    bp = bp or band.band_pair_from_times(d.t)
    cs = tuple(sorted(int(c) for c in plan.c_range))
    fits, bics = {}, []
    for c in cs:
        try:
            fits[c] = multi_restart(d, c, plan, config, bp)
        except AllRestartsFailed as exc:
            log.info("c=%d: %s", c, exc)
            bics.append(None)
            break
        bics.append(bic(fits[c], d, config.bic_df, bp))
    cs = cs[: len(bics)]
    chosen, saturated = choose_from_curve(cs, bics, plan.bic_threshold)
    return Selection(c=chosen, saturated=saturated, c_values=cs, bic_values=tuple(bics), fits=fits)
