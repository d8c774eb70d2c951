"""Mixture of Gaussians with smoothing-spline cluster means, fitted by EM."""
from dataclasses import dataclass, field, replace
import math
import time

import numpy as np
from scipy.special import logsumexp

from . import band
from .errors import (
    AllClustersUnderflow,
    DegenerateWeight,
    DimensionMismatch,
    EmptyCluster,
    NonFiniteObjective,
    NonPositiveVariance,
)

SIGMA2_FLOOR = 1e-12
ALPHA_MIN = 1.0
ALPHA_MAX = 1e6
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    t: np.ndarray
    labels: np.ndarray = None
    ids: tuple = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        t = np.ascontiguousarray(self.t, dtype=float)
        if y.ndim != 2:
            raise DimensionMismatch(f"y must be 2-D, got shape {y.shape}")
        if y.shape[0] < 1:
            raise DimensionMismatch("dataset has no samples")
        if t.shape != (y.shape[1],):
            raise DimensionMismatch(f"{y.shape[1]} measurements but {t.size} knot times")
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset contains missing or non-finite values")
        band.knot_geometry(t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (y.shape[0],):
                raise DimensionMismatch("labels must have one entry per sample")
            object.__setattr__(self, "labels", labels)
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.y.shape[1]


@dataclass(frozen=True)
class MixtureParams:
    pi: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray

    @property
    def c(self):
        return self.pi.shape[0]

    def permute(self, order):
        order = np.asarray(order)
        return MixtureParams(self.pi[order], self.mu[order], self.sigma2[order], self.alpha[order])


@dataclass(frozen=True)
class FitConfig:
    """Fitting options.

    ``alpha_mode`` is ``"gradient"``, ``"grid"`` or ``"fixed"``; in fixed mode
    every cluster uses ``alpha_fixed``.  ``solver="dense"`` swaps the banded
    solve for a dense ``O(p^3)`` one (the no-Reinsch ablation).
    """

    mode: str = "smixs"
    alpha_mode: str = "gradient"
    alpha_fixed: float = ALPHA_MIN
    alpha_init: float = ALPHA_MIN
    rel_tol: float = 1e-8
    max_iter: int = 500
    restarts: int = 50
    seed: int = 0
    bic_df: str = "naive"
    variance: str = "corrected"
    theta: float = 1e-3
    fd_h: float = 0.1
    alpha_steps: int = 1
    alpha_grid: tuple = tuple(10.0 ** np.arange(0, 6.5, 0.5))
    solver: str = "reinsch"
    kmeans_iter: int = 100

    def __post_init__(self):
        checks = {
            "mode": ("smixs", "gmm"),
            "alpha_mode": ("gradient", "grid", "fixed"),
            "bic_df": ("naive", "trace"),
            "variance": ("corrected", "uncorrected"),
            "solver": ("reinsch", "dense"),
        }
        for name, allowed in checks.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.max_iter < 1 or self.restarts < 1 or self.alpha_steps < 1:
            raise ValueError("max_iter, restarts and alpha_steps must be >= 1")
        if self.alpha_fixed < 0:
            raise ValueError("alpha_fixed must be nonnegative")

    @property
    def smoothing(self):
        return self.mode == "smixs"

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class FitResult:
    params: MixtureParams
    resp: np.ndarray
    objective_trace: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    timings: dict = field(default_factory=dict)
    expectation_trace: np.ndarray = None
    alpha_trace: np.ndarray = None

    @property
    def c(self):
        return self.params.c

    def hard_labels(self):
        return np.argmax(self.resp, axis=1)


# ---------------------------------------------------------------------------
# densities and E-step
# ---------------------------------------------------------------------------


def log_density(y_i, mu, sigma2):
    if not sigma2 > 0:
        raise NonPositiveVariance(f"variance must be positive, got {sigma2!r}")
    r = np.asarray(y_i, dtype=float) - np.asarray(mu, dtype=float)
    p = r.size
    return -0.5 * p * (LOG_2PI + math.log(sigma2)) - float(r @ r) / (2.0 * sigma2)


def _sq_dist(y, mu):
    """``(n, c)`` matrix of squared Euclidean distances."""
    diff = y[:, None, :] - mu[None, :, :]
    return np.einsum("ncp,ncp->nc", diff, diff)


def log_density_matrix(y, params):
    s2 = params.sigma2
    if np.any(~(s2 > 0)):
        raise NonPositiveVariance(f"variances must be positive, got {s2}")
    p = y.shape[1]
    return -0.5 * p * (LOG_2PI + np.log(s2))[None, :] - _sq_dist(y, params.mu) / (2.0 * s2)[None, :]


def _log_weights(d, params):
    with np.errstate(divide="ignore"):
        return np.log(params.pi)[None, :] + log_density_matrix(d.y, params)


def e_step(d, params):
    """Posterior membership probabilities, normalized in log space."""
    return _resp_from_log_weights(_log_weights(d, params))


def _resp_from_log_weights(lw):
    top = lw.max(axis=1, keepdims=True)
    if np.any(np.isneginf(top)):
        raise AllClustersUnderflow("every cluster has zero density for some sample")
    z = np.exp(lw - top)
    z /= z.sum(axis=1, keepdims=True)
    return z


def observed_loglik(d, params):
    """``sum_i log sum_k pi_k f_k(y_i)``."""
    return float(logsumexp(_log_weights(d, params), axis=1).sum())


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------


def m_step_pi(resp):
    return np.asarray(resp, dtype=float).mean(axis=0)


def _weighted(d, resp_k):
    resp_k = np.asarray(resp_k, dtype=float)
    return float(resp_k.sum()), resp_k @ d.y


def m_step_mu(d, resp_k, alpha_k, bp, gmat=None):
    """Smoothing-spline cluster mean ``(w I + alpha G)^{-1} sum_i z_ik y_i``.

    With ``gmat`` given the solve is dense instead of banded.
    """
    w, ytilde = _weighted(d, resp_k)
    floor = band.weight_floor(d.n)
    if gmat is None:
        return band.reinsch_solve(bp, w, alpha_k, ytilde, floor=floor)
    if not w > floor:
        raise DegenerateWeight(f"total weight {w!r} is not above the floor {floor!r}")
    if alpha_k == 0:
        mu = ytilde / w
    else:
        mu = band.dense_solve(gmat, w, alpha_k, ytilde)
    return band.SplineSolve(mu=mu, gamma=None, weight=w, alpha=float(alpha_k))


def _solve_mean(w, ytilde, alpha_k, bp, gmat, floor):
    if gmat is None:
        return band.reinsch_solve(bp, w, alpha_k, ytilde, floor=floor).mu
    if not w > floor:
        raise DegenerateWeight(f"total weight {w!r} is not above the floor {floor!r}")
    if alpha_k == 0:
        return ytilde / w
    return band.dense_solve(gmat, w, alpha_k, ytilde)


def _roughness(bp, mu, gmat=None):
    if gmat is None:
        return band.roughness_form(bp, mu)
    return max(float(mu @ gmat @ mu), 0.0)


def m_step_sigma2(d, resp_k, mu_k, alpha_k, bp, corrected=True, roughness=None, gmat=None):
    """Cluster variance; the corrected form adds ``alpha mu' G mu`` to the residual sum."""
    resp_k = np.asarray(resp_k, dtype=float)
    w = float(resp_k.sum())
    floor = band.weight_floor(d.n)
    if not w > floor:
        raise DegenerateWeight(f"total weight {w!r} is not above the floor {floor!r}")
    r = d.y - mu_k[None, :]
    rss = float(resp_k @ np.einsum("ij,ij->i", r, r))
    if corrected and alpha_k != 0:
        if roughness is None:
            roughness = _roughness(bp, mu_k, gmat)
        rss += alpha_k * roughness
    return max(rss / (d.p * w), SIGMA2_FLOOR)


def penalty(params, roughness):
    """``sum_k alpha_k mu_k' G mu_k / (2 sigma_k^2)``."""
    return float(np.sum(params.alpha * np.asarray(roughness) / (2.0 * params.sigma2)))


def cluster_roughness(params, bp, gmat=None):
    return np.array([
        _roughness(bp, params.mu[k], gmat) if params.alpha[k] != 0 else 0.0
        for k in range(params.c)
    ])


def penalized_expectation(d, params, resp, bp, roughness=None, log_weights=None):
    """Expected complete-data log-likelihood minus the roughness penalties."""
    if roughness is None:
        roughness = cluster_roughness(params, bp)
    lw = _log_weights(d, params) if log_weights is None else log_weights
    resp = np.asarray(resp, dtype=float)
    ll = float(np.sum(np.where(resp > 0, resp * lw, 0.0)))
    return ll - penalty(params, roughness)


# ---------------------------------------------------------------------------
# EM loop
# ---------------------------------------------------------------------------


def _initial_alpha(config, c, init):
    if not config.smoothing:
        return np.zeros(c)
    if config.alpha_mode == "fixed":
        return np.full(c, float(config.alpha_fixed))
    if init.alpha is not None and np.all(np.isfinite(init.alpha)):
        return np.clip(np.asarray(init.alpha, dtype=float), ALPHA_MIN, ALPHA_MAX)
    return np.full(c, float(config.alpha_init))


def fit_em(d, c, config, init, bp=None):
    """Run EM from ``init`` until the penalized objective stalls.

    Per iteration: E-step, optional smoothing-weight update, then the
    proportions, means and variances.  ``objective_trace[r]`` is the
    penalized observed-data log-likelihood of the parameters after
    iteration ``r``; it never decreases when the weights are held fixed and
    the corrected variance is used.  ``expectation_trace[r]`` is the
    penalized expectation under iteration ``r``'s responsibilities, which
    carries no such guarantee because the responsibility entropy moves.
    """
    from . import alpha as alpha_search

    if init.c != c:
        raise DimensionMismatch(f"init has {init.c} clusters, expected {c}")
    if bp is None:
        bp = band.band_pair_from_times(d.t)
    gmat = band.dense_roughness_matrix(bp) if config.solver == "dense" else None
    floor = band.weight_floor(d.n)
    corrected = config.variance == "corrected"
    searching = config.smoothing and config.alpha_mode != "fixed"

    params = MixtureParams(
        pi=np.asarray(init.pi, dtype=float).copy(),
        mu=np.asarray(init.mu, dtype=float).copy(),
        sigma2=np.maximum(np.asarray(init.sigma2, dtype=float), SIGMA2_FLOOR),
        alpha=_initial_alpha(config, c, init),
    )
    state = alpha_search.AlphaSearchState(
        alpha=params.alpha.copy(), theta=config.theta, fd_h=config.fd_h
    )
    timings = {"e_step": 0.0, "alpha": 0.0, "m_step": 0.0, "objective": 0.0}
    trace, e_trace, alpha_trace = [], [], []
    converged = False
    it = 0
    lw = _log_weights(d, params)
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        resp = _resp_from_log_weights(lw)
        weights = resp.sum(axis=0)
        for k in range(c):
            if not weights[k] > floor:
                raise EmptyCluster(k, float(weights[k]))
        t1 = time.perf_counter()
        if searching:
            alpha_search.update_alphas(state, d, resp, bp, config)
            alpha = state.alpha.copy()
        else:
            alpha = params.alpha.copy()
        t2 = time.perf_counter()

        pi = m_step_pi(resp)
        ytilde = resp.T @ d.y
        if config.smoothing:
            mu = np.empty_like(params.mu)
            rough = np.zeros(c)
            for k in range(c):
                try:
                    mu[k] = _solve_mean(weights[k], ytilde[k], alpha[k], bp, gmat, floor)
                except DegenerateWeight as exc:
                    raise EmptyCluster(k, float(weights[k])) from exc
                if alpha[k] != 0:
                    rough[k] = _roughness(bp, mu[k], gmat)
        else:
            mu = ytilde / weights[:, None]
            rough = np.zeros(c)
        rss = np.einsum("ik,ik->k", resp, _sq_dist(d.y, mu))
        if corrected:
            rss = rss + alpha * rough
        sigma2 = np.maximum(rss / (d.p * weights), SIGMA2_FLOOR)
        params = MixtureParams(pi=pi, mu=mu, sigma2=sigma2, alpha=alpha)
        t3 = time.perf_counter()

        lw = _log_weights(d, params)
        obj = float(logsumexp(lw, axis=1).sum()) - penalty(params, rough)
        if not math.isfinite(obj):
            raise NonFiniteObjective(f"objective became {obj} at iteration {it}")
        trace.append(obj)
        e_trace.append(penalized_expectation(d, params, resp, bp, roughness=rough,
                                             log_weights=lw))
        alpha_trace.append(alpha)
        t4 = time.perf_counter()
        timings["e_step"] += t1 - t0
        timings["alpha"] += t2 - t1
        timings["m_step"] += t3 - t2
        timings["objective"] += t4 - t3
        if it > 1 and abs(trace[-1] - trace[-2]) < config.rel_tol * (1.0 + abs(trace[-1])):
            converged = True
            break

    resp = _resp_from_log_weights(lw)
    return FitResult(
        params=params,
        resp=resp,
        objective_trace=np.array(trace),
        loglik=float(logsumexp(lw, axis=1).sum()),
        iterations=it,
        converged=converged,
        timings=timings,
        expectation_trace=np.array(e_trace),
        alpha_trace=np.array(alpha_trace),
    )
