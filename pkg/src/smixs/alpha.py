"""Smoothing-weight selection by leave-one-out cross-validation."""
from dataclasses import dataclass
import math

import numpy as np

from . import band
from .errors import (
    AllCandidatesFailed,
    DegenerateWeight,
    LeverageSingularity,
    NonFiniteCv,
    NotPositiveDefinite,
)
from .model import ALPHA_MAX, ALPHA_MIN

DENOM_FLOOR = 1e-8
TIE_RTOL = 1e-12


@dataclass
class AlphaSearchState:
    alpha: np.ndarray
    theta: float = 1e-3
    fd_h: float = 0.1
    alpha_min: float = ALPHA_MIN
    alpha_max: float = ALPHA_MAX

    def __post_init__(self):
        self.alpha = np.clip(np.asarray(self.alpha, dtype=float), self.alpha_min, self.alpha_max)


def loo_differences(d, resp_k, alpha, bp):
    """Leave-one-out residuals ``mu^{-ij}_j - y_ij`` for every (i, j) at once.

    Returns the ``(n, p)`` residual matrix and the full-data solve.
    """
    resp_k = np.asarray(resp_k, dtype=float)
    w = float(resp_k.sum())
    ytilde = resp_k @ d.y
    floor = band.weight_floor(d.n)
    sol = band.reinsch_solve(bp, w, alpha, ytilde, floor=floor)
    s_diag = band.smoother_diagonal(bp, sol.chol, w, alpha, floor=floor)
    denom = 1.0 - resp_k[:, None] * s_diag[None, :]
    bad = denom <= DENOM_FLOOR
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise LeverageSingularity(
            f"1 - S_jj z_ik = {denom[i, j]:.3g} at sample {i}, knot {j}"
        )
    return (sol.mu[None, :] - d.y) / denom, sol


def cv_score(d, resp_k, alpha, bp):
    """Weighted leave-one-out score from a single spline solve."""
    diffs, _ = loo_differences(d, resp_k, alpha, bp)
    return float(np.asarray(resp_k, dtype=float) @ np.einsum("ij,ij->i", diffs, diffs))


def cv_score_bruteforce(d, resp_k, alpha, bp):
    """Literal leave-one-out: refit once per omitted measurement (dense, test use only)."""
    resp_k = np.asarray(resp_k, dtype=float)
    gmat = band.dense_roughness_matrix(bp)
    w = float(resp_k.sum())
    floor = band.weight_floor(d.n)
    if not w > floor:
        raise DegenerateWeight(f"total weight {w!r} is not above the floor {floor!r}")
    ytilde = resp_k @ d.y
    total = 0.0
    for i in range(d.n):
        z = resp_k[i]
        if z == 0:
            continue
        for j in range(d.p):
            mu = omitted_fit(gmat, w, alpha, ytilde, z, d.y[i, j], j)
            total += z * (mu[j] - d.y[i, j]) ** 2
    return total


def omitted_fit(gmat, w, alpha, ytilde, z, y_ij, j):
    """Mean refitted after removing one measurement's weight and value."""
    p = gmat.shape[0]
    a = alpha * gmat
    a[np.diag_indices(p)] += w
    a[j, j] -= z
    rhs = ytilde.copy()
    rhs[j] -= z * y_ij
    try:
        # a is singular only when that knot lost its whole weight and alpha == 0
        if a[j, j] <= 0 and alpha == 0:
            raise np.linalg.LinAlgError
        return np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateWeight(f"omitting knot {j} leaves a singular system") from exc


def gradient_step(state, k, cv_at_alpha, cv_at_alpha_plus_h):
    """One finite-difference descent step on cluster ``k``'s weight, clamped."""
    if not (math.isfinite(cv_at_alpha) and math.isfinite(cv_at_alpha_plus_h)):
        raise NonFiniteCv(f"cv values {cv_at_alpha!r}, {cv_at_alpha_plus_h!r}")
    slope = (cv_at_alpha_plus_h - cv_at_alpha) / state.fd_h
    new = state.alpha[k] - state.theta * slope
    new = min(max(new, state.alpha_min), state.alpha_max)
    state.alpha[k] = new
    return new


def grid_search(d, resp_k, bp, alphas):
    """Candidate with the lowest CV score; near-ties go to the smaller weight."""
    if len(alphas) == 0:
        raise ValueError("empty candidate list")
    best, best_cv = None, math.inf
    failures = []
    for a in sorted(float(x) for x in alphas):
        try:
            cv = cv_score(d, resp_k, a, bp)
        except (LeverageSingularity, DegenerateWeight, NotPositiveDefinite) as exc:
            failures.append((a, str(exc)))
            continue
        if best is None or cv < best_cv - TIE_RTOL * max(1.0, abs(best_cv)):
            best, best_cv = a, cv
    if best is None:
        raise AllCandidatesFailed(f"no candidate produced a CV score: {failures[:3]}")
    return best


def update_alphas(state, d, resp, bp, config):
    """Advance every cluster's smoothing weight in place (one EM iteration's worth).

    A cluster whose CV is undefined (a lone member with full leverage) keeps
    its current weight for this iteration.
    """
    for k in range(resp.shape[1]):
        resp_k = resp[:, k]
        try:
            if config.alpha_mode == "grid":
                state.alpha[k] = grid_search(d, resp_k, bp, config.alpha_grid)
                continue
            for _ in range(config.alpha_steps):
                a = state.alpha[k]
                cv0 = cv_score(d, resp_k, a, bp)
                cv1 = cv_score(d, resp_k, a + state.fd_h, bp)
                gradient_step(state, k, cv0, cv1)
        except (LeverageSingularity, AllCandidatesFailed, NonFiniteCv):
            continue
