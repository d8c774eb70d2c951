"""Clustering/regression metrics and the runtime ablation harness."""
from dataclasses import asdict, dataclass, field, replace
import csv
import io
import json
import platform
import statistics
import time
import timeit

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import band
from .errors import DimensionMismatch, SmixsError, UnpairedResults
from .initialization import kmeans_init
from .model import FitConfig, fit_em
from .synth import GeneratorSpec, generate_dataset

TIE_TOL = 1e-12
VARIANTS = ("GMM", "SMIXS", "SMIXS-CA", "SMIXS-CA-NR")


def confusion_matrix(true_labels, pred_labels, c_true=None, c_pred=None):
    true_labels = np.asarray(true_labels, dtype=int)
    pred_labels = np.asarray(pred_labels, dtype=int)
    if true_labels.shape != pred_labels.shape:
        raise DimensionMismatch("label vectors differ in length")
    c_true = c_true or int(true_labels.max()) + 1
    c_pred = c_pred or int(pred_labels.max()) + 1
    conf = np.zeros((c_true, c_pred), dtype=int)
    np.add.at(conf, (true_labels, pred_labels), 1)
    return conf


def match_clusters(pred_labels, true_labels, c_pred=None, c_true=None):
    """Map each predicted cluster to a true cluster, maximizing matched samples.

    Counts are padded with empty clusters to a square problem; a predicted
    cluster paired with padding gets an index ``>= c_true``.  Ties in matched
    count go to the matching with the larger summed pairwise F1, which keeps
    the result independent of how either labelling is numbered.
    """
    conf = confusion_matrix(true_labels, pred_labels, c_true, c_pred)
    size = max(conf.shape)
    padded = np.zeros((size, size))
    padded[: conf.shape[0], : conf.shape[1]] = conf
    tot = padded.sum(axis=1)[:, None] + padded.sum(axis=0)[None, :]
    pair_f = np.divide(2.0 * padded, tot, out=np.zeros_like(padded), where=tot > 0)
    # integer counts dominate: the F1 sum is below size, scaled under 1
    rows, cols = linear_sum_assignment(padded + pair_f / (size + 1.0), maximize=True)
    perm = np.empty(size, dtype=int)
    perm[cols] = rows
    return perm[: conf.shape[1]]


def matched_confusion(pred_labels, true_labels, c_pred=None, c_true=None):
    perm = match_clusters(pred_labels, true_labels, c_pred, c_true)
    size = max(len(perm), int(np.max(true_labels)) + 1, c_true or 0)
    return confusion_matrix(true_labels, perm[np.asarray(pred_labels, dtype=int)], size, size)


def f_score(conf):
    """Unweighted mean of per-cluster one-vs-rest F1 on a matched confusion matrix."""
    conf = np.asarray(conf, dtype=float)
    tp = np.diag(conf)
    pred_tot = conf.sum(axis=0)
    true_tot = conf.sum(axis=1)
    scores = np.zeros(conf.shape[0])
    for k in range(conf.shape[0]):
        prec = tp[k] / pred_tot[k] if pred_tot[k] > 0 else 0.0
        rec = tp[k] / true_tot[k] if true_tot[k] > 0 else 0.0
        if prec + rec > 0:
            scores[k] = 2.0 * prec * rec / (prec + rec)
    return float(scores.mean())


def clustering_f_score(pred_labels, true_labels, c_pred=None, c_true=None):
    return f_score(matched_confusion(pred_labels, true_labels, c_pred, c_true))


def mean_rmse(est_means, true_means, assignment):
    """RMSE over every (cluster, knot) pair after aligning estimated to true clusters."""
    est = np.asarray(est_means, dtype=float)
    true = np.asarray(true_means, dtype=float)
    assignment = np.asarray(assignment, dtype=int)
    if est.shape != true.shape or assignment.shape != (est.shape[0],):
        raise DimensionMismatch(
            f"estimated {est.shape}, true {true.shape}, assignment {assignment.shape}"
        )
    if np.any(assignment >= true.shape[0]) or len(set(assignment.tolist())) != len(assignment):
        raise DimensionMismatch("assignment is not a permutation of the true clusters")
    diff = est - true[assignment]
    return float(np.sqrt(np.mean(diff * diff)))


def head_to_head(results_a, results_b, higher_is_better=True, tol=TIE_TOL):
    """Count per-dataset wins of a, wins of b and ties.

    Accepts two equal-length sequences or two dicts keyed by dataset id.
    """
    if isinstance(results_a, dict) or isinstance(results_b, dict):
        if not (isinstance(results_a, dict) and isinstance(results_b, dict)) or set(results_a) != set(results_b):
            raise UnpairedResults("result sets cover different datasets")
        keys = sorted(results_a)
        a = [results_a[k] for k in keys]
        b = [results_b[k] for k in keys]
    else:
        a, b = list(results_a), list(results_b)
        if len(a) != len(b):
            raise UnpairedResults(f"{len(a)} results vs {len(b)}")
    wins_a = wins_b = ties = 0
    for x, y in zip(a, b):
        diff = (x - y) if higher_is_better else (y - x)
        if abs(diff) <= tol:
            ties += 1
        elif diff > 0:
            wins_a += 1
        else:
            wins_b += 1
    return wins_a, wins_b, ties


def evaluate_fit(fit, true_labels, true_means=None):
    """F-score and (when truth means are known) mean-curve RMSE of one fit."""
    pred = fit.hard_labels()
    c_true = int(np.max(true_labels)) + 1
    perm = match_clusters(pred, true_labels, fit.c, c_true)
    out = {"f_score": clustering_f_score(pred, true_labels, fit.c, c_true)}
    if true_means is not None:
        true_means = np.asarray(true_means)
        if fit.c == true_means.shape[0]:
            out["rmse"] = mean_rmse(fit.params.mu, true_means, perm)
    return out


# ---------------------------------------------------------------------------
# runtime ablation
# ---------------------------------------------------------------------------


def variant_config(variant, base=None, ca_alpha=10.0):
    base = base or FitConfig()
    if variant == "GMM":
        return base.with_(mode="gmm", alpha_mode="fixed", alpha_fixed=0.0, solver="reinsch")
    if variant == "SMIXS":
        return base.with_(mode="smixs", solver="reinsch")
    if variant == "SMIXS-CA":
        return base.with_(mode="smixs", alpha_mode="fixed", alpha_fixed=ca_alpha, solver="reinsch")
    if variant == "SMIXS-CA-NR":
        return base.with_(mode="smixs", alpha_mode="fixed", alpha_fixed=ca_alpha, solver="dense")
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass
class BenchReport:
    sweep: str
    rows: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def seconds(self, variant, value):
        for r in self.rows:
            if r["variant"] == variant and r["value"] == value:
                return r["seconds"]
        raise KeyError((variant, value))

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        cols = ["sweep", "value", "variant", "seconds", "ratio_to_gmm", "iterations", "error"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: r.get(k) for k in cols})
        return buf.getvalue()


def environment_info():
    import numba
    import scipy

    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "processor": platform.processor(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _warm_up():
    # trigger JIT compilation outside the timed region
    spec = GeneratorSpec(c=2, n=6, p=6, seed=0)
    data = generate_dataset(spec)
    init = kmeans_init(data.dataset, 2, 0)
    for v in VARIANTS:
        try:
            fit_em(data.dataset, 2, variant_config(v).with_(max_iter=2), init)
        except SmixsError:
            pass


def run_benchmark(sweep, values, base_spec, variants=VARIANTS, repeats=3, seed=0,
                  base_config=None, ca_alpha=10.0, timer=time.perf_counter):
    """Median-of-``repeats`` fit time per (sweep value, variant).

    Every variant at a sweep point starts from the same k-means seed; only
    the EM fit is timed.  Each repeat loops the fit until it has run for at
    least 0.2 s (``timeit`` autorange) and records the per-fit mean, so fits
    shorter than the clock resolution still rank reliably.  A failing point
    is reported, not raised.
    """
    if sweep not in ("c", "n", "p"):
        raise ValueError(f"sweep must be 'c', 'n' or 'p', got {sweep!r}")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    base_config = base_config or FitConfig()
    _warm_up()
    report = BenchReport(sweep=sweep, environment=environment_info())
    for value in values:
        spec = replace(base_spec, **{sweep: int(value)}, seed=seed)
        data = generate_dataset(spec)
        d = data.dataset
        bp = band.band_pair_from_times(d.t)
        point_rows = []
        try:
            init = kmeans_init(d, spec.c, seed, base_config.kmeans_iter)
        except SmixsError as exc:
            init, init_err = None, f"{type(exc).__name__}: {exc}"
        for variant in variants:
            row = {"sweep": sweep, "value": int(value), "variant": variant,
                   "seconds": None, "ratio_to_gmm": None, "iterations": None, "error": None}
            if init is None:
                row["error"] = init_err
                point_rows.append(row)
                continue
            config = variant_config(variant, base_config, ca_alpha)
            times = []
            try:
                fit = fit_em(d, spec.c, config, init, bp=bp)
                tm = timeit.Timer(lambda: fit_em(d, spec.c, config, init, bp=bp), timer=timer)
                for _ in range(repeats):
                    number, total = tm.autorange()
                    times.append(total / number)
                row["seconds"] = statistics.median(times)
                row["iterations"] = fit.iterations
            except SmixsError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            point_rows.append(row)
        gmm = next((r["seconds"] for r in point_rows if r["variant"] == "GMM"), None)
        for r in point_rows:
            if gmm and r["seconds"] is not None:
                r["ratio_to_gmm"] = r["seconds"] / gmm
        report.rows.extend(point_rows)
    return report
