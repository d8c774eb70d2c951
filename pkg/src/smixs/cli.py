"""Command-line entry point: ``smixs generate | fit | evaluate | compare | benchmark``."""
from dataclasses import asdict
import json
import logging
from pathlib import Path
import sys
import time

import click
import numpy as np

from . import band, formats
from .errors import AllRestartsFailed, SmixsError
from .evaluation import VARIANTS, evaluate_fit, head_to_head, run_benchmark
from .formats import FormatError, atomic_write
from .initialization import RestartPlan, bic, multi_restart, select_cluster_count
from .model import Dataset, FitConfig, FitResult, e_step, observed_loglik
from .synth import GeneratorSpec, generate_dataset

EXIT_USAGE = 2
EXIT_NUMERIC = 3

seed_option = click.option(
    "--seed", type=int, default=0, show_default=True, envvar="SMIXS_SEED",
    help="Base RNG seed (default may be overridden by SMIXS_SEED).",
)


def _fail(code, msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _parse_alpha_mode(value):
    if value in ("gradient", "grid"):
        return value, None
    if value.startswith("fixed"):
        _, _, rest = value.partition(":")
        try:
            a = float(rest) if rest else 1.0
        except ValueError:
            raise click.BadParameter(f"bad fixed value {rest!r}", param_hint="--alpha-mode")
        if a < 0:
            raise click.BadParameter("fixed alpha must be >= 0", param_hint="--alpha-mode")
        return "fixed", a
    raise click.BadParameter(
        f"{value!r} is not one of gradient, grid, fixed:VALUE", param_hint="--alpha-mode"
    )


def _parse_range(value):
    try:
        if ":" in value:
            lo, hi = (int(v) for v in value.split(":"))
            cs = tuple(range(lo, hi + 1))
        else:
            cs = tuple(int(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter(f"{value!r} is not LO:HI or a comma list", param_hint="--select-c")
    if not cs or min(cs) < 1:
        raise click.BadParameter("cluster counts must be >= 1", param_hint="--select-c")
    return cs


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Smoothing-spline mixture clustering of longitudinal data."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--c", "c", type=click.IntRange(min=1), required=True, help="Number of clusters.")
@click.option("--n", "n", type=click.IntRange(min=1), required=True, help="Number of subjects.")
@click.option("--p", "p", type=click.IntRange(min=3), required=True, help="Measurements per subject.")
@click.option("--noise", type=click.IntRange(1, 4), default=1, show_default=True, help="Noise level 1-4.")
@click.option("--mean-scale", type=float, default=10.0, show_default=True)
@click.option("--octaves", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--frequency", type=float, default=3.0, show_default=True)
@seed_option
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Dataset CSV path.")
def generate(c, n, p, noise, mean_scale, octaves, frequency, seed, out):
    """Write a synthetic dataset CSV and its ``.truth.json`` sidecar."""
    try:
        spec = GeneratorSpec(c=c, n=n, p=p, noise_level=noise, seed=seed, mean_scale=mean_scale,
                             octaves=octaves, frequency=frequency)
    except ValueError as exc:
        _fail(EXIT_USAGE, str(exc))
    data = generate_dataset(spec)
    formats.write_dataset(out, data.dataset)
    truth = formats.truth_to_json(data.dataset.labels, data.true_means, spec.to_dict(),
                                  data.dataset.ids)
    atomic_write(formats.truth_path_for(out), truth)
    click.echo(f"wrote {out} ({n} samples x {p} measurements) and {formats.truth_path_for(out)}")


def _load_dataset(path):
    try:
        return formats.read_dataset(path)
    except FormatError as exc:
        _fail(EXIT_USAGE, f"{path}: {exc}")
    except OSError as exc:
        _fail(EXIT_USAGE, f"cannot read {path}: {exc}")


@main.command()
@click.option("--data", "data_path", type=click.Path(dir_okay=False), required=True)
@click.option("--c", "c", type=click.IntRange(min=1), default=None, help="Fixed cluster count.")
@click.option("--select-c", "select_c", default=None, help="Choose c by BIC over LO:HI or a list.")
@click.option("--mode", type=click.Choice(["smixs", "gmm"]), default="smixs", show_default=True)
@click.option("--alpha-mode", default="gradient", show_default=True,
              help="gradient, grid or fixed:VALUE.")
@click.option("--variance", type=click.Choice(["corrected", "uncorrected"]), default="corrected",
              show_default=True)
@click.option("--solver", type=click.Choice(["reinsch", "dense"]), default="reinsch", show_default=True)
@click.option("--rel-tol", type=float, default=1e-8, show_default=True)
@click.option("--max-iter", type=click.IntRange(min=1), default=500, show_default=True)
@click.option("--restarts", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--theta", type=float, default=1e-3, show_default=True, help="Gradient step rate.")
@click.option("--fd-h", type=float, default=0.1, show_default=True, help="Finite-difference offset.")
@click.option("--bic-df", type=click.Choice(["naive", "trace"]), default="naive", show_default=True)
@click.option("--bic-threshold", type=float, default=0.03, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel restart workers.")
@seed_option
@click.option("--timings", is_flag=True, help="Include wall-clock timings (breaks byte-reproducibility).")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Model JSON path.")
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="Optional run report JSON.")
def fit(data_path, c, select_c, mode, alpha_mode, variance, solver, rel_tol, max_iter, restarts,
        theta, fd_h, bic_df, bic_threshold, jobs, seed, timings, out, report):
    """Fit a mixture to a dataset CSV and write the model JSON."""
    if (c is None) == (select_c is None):
        raise click.UsageError("give exactly one of --c or --select-c")
    am, afixed = _parse_alpha_mode(alpha_mode)
    config = FitConfig(mode=mode, alpha_mode=am if mode == "smixs" else "fixed",
                       alpha_fixed=afixed if afixed is not None else (0.0 if mode == "gmm" else 1.0),
                       variance=variance, solver=solver, rel_tol=rel_tol, max_iter=max_iter,
                       restarts=restarts, seed=seed, bic_df=bic_df, theta=theta, fd_h=fd_h)
    if mode == "gmm":
        config = config.with_(alpha_fixed=0.0)
    d = _load_dataset(data_path)
    bp = band.band_pair_from_times(d.t)
    cs = _parse_range(select_c) if select_c else (c,)
    if max(cs) > d.n:
        _fail(EXIT_USAGE, f"cannot fit {max(cs)} clusters to {d.n} samples")
    plan = RestartPlan(n_restarts=restarts, seed=seed, c_range=cs, bic_threshold=bic_threshold,
                       n_jobs=jobs)
    t0 = time.perf_counter()
    try:
        if select_c:
            sel = select_cluster_count(d, plan, config, bp)
            result = sel.fit
            selection = {"c_values": list(sel.c_values), "bic_values": [None if b is None else float(b) for b in sel.bic_values],
                         "chosen": sel.c, "saturated": sel.saturated, "threshold": bic_threshold}
        else:
            result = multi_restart(d, c, plan, config, bp)
            selection = None
    except AllRestartsFailed as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except SmixsError as exc:
        _fail(EXIT_NUMERIC, f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - t0
    bic_value = bic(result, d, bic_df, bp)
    timing = None
    if timings:
        timing = {**{k: float(v) for k, v in result.timings.items()}, "total": elapsed}
    atomic_write(out, formats.dumps(formats.model_to_dict(
        result, d.t, bic_value, bic_df, None, selection, timing)))
    if report:
        atomic_write(report, formats.dumps({
            "schema": formats.SCHEMA,
            "data": str(data_path),
            "n": d.n, "p": d.p, "c": result.c,
            "config": _jsonable(asdict(config)),
            "restart_plan": _jsonable(asdict(plan)),
            "bic": float(bic_value),
            "loglik": float(result.loglik),
            "selection": selection,
        }))
    click.echo(f"c={result.c} loglik={result.loglik:.6g} bic={bic_value:.6g} "
               f"iterations={result.iterations} converged={result.converged}")


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def _fit_from_model(params, d):
    resp = e_step(d, params)
    return FitResult(params=params, resp=resp, objective_trace=np.array([]),
                     loglik=observed_loglik(d, params), iterations=0, converged=True)


@main.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(dir_okay=False), required=True)
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), default=None,
              help="Truth sidecar (default: <data>.truth.json).")
@click.option("--method", default=None, help="Method label written to the CSV (default: model file stem).")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Output prefix; writes <out>.json and <out>.csv.")
def evaluate(model_path, data_path, truth_path, method, out):
    """Score a fitted model against ground truth (F-score, mean-curve RMSE)."""
    d = _load_dataset(data_path)
    truth_path = Path(truth_path) if truth_path else formats.truth_path_for(data_path)
    if not truth_path.exists():
        _fail(EXIT_USAGE, f"truth file {truth_path} not found")
    try:
        params, t, _ = formats.load_model(model_path)
        truth = formats.read_truth(truth_path)
    except (FormatError, OSError, KeyError, TypeError, ValueError) as exc:
        _fail(EXIT_USAGE, str(exc))
    if params.mu.shape[1] != d.p or not np.allclose(t, d.t):
        _fail(EXIT_USAGE, "model knot times do not match the dataset")
    labels = np.asarray(truth["labels"], dtype=int)
    if labels.shape != (d.n,):
        _fail(EXIT_USAGE, f"truth has {labels.size} labels for {d.n} samples")
    fit_ = _fit_from_model(params, d)
    metrics = evaluate_fit(fit_, labels, truth.get("true_means"))
    metrics["loglik"] = fit_.loglik
    name = Path(data_path).stem
    method = method or Path(model_path).stem
    rows = [{"dataset": name, "method": method, "metric": k, "value": v} for k, v in sorted(metrics.items())]
    atomic_write(f"{out}.csv", formats.metrics_to_csv(rows))
    atomic_write(f"{out}.json", formats.dumps({"schema": formats.SCHEMA, "dataset": name,
                                               "method": method, "metrics": metrics}))
    click.echo(" ".join(f"{k}={v:.6g}" for k, v in sorted(metrics.items())))


@main.command()
@click.option("--a", "a_paths", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Metrics CSV(s) for method A.")
@click.option("--b", "b_paths", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Metrics CSV(s) for method B.")
@click.option("--metric", default="f_score", show_default=True)
@click.option("--lower-is-better", is_flag=True, help="Use for error metrics such as rmse.")
def compare(a_paths, b_paths, metric, lower_is_better):
    """Count per-dataset wins between two sets of ``evaluate`` outputs."""
    def collect(paths):
        out = {}
        for path in paths:
            for r in formats.read_metrics_csv(path):
                if r["metric"] == metric:
                    out[r["dataset"]] = r["value"]
        return out
    try:
        wins_a, wins_b, ties = head_to_head(collect(a_paths), collect(b_paths),
                                            higher_is_better=not lower_is_better)
    except SmixsError as exc:
        _fail(EXIT_USAGE, str(exc))
    click.echo(f"metric={metric} wins_a={wins_a} wins_b={wins_b} ties={ties}")


_VARIANT_NAMES = {v.lower(): v for v in VARIANTS}


@main.command()
@click.option("--sweep", type=click.Choice(["c", "n", "p"]), required=True)
@click.option("--values", required=True, help="Comma-separated sweep values.")
@click.option("--variants", default="gmm,smixs,smixs-ca,smixs-ca-nr", show_default=True)
@click.option("--c", "c", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--n", "n", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--p", "p", type=click.IntRange(min=3), default=100, show_default=True)
@click.option("--noise", type=click.IntRange(1, 4), default=2, show_default=True)
@click.option("--repeats", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--ca-alpha", type=float, default=10.0, show_default=True,
              help="Fixed smoothing weight of the CA variants.")
@click.option("--max-iter", type=click.IntRange(min=1), default=500, show_default=True)
@seed_option
@click.option("--out", required=True, help="Output prefix; writes <out>.json and <out>.csv.")
def benchmark(sweep, values, variants, c, n, p, noise, repeats, ca_alpha, max_iter, seed, out):
    """Time GMM and the SMIXS variants while sweeping c, n or p."""
    try:
        vals = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"{values!r} is not a comma list of integers", param_hint="--values")
    chosen = []
    for v in variants.split(","):
        key = v.strip().lower()
        if key not in _VARIANT_NAMES:
            raise click.BadParameter(f"unknown variant {v!r}; choose from {', '.join(_VARIANT_NAMES)}",
                                     param_hint="--variants")
        chosen.append(_VARIANT_NAMES[key])
    try:
        base = GeneratorSpec(c=c, n=n, p=p, noise_level=noise, seed=seed, mean_scale=10.0)
        for v in vals:
            GeneratorSpec(**{**base.to_dict(), sweep: v})
    except ValueError as exc:
        _fail(EXIT_USAGE, str(exc))
    rep = run_benchmark(sweep, vals, base, chosen, repeats=repeats, seed=seed,
                        base_config=FitConfig(max_iter=max_iter), ca_alpha=ca_alpha)
    atomic_write(f"{out}.json", rep.to_json() + "\n")
    atomic_write(f"{out}.csv", rep.to_csv())
    click.echo(rep.to_csv(), nl=False)


if __name__ == "__main__":
    main()
