"""On-disk formats: dataset CSV, truth and model JSON."""
import csv
import io
import json
import os
from pathlib import Path
import tempfile

import numpy as np

from .errors import SmixsError
from .model import Dataset, MixtureParams

SCHEMA = 1


class FormatError(SmixsError, ValueError):
    pass


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x):
    return repr(float(x))


def dataset_to_csv(d):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [_num(v) for v in d.t])
    ids = d.ids or tuple(str(i) for i in range(d.n))
    for sid, row in zip(ids, d.y):
        w.writerow([sid] + [_num(v) for v in row])
    return buf.getvalue()


def write_dataset(path, d):
    atomic_write(path, dataset_to_csv(d))


def parse_dataset(text):
    """Parse the ``t,...`` / ``id,...`` CSV layout; errors name the 1-based row."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise FormatError("row 1: empty file")
    header = rows[0]
    if header[0].strip() != "t":
        raise FormatError(f"row 1: header must start with 't', got {header[0]!r}")
    try:
        t = np.array([float(v) for v in header[1:]])
    except ValueError as exc:
        raise FormatError(f"row 1: bad knot time ({exc})") from None
    ids, values = [], []
    for num, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"row {num}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise FormatError(f"row {num}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise FormatError(f"row {num}: missing or non-finite value")
        ids.append(row[0].strip())
        values.append(vals)
    if not values:
        raise FormatError("row 2: no samples")
    try:
        return Dataset(y=np.array(values), t=t, ids=tuple(ids))
    except (SmixsError, ValueError) as exc:
        raise FormatError(f"row 1: {exc}") from None


def read_dataset(path):
    return parse_dataset(Path(path).read_text())


def truth_path_for(dataset_path):
    p = Path(dataset_path)
    return p.with_name(p.stem + ".truth.json")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def truth_to_json(labels, true_means, spec=None, ids=None):
    return dumps({
        "schema": SCHEMA,
        "labels": [int(v) for v in labels],
        "true_means": np.asarray(true_means, dtype=float).tolist(),
        "ids": list(ids) if ids is not None else None,
        "spec": spec,
    })


def read_truth(path):
    obj = json.loads(Path(path).read_text())
    _check_keys(obj, {"schema", "labels", "true_means", "ids", "spec"}, "truth")
    return obj


def _check_keys(obj, allowed, what):
    if not isinstance(obj, dict):
        raise FormatError(f"{what} file must hold a JSON object")
    if obj.get("schema") != SCHEMA:
        raise FormatError(f"{what} file has schema {obj.get('schema')!r}, expected {SCHEMA}")
    unknown = set(obj) - allowed
    if unknown:
        raise FormatError(f"{what} file has unknown fields: {sorted(unknown)}")


MODEL_KEYS = {
    "schema", "t", "clusters", "objective_trace", "expectation_trace", "loglik",
    "iterations", "converged", "bic", "bic_df", "selection", "config", "timings",
}
CLUSTER_KEYS = {"pi", "mu", "sigma2", "alpha"}


def model_to_dict(fit, t, bic_value, bic_df, config, selection=None, timings=None):
    return {
        "schema": SCHEMA,
        "t": [float(v) for v in t],
        "clusters": [
            {
                "pi": float(fit.params.pi[k]),
                "mu": [float(v) for v in fit.params.mu[k]],
                "sigma2": float(fit.params.sigma2[k]),
                "alpha": float(fit.params.alpha[k]),
            }
            for k in range(fit.c)
        ],
        "objective_trace": [float(v) for v in fit.objective_trace],
        "expectation_trace": [float(v) for v in fit.expectation_trace],
        "loglik": float(fit.loglik),
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
        "bic": float(bic_value),
        "bic_df": bic_df,
        "selection": selection,
        "config": config,
        "timings": timings,
    }


def load_model(path):
    """Read a model JSON; returns ``(MixtureParams, t, raw dict)``."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from None
    _check_keys(obj, MODEL_KEYS, "model")
    clusters = obj["clusters"]
    for k, cl in enumerate(clusters):
        if set(cl) != CLUSTER_KEYS:
            raise FormatError(f"cluster {k} has fields {sorted(cl)}, expected {sorted(CLUSTER_KEYS)}")
    params = MixtureParams(
        pi=np.array([cl["pi"] for cl in clusters], dtype=float),
        mu=np.array([cl["mu"] for cl in clusters], dtype=float),
        sigma2=np.array([cl["sigma2"] for cl in clusters], dtype=float),
        alpha=np.array([cl["alpha"] for cl in clusters], dtype=float),
    )
    return params, np.array(obj["t"], dtype=float), obj


def metrics_to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["dataset", "method", "metric", "value"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": _num(r["value"])})
    return buf.getvalue()


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["value"] = float(r["value"])
    return rows
