"""Readers/writers for the pipeline's on-disk stage outputs.

Numeric values are written with repr-level precision so that reloading a
stage output reproduces the in-memory values bit-for-bit (resume mode relies
on this).
"""

import csv
import os

import numpy as np

from .bprmf import BprModel
from .errors import DataError
from .outcomes import OutcomeTable
from .propensity import PropensityTable


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_propensities(tables, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["post_id", "scheme", "mu", "theta_hat"])
        for table in tables:
            mu = "" if table.mu is None else _fmt(table.mu)
            for post_id in sorted(table.values):
                w.writerow([post_id, table.scheme, mu, _fmt(table.values[post_id])])


def read_propensities(path, floor: float) -> dict:
    """Reload propensity tables keyed by scheme."""
    by_scheme: dict[str, dict] = {}
    mus: dict[str, float | None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            scheme = row["scheme"]
            by_scheme.setdefault(scheme, {})[row["post_id"]] = float(row["theta_hat"])
            mus[scheme] = float(row["mu"]) if row["mu"] else None
    return {
        scheme: PropensityTable.from_values(vals, scheme=scheme, mu=mus[scheme], floor=floor)
        for scheme, vals in by_scheme.items()
    }


def write_topic_vectors(vectors: dict, path):
    if not vectors:
        raise DataError("no topic vectors to write")
    k = len(next(iter(vectors.values())))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["post_id"] + [f"t_{i}" for i in range(k)])
        for post_id in sorted(vectors):
            w.writerow([post_id] + [_fmt(v) for v in vectors[post_id]])


def read_topic_vectors(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float64)
    return out


def write_embeddings(model: BprModel, path):
    dim = model.user_factors.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id"] + [f"x_{i}" for i in range(dim)])
        for i, user_id in enumerate(model.user_ids):
            w.writerow([user_id] + [_fmt(v) for v in model.user_factors[i]])


def read_embeddings(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float64)
    return out


def write_training_curve(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(curve):
            w.writerow([epoch, _fmt(loss)])


def write_outcomes(table: OutcomeTable, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "y_overall"] + list(table.clusters))
        for i, user_id in enumerate(table.user_ids):
            w.writerow(
                [user_id, _fmt(table.overall[i])]
                + [_fmt(v) for v in table.by_cluster[i]]
            )


def write_metrics(rows, path):
    """rows: iterable of (model, metric, k, value)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "metric", "k", "value"])
        for model, metric, k, value in rows:
            w.writerow([model, metric, k, _fmt(value)])


def write_importance(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "importance"])
        for feature, importance in table.rows:
            w.writerow([feature, _fmt(importance)])


def write_curve(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "value", "lower", "upper"])
        for x, value, lower, upper in curve.rows():
            w.writerow([_fmt(x), _fmt(value), _fmt(lower), _fmt(upper)])


def write_embedding_analysis(rows, path):
    """rows: iterable of (dataset_tag, n_clusters, n_noise, silhouette)."""
    exists = os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(["dataset_tag", "n_clusters", "n_noise", "silhouette"])
        for tag, n_clusters, n_noise, sil in rows:
            w.writerow([tag, n_clusters, n_noise, _fmt(sil)])
