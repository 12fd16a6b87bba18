"""Explainable additive effect models over user features.

The main fitter is a cyclic, histogram-binned gradient-boosting GAM: per
boosting round every feature in turn absorbs a learning-rate-scaled slice of
the current residual into its per-bin values. Models are averaged over
bootstrap bags, which also yields per-bin uncertainty and out-of-bag early
stopping. After the main effects, the strongest residual interactions are
boosted as 2-D binned terms. An ordinary-least-squares baseline shares the
same model surface so downstream comparison code does not branch.

All shape functions are exported train-mean-centered: the intercept carries
the average prediction and each curve reads as a deviation from it.
"""

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import FEATURE_COLUMNS, UserAttributeTable, log_transform_attributes
from .errors import ConfigError, DataError
from .outcomes import OutcomeTable


@dataclass(frozen=True)
class EbmHyper:
    learning_rate: float = 0.01
    max_bins: int = 512
    min_samples_leaf: int = 3
    max_rounds: int = 5000
    n_interactions: int = 10
    n_bags: int = 8
    early_stop_patience: int = 50
    early_stop_tol: float = 0.0
    pair_bins: int = 16
    detect_bins: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_bins < 2:
            raise ConfigError("max_bins must be >= 2")
        if self.n_bags < 1:
            raise ConfigError("n_bags must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.n_interactions < 0:
            raise ConfigError("n_interactions must be >= 0")

    @staticmethod
    def from_dict(d: dict) -> "EbmHyper":
        known = {f.name for f in dataclasses.fields(EbmHyper)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ebm config fields: {sorted(unknown)}")
        return EbmHyper(**d)


@dataclass
class FeatureMatrix:
    user_ids: tuple[str, ...]
    columns: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    target: str


def assemble_features(
    attrs: UserAttributeTable,
    embeddings: dict | None,
    outcomes: OutcomeTable,
    target: str = "overall",
    include_embeddings: bool = True,
) -> FeatureMatrix:
    """Stack the five base attributes (counts log-transformed) and, unless
    ablated, the per-user embedding components; attach the chosen outcome."""
    if target == "overall":
        y = outcomes.overall.copy()
    else:
        if target not in outcomes.clusters:
            raise ValueError(
                f"unknown target cluster {target!r}; have {outcomes.clusters}"
            )
        y = outcomes.by_cluster[:, outcomes.clusters.index(target)].copy()
    view = log_transform_attributes(attrs)
    vidx = {u: i for i, u in enumerate(view.user_ids)}
    rows = []
    for u in outcomes.user_ids:
        if u not in vidx:
            raise DataError(f"user {u!r} has outcomes but no attributes")
        rows.append(vidx[u])
    base = view.matrix[rows]
    columns = list(FEATURE_COLUMNS)
    blocks = [base]
    if include_embeddings:
        if embeddings is None:
            raise DataError("embeddings required unless include_embeddings=False")
        vecs = []
        dim = None
        for u in outcomes.user_ids:
            if u not in embeddings:
                raise DataError(f"user {u!r} has no embedding")
            v = np.asarray(embeddings[u], dtype=np.float64)
            if dim is None:
                dim = v.size
            elif v.size != dim:
                raise DataError("embedding dimensions differ across users")
            vecs.append(v)
        blocks.append(np.vstack(vecs))
        columns.extend(f"x_{i}" for i in range(dim))
    X = np.hstack(blocks)
    return FeatureMatrix(
        user_ids=tuple(outcomes.user_ids),
        columns=tuple(columns),
        X=X,
        y=y,
        target=target,
    )


@dataclass
class Bins:
    """Piecewise-constant support: interior cuts define n_cuts+1 bins."""

    cuts: np.ndarray
    levels: np.ndarray | None = None  # distinct values, when few enough to keep

    @property
    def n_bins(self) -> int:
        return self.cuts.size + 1

    def assign(self, x) -> np.ndarray:
        return np.searchsorted(self.cuts, np.asarray(x, dtype=np.float64), side="right")


def _build_bins(col: np.ndarray, max_bins: int, min_leaf: int) -> Bins:
    vals = np.unique(col)
    if vals.size <= max_bins:
        cuts = (vals[:-1] + vals[1:]) / 2.0
        levels = vals
    else:
        qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
        cuts = np.unique(np.quantile(col, qs))
        levels = None
    if cuts.size == 0:
        return Bins(cuts=cuts, levels=levels)
    # enforce the occupancy minimum in one left-to-right pass: close a bin
    # whenever it has gathered min_leaf rows; a short tail merges leftwards
    counts = np.bincount(np.searchsorted(cuts, col, side="right"), minlength=cuts.size + 1)
    kept = []
    acc = 0
    for k in range(cuts.size):
        acc += int(counts[k])
        if acc >= min_leaf:
            kept.append(cuts[k])
            acc = 0
    if acc + int(counts[cuts.size]) < min_leaf and kept:
        kept.pop()
    new_cuts = np.asarray(kept)
    if levels is not None and new_cuts.size != cuts.size:
        levels = None  # merged levels no longer map one-to-one
    return Bins(cuts=new_cuts, levels=levels)


@dataclass
class FeatureShape:
    bins: Bins
    values: np.ndarray
    stderr: np.ndarray | None = None

    def __call__(self, x) -> np.ndarray:
        return self.values[self.bins.assign(x)]

    def stderr_at(self, x) -> np.ndarray:
        if self.stderr is None:
            return np.zeros(np.asarray(x).shape, dtype=np.float64)
        return self.stderr[self.bins.assign(x)]


@dataclass
class LinearShape:
    slope: float
    center: float

    def __call__(self, x) -> np.ndarray:
        return self.slope * (np.asarray(x, dtype=np.float64) - self.center)

    def stderr_at(self, x) -> np.ndarray:
        return np.zeros(np.asarray(x).shape, dtype=np.float64)


@dataclass
class PairTerm:
    i: int
    j: int
    bins_i: Bins
    bins_j: Bins
    values: np.ndarray  # (n_bins_i, n_bins_j)

    def __call__(self, xi, xj) -> np.ndarray:
        return self.values[self.bins_i.assign(xi), self.bins_j.assign(xj)]


@dataclass
class EffectModel:
    kind: str  # "ebm" | "linear"
    columns: tuple[str, ...]
    intercept: float
    shapes: list
    pair_terms: list = field(default_factory=list)
    train_ranges: list = field(default_factory=list)
    train_levels: list = field(default_factory=list)  # distinct values for discrete columns
    train_rmse_curve: list = field(default_factory=list)
    ridge_fallback: bool = False


def _discrete_levels(X: np.ndarray, max_levels: int = 16) -> list:
    out = []
    for m in range(X.shape[1]):
        vals = np.unique(X[:, m])
        out.append(vals if vals.size <= max_levels else None)
    return out


def _predict_array(model: EffectModel, X: np.ndarray) -> np.ndarray:
    out = np.full(X.shape[0], model.intercept, dtype=np.float64)
    for m, shape in enumerate(model.shapes):
        out += shape(X[:, m])
    for term in model.pair_terms:
        out += term(X[:, term.i], X[:, term.j])
    return out


def predict(model: EffectModel, features: FeatureMatrix) -> np.ndarray:
    if tuple(features.columns) != tuple(model.columns):
        raise ValueError("feature columns do not match the fitted model")
    return _predict_array(model, features.X)


def _boost_cycle(
    targets: list,
    bag_bin_idx: list,
    bag_counts: list,
    residual: np.ndarray,
    oob_bin_idx: list,
    oob_pred: np.ndarray,
    y_oob: np.ndarray,
    shapes: list,
    lr: float,
    min_leaf: int,
    max_rounds: int,
    patience: int,
    tol: float,
    rmse_curve: list | None = None,
):
    """Shared cyclic boosting loop over 1-D (or flattened 2-D) binned terms.

    Mutates ``shapes``/``residual``/``oob_pred`` in place; returns the
    best-round snapshot of the shapes according to out-of-bag error.
    ``min_leaf`` gates updates per occupied cell: 1-D bins already guarantee
    occupancy at construction, so mains pass 1; 2-D grids are not merged and
    pass the configured minimum to keep near-empty cells silent.
    """
    best_err = np.inf
    best_shapes = [v.copy() for v in shapes]
    stale = 0
    use_oob = y_oob.size > 0
    for _ in range(max_rounds):
        for m in targets:
            counts = bag_counts[m]
            sums = np.bincount(bag_bin_idx[m], weights=residual, minlength=counts.size)
            with np.errstate(invalid="ignore", divide="ignore"):
                means = np.where(counts >= min_leaf, sums / np.maximum(counts, 1), 0.0)
            upd = lr * means
            shapes[m] += upd
            residual -= upd[bag_bin_idx[m]]
            if use_oob:
                oob_pred += upd[oob_bin_idx[m]]
        if rmse_curve is not None:
            rmse_curve.append(float(np.sqrt(np.mean(residual**2))))
        err = (
            float(np.mean((y_oob - oob_pred) ** 2))
            if use_oob
            else float(np.mean(residual**2))
        )
        if err < best_err - tol:
            best_err = err
            best_shapes = [v.copy() for v in shapes]
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best_shapes


def fit_ebm(features: FeatureMatrix, hyper: EbmHyper) -> EffectModel:
    """Bagged cyclic gradient-boosting GAM with identity link.

    Shape values are bag-averaged and then centered so the train-set mean of
    every term is exactly zero, with the intercept absorbing the means.
    """
    X, y = features.X, features.y
    n, p = X.shape
    if n == 0 or p == 0:
        raise DataError("empty feature matrix")
    if n < 2:
        raise DataError("need at least 2 rows to fit")
    train_ranges = [(float(X[:, m].min()), float(X[:, m].max())) for m in range(p)]
    bins = [_build_bins(X[:, m], hyper.max_bins, hyper.min_samples_leaf) for m in range(p)]
    if np.all(y == y[0]):
        warnings.warn("constant target: returning an intercept-only model")
        shapes = [
            FeatureShape(bins=b, values=np.zeros(b.n_bins), stderr=np.zeros(b.n_bins))
            for b in bins
        ]
        return EffectModel(
            kind="ebm",
            columns=features.columns,
            intercept=float(y[0]),
            shapes=shapes,
            train_ranges=train_ranges,
            train_levels=_discrete_levels(X),
        )

    bin_idx = np.column_stack([bins[m].assign(X[:, m]) for m in range(p)])
    full_counts = [
        np.bincount(bin_idx[:, m], minlength=bins[m].n_bins).astype(np.float64)
        for m in range(p)
    ]
    full_weights = [c / n for c in full_counts]

    seeds = np.random.SeedSequence(hyper.seed).spawn(hyper.n_bags)
    bag_main_values: list[list[np.ndarray]] = []
    bag_intercepts: list[float] = []
    bag_rows: list[np.ndarray] = []
    train_rmse_curve: list[float] = []
    for b in range(hyper.n_bags):
        rng = np.random.default_rng(seeds[b])
        rows = rng.integers(0, n, n)
        bag_rows.append(rows)
        oob = np.setdiff1d(np.arange(n), np.unique(rows))
        intercept_b = float(np.mean(y[rows]))
        residual = y[rows] - intercept_b
        shapes_b = [np.zeros(bins[m].n_bins) for m in range(p)]
        bag_idx = [bin_idx[rows, m] for m in range(p)]
        bag_counts = [
            np.bincount(bag_idx[m], minlength=bins[m].n_bins).astype(np.float64)
            for m in range(p)
        ]
        oob_idx = [bin_idx[oob, m] for m in range(p)]
        oob_pred = np.full(oob.size, intercept_b)
        best = _boost_cycle(
            targets=list(range(p)),
            bag_bin_idx=bag_idx,
            bag_counts=bag_counts,
            residual=residual,
            oob_bin_idx=oob_idx,
            oob_pred=oob_pred,
            y_oob=y[oob],
            shapes=shapes_b,
            lr=hyper.learning_rate,
            min_leaf=1,
            max_rounds=hyper.max_rounds,
            patience=hyper.early_stop_patience,
            tol=hyper.early_stop_tol,
            rmse_curve=train_rmse_curve if b == 0 else None,
        )
        # center this bag's shapes on the full train distribution
        for m in range(p):
            shift = float(full_weights[m] @ best[m])
            best[m] -= shift
            intercept_b += shift
        bag_main_values.append(best)
        bag_intercepts.append(intercept_b)

    shapes = []
    for m in range(p):
        stack = np.vstack([bag_main_values[b][m] for b in range(hyper.n_bags)])
        mean_vals = stack.mean(axis=0)
        stderr = stack.std(axis=0, ddof=0) / np.sqrt(hyper.n_bags)
        shapes.append(FeatureShape(bins=bins[m], values=mean_vals, stderr=stderr))
    intercept = float(np.mean(bag_intercepts))

    pair_terms: list[PairTerm] = []
    if hyper.n_interactions > 0 and p >= 2:
        pair_terms = _fit_interactions(
            X,
            y,
            bin_idx,
            bins,
            shapes,
            intercept,
            bag_rows,
            bag_main_values,
            bag_intercepts,
            hyper,
        )
        # center pair grids on the full train distribution
        for term in pair_terms:
            bi = term.bins_i.assign(X[:, term.i])
            bj = term.bins_j.assign(X[:, term.j])
            flat = bi * term.bins_j.n_bins + bj
            w = np.bincount(flat, minlength=term.values.size) / n
            shift = float(w @ term.values.ravel())
            term.values -= shift
            intercept += shift

    model = EffectModel(
        kind="ebm",
        columns=features.columns,
        intercept=intercept,
        shapes=shapes,
        pair_terms=pair_terms,
        train_ranges=train_ranges,
        train_levels=_discrete_levels(X),
        train_rmse_curve=train_rmse_curve,
    )
    return model


def _interaction_strength(res: np.ndarray, fi: np.ndarray, fj: np.ndarray, nb: int) -> float:
    flat = fi * nb + fj
    counts = np.bincount(flat, minlength=0).astype(np.float64)
    sums = np.bincount(flat, weights=res)
    nz = counts > 0
    return float(np.sum(sums[nz] ** 2 / counts[nz]) / res.size)


def _fit_interactions(
    X,
    y,
    bin_idx,
    bins,
    shapes,
    intercept,
    bag_rows,
    bag_main_values,
    bag_intercepts,
    hyper: EbmHyper,
) -> list:
    n, p = X.shape
    pred_main = np.full(n, intercept)
    for m in range(p):
        pred_main += shapes[m](X[:, m])
    res_full = y - pred_main

    detect = [_build_bins(X[:, m], hyper.detect_bins, hyper.min_samples_leaf) for m in range(p)]
    didx = [detect[m].assign(X[:, m]) for m in range(p)]
    ranked = []
    for i in range(p):
        if detect[i].n_bins < 2:
            continue
        for j in range(i + 1, p):
            if detect[j].n_bins < 2:
                continue
            s = _interaction_strength(res_full, didx[i], didx[j], detect[j].n_bins)
            ranked.append((-s, i, j))
    ranked.sort()
    chosen = [(i, j) for _, i, j in ranked[: hyper.n_interactions]]
    if not chosen:
        return []

    pair_bins = {}
    for i, j in chosen:
        if i not in pair_bins:
            pair_bins[i] = _build_bins(X[:, i], hyper.pair_bins, hyper.min_samples_leaf)
        if j not in pair_bins:
            pair_bins[j] = _build_bins(X[:, j], hyper.pair_bins, hyper.min_samples_leaf)
    pair_idx = {m: pair_bins[m].assign(X[:, m]) for m in pair_bins}

    grids = []  # per pair: (n_bins_i * n_bins_j) flattened values, per bag
    for b in range(hyper.n_bags):
        rows = bag_rows[b]
        oob = np.setdiff1d(np.arange(n), np.unique(rows))
        pred_b = np.full(n, bag_intercepts[b])
        for m in range(p):
            pred_b += bag_main_values[b][m][bin_idx[:, m]]
        residual = (y - pred_b)[rows]
        flat_idx = []
        flat_counts = []
        flat_oob = []
        sizes = []
        for i, j in chosen:
            nbj = pair_bins[j].n_bins
            flat = pair_idx[i] * nbj + pair_idx[j]
            sizes.append(pair_bins[i].n_bins * nbj)
            flat_idx.append(flat[rows])
            flat_counts.append(
                np.bincount(flat[rows], minlength=sizes[-1]).astype(np.float64)
            )
            flat_oob.append(flat[oob])
        values = [np.zeros(s) for s in sizes]
        oob_pred = pred_b[oob].copy()
        best = _boost_cycle(
            targets=list(range(len(chosen))),
            bag_bin_idx=flat_idx,
            bag_counts=flat_counts,
            residual=residual,
            oob_bin_idx=flat_oob,
            oob_pred=oob_pred,
            y_oob=y[oob],
            shapes=values,
            lr=hyper.learning_rate,
            min_leaf=hyper.min_samples_leaf,
            max_rounds=hyper.max_rounds,
            patience=hyper.early_stop_patience,
            tol=hyper.early_stop_tol,
        )
        grids.append(best)

    terms = []
    for t, (i, j) in enumerate(chosen):
        stack = np.vstack([grids[b][t] for b in range(hyper.n_bags)])
        mean_vals = stack.mean(axis=0)
        terms.append(
            PairTerm(
                i=i,
                j=j,
                bins_i=pair_bins[i],
                bins_j=pair_bins[j],
                values=mean_vals.reshape(pair_bins[i].n_bins, pair_bins[j].n_bins),
            )
        )
    return terms


def fit_linear(features: FeatureMatrix, allow_ridge: bool = True) -> EffectModel:
    """Ordinary least squares with the same centered-shape representation."""
    X, y = features.X, features.y
    n, p = X.shape
    if n == 0 or p == 0:
        raise DataError("empty feature matrix")
    design = np.hstack([np.ones((n, 1)), X])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    ridge_fallback = False
    if rank < p + 1:
        if not allow_ridge:
            raise DataError("design matrix is rank deficient")
        warnings.warn("rank-deficient design; falling back to a small ridge penalty")
        gram = design.T @ design
        alpha = 1e-8 * np.trace(gram) / (p + 1)
        coef = np.linalg.solve(gram + alpha * np.eye(p + 1), design.T @ y)
        ridge_fallback = True
    means = X.mean(axis=0)
    shapes = [LinearShape(slope=float(coef[m + 1]), center=float(means[m])) for m in range(p)]
    intercept = float(coef[0] + np.dot(coef[1:], means))
    return EffectModel(
        kind="linear",
        columns=features.columns,
        intercept=intercept,
        shapes=shapes,
        train_ranges=[(float(X[:, m].min()), float(X[:, m].max())) for m in range(p)],
        train_levels=_discrete_levels(X),
        ridge_fallback=ridge_fallback,
    )


@dataclass
class ImportanceTable:
    rows: tuple  # (feature, importance), sorted descending

    def as_dict(self) -> dict:
        return dict(self.rows)

    def top(self) -> str:
        return self.rows[0][0]


def feature_importance(model: EffectModel, train: FeatureMatrix) -> ImportanceTable:
    """Mean absolute contribution of each term over the training rows."""
    if tuple(train.columns) != tuple(model.columns):
        raise ValueError("feature columns do not match the fitted model")
    rows = []
    for m, name in enumerate(model.columns):
        rows.append((name, float(np.mean(np.abs(model.shapes[m](train.X[:, m]))))))
    for term in model.pair_terms:
        name = f"{model.columns[term.i]} x {model.columns[term.j]}"
        rows.append((name, float(np.mean(np.abs(term(train.X[:, term.i], train.X[:, term.j]))))))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return ImportanceTable(rows=tuple(rows))


@dataclass
class CurveTable:
    feature: str
    x: np.ndarray
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def rows(self):
        return list(zip(self.x, self.value, self.lower, self.upper))


def contribution_curve(model: EffectModel, feature: str, grid: int = 64) -> CurveTable:
    """Centered shape curve with +/- 2 bag-standard-error bounds.

    Discrete features (including binary ones) get one row per level;
    continuous features are evaluated on an even grid over the train range.
    """
    if feature not in model.columns:
        raise KeyError(f"unknown feature {feature!r}")
    m = model.columns.index(feature)
    shape = model.shapes[m]
    lo, hi = model.train_ranges[m]
    levels = getattr(getattr(shape, "bins", None), "levels", None)
    if levels is None and model.train_levels:
        levels = model.train_levels[m]
    if levels is not None:
        xs = np.asarray(levels, dtype=np.float64)
    elif hi > lo:
        xs = np.linspace(lo, hi, grid)
    else:
        xs = np.array([lo])
    value = shape(xs)
    half = 2.0 * shape.stderr_at(xs)
    return CurveTable(feature=feature, x=xs, value=value, lower=value - half, upper=value + half)
