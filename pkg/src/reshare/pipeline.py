"""End-to-end orchestration: propensities, debiased embeddings, outcomes,
effect models, and a deterministic report, with resumable stage outputs.

Every stage writes its artifacts plus a ``<stage>.done`` marker containing a
hash of the effective configuration. With ``resume=True`` a stage whose
marker matches is skipped and its outputs are reloaded, which reproduces the
final report byte-for-byte.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import artifacts
from .bprmf import BprHyper, ranking_metrics, train
from .dataset import FEATURE_COLUMNS, load_dataset, split, write_dataset
from .effects import (
    EbmHyper,
    FeatureMatrix,
    assemble_features,
    contribution_curve,
    feature_importance,
    fit_ebm,
    fit_linear,
    predict,
)
from .errors import ConfigError, DataError
from .outcomes import compute_outcomes
from .plotting import line_chart_svg
from .propensity import (
    biased_propensity,
    follower_propensity,
    neural_propensity,
    virality_propensity,
)
from .stats import dbscan, rmse, silhouette, welch_t_test
from .synthgen import SynthConfig, generate, write_effects_truth, write_truth
from .topics import fit_lda, infer_corpus, load_stopwords, tokenize

RANKING_SCHEMES = ("biased", "virality", "follower", "neural")
MODEL_NAMES = {
    "biased": "BPRMF",
    "virality": "BPRMF-V",
    "follower": "BPRMF-F",
    "neural": "BPRMF-NN",
    "base": "Base",
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    posts_csv: str | None = None
    users_csv: str | None = None
    interactions_csv: str | None = None
    synth: SynthConfig | None = None
    out_dir: str = "out"
    mu: float = 0.5
    floor: float = 1e-3
    schemes: tuple = RANKING_SCHEMES
    k_list: tuple = (20, 40, 60, 80)
    bpr: BprHyper = field(default_factory=BprHyper)
    ebm: EbmHyper = field(default_factory=EbmHyper)
    topics_k: int = 20
    topics_iterations: int = 200
    stopwords_path: str | None = None
    edge_split_ratio: float = 0.8
    edge_split_seed: int = 17
    user_split_ratio: float = 0.8
    user_split_seed: int = 23
    clusters: tuple = ()
    runs: int = 1
    seed: int = 0
    emit_plots: bool = True

    def __post_init__(self):
        has_files = all(
            p is not None for p in (self.posts_csv, self.users_csv, self.interactions_csv)
        )
        if self.synth is None and not has_files:
            raise ConfigError(
                "config needs either a 'synth' block or all of posts_csv/users_csv/interactions_csv"
            )
        if not (0.0 < self.mu <= 1.0):
            raise ConfigError("mu must be in (0, 1]")
        if not (0.0 < self.floor < 1.0):
            raise ConfigError("floor must be in (0, 1)")
        unknown = set(self.schemes) - set(RANKING_SCHEMES)
        if unknown:
            raise ConfigError(f"unknown schemes: {sorted(unknown)}")
        if not self.schemes:
            raise ConfigError("schemes must not be empty")
        if not self.k_list or any(k < 1 for k in self.k_list):
            raise ConfigError("k_list must contain positive integers")
        for name in ("edge_split_ratio", "user_split_ratio"):
            if not (0.0 < getattr(self, name) < 1.0):
                raise ConfigError(f"{name} must be in (0, 1)")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.topics_k < 2 or self.topics_iterations < 1:
            raise ConfigError("topics_k must be >= 2 and topics_iterations >= 1")

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if kwargs.get("synth") is not None:
            kwargs["synth"] = SynthConfig.from_dict(kwargs["synth"])
        if "bpr" in kwargs:
            kwargs["bpr"] = BprHyper.from_dict(kwargs["bpr"])
        if "ebm" in kwargs:
            kwargs["ebm"] = EbmHyper.from_dict(kwargs["ebm"])
        for name in ("schemes", "k_list", "clusters"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return PipelineConfig(**kwargs)

    @staticmethod
    def from_json(path) -> "PipelineConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config JSON must be an object")
        return PipelineConfig.from_dict(raw)

    def with_overrides(self, out_dir=None, seed=None, runs=None) -> "PipelineConfig":
        changes = {}
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if seed is not None:
            changes["seed"] = int(seed)
        if runs is not None:
            changes["runs"] = int(runs)
        return dataclasses.replace(self, **changes) if changes else self


def config_hash(config: PipelineConfig) -> str:
    def encode(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [encode(v) for v in obj]
        return obj

    payload = json.dumps(encode(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _Stages:
    """Stage markers in one directory, keyed by the effective config hash."""

    def __init__(self, out_dir: str, chash: str, resume: bool):
        self.out_dir = out_dir
        self.chash = chash
        self.resume = resume

    def _marker(self, stage: str) -> str:
        return os.path.join(self.out_dir, f"{stage}.done")

    def done(self, stage: str) -> bool:
        path = self._marker(stage)
        if not (self.resume and os.path.exists(path)):
            return False
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh).get("config_hash") == self.chash
        except (OSError, json.JSONDecodeError):
            return False

    def payload(self, stage: str) -> dict:
        with open(self._marker(stage), encoding="utf-8") as fh:
            return json.load(fh)

    def mark(self, stage: str, **payload):
        data = {"stage": stage, "config_hash": self.chash}
        data.update(payload)
        with open(self._marker(stage), "w", encoding="utf-8") as fh:
            json.dump(data, fh, sort_keys=True)
            fh.write("\n")


def _stage(name: str):
    """Decorator-free stage wrapper: re-raise any failure tagged with the stage."""

    class _Ctx:
        def __enter__(self):
            return None

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def _load_inputs(config: PipelineConfig, out_dir: str, stages: _Stages):
    """Dataset stage: synthesize or load the three CSV inputs."""
    with _stage("dataset"):
        if config.synth is not None:
            synth_cfg = dataclasses.replace(config.synth, seed=config.synth.seed + config.seed)
            data_dir = os.path.join(out_dir, "data")
            graph, users, _ = generate(synth_cfg)
            if not stages.done("dataset"):
                write_dataset(graph, users, data_dir)
                stages.mark("dataset", source="synth")
            return graph, users
        graph, users = load_dataset(
            config.posts_csv, config.users_csv, config.interactions_csv
        )
        if not stages.done("dataset"):
            stages.mark("dataset", source="files")
        return graph, users


def _topic_vectors(config, graph, out_dir, stages):
    path = os.path.join(out_dir, "topics.csv")
    if stages.done("topics"):
        return artifacts.read_topic_vectors(path)
    with _stage("topics"):
        hate_posts = [p for p in graph.posts if p.is_hate]
        stop = load_stopwords(config.stopwords_path) if config.stopwords_path else ()
        corpus = tokenize(hate_posts, stop)
        model = fit_lda(
            corpus,
            n_topics=config.topics_k,
            iterations=config.topics_iterations,
            seed=config.seed,
        )
        vectors = infer_corpus(model, corpus)
        artifacts.write_topic_vectors(vectors, path)
        stages.mark("topics")
    return vectors


def _propensity_tables(config, train_h, users, topic_vectors, rdir, stages):
    path = os.path.join(rdir, "propensity.csv")
    if stages.done("propensity"):
        return artifacts.read_propensities(path, floor=config.floor)
    with _stage("propensity"):
        tables = {}
        if "biased" in config.schemes:
            tables["biased"] = biased_propensity(train_h, floor=config.floor)
        if "virality" in config.schemes:
            tables["virality"] = virality_propensity(train_h, mu=config.mu, floor=config.floor)
        if "follower" in config.schemes:
            tables["follower"] = follower_propensity(
                train_h, users, mu=config.mu, floor=config.floor
            )
        if "neural" in config.schemes:
            tables["neural"] = neural_propensity(
                topic_vectors, train_h, mu=config.mu, floor=config.floor
            )
        artifacts.write_propensities(
            [tables[s] for s in config.schemes if s in tables], path
        )
        stages.mark("propensity")
    return tables


def _train_ranker(config, scheme, table, train_h, test_h, run_seed, rdir, stages):
    stage = f"plv_{scheme}"
    emb_path = os.path.join(rdir, f"plv_embeddings_{scheme}.csv")
    curve_path = os.path.join(rdir, f"training_curve_{scheme}.csv")
    if stages.done(stage):
        payload = stages.payload(stage)
        emb = artifacts.read_embeddings(emb_path)
        metrics = {
            (m, int(k)): v for m, k, v in payload["metrics"]
        }
        return emb, metrics, payload["n_skipped"]
    with _stage(stage):
        hyper = dataclasses.replace(config.bpr, seed=config.bpr.seed + run_seed)
        model = train(train_h, table, hyper)
        report = ranking_metrics(model, test_h, config.k_list, train=train_h)
        emb = {u: model.user_factors[i] for i, u in enumerate(model.user_ids)}
        artifacts.write_embeddings(model, emb_path)
        artifacts.write_training_curve(model.training_curve, curve_path)
        stages.mark(
            stage,
            metrics=[[m, k, v] for (m, k), v in sorted(report.values.items())],
            n_skipped=report.n_skipped,
        )
        return emb, report.values, report.n_skipped


def _subset_rows(fm: FeatureMatrix, user_set) -> FeatureMatrix:
    idx = [i for i, u in enumerate(fm.user_ids) if u in user_set]
    return FeatureMatrix(
        user_ids=tuple(fm.user_ids[i] for i in idx),
        columns=fm.columns,
        X=fm.X[idx],
        y=fm.y[idx],
        target=fm.target,
    )


def _effects_variant(
    config,
    variant,
    users,
    embeddings,
    outcome_table,
    train_users,
    test_users,
    run_seed,
    rdir,
    stages,
    write_canonical,
):
    stage = f"effects_{variant}"
    if stages.done(stage):
        payload = stages.payload(stage)
        return payload["rmse"], payload.get("linear_rmse"), payload.get("importance")
    with _stage(stage):
        hyper = dataclasses.replace(config.ebm, seed=config.ebm.seed + run_seed)
        targets = ["overall"] + [c for c in config.clusters]
        rmses = {}
        linear_rmse = None
        importance_rows = None
        for target in targets:
            fm = assemble_features(
                users,
                embeddings,
                outcome_table,
                target=target,
                include_embeddings=variant != "base",
            )
            fm_train = _subset_rows(fm, train_users)
            fm_test = _subset_rows(fm, test_users)
            model = fit_ebm(fm_train, hyper)
            rmses[target] = rmse(predict(model, fm_test), fm_test.y)
            if target == "overall":
                if variant == "base":
                    linear = fit_linear(fm_train)
                    linear_rmse = rmse(predict(linear, fm_test), fm_test.y)
                importance_rows = feature_importance(model, fm_train)
                if write_canonical:
                    artifacts.write_importance(
                        importance_rows, os.path.join(rdir, f"importance_{variant}.csv")
                    )
                    if variant == _canonical_scheme(config):
                        artifacts.write_importance(
                            importance_rows, os.path.join(rdir, "importance.csv")
                        )
                        _export_curves(config, model, rdir)
        importance_payload = (
            [[name, value] for name, value in importance_rows.rows] if importance_rows else None
        )
        stages.mark(stage, rmse=rmses, linear_rmse=linear_rmse, importance=importance_payload)
        return rmses, linear_rmse, importance_payload


def _canonical_scheme(config: PipelineConfig) -> str:
    for scheme in ("virality", "follower", "neural"):
        if scheme in config.schemes:
            return scheme
    return "base"


def _export_curves(config, model, rdir):
    for feature in FEATURE_COLUMNS:
        curve = contribution_curve(model, feature, grid=64)
        artifacts.write_curve(curve, os.path.join(rdir, f"curve_{feature}.csv"))
        if config.emit_plots:
            line_chart_svg(
                curve.x,
                [
                    ("effect", curve.value, "#1f77b4"),
                    ("lower", curve.lower, "#ff7f0e"),
                    ("upper", curve.upper, "#ff7f0e"),
                ],
                title=feature,
                path=os.path.join(rdir, f"curve_{feature}.svg"),
            )


def _run_once(config, graph, users, outcome_table, topic_vectors, out_dir, run_idx, resume, chash):
    rdir = out_dir if run_idx == 0 else os.path.join(out_dir, f"run_{run_idx}")
    os.makedirs(rdir, exist_ok=True)
    stages = _Stages(rdir, chash, resume)
    run_seed = config.seed + run_idx

    with _stage("split"):
        hate = graph.hate_subgraph()
        if hate.n_edges == 0 or hate.n_posts < 2:
            raise DataError("pipeline needs at least two hate posts and one hate reshare")
        pair = split(hate, "by-edge", config.edge_split_ratio, config.edge_split_seed + run_seed)
        train_h, test_h = pair.train, pair.test
        user_pair = split(graph, "by-user", config.user_split_ratio, config.user_split_seed + run_seed)

    tables = _propensity_tables(config, train_h, users, topic_vectors, rdir, stages)

    ranking = {}
    skipped = {}
    embeddings = {}
    for scheme in config.schemes:
        emb, metrics, n_skipped = _train_ranker(
            config, scheme, tables[scheme], train_h, test_h, run_seed, rdir, stages
        )
        ranking[scheme] = metrics
        skipped[scheme] = n_skipped
        embeddings[scheme] = emb

    variants = ["base"] + [s for s in config.schemes if s != "biased"]
    rmses = {}
    linear_rmse = None
    importance = {}
    for variant in variants:
        emb = embeddings.get(variant)
        variant_rmse, lin, imp = _effects_variant(
            config,
            variant,
            users,
            emb,
            outcome_table,
            user_pair.train,
            user_pair.test,
            run_seed,
            rdir,
            stages,
            write_canonical=run_idx == 0,
        )
        rmses[variant] = variant_rmse
        importance[variant] = imp
        if lin is not None:
            linear_rmse = lin
    return {
        "ranking": ranking,
        "skipped": skipped,
        "rmse": rmses,
        "linear_rmse": linear_rmse,
        "importance": importance,
    }


def _render_report(config, graph, outcome_table, results) -> str:
    runs = len(results)
    lines = []
    add = lines.append
    add("Resharing analysis report")
    add("=========================")
    hate = graph.hate_subgraph()
    add(
        f"dataset: users={graph.n_users} posts={graph.n_posts} "
        f"(hate={hate.n_posts}) interactions={graph.n_edges} (hate={hate.n_edges})"
    )
    add(
        f"outcome users={len(outcome_table.user_ids)} "
        f"excluded_zero_share={outcome_table.n_excluded} "
        f"clusters={','.join(outcome_table.clusters) or '-'}"
    )
    add(f"runs={runs}")
    add("")
    add(f"Ranking metrics on held-out reshares (mean over {runs} run(s))")
    add(f"{'model':<10} {'metric':<8} {'k':>4} {'value':>10}")
    for scheme in config.schemes:
        for metric in ("recall", "ndcg"):
            for k in config.k_list:
                vals = [r["ranking"][scheme][(metric, k)] for r in results]
                add(
                    f"{MODEL_NAMES[scheme]:<10} {metric:<8} {k:>4} {np.mean(vals):>10.4f}"
                )
    add("")
    add(f"Effect-model test RMSE, by-user holdout (mean over {runs} run(s))")
    add(f"{'variant':<10} {'target':<16} {'rmse':>10}")
    variants = ["base"] + [s for s in config.schemes if s != "biased"]
    targets = ["overall"] + list(config.clusters)
    for variant in variants:
        for target in targets:
            vals = [r["rmse"][variant][target] for r in results]
            add(f"{MODEL_NAMES[variant]:<10} {target:<16} {np.mean(vals):>10.4f}")
    lin_vals = [r["linear_rmse"] for r in results if r["linear_rmse"] is not None]
    if lin_vals:
        add(f"{'DF-linear':<10} {'overall':<16} {np.mean(lin_vals):>10.4f}")
    if runs >= 2:
        add("")
        add("Welch t-tests on per-run overall RMSE samples")
        add(f"{'pair':<24} {'t':>9} {'p':>9}")
        for i, a in enumerate(variants):
            for b in variants[i + 1 :]:
                sample_a = [r["rmse"][a]["overall"] for r in results]
                sample_b = [r["rmse"][b]["overall"] for r in results]
                res = welch_t_test(sample_a, sample_b)
                pair = f"{MODEL_NAMES[a]} vs {MODEL_NAMES[b]}"
                add(f"{pair:<24} {res.t:>9.3f} {res.p:>9.4f}")
    canonical = _canonical_scheme(config)
    imp_rows = results[0]["importance"].get(canonical)
    if imp_rows:
        add("")
        add(f"Feature importance ({MODEL_NAMES[canonical]} variant, first run, top 10)")
        add(f"{'feature':<28} {'importance':>12}")
        for name, value in imp_rows[:10]:
            add(f"{name:<28} {value:>12.6f}")
    add("")
    skipped = results[0]["skipped"]
    add(
        "ranking users skipped (no test edges): "
        + ", ".join(f"{MODEL_NAMES[s]}={skipped[s]}" for s in config.schemes)
    )
    return "\n".join(lines) + "\n"


def run_pipeline(config: PipelineConfig, resume: bool = False) -> str:
    """Run every stage; returns the rendered report text (also written to disk)."""
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(config)
    stages = _Stages(out_dir, chash, resume)

    graph, users = _load_inputs(config, out_dir, stages)

    with _stage("outcomes"):
        outcome_table = compute_outcomes(graph)
        artifacts.write_outcomes(outcome_table, os.path.join(out_dir, "outcomes.csv"))
        stages.mark("outcomes")

    topic_vectors = None
    if "neural" in config.schemes:
        topic_vectors = _topic_vectors(config, graph, out_dir, stages)

    results = []
    for run_idx in range(config.runs):
        results.append(
            _run_once(
                config, graph, users, outcome_table, topic_vectors, out_dir, run_idx, resume, chash
            )
        )

    with _stage("report"):
        report = _render_report(config, graph, outcome_table, results)
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report)
        rows = []
        for scheme in config.schemes:
            for metric in ("recall", "ndcg"):
                for k in config.k_list:
                    vals = [r["ranking"][scheme][(metric, k)] for r in results]
                    rows.append((MODEL_NAMES[scheme], metric, k, float(np.mean(vals))))
        artifacts.write_metrics(rows, os.path.join(out_dir, "metrics.csv"))
        canonical = _canonical_scheme(config)
        src = os.path.join(out_dir, f"plv_embeddings_{canonical}.csv")
        if os.path.exists(src):
            with open(src, encoding="utf-8") as fh:
                data = fh.read()
            with open(os.path.join(out_dir, "plv_embeddings.csv"), "w", encoding="utf-8") as fh:
                fh.write(data)
        curve_src = os.path.join(out_dir, f"training_curve_{canonical}.csv")
        if os.path.exists(curve_src):
            with open(curve_src, encoding="utf-8") as fh:
                data = fh.read()
            with open(os.path.join(out_dir, "training_curve.csv"), "w", encoding="utf-8") as fh:
                fh.write(data)
    return report


def run_synth(config: PipelineConfig, write_truth_files: bool = True) -> str:
    """Generate and dump a synthetic dataset (plus ground-truth files)."""
    if config.synth is None:
        raise ConfigError("synth command needs a 'synth' block in the config")
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    synth_cfg = dataclasses.replace(config.synth, seed=config.synth.seed + config.seed)
    with _stage("synth"):
        graph, users, truth = generate(synth_cfg)
        write_dataset(graph, users, out_dir)
        if write_truth_files:
            write_truth(truth, out_dir)
            write_effects_truth(truth, out_dir)
    return out_dir


def run_mu_sweep(config: PipelineConfig, mu_list) -> list:
    """Recall@k for the two popularity-based schemes across smoothing values."""
    if not mu_list:
        raise ConfigError("mu sweep needs at least one mu value")
    for mu in mu_list:
        if not (0.0 < mu <= 1.0):
            raise ConfigError(f"mu must be in (0, 1], got {mu}")
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(config)
    stages = _Stages(out_dir, chash, resume=False)
    graph, users = _load_inputs(config, out_dir, stages)
    with _stage("split"):
        hate = graph.hate_subgraph()
        pair = split(hate, "by-edge", config.edge_split_ratio, config.edge_split_seed + config.seed)
        train_h, test_h = pair.train, pair.test
    rows = []
    with _stage("mu-sweep"):
        for scheme in ("virality", "follower"):
            for mu in mu_list:
                if scheme == "virality":
                    table = virality_propensity(train_h, mu=mu, floor=config.floor)
                else:
                    table = follower_propensity(train_h, users, mu=mu, floor=config.floor)
                hyper = dataclasses.replace(config.bpr, seed=config.bpr.seed + config.seed)
                model = train(train_h, table, hyper)
                report = ranking_metrics(model, test_h, config.k_list, train=train_h)
                label = f"{MODEL_NAMES[scheme]} mu={mu:g}"
                for k in config.k_list:
                    rows.append((label, "recall", k, report[("recall", k)]))
        artifacts.write_metrics(rows, os.path.join(out_dir, "mu_sweep.csv"))
    return rows


def run_embed_analysis(
    embeddings_path,
    out_dir,
    tag: str = "default",
    eps: float = 0.5,
    min_pts: int = 10,
) -> tuple:
    """DBSCAN + silhouette over an exported embedding table."""
    os.makedirs(out_dir, exist_ok=True)
    emb = artifacts.read_embeddings(embeddings_path)
    points = np.vstack([emb[u] for u in sorted(emb)])
    labels = dbscan(points, eps=eps, min_pts=min_pts)
    n_clusters = len(set(labels[labels >= 0].tolist()))
    n_noise = int(np.sum(labels < 0))
    sil = silhouette(points, labels) if n_clusters >= 2 else float("nan")
    artifacts.write_embedding_analysis(
        [(tag, n_clusters, n_noise, sil)],
        os.path.join(out_dir, "embedding_analysis.csv"),
    )
    return n_clusters, n_noise, sil
