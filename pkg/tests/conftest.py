"""Shared fixtures and independent reference implementations (test oracles)."""

import math

import numpy as np
import pytest

from reshare.dataset import InteractionGraph, Post, UserAttributes, UserAttributeTable
from reshare.effects import FeatureMatrix


def make_graph(n_users, posts_spec, edges):
    """posts_spec: list of (post_id, is_hate, cluster). edges: (user_idx, post_id)."""
    users = [f"u{i}" for i in range(n_users)]
    posts = [
        Post(post_id=pid, author_id=users[0], is_hate=hate, cluster=cluster)
        for pid, hate, cluster in posts_spec
    ]
    return InteractionGraph(users, posts, [(f"u{i}", pid) for i, pid in edges])


def make_users(specs):
    """specs: list of dicts with user_id and optional attribute overrides."""
    rows = []
    for s in specs:
        rows.append(
            UserAttributes(
                user_id=s["user_id"],
                verified=s.get("verified", False),
                account_age_days=s.get("account_age_days", 1000),
                n_posts=s.get("n_posts", 10),
                n_followers=s.get("n_followers", 100),
                n_friends=s.get("n_friends", 50),
            )
        )
    return UserAttributeTable(rows)


def subset_matrix(fm: FeatureMatrix, user_set) -> FeatureMatrix:
    idx = [i for i, u in enumerate(fm.user_ids) if u in user_set]
    return FeatureMatrix(
        user_ids=tuple(fm.user_ids[i] for i in idx),
        columns=fm.columns,
        X=fm.X[idx],
        y=fm.y[idx],
        target=fm.target,
    )


def brute_force_ranking(user_factors, post_factors, post_ids, test_edges_by_user,
                        train_edges_by_user, user_index, k_list):
    """Plain-python recall@k / NDCG@k, computed by explicit sorting."""
    sums = {("recall", k): 0.0 for k in k_list}
    sums.update({("ndcg", k): 0.0 for k in k_list})
    n_eval = 0
    pidx = {p: i for i, p in enumerate(post_ids)}
    for user in sorted(test_edges_by_user):
        rel = set(test_edges_by_user[user])
        if not rel or user not in user_index:
            continue
        u = user_index[user]
        banned = set(train_edges_by_user.get(user, ()))
        scored = []
        for p in post_ids:
            s = float(np.dot(user_factors[u], post_factors[pidx[p]]))
            if p in banned:
                s = -math.inf
            scored.append((p, s))
        order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], i))
        ranked = [scored[i][0] for i in order]
        for k in k_list:
            hits = [p for p in ranked[:k] if p in rel]
            sums[("recall", k)] += len(hits) / min(len(rel), k)
            dcg = 0.0
            for rank, p in enumerate(ranked[:k], start=1):
                if p in rel:
                    dcg += 1.0 / math.log2(rank + 1)
            idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(rel), k) + 1))
            sums[("ndcg", k)] += dcg / idcg
        n_eval += 1
    return {key: v / n_eval for key, v in sums.items()}, n_eval


def brute_force_dbscan(points, eps, min_pts):
    """Independent quadratic DBSCAN with the same nearest-core border rule."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    dist = np.array([[float(np.linalg.norm(a - b)) for b in pts] for a in pts])
    neighbors = [set(np.flatnonzero(dist[i] <= eps).tolist()) for i in range(n)]
    core = [len(neighbors[i]) >= min_pts for i in range(n)]
    labels = [-1] * n
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        frontier = {i}
        labels[i] = cluster
        while frontier:
            j = frontier.pop()
            for nb in neighbors[j]:
                if core[nb] and labels[nb] == -1:
                    labels[nb] = cluster
                    frontier.add(nb)
        cluster += 1
    for i in range(n):
        if core[i] or labels[i] != -1:
            continue
        candidates = [(dist[i][j], j) for j in range(n) if core[j] and dist[i][j] <= eps]
        if candidates:
            _, j = min(candidates)
            labels[i] = labels[j]
    return np.array(labels)


def canonical_labels(labels):
    """Relabel clusters by first appearance so permutations compare equal."""
    mapping = {}
    out = []
    for lab in labels:
        if lab < 0:
            out.append(-1)
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return tuple(out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
