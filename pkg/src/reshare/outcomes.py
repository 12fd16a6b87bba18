"""Per-user reshare-probability outcomes, overall and per hate cluster."""

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import InteractionGraph

log = logging.getLogger(__name__)

UNLABELED = "unlabeled"


@dataclass
class OutcomeTable:
    """Hate-share fractions per user; rows cover only users with >= 1 share."""

    user_ids: tuple[str, ...]
    clusters: tuple[str, ...]
    overall: np.ndarray  # fraction of the user's shares that were hateful
    by_cluster: np.ndarray  # (n_users, n_clusters), rows sum to overall
    n_hate: np.ndarray
    n_normal: np.ndarray
    n_excluded: int
    n_unlabeled_hate_posts: int

    @property
    def user_index(self) -> dict:
        if not hasattr(self, "_uidx"):
            self._uidx = {u: i for i, u in enumerate(self.user_ids)}
        return self._uidx

    def y(self, user_id: str) -> float:
        return float(self.overall[self.user_index[user_id]])

    def y_cluster(self, user_id: str, cluster: str) -> float:
        return float(self.by_cluster[self.user_index[user_id], self.clusters.index(cluster)])


def compute_outcomes(graph: InteractionGraph) -> OutcomeTable:
    """Count each user's hate vs normal shares and per-cluster hate shares.

    Hate posts without a cluster label fall into an "unlabeled" catch-all (and
    are counted), so per-cluster fractions always sum to the overall fraction.
    Users with zero shares are excluded rather than given a 0/0 outcome.
    """
    cluster_of = {}
    n_unlabeled = 0
    labels = set()
    for p in graph.posts:
        if not p.is_hate:
            continue
        label = p.cluster
        if label is None:
            label = UNLABELED
            n_unlabeled += 1
        cluster_of[p.post_id] = label
        labels.add(label)
    if n_unlabeled:
        log.warning("%d hate posts without cluster label; using %r", n_unlabeled, UNLABELED)
    clusters = tuple(sorted(labels))
    cluster_idx = {c: i for i, c in enumerate(clusters)}

    sharers = sorted(graph.edges_by_user)
    uidx = {u: i for i, u in enumerate(sharers)}
    n = len(sharers)
    n_hate = np.zeros(n, dtype=np.int64)
    n_normal = np.zeros(n, dtype=np.int64)
    per_cluster = np.zeros((n, len(clusters)), dtype=np.int64)
    post_by_id = graph.post_by_id
    for u, p in graph.edges:
        i = uidx[u]
        if post_by_id[p].is_hate:
            n_hate[i] += 1
            per_cluster[i, cluster_idx[cluster_of[p]]] += 1
        else:
            n_normal[i] += 1
    total = n_hate + n_normal
    overall = n_hate / total
    by_cluster = per_cluster / total[:, None]
    n_excluded = graph.n_users - n
    if n_excluded:
        log.info("excluded %d users with zero shares from outcomes", n_excluded)
    return OutcomeTable(
        user_ids=tuple(sharers),
        clusters=clusters,
        overall=overall,
        by_cluster=by_cluster,
        n_hate=n_hate,
        n_normal=n_normal,
        n_excluded=n_excluded,
        n_unlabeled_hate_posts=n_unlabeled,
    )
