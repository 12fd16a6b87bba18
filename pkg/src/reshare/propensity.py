"""Exposure-probability estimators for posts, with smoothing and clipping.

Four schemes: the raw interaction rate (biased), two popularity-normalized
estimators (reshare counts, follower-weighted reshare counts) raised to a
smoothing exponent, and a content-based estimator that maps topic mixtures
through a fitted affine-sigmoid onto the popularity target. All outputs are
clipped into [floor, 1] to bound the variance of downstream inverse-weighting.
"""

from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .dataset import InteractionGraph, UserAttributeTable
from .errors import DataError

DEFAULT_FLOOR = 1e-3
DEFAULT_MU = 0.5


@dataclass(frozen=True)
class PropensityTable:
    """Per-post estimated exposure probability, clipped to [floor, 1]."""

    scheme: str
    mu: float | None
    floor: float
    values: MappingProxyType

    def __getitem__(self, post_id: str) -> float:
        return self.values[post_id]

    def __contains__(self, post_id) -> bool:
        return post_id in self.values

    def __len__(self) -> int:
        return len(self.values)

    def for_posts(self, post_ids) -> np.ndarray:
        try:
            return np.array([self.values[p] for p in post_ids], dtype=np.float64)
        except KeyError as exc:
            raise DataError(f"propensity table has no entry for post {exc.args[0]!r}") from None

    @staticmethod
    def from_values(values: dict, scheme: str, mu: float | None, floor: float) -> "PropensityTable":
        clipped = {p: float(min(max(v, floor), 1.0)) for p, v in values.items()}
        return PropensityTable(
            scheme=scheme, mu=mu, floor=floor, values=MappingProxyType(clipped)
        )


def _clip(theta: np.ndarray, floor: float) -> np.ndarray:
    return np.clip(theta, floor, 1.0)


def biased_propensity(graph: InteractionGraph, floor: float = DEFAULT_FLOOR) -> PropensityTable:
    """Observed interaction rate: resharing users over all users, clipped."""
    if graph.n_users == 0 or graph.n_posts == 0:
        raise DataError("empty graph")
    theta = _clip(graph.reshare_counts() / graph.n_users, floor)
    values = {p.post_id: float(t) for p, t in zip(graph.posts, theta)}
    return PropensityTable(scheme="biased", mu=None, floor=floor, values=MappingProxyType(values))


def virality_propensity(
    graph: InteractionGraph, mu: float = DEFAULT_MU, floor: float = DEFAULT_FLOOR
) -> PropensityTable:
    """Normalized reshare count raised to the smoothing exponent mu."""
    if not (0.0 < mu <= 1.0):
        raise ValueError(f"mu must be in (0, 1], got {mu}")
    counts = graph.reshare_counts().astype(np.float64)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        raise DataError("virality propensity undefined: no reshares in graph")
    theta = _clip((counts / top) ** mu, floor)
    values = {p.post_id: float(t) for p, t in zip(graph.posts, theta)}
    return PropensityTable(scheme="virality", mu=mu, floor=floor, values=MappingProxyType(values))


def follower_propensity(
    graph: InteractionGraph,
    users: UserAttributeTable,
    mu: float = DEFAULT_MU,
    floor: float = DEFAULT_FLOOR,
) -> PropensityTable:
    """Follower-weighted reshare mass, normalized by its max and smoothed by mu."""
    if not (0.0 < mu <= 1.0):
        raise ValueError(f"mu must be in (0, 1], got {mu}")
    uidx, pidx = graph.edge_arrays
    weights = np.empty(graph.n_users, dtype=np.float64)
    for i, uid in enumerate(graph.users):
        if uid not in users:
            raise DataError(f"no follower count for resharing user {uid!r}")
        weights[i] = float(users.get(uid).n_followers)
    mass = np.bincount(pidx, weights=weights[uidx], minlength=graph.n_posts)
    top = mass.max() if mass.size else 0.0
    if top <= 0:
        raise DataError("follower propensity undefined: no follower-weighted reshares")
    theta = _clip((mass / top) ** mu, floor)
    values = {p.post_id: float(t) for p, t in zip(graph.posts, theta)}
    return PropensityTable(scheme="follower", mu=mu, floor=floor, values=MappingProxyType(values))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def neural_propensity(
    topic_vectors: dict,
    graph: InteractionGraph,
    mu: float = DEFAULT_MU,
    floor: float = DEFAULT_FLOOR,
) -> PropensityTable:
    """Affine-sigmoid map from topic mixtures to the popularity target.

    The weights solve an exact least-squares problem against logit-transformed
    virality propensities of the graph's posts, so posts with similar content
    receive similar exposure estimates.
    """
    target = virality_propensity(graph, mu=mu, floor=floor)
    post_ids = [p.post_id for p in graph.posts]
    missing = [p for p in post_ids if p not in topic_vectors]
    if missing:
        raise DataError(f"missing topic vector for posts {missing[:5]!r}")
    embed = np.array([np.asarray(topic_vectors[p], dtype=np.float64) for p in post_ids])
    if embed.ndim != 2:
        raise DataError("topic vectors must share a common dimension")
    t = np.clip(
        np.array([target[p] for p in post_ids]), floor, 1.0 - 1e-7
    )
    z = np.log(t) - np.log1p(-t)
    design = np.hstack([embed, np.ones((embed.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, z, rcond=None)
    theta = _clip(_sigmoid(design @ coef), floor)
    values = {p: float(v) for p, v in zip(post_ids, theta)}
    return PropensityTable(scheme="neural", mu=mu, floor=floor, values=MappingProxyType(values))
