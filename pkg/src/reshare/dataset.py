"""Domain data model: posts, user attributes, the bipartite reshare graph, and splits.

All loaded structures are canonicalized (sorted by id) and immutable after
construction, so they are safe to share across threads and hash-stable for
deterministic downstream processing.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

POSTS_COLUMNS = ("post_id", "author_id", "is_hate", "cluster", "text")
USERS_COLUMNS = (
    "user_id",
    "verified",
    "account_age_days",
    "n_posts",
    "n_followers",
    "n_friends",
)
INTERACTIONS_COLUMNS = ("user_id", "post_id")

FEATURE_COLUMNS = (
    "verified",
    "account_age_days",
    "log1p_n_posts",
    "log1p_n_followers",
    "log1p_n_friends",
)


@dataclass(frozen=True)
class Post:
    post_id: str
    author_id: str
    is_hate: bool
    cluster: str | None = None
    text: str | None = None

    def __post_init__(self):
        if self.cluster is not None and not self.is_hate:
            raise DataError(
                f"post {self.post_id!r} has cluster {self.cluster!r} but is not flagged as hate"
            )


@dataclass(frozen=True)
class UserAttributes:
    user_id: str
    verified: bool
    account_age_days: int
    n_posts: int
    n_followers: int
    n_friends: int

    def __post_init__(self):
        for name in ("account_age_days", "n_posts", "n_followers", "n_friends"):
            if getattr(self, name) < 0:
                raise DataError(f"user {self.user_id!r}: {name} must be >= 0")


class UserAttributeTable:
    """Immutable per-user attribute lookup, ordered by user id."""

    def __init__(self, rows):
        ordered = sorted(rows, key=lambda r: r.user_id)
        by_id: dict[str, UserAttributes] = {}
        for row in ordered:
            if row.user_id in by_id:
                raise DataError(f"duplicate user_id {row.user_id!r}")
            by_id[row.user_id] = row
        self._rows = tuple(ordered)
        self._by_id = by_id

    @property
    def user_ids(self) -> tuple[str, ...]:
        return tuple(r.user_id for r in self._rows)

    def get(self, user_id: str) -> UserAttributes:
        try:
            return self._by_id[user_id]
        except KeyError:
            raise KeyError(f"unknown user_id {user_id!r}") from None

    def __contains__(self, user_id) -> bool:
        return user_id in self._by_id

    def __iter__(self):
        return iter(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, UserAttributeTable) and self._rows == other._rows


@dataclass(frozen=True)
class FeatureView:
    """Per-user numeric feature matrix with the log-transformed count attributes."""

    user_ids: tuple[str, ...]
    columns: tuple[str, ...]
    matrix: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.columns.index(name)]

    def row(self, user_id: str) -> np.ndarray:
        return self.matrix[self.user_ids.index(user_id)]


class InteractionGraph:
    """Bipartite user-by-post reshare graph; an edge (u, h) means u reshared h."""

    def __init__(self, users, posts, edges):
        user_tuple = tuple(sorted(users))
        if len(set(user_tuple)) != len(user_tuple):
            raise DataError("duplicate user ids in graph")
        post_tuple = tuple(sorted(posts, key=lambda p: p.post_id))
        post_ids = [p.post_id for p in post_tuple]
        if len(set(post_ids)) != len(post_ids):
            raise DataError("duplicate post ids in graph")
        user_set = set(user_tuple)
        post_set = set(post_ids)
        edge_tuple = tuple(sorted(edges))
        seen = set()
        for u, p in edge_tuple:
            if u not in user_set:
                raise DataError(f"edge ({u!r}, {p!r}) references unknown user {u!r}")
            if p not in post_set:
                raise DataError(f"edge ({u!r}, {p!r}) references unknown post {p!r}")
            if (u, p) in seen:
                raise DataError(f"duplicate edge ({u!r}, {p!r})")
            seen.add((u, p))
        self.users = user_tuple
        self.posts = post_tuple
        self.edges = edge_tuple

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_posts(self) -> int:
        return len(self.posts)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    @cached_property
    def post_index(self) -> dict[str, int]:
        return {p.post_id: i for i, p in enumerate(self.posts)}

    @cached_property
    def post_by_id(self) -> dict[str, Post]:
        return {p.post_id: p for p in self.posts}

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Edges as (user_idx, post_idx) int arrays aligned with users/posts order."""
        ui = self.user_index
        pi = self.post_index
        u = np.fromiter((ui[e[0]] for e in self.edges), dtype=np.int64, count=self.n_edges)
        p = np.fromiter((pi[e[1]] for e in self.edges), dtype=np.int64, count=self.n_edges)
        return u, p

    @cached_property
    def edges_by_user(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {}
        for u, p in self.edges:
            out.setdefault(u, []).append(p)
        return {u: tuple(ps) for u, ps in out.items()}

    def reshare_counts(self) -> np.ndarray:
        """Number of distinct resharing users per post, aligned with .posts order."""
        _, p = self.edge_arrays
        return np.bincount(p, minlength=self.n_posts).astype(np.int64)

    def hate_subgraph(self) -> "InteractionGraph":
        """Restrict posts (and their edges) to hate-flagged posts; users unchanged."""
        hate_posts = [p for p in self.posts if p.is_hate]
        hate_ids = {p.post_id for p in hate_posts}
        edges = [e for e in self.edges if e[1] in hate_ids]
        return InteractionGraph(self.users, hate_posts, edges)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, InteractionGraph)
            and self.users == other.users
            and self.posts == other.posts
            and self.edges == other.edges
        )


@dataclass(frozen=True)
class SplitPair:
    """Deterministic train/test partition; graphs for by-edge, user-id sets for by-user."""

    train: object
    test: object
    mode: str
    ratio: float
    seed: int


def _parse_bool(raw: str, where: str) -> bool:
    val = raw.strip().lower()
    if val in ("1", "true"):
        return True
    if val in ("0", "false"):
        return False
    raise DataError(f"{where}: cannot parse boolean from {raw!r}")


def _parse_count(raw: str, where: str) -> int:
    try:
        val = int(raw)
    except ValueError:
        raise DataError(f"{where}: cannot parse integer from {raw!r}") from None
    if val < 0:
        raise DataError(f"{where}: count must be >= 0, got {val}")
    return val


def _open_csv(path):
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    return open(path, newline="", encoding="utf-8")


def _check_header(reader: csv.DictReader, required, path):
    fields = reader.fieldnames or []
    missing = [c for c in required if c not in fields]
    if missing:
        raise DataError(f"{path}: header is missing columns {missing}")


def load_posts(path) -> list[Post]:
    posts = []
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, ("post_id", "author_id", "is_hate", "cluster"), path)
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if row.get("post_id") in (None, "") or row.get("author_id") in (None, ""):
                raise DataError(f"{where}: post_id and author_id are required")
            cluster = row.get("cluster") or None
            text = row.get("text") or None
            posts.append(
                Post(
                    post_id=row["post_id"],
                    author_id=row["author_id"],
                    is_hate=_parse_bool(row["is_hate"], where),
                    cluster=cluster,
                    text=text,
                )
            )
    return posts


def load_users(path) -> UserAttributeTable:
    rows = []
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, USERS_COLUMNS, path)
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if row.get("user_id") in (None, ""):
                raise DataError(f"{where}: user_id is required")
            rows.append(
                UserAttributes(
                    user_id=row["user_id"],
                    verified=_parse_bool(row["verified"], where),
                    account_age_days=_parse_count(row["account_age_days"], where),
                    n_posts=_parse_count(row["n_posts"], where),
                    n_followers=_parse_count(row["n_followers"], where),
                    n_friends=_parse_count(row["n_friends"], where),
                )
            )
    return UserAttributeTable(rows)


def load_dataset(posts_path, users_path, interactions_path):
    """Load and cross-validate the three input tables.

    Returns (InteractionGraph, UserAttributeTable). Raises DataError naming the
    offending file/row on any referential-integrity violation.
    """
    posts = load_posts(posts_path)
    users = load_users(users_path)
    post_ids = {p.post_id for p in posts}
    if len(post_ids) != len(posts):
        raise DataError(f"{posts_path}: duplicate post_id")
    user_ids = set(users.user_ids)
    edges = []
    with _open_csv(interactions_path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, INTERACTIONS_COLUMNS, interactions_path)
        for row in reader:
            where = f"{interactions_path}:{reader.line_num}"
            u, p = row.get("user_id"), row.get("post_id")
            if not u or not p:
                raise DataError(f"{where}: user_id and post_id are required")
            if u not in user_ids:
                raise DataError(f"{where}: interaction references unknown user {u!r}")
            if p not in post_ids:
                raise DataError(f"{where}: interaction references unknown post {p!r}")
            edges.append((u, p))
    graph = InteractionGraph(users.user_ids, posts, edges)
    log.info(
        "loaded %d posts, %d users, %d interactions",
        graph.n_posts,
        graph.n_users,
        graph.n_edges,
    )
    return graph, users


def write_dataset(graph: InteractionGraph, users: UserAttributeTable, out_dir):
    """Write posts.csv / users.csv / interactions.csv under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "posts.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(POSTS_COLUMNS)
        for p in graph.posts:
            w.writerow(
                [p.post_id, p.author_id, int(p.is_hate), p.cluster or "", p.text or ""]
            )
    with open(os.path.join(out_dir, "users.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(USERS_COLUMNS)
        for u in users:
            w.writerow(
                [
                    u.user_id,
                    int(u.verified),
                    u.account_age_days,
                    u.n_posts,
                    u.n_followers,
                    u.n_friends,
                ]
            )
    with open(
        os.path.join(out_dir, "interactions.csv"), "w", newline="", encoding="utf-8"
    ) as fh:
        w = csv.writer(fh)
        w.writerow(INTERACTIONS_COLUMNS)
        w.writerows(graph.edges)


def log_transform_attributes(table: UserAttributeTable) -> FeatureView:
    """Numeric feature view: verified as {0,1}, raw account age, ln(1+x) counts.

    The count attributes are heavily right-skewed, so they enter every model
    downstream on the log scale.
    """
    n = len(table)
    matrix = np.empty((n, len(FEATURE_COLUMNS)), dtype=np.float64)
    for i, row in enumerate(table):
        matrix[i, 0] = 1.0 if row.verified else 0.0
        matrix[i, 1] = float(row.account_age_days)
        matrix[i, 2] = math.log1p(row.n_posts)
        matrix[i, 3] = math.log1p(row.n_followers)
        matrix[i, 4] = math.log1p(row.n_friends)
    return FeatureView(user_ids=table.user_ids, columns=FEATURE_COLUMNS, matrix=matrix)


def _test_quota(sizes: list[int], ratio: float, n_edges: int) -> list[int]:
    """Largest-remainder allocation of per-user test-edge counts.

    Targets round(n_edges * (1 - ratio)) test edges overall while never taking
    the last train edge from any user.
    """
    target = int(round(n_edges * (1.0 - ratio)))
    caps = [max(0, s - 1) for s in sizes]
    target = min(target, sum(caps))
    quotas = [min(c, int((1.0 - ratio) * s)) for s, c in zip(sizes, caps)]
    remainders = [(1.0 - ratio) * s - q for s, q in zip(sizes, quotas)]
    deficit = target - sum(quotas)
    if deficit > 0:
        order = sorted(
            range(len(sizes)), key=lambda i: (-remainders[i], i)
        )
        for i in order:
            if deficit == 0:
                break
            if quotas[i] < caps[i]:
                quotas[i] += 1
                deficit -= 1
    elif deficit < 0:
        order = sorted(range(len(sizes)), key=lambda i: (remainders[i], i))
        for i in order:
            if deficit == 0:
                break
            if quotas[i] > 0:
                quotas[i] -= 1
                deficit += 1
    return quotas


def split(graph: InteractionGraph, mode: str, ratio: float, seed: int) -> SplitPair:
    """Partition a graph into train/test, deterministically for a given seed.

    by-edge: each user's edges are partitioned; every user keeps at least one
    train edge, and the global train/test counts follow the ratio exactly when
    feasible. by-user: the user-id set is partitioned.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if graph.n_edges == 0:
        raise DataError("cannot split a graph with zero edges")
    rng = np.random.default_rng(seed)
    if mode == "by-edge":
        users_with_edges = sorted(graph.edges_by_user)
        sizes = [len(graph.edges_by_user[u]) for u in users_with_edges]
        quotas = _test_quota(sizes, ratio, graph.n_edges)
        train_edges: list[tuple[str, str]] = []
        test_edges: list[tuple[str, str]] = []
        for u, q in zip(users_with_edges, quotas):
            posts = list(graph.edges_by_user[u])
            order = rng.permutation(len(posts))
            for rank, j in enumerate(order):
                (test_edges if rank < q else train_edges).append((u, posts[j]))
        train = InteractionGraph(graph.users, graph.posts, train_edges)
        test = InteractionGraph(graph.users, graph.posts, test_edges)
        return SplitPair(train=train, test=test, mode=mode, ratio=ratio, seed=seed)
    if mode == "by-user":
        users = list(graph.users)
        order = rng.permutation(len(users))
        n_train = int(round(ratio * len(users)))
        n_train = min(max(n_train, 1), len(users) - 1)
        train_ids = frozenset(users[i] for i in order[:n_train])
        test_ids = frozenset(users[i] for i in order[n_train:])
        return SplitPair(train=train_ids, test=test_ids, mode=mode, ratio=ratio, seed=seed)
    raise ValueError(f"unknown split mode {mode!r}")
