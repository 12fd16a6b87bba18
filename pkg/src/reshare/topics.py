"""Latent topic mixtures for post text, via collapsed-Gibbs LDA.

Text normalization lowercases, strips URLs and emoji, drops stop words and
single-character tokens. Fitting runs plain collapsed Gibbs sweeps over token
topic assignments; vocabulary is pruned below document frequency 2 at fit
time. Inference for held-out documents folds in with the topic-word table
frozen.
"""

import re
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[a-z0-9][a-z0-9']*")

# emoji & pictograph blocks, plus variation selectors
_EMOJI_RANGES = (
    (0x1F000, 0x1FAFF),
    (0x2600, 0x27BF),
    (0x2190, 0x21FF),
    (0x2B00, 0x2BFF),
    (0xFE00, 0xFE0F),
)

MIN_TOKEN_LEN = 2


def _strip_emoji(text: str) -> str:
    return "".join(
        ch
        for ch in text
        if not any(lo <= ord(ch) <= hi for lo, hi in _EMOJI_RANGES)
    )


@dataclass(frozen=True)
class TokenCorpus:
    vocabulary: dict  # token -> index
    documents: tuple  # per post: tuple of token indices
    doc_ids: tuple  # post ids aligned with documents

    @property
    def tokens(self) -> tuple[str, ...]:
        inv = sorted(self.vocabulary, key=self.vocabulary.get)
        return tuple(inv)


def tokenize(posts, stopword_list=()) -> TokenCorpus:
    """Normalize post text into token-index documents over a shared vocabulary.

    Posts without text yield empty documents (they stay in the corpus so the
    document order matches the post order).
    """
    stop = {w.lower() for w in stopword_list}
    vocabulary: dict[str, int] = {}
    documents = []
    doc_ids = []
    for post in posts:
        text = post.text or ""
        text = _URL_RE.sub(" ", text)
        text = _strip_emoji(text).lower()
        doc = []
        for tok in _TOKEN_RE.findall(text):
            if len(tok) < MIN_TOKEN_LEN or tok in stop:
                continue
            idx = vocabulary.setdefault(tok, len(vocabulary))
            doc.append(idx)
        documents.append(tuple(doc))
        doc_ids.append(post.post_id)
    return TokenCorpus(
        vocabulary=vocabulary, documents=tuple(documents), doc_ids=tuple(doc_ids)
    )


def load_stopwords(path) -> frozenset:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


@dataclass(frozen=True)
class TopicModel:
    n_topics: int
    topic_word: np.ndarray  # (K, V) rows sum to 1
    alpha: float
    beta: float
    iterations: int
    seed: int
    vocabulary: dict  # token -> column of topic_word

    def top_words(self, topic: int, n: int = 5) -> tuple[str, ...]:
        inv = sorted(self.vocabulary, key=self.vocabulary.get)
        order = np.argsort(-self.topic_word[topic])[:n]
        return tuple(inv[i] for i in order)


def fit_lda(
    corpus: TokenCorpus,
    n_topics: int,
    iterations: int = 200,
    seed: int = 0,
    alpha: float | None = None,
    beta: float = 0.01,
    min_df: int = 2,
) -> TopicModel:
    """Collapsed Gibbs sampling over token-topic assignments.

    alpha defaults to 50/K. Tokens appearing in fewer than ``min_df``
    documents are dropped from the model vocabulary.
    """
    if n_topics < 2:
        raise ValueError("n_topics must be >= 2")
    n_nonempty = sum(1 for d in corpus.documents if d)
    if n_nonempty < n_topics:
        raise DataError(
            f"corpus too small: {n_nonempty} non-empty documents for {n_topics} topics"
        )
    if alpha is None:
        alpha = 50.0 / n_topics

    # prune vocabulary by document frequency and re-index
    df = np.zeros(len(corpus.vocabulary), dtype=np.int64)
    for doc in corpus.documents:
        for idx in set(doc):
            df[idx] += 1
    keep = {old for old in range(len(df)) if df[old] >= min_df}
    inv_tokens = sorted(corpus.vocabulary, key=corpus.vocabulary.get)
    vocab = {}
    remap = {}
    for old in sorted(keep):
        remap[old] = len(vocab)
        vocab[inv_tokens[old]] = remap[old]
    docs = [
        np.array([remap[t] for t in doc if t in remap], dtype=np.int64)
        for doc in corpus.documents
    ]
    n_words = len(vocab)
    if n_words == 0:
        raise DataError("corpus vocabulary is empty after pruning")

    rng = np.random.default_rng(seed)
    k = n_topics
    doc_topic = np.zeros((len(docs), k), dtype=np.float64)
    topic_word = np.zeros((k, n_words), dtype=np.float64)
    topic_total = np.zeros(k, dtype=np.float64)
    assign = []
    for d, doc in enumerate(docs):
        z = rng.integers(0, k, doc.size)
        assign.append(z)
        for w, t in zip(doc, z):
            doc_topic[d, t] += 1
            topic_word[t, w] += 1
            topic_total[t] += 1

    vbeta = n_words * beta
    for _ in range(iterations):
        for d, doc in enumerate(docs):
            z = assign[d]
            dt = doc_topic[d]
            for i in range(doc.size):
                w = doc[i]
                t = z[i]
                dt[t] -= 1.0
                topic_word[t, w] -= 1.0
                topic_total[t] -= 1.0
                p = (topic_word[:, w] + beta) / (topic_total + vbeta) * (dt + alpha)
                cum = np.cumsum(p)
                t = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
                if t >= k:  # guard against fp edge at the top of the cdf
                    t = k - 1
                z[i] = t
                dt[t] += 1.0
                topic_word[t, w] += 1.0
                topic_total[t] += 1.0

    phi = (topic_word + beta) / (topic_total + vbeta)[:, None]
    phi /= phi.sum(axis=1, keepdims=True)
    return TopicModel(
        n_topics=k,
        topic_word=phi,
        alpha=alpha,
        beta=beta,
        iterations=iterations,
        seed=seed,
        vocabulary=vocab,
    )


def _doc_seed(model: TopicModel, word_ids: np.ndarray) -> int:
    payload = np.asarray(word_ids, dtype=np.int64).tobytes() + str(model.seed).encode()
    return zlib.crc32(payload)


def infer_topics(model: TopicModel, tokens, sweeps: int = 60, burn: int = 20) -> np.ndarray:
    """Fold-in Gibbs for one document with the topic-word table frozen.

    Returns a length-K mixture (non-negative, sums to 1). Documents with no
    in-vocabulary tokens get the uniform mixture. Deterministic for a given
    (model, document): the sampler seed derives from both.
    """
    k = model.n_topics
    word_ids = np.array(
        [model.vocabulary[t] for t in tokens if t in model.vocabulary], dtype=np.int64
    )
    if word_ids.size == 0:
        return np.full(k, 1.0 / k)
    rng = np.random.default_rng(_doc_seed(model, word_ids))
    phi_cols = model.topic_word[:, word_ids]  # (K, L)
    counts = np.zeros(k)
    z = rng.integers(0, k, word_ids.size)
    for t in z:
        counts[t] += 1
    acc = np.zeros(k)
    kept = 0
    for sweep in range(sweeps):
        for i in range(word_ids.size):
            counts[z[i]] -= 1
            p = phi_cols[:, i] * (counts + model.alpha)
            cum = np.cumsum(p)
            t = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            if t >= k:
                t = k - 1
            z[i] = t
            counts[t] += 1
        if sweep >= burn:
            acc += counts
            kept += 1
    mean_counts = acc / max(kept, 1)
    mix = (mean_counts + model.alpha) / (word_ids.size + k * model.alpha)
    return mix / mix.sum()


def infer_corpus(model: TopicModel, corpus: TokenCorpus) -> dict:
    """Topic mixtures for every document in a corpus, keyed by post id."""
    inv = corpus.tokens
    out = {}
    for doc_id, doc in zip(corpus.doc_ids, corpus.documents):
        toks = [inv[i] for i in doc]
        out[doc_id] = infer_topics(model, toks)
    return out


def perplexity(model: TopicModel, corpus: TokenCorpus) -> float:
    """Held-out perplexity under fold-in mixtures; lower is better."""
    inv = corpus.tokens
    log_lik = 0.0
    n_tokens = 0
    for doc in corpus.documents:
        toks = [inv[i] for i in doc]
        word_ids = [model.vocabulary[t] for t in toks if t in model.vocabulary]
        if not word_ids:
            continue
        mix = infer_topics(model, toks)
        probs = mix @ model.topic_word[:, word_ids]
        log_lik += float(np.sum(np.log(np.maximum(probs, 1e-300))))
        n_tokens += len(word_ids)
    if n_tokens == 0:
        raise DataError("no in-vocabulary tokens for perplexity")
    return float(np.exp(-log_lik / n_tokens))
