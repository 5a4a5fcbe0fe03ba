"""Independent reference implementations used only by the tests.

None of these import the code paths they check.
"""

import math
from itertools import combinations


def oracle_tokens(text):
    tokens, current = [], []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def brute_force_bm25f(docs, query, k1=1.2, weights=(1.0, 1.0), bs=(0.75, 0.75)):
    """Score every doc for ``query`` straight from raw ``(id, title, body)`` texts.

    Returns ``{doc_id: score}``.
    """
    toks = {d[0]: (oracle_tokens(d[1]), oracle_tokens(d[2])) for d in docs}
    n = len(docs)
    avg = [sum(len(t[f]) for t in toks.values()) / n for f in (0, 1)]
    terms = []
    for t in oracle_tokens(query):
        if t not in terms:
            terms.append(t)
    df_of = {term: sum(1 for f in toks.values() if term in f[0] or term in f[1]) for term in terms}
    scores = {}
    for doc_id, fields in toks.items():
        total = 0.0
        for term in terms:
            df = df_of[term]
            if df == 0:
                continue
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1)
            x = 0.0
            for f in (0, 1):
                tf = fields[f].count(term)
                if tf:
                    x += weights[f] * tf / (1 - bs[f] + bs[f] * len(fields[f]) / avg[f])
            if x:
                total += idf * x / (k1 + x)
        scores[doc_id] = total
    return scores


def brute_force_ranking(docs, query, k=50, **kw):
    scores = brute_force_bm25f(docs, query, **kw)
    ranked = sorted((s, d) for d, s in scores.items() if s > 0)
    ranked.sort(key=lambda p: (-p[0], p[1]))
    return [(d, s) for s, d in ranked[:k]]


def pairwise_u(x, y):
    return sum((a > b) + 0.5 * (a == b) for a in x for b in y)


def brute_force_exact_p(x, y):
    """Two-tailed permutation p of U by enumerating every relabeling of the pooled sample."""
    pooled = list(x) + list(y)
    n1, n = len(x), len(pooled)
    mean = n1 * (n - n1) / 2
    observed = abs(pairwise_u(x, y) - mean)
    hits = total = 0
    for chosen in combinations(range(n), n1):
        s = set(chosen)
        xs = [pooled[i] for i in chosen]
        ys = [pooled[i] for i in range(n) if i not in s]
        total += 1
        if abs(pairwise_u(xs, ys) - mean) >= observed - 1e-9:
            hits += 1
    return hits / total
