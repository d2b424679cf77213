"""Brute-force interpolated modified Kneser-Ney reference.

Shares nothing with the library estimator: counts are rebuilt with a
different loop structure and every probability/backoff weight is evaluated
directly from the defining formulas by scanning the count dictionaries.
"""

from __future__ import annotations

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

DEFAULT_D = (0.5, 1.0, 1.5)


def raw_counts(corpus, order):
    """tables[k] maps k-gram tuple -> count (keyed by gram length k)."""
    tables = {k: {} for k in range(1, order + 1)}
    for sentence in corpus:
        padded = tuple([BOS] * (order - 1)) + tuple(sentence) + (EOS,)
        n_pad = order - 1
        for k in range(1, order + 1):
            for end in range(n_pad + 1, len(padded) + 1):
                start = end - k
                if start < 0:
                    continue
                gram = padded[start:end]
                tables[k][gram] = tables[k].get(gram, 0) + 1
    return tables


def adjusted(tables, order, gram):
    k = len(gram)
    if k == order or gram[0] == BOS:
        return tables[k].get(gram, 0)
    return sum(1 for longer in tables[k + 1] if longer[1:] == gram)


def discount_triple(tables, order, k):
    counts = {}
    for gram in tables[k]:
        a = adjusted(tables, order, gram)
        counts[a] = counts.get(a, 0) + 1
    n1 = counts.get(1, 0)
    n2 = counts.get(2, 0)
    if n1 == 0 or n1 + 2 * n2 == 0:
        return DEFAULT_D
    y = n1 / (n1 + 2 * n2)
    out = []
    for j in (1, 2, 3):
        nj = counts.get(j, 0)
        nj1 = counts.get(j + 1, 0)
        if nj == 0:
            out.append(DEFAULT_D[j - 1])
        else:
            out.append(min(float(j), max(0.0, j - (j + 1) * y * nj1 / nj)))
    return tuple(out)


def discount_of(count, triple):
    if count <= 0:
        return 0.0
    return triple[min(count, 3) - 1]


def universe(tables):
    toks = {gram[0] for gram in tables[1]}
    toks.add(UNK)
    return toks


def continuation_total(tables, order, context):
    """Sum of adjusted counts of all stored extensions of ``context``."""
    k = len(context) + 1
    return sum(adjusted(tables, order, gram)
               for gram in tables[k] if gram[:-1] == context)


def gamma(tables, order, context, triples):
    """Backoff mass reserved under ``context``."""
    k = len(context) + 1
    total = continuation_total(tables, order, context)
    if total == 0:
        return 1.0
    mass = sum(discount_of(adjusted(tables, order, gram), triples[k])
               for gram in tables[k] if gram[:-1] == context)
    return mass / total


def prob(tables, order, gram, triples):
    """Interpolated modified-KN probability of a stored (or <unk>) gram."""
    k = len(gram)
    context = gram[:-1]
    if k == 1:
        total = sum(adjusted(tables, order, (w,)) for (w,) in tables[1])
        a = adjusted(tables, order, gram) if gram in tables[1] else 0
        u = max(a - discount_of(a, triples[1]), 0.0) / total
        g = gamma(tables, order, (), triples)
        return u + g * (1.0 / len(universe(tables)))
    total = continuation_total(tables, order, context)
    a = adjusted(tables, order, gram)
    u = max(a - discount_of(a, triples[k]), 0.0) / total
    return u + gamma(tables, order, context, triples) * prob(tables, order, gram[1:], triples)


def _context_stored(tables, sub):
    # All-<s> contexts are stored as bow-only entries even though no window
    # ever ends at <s>.
    return sub in tables[len(sub)] or all(t == BOS for t in sub)


def backoff_query(tables, order, token, context, triples):
    """ARPA-style query: stored probability at the longest matching context,
    multiplying backoff weights of every longer stored context skipped."""
    toks = universe(tables)
    token = token if token in toks else UNK
    if order > 1:
        context = tuple(t if (t in toks or t == BOS) else UNK for t in context)[-(order - 1):]
    else:
        context = ()
    weight = 1.0
    for start in range(len(context) + 1):
        sub = context[start:]
        gram = sub + (token,)
        if gram in tables[len(gram)] or (len(gram) == 1 and token == UNK):
            return weight * prob(tables, order, gram, triples)
        if sub and _context_stored(tables, sub):
            weight *= gamma(tables, order, sub, triples)
    raise AssertionError("unigram level must resolve")


def all_triples(tables, order):
    return {k: discount_triple(tables, order, k) for k in range(1, order + 1)}
